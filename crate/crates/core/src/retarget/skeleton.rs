use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{joint_index, NUM_JOINTS};

const HUMAN_JSON: &str = include_str!("../../assets/human_skeleton.json");
const HUMANOID24_JSON: &str = include_str!("../../assets/humanoid24.json");

const DEFAULT_LIMIT: [f64; 2] = [-std::f64::consts::PI, std::f64::consts::PI];

/// On-disk joint description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub parent: i64,
    pub offset: [f64; 3],
    #[serde(default)]
    pub axes: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndEffectorSpec {
    pub robot: String,
    pub human: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    #[serde(default = "default_true")]
    pub floating_base: bool,
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub end_effectors: Vec<EndEffectorSpec>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vector3<f64>,
    pub axes: Vec<Unit<Vector3<f64>>>,
    pub limits: Vec<[f64; 2]>,
    /// Index of this joint's first angle inside the angle vector.
    pub first_dof: usize,
}

/// A robot joint paired with one of the 15 human keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndEffector {
    pub robot_joint: usize,
    pub keypoint: usize,
}

/// Kinematic tree with per-joint rotation axes, topologically ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotSkeleton {
    pub joints: Vec<Joint>,
    pub end_effectors: Vec<EndEffector>,
    /// Whether the root translation is free.
    pub floating_base: bool,
    dof: usize,
}

impl RobotSkeleton {
    pub fn from_spec(spec: &SkeletonFile) -> Result<Self> {
        let mut joints = Vec::with_capacity(spec.joints.len());
        let mut dof = 0;
        for (i, j) in spec.joints.iter().enumerate() {
            let parent = match j.parent {
                -1 if i == 0 => None,
                -1 => return Err(Error::Malformed(format!("joint `{}`: only joint 0 may be the root", j.name))),
                p if p >= 0 && (p as usize) < i => Some(p as usize),
                p => {
                    return Err(Error::Malformed(format!(
                        "joint `{}` (index {i}) has parent {p}; parents must precede children",
                        j.name
                    )))
                }
            };
            if i == 0 && parent.is_some() {
                return Err(Error::Malformed("joint 0 must be the root (parent -1)".into()));
            }
            if j.offset.iter().any(|v| !v.is_finite()) {
                return Err(Error::Malformed(format!("joint `{}` has a non-finite offset", j.name)));
            }
            if j.axes.len() > 3 {
                return Err(Error::Malformed(format!("joint `{}` declares more than 3 axes", j.name)));
            }
            let axes = j
                .axes
                .iter()
                .map(|a| {
                    let v = Vector3::from(*a);
                    if !v.iter().all(|x| x.is_finite()) || v.norm() < 1e-12 {
                        return Err(Error::Malformed(format!("joint `{}` has a degenerate axis", j.name)));
                    }
                    Ok(Unit::new_normalize(v))
                })
                .collect::<Result<Vec<_>>>()?;
            let limits = match &j.limits {
                Some(l) if l.len() != axes.len() => {
                    return Err(Error::Malformed(format!("joint `{}`: one limit pair per axis required", j.name)))
                }
                Some(l) => {
                    if l.iter().any(|[lo, hi]| !(lo <= hi)) {
                        return Err(Error::Malformed(format!("joint `{}` has an inverted limit", j.name)));
                    }
                    l.clone()
                }
                None => vec![DEFAULT_LIMIT; axes.len()],
            };
            let n = axes.len();
            joints.push(Joint { name: j.name.clone(), parent, offset: Vector3::from(j.offset), axes, limits, first_dof: dof });
            dof += n;
        }
        if joints.is_empty() {
            return Err(Error::Malformed("skeleton has no joints".into()));
        }
        let mut names = std::collections::HashSet::new();
        for j in &joints {
            if !names.insert(j.name.as_str()) {
                return Err(Error::Malformed(format!("duplicate joint name `{}`", j.name)));
            }
        }
        let end_effectors = spec
            .end_effectors
            .iter()
            .map(|e| {
                let robot_joint = joints
                    .iter()
                    .position(|j| j.name == e.robot)
                    .ok_or_else(|| Error::Malformed(format!("end effector names unknown robot joint `{}`", e.robot)))?;
                let keypoint = joint_index(&e.human)
                    .ok_or_else(|| Error::Malformed(format!("end effector names unknown keypoint `{}`", e.human)))?;
                Ok(EndEffector { robot_joint, keypoint })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { joints, end_effectors, floating_base: spec.floating_base, dof })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SkeletonFile = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The skeleton the synthetic corpus is animated with. Its end-effector
    /// map covers all 15 keypoints, so it can retarget its own motion exactly.
    pub fn human() -> Self {
        Self::from_json(HUMAN_JSON).expect("shipped human skeleton is valid")
    }

    /// Default 24-DoF humanoid robot description.
    pub fn humanoid24() -> Self {
        Self::from_json(HUMANOID24_JSON).expect("shipped humanoid skeleton is valid")
    }

    pub fn to_spec(&self) -> SkeletonFile {
        SkeletonFile {
            floating_base: self.floating_base,
            joints: self
                .joints
                .iter()
                .map(|j| JointSpec {
                    name: j.name.clone(),
                    parent: j.parent.map_or(-1, |p| p as i64),
                    offset: [j.offset.x, j.offset.y, j.offset.z],
                    axes: j.axes.iter().map(|a| [a.x, a.y, a.z]).collect(),
                    limits: Some(j.limits.clone()),
                })
                .collect(),
            end_effectors: self
                .end_effectors
                .iter()
                .map(|e| EndEffectorSpec {
                    robot: self.joints[e.robot_joint].name.clone(),
                    human: crate::motion::JOINT_NAMES[e.keypoint].to_string(),
                })
                .collect(),
        }
    }

    /// Number of rotational degrees of freedom.
    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Length of the flat parameter vector: root translation plus angles.
    pub fn num_params(&self) -> usize {
        3 + self.dof
    }

    pub fn joint(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Skeleton joint index for every keypoint, when the end-effector map
    /// covers all 15.
    pub fn keypoint_joints(&self) -> Option<[usize; NUM_JOINTS]> {
        let mut out = [usize::MAX; NUM_JOINTS];
        for e in &self.end_effectors {
            out[e.keypoint] = e.robot_joint;
        }
        out.iter().all(|v| *v != usize::MAX).then_some(out)
    }

    /// True when `a` is a strict ancestor of `b`.
    pub fn is_ancestor(&self, a: usize, b: usize) -> bool {
        let mut cur = self.joints[b].parent;
        while let Some(p) = cur {
            if p == a {
                return true;
            }
            cur = self.joints[p].parent;
        }
        false
    }

    /// All (lower, upper) limits in angle-vector order.
    pub fn limits(&self) -> Vec<[f64; 2]> {
        self.joints.iter().flat_map(|j| j.limits.iter().copied()).collect()
    }
}

/// Root translation plus one angle per declared axis (radians).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub root: [f64; 3],
    pub angles: Vec<f64>,
}

impl PoseParams {
    pub fn rest(skeleton: &RobotSkeleton) -> Self {
        Self { root: [0.0; 3], angles: vec![0.0; skeleton.dof()] }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.root.iter().chain(&self.angles).copied().collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self { root: [flat[0], flat[1], flat[2]], angles: flat[3..].to_vec() }
    }

    pub fn check(&self, skeleton: &RobotSkeleton) -> Result<()> {
        if self.angles.len() != skeleton.dof() {
            return Err(Error::Shape(format!(
                "pose has {} angles, skeleton has {} degrees of freedom",
                self.angles.len(),
                skeleton.dof()
            )));
        }
        Ok(())
    }
}

pub(crate) fn axis_rotation(axis: &Unit<Vector3<f64>>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(axis, angle).into_inner()
}
