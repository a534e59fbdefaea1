//! Canonical 15-joint skeleton, body-part partition, and kinematic helpers.
//!
//! Every motion in the crate is a sequence of 15 joint positions in meters.
//! Coordinates are z-up with x pointing forward. The five body parts are
//! quantized independently, so a pose can be split into part vectors and
//! reassembled without loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 15;
pub const NUM_PARTS: usize = 5;

/// Joint names in canonical order.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
    "left_foot",
    "right_foot",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

pub const PELVIS: usize = 0;
pub const LEFT_HAND: usize = 13;
pub const RIGHT_HAND: usize = 14;

/// One pose: 15 rows of xyz.
pub type Frame = [[f64; 3]; NUM_JOINTS];

pub fn joint_index(name: &str) -> Option<usize> {
    JOINT_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    LeftLeg,
    RightLeg,
    Torso,
    LeftArm,
    RightArm,
}

impl BodyPart {
    pub const ALL: [BodyPart; NUM_PARTS] =
        [BodyPart::LeftLeg, BodyPart::RightLeg, BodyPart::Torso, BodyPart::LeftArm, BodyPart::RightArm];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("body part index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::LeftLeg => "left_leg",
            BodyPart::RightLeg => "right_leg",
            BodyPart::Torso => "torso",
            BodyPart::LeftArm => "left_arm",
            BodyPart::RightArm => "right_arm",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown body part `{name}`")))
    }

    /// Joint indices owned by this part.
    pub fn joints(self) -> &'static [usize] {
        match self {
            BodyPart::LeftLeg => &[1, 3, 5, 7],
            BodyPart::RightLeg => &[2, 4, 6, 8],
            BodyPart::Torso => &[0],
            BodyPart::LeftArm => &[9, 11, 13],
            BodyPart::RightArm => &[10, 12, 14],
        }
    }

    /// Length of the flattened part vector.
    pub fn dim(self) -> usize {
        3 * self.joints().len()
    }
}

/// Joint naming plus the part assignment. Only the canonical layout exists
/// today; the type keeps the assignment explicit and checkable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointLayout {
    pub joint_names: Vec<String>,
    pub part_assignment: Vec<(BodyPart, Vec<usize>)>,
}

impl Default for JointLayout {
    fn default() -> Self {
        Self::canonical()
    }
}

impl JointLayout {
    pub fn canonical() -> Self {
        Self {
            joint_names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            part_assignment: BodyPart::ALL.iter().map(|p| (*p, p.joints().to_vec())).collect(),
        }
    }

    /// Checks the joint count, part names, and that the parts tile {0..14}.
    pub fn validate(&self) -> Result<()> {
        if self.joint_names.len() != NUM_JOINTS {
            return Err(Error::Shape(format!("layout has {} joints, expected 15", self.joint_names.len())));
        }
        if self.part_assignment.len() != NUM_PARTS
            || self.part_assignment.iter().zip(BodyPart::ALL).any(|((p, _), q)| *p != q)
        {
            return Err(Error::Shape("layout must list the five parts in canonical order".into()));
        }
        let mut seen = [false; NUM_JOINTS];
        for (_, joints) in &self.part_assignment {
            for &j in joints {
                if j >= NUM_JOINTS || seen[j] {
                    return Err(Error::Shape(format!("joint {j} assigned twice or out of range")));
                }
                seen[j] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Shape("part assignment does not cover every joint".into()));
        }
        Ok(())
    }

    fn joints_of(&self, part: BodyPart) -> &[usize] {
        &self.part_assignment[part.index()].1
    }
}

/// Flattened coordinates of one body part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartVector {
    pub part: BodyPart,
    pub values: Vec<f64>,
}

/// Splits a 15-row frame into the five part vectors.
pub fn partition_frame(frame: &[[f64; 3]], layout: &JointLayout) -> Result<[PartVector; NUM_PARTS]> {
    if frame.len() != NUM_JOINTS {
        return Err(Error::Shape(format!("frame has {} rows, expected 15", frame.len())));
    }
    if frame.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("frame".into()));
    }
    Ok(BodyPart::ALL.map(|part| PartVector {
        part,
        values: layout.joints_of(part).iter().flat_map(|&j| frame[j]).collect(),
    }))
}

/// Inverse of [`partition_frame`]. Parts must arrive in canonical order.
pub fn assemble_frame(parts: &[PartVector], layout: &JointLayout) -> Result<Frame> {
    if parts.len() != NUM_PARTS {
        return Err(Error::Shape(format!("expected 5 part vectors, got {}", parts.len())));
    }
    let mut frame = [[0.0; 3]; NUM_JOINTS];
    for (pv, expected) in parts.iter().zip(BodyPart::ALL) {
        if pv.part != expected {
            return Err(Error::Shape(format!(
                "part vector for {} found where {} was expected",
                pv.part.name(),
                expected.name()
            )));
        }
        let joints = layout.joints_of(expected);
        if pv.values.len() != 3 * joints.len() {
            return Err(Error::Shape(format!(
                "{} vector has length {}, expected {}",
                expected.name(),
                pv.values.len(),
                3 * joints.len()
            )));
        }
        for (k, &j) in joints.iter().enumerate() {
            frame[j].copy_from_slice(&pv.values[3 * k..3 * k + 3]);
        }
    }
    Ok(frame)
}

/// A clip of poses sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    fps: u32,
    frames: Vec<Frame>,
}

impl MotionSequence {
    pub fn new(fps: u32, frames: Vec<Frame>) -> Result<Self> {
        if fps == 0 {
            return Err(Error::InvalidArgument("fps must be positive".into()));
        }
        if frames.is_empty() {
            return Err(Error::Shape("a motion sequence needs at least one frame".into()));
        }
        if frames.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("motion sequence".into()));
        }
        Ok(Self { fps, frames })
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 / self.fps as f64
    }

    pub fn joint_track(&self, joint: usize) -> Vec<[f64; 3]> {
        self.frames.iter().map(|f| f[joint]).collect()
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    /// Rounds every coordinate to the nearest `f32`, the precision of the
    /// binary clip format.
    pub fn round_to_f32(mut self) -> Self {
        for v in self.frames.iter_mut().flatten().flatten() {
            *v = *v as f32 as f64;
        }
        self
    }
}

/// Finite differences along time, scaled by `fps`. `order` is 1 (velocity)
/// or 2 (acceleration).
pub fn finite_diff(seq: &MotionSequence, order: usize) -> Result<Vec<Frame>> {
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidArgument(format!("finite difference order must be 1 or 2, got {order}")));
    }
    if seq.len() <= order {
        return Err(Error::InsufficientLength { needed: order, got: seq.len() });
    }
    let fps = seq.fps as f64;
    let mut cur: Vec<Frame> = seq.frames.clone();
    for _ in 0..order {
        cur = cur
            .windows(2)
            .map(|w| {
                let mut d = [[0.0; 3]; NUM_JOINTS];
                for j in 0..NUM_JOINTS {
                    for a in 0..3 {
                        d[j][a] = (w[1][j][a] - w[0][j][a]) * fps;
                    }
                }
                d
            })
            .collect();
    }
    Ok(cur)
}

/// Translates every frame so the pelvis sits at the origin. Returns the
/// centered sequence and the original pelvis trajectory.
pub fn root_center(seq: &MotionSequence) -> (MotionSequence, Vec<[f64; 3]>) {
    let root = seq.joint_track(PELVIS);
    let frames = seq
        .frames
        .iter()
        .zip(&root)
        .map(|(f, r)| {
            let mut out = *f;
            for p in out.iter_mut() {
                for a in 0..3 {
                    p[a] -= r[a];
                }
            }
            out
        })
        .collect();
    (MotionSequence { fps: seq.fps, frames }, root)
}

/// Adds a per-frame root offset back onto a centered sequence.
pub fn apply_root(seq: &MotionSequence, root: &[[f64; 3]]) -> Result<MotionSequence> {
    if root.len() != seq.len() {
        return Err(Error::Shape(format!("root track has {} rows for {} frames", root.len(), seq.len())));
    }
    let frames = seq
        .frames
        .iter()
        .zip(root)
        .map(|(f, r)| {
            let mut out = *f;
            for p in out.iter_mut() {
                for a in 0..3 {
                    p[a] += r[a];
                }
            }
            out
        })
        .collect();
    MotionSequence::new(seq.fps, frames)
}
