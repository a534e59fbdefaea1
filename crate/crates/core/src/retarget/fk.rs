use nalgebra::{Matrix3, Vector3};

use super::skeleton::{axis_rotation, PoseParams, RobotSkeleton};
use crate::error::Result;

/// World-space quantities from one forward pass, kept for Jacobians.
#[derive(Debug, Clone)]
pub struct FkState {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Matrix3<f64>>,
    /// World-space rotation axis of every angle.
    pub world_axes: Vec<Vector3<f64>>,
    /// Owning joint of every angle.
    pub dof_joint: Vec<usize>,
}

/// Accumulates rotations root to leaf. A joint's own angles rotate its
/// children, never itself; the root sits at `pose.root + offset[0]`.
pub fn fk_state(skeleton: &RobotSkeleton, pose: &PoseParams) -> Result<FkState> {
    pose.check(skeleton)?;
    let n = skeleton.joints.len();
    let mut positions = Vec::with_capacity(n);
    let mut rotations: Vec<Matrix3<f64>> = Vec::with_capacity(n);
    let mut world_axes = Vec::with_capacity(skeleton.dof());
    let mut dof_joint = Vec::with_capacity(skeleton.dof());
    for (i, joint) in skeleton.joints.iter().enumerate() {
        let (parent_rot, pos) = match joint.parent {
            None => (Matrix3::identity(), Vector3::from(pose.root) + joint.offset),
            Some(p) => (rotations[p], positions[p] + rotations[p] * joint.offset),
        };
        let mut rot = parent_rot;
        for (k, axis) in joint.axes.iter().enumerate() {
            world_axes.push(rot * axis.into_inner());
            dof_joint.push(i);
            rot *= axis_rotation(axis, pose.angles[joint.first_dof + k]);
        }
        positions.push(pos);
        rotations.push(rot);
    }
    Ok(FkState { positions, rotations, world_axes, dof_joint })
}

/// World position of every skeleton joint.
pub fn forward_kinematics(skeleton: &RobotSkeleton, pose: &PoseParams) -> Result<Vec<[f64; 3]>> {
    Ok(fk_state(skeleton, pose)?.positions.iter().map(|p| [p.x, p.y, p.z]).collect())
}

/// Adds `d(p_joint . direction)/d params` into `grad` (flat parameter order:
/// root translation, then angles).
pub fn accumulate_position_gradient(
    skeleton: &RobotSkeleton,
    state: &FkState,
    joint: usize,
    direction: &Vector3<f64>,
    grad: &mut [f64],
) {
    if skeleton.floating_base {
        for a in 0..3 {
            grad[a] += direction[a];
        }
    }
    let p = state.positions[joint];
    for (d, (axis, &owner)) in state.world_axes.iter().zip(&state.dof_joint).enumerate() {
        if skeleton.is_ancestor(owner, joint) {
            let dp = axis.cross(&(p - state.positions[owner]));
            grad[3 + d] += dp.dot(direction);
        }
    }
}

/// Dense Jacobian of all joint positions, `(3 * joints) x (3 + dof)`,
/// row-major.
pub fn jacobian(skeleton: &RobotSkeleton, pose: &PoseParams) -> Result<Vec<f64>> {
    let state = fk_state(skeleton, pose)?;
    let cols = skeleton.num_params();
    let mut jac = vec![0.0; 3 * skeleton.joints.len() * cols];
    for j in 0..skeleton.joints.len() {
        for a in 0..3 {
            let mut e = Vector3::zeros();
            e[a] = 1.0;
            let row = (3 * j + a) * cols;
            accumulate_position_gradient(skeleton, &state, j, &e, &mut jac[row..row + cols]);
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retarget::skeleton::SkeletonFile;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn two_link() -> RobotSkeleton {
        let text = r#"{
            "floating_base": false,
            "joints": [
                {"name": "base", "parent": -1, "offset": [0,0,0], "axes": [[0,0,1]]},
                {"name": "elbow", "parent": 0, "offset": [1,0,0], "axes": [[0,0,1]]},
                {"name": "tip", "parent": 1, "offset": [1,0,0], "axes": []}
            ],
            "end_effectors": [{"robot": "tip", "human": "right_hand"}]
        }"#;
        RobotSkeleton::from_json(text).unwrap()
    }

    #[test]
    fn rest_pose_sums_offsets() {
        let skel = RobotSkeleton::humanoid24();
        let pos = forward_kinematics(&skel, &PoseParams::rest(&skel)).unwrap();
        for (j, joint) in skel.joints.iter().enumerate() {
            let mut sum = Vector3::zeros();
            let mut cur = Some(j);
            while let Some(c) = cur {
                sum += skel.joints[c].offset;
                cur = skel.joints[c].parent;
            }
            for a in 0..3 {
                assert!((pos[j][a] - sum[a]).abs() < 1e-15, "{}", joint.name);
            }
        }
    }

    #[test]
    fn planar_two_link() {
        let skel = two_link();
        let pose = PoseParams { root: [0.0; 3], angles: vec![FRAC_PI_2, 0.0] };
        let tip = forward_kinematics(&skel, &pose).unwrap()[2];
        assert!((tip[0]).abs() < 1e-12 && (tip[1] - 2.0).abs() < 1e-12 && tip[2].abs() < 1e-12);
    }

    #[test]
    fn root_translation_shifts_everything() {
        let skel = RobotSkeleton::humanoid24();
        let mut pose = PoseParams::rest(&skel);
        pose.angles.iter_mut().enumerate().for_each(|(i, a)| *a = (i as f64 * 0.37).sin());
        let base = forward_kinematics(&skel, &pose).unwrap();
        pose.root = [0.3, -1.2, 2.5];
        let moved = forward_kinematics(&skel, &pose).unwrap();
        for (b, m) in base.iter().zip(&moved) {
            for a in 0..3 {
                assert!((m[a] - b[a] - pose.root[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for skel in [RobotSkeleton::humanoid24(), RobotSkeleton::human(), two_link()] {
            let mut pose = PoseParams::rest(&skel);
            pose.angles.iter_mut().enumerate().for_each(|(i, a)| *a = 0.4 * (i as f64 * 1.3).sin());
            pose.root = [0.1, 0.2, 0.9];
            let jac = jacobian(&skel, &pose).unwrap();
            let cols = skel.num_params();
            let eps = 1e-6;
            let mut flat = pose.to_flat();
            for c in 0..cols {
                if c < 3 && !skel.floating_base {
                    continue;
                }
                let orig = flat[c];
                flat[c] = orig + eps;
                let plus = forward_kinematics(&skel, &PoseParams::from_flat(&flat)).unwrap();
                flat[c] = orig - eps;
                let minus = forward_kinematics(&skel, &PoseParams::from_flat(&flat)).unwrap();
                flat[c] = orig;
                for j in 0..skel.joints.len() {
                    for a in 0..3 {
                        let fd = (plus[j][a] - minus[j][a]) / (2.0 * eps);
                        let an = jac[(3 * j + a) * cols + c];
                        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                        assert!(rel < 1e-4, "joint {j} axis {a} param {c}: {an} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn spec_file_is_serializable() {
        let spec: SkeletonFile = RobotSkeleton::human().to_spec();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(RobotSkeleton::from_json(&text).unwrap(), RobotSkeleton::human());
    }
}
