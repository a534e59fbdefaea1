//! Forward kinematics over a configurable joint tree and Adam-based
//! keypoint retargeting.
//!
//! Parameters are a root translation followed by one angle per declared
//! joint axis. Each joint composes its axis rotations in declared order, and
//! a joint's angles move its descendants only. The retargeting objective is
//! the summed squared distance between paired robot joints and human
//! keypoints, plus a softplus joint-limit penalty and an optional temporal
//! smoothness term.

mod fk;
mod skeleton;
mod solve;

pub use fk::{accumulate_position_gradient, fk_state, forward_kinematics, jacobian, FkState};
pub use skeleton::{EndEffector, EndEffectorSpec, Joint, JointSpec, PoseParams, RobotSkeleton, SkeletonFile};
pub use solve::{
    poses_to_csv, residual_mm, retarget_frame, retarget_sequence, RetargetOptions, RetargetReport, SequenceOptions,
    SequenceReport,
};
