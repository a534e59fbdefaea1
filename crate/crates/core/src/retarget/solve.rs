use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::fk::{accumulate_position_gradient, fk_state};
use super::skeleton::{PoseParams, RobotSkeleton};
use crate::error::{Error, Result};
use crate::motion::{Frame, MotionSequence};
use crate::params::{Adam, AdamConfig, FlatParams};

/// Sharpness of the softplus used for the joint-limit penalty. Inside the
/// limits by more than ~0.1 rad the penalty and its gradient are negligible.
const LIMIT_SHARPNESS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetOptions {
    pub lr: f64,
    pub iters: usize,
    pub lambda_limits: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Stop once the objective has stayed within a band of width `tol` for
    /// the last `patience` iterations.
    pub tol: f64,
    pub patience: usize,
}

impl Default for RetargetOptions {
    fn default() -> Self {
        Self { lr: 0.05, iters: 300, lambda_limits: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, tol: 1e-8, patience: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetReport {
    /// Mean end-effector distance in millimeters at the returned pose.
    pub residual_mm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub initial_objective: f64,
    pub final_objective: f64,
}

fn softplus(x: f64) -> (f64, f64) {
    let z = LIMIT_SHARPNESS * x;
    let value = if z > 30.0 { x } else { z.exp().ln_1p() / LIMIT_SHARPNESS };
    let slope = 1.0 / (1.0 + (-z).exp());
    (value, slope)
}

struct Objective<'a> {
    skeleton: &'a RobotSkeleton,
    keypoints: &'a Frame,
    lambda_limits: f64,
    limits: Vec<[f64; 2]>,
    anchor: Option<(&'a [f64], f64)>,
}

impl Objective<'_> {
    fn eval(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let pose = PoseParams::from_flat(flat);
        let state = fk_state(self.skeleton, &pose)?;
        let mut grad = vec![0.0; flat.len()];
        let mut value = 0.0;
        for ee in &self.skeleton.end_effectors {
            let r = state.positions[ee.robot_joint] - Vector3::from(self.keypoints[ee.keypoint]);
            value += r.norm_squared();
            accumulate_position_gradient(self.skeleton, &state, ee.robot_joint, &(2.0 * r), &mut grad);
        }
        if self.lambda_limits > 0.0 {
            for (i, ([lo, hi], &a)) in self.limits.iter().zip(&pose.angles).enumerate() {
                let (vu, su) = softplus(a - hi);
                let (vl, sl) = softplus(lo - a);
                value += self.lambda_limits * (vu + vl);
                grad[3 + i] += self.lambda_limits * (su - sl);
            }
        }
        if let Some((prev, weight)) = self.anchor {
            for (i, (x, p)) in flat.iter().zip(prev).enumerate() {
                value += weight * (x - p) * (x - p);
                grad[i] += 2.0 * weight * (x - p);
            }
        }
        if !self.skeleton.floating_base {
            grad[..3].fill(0.0);
        }
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("retargeting objective".into()));
        }
        Ok((value, grad))
    }
}

/// Mean distance (mm) between paired robot joints and keypoints.
pub fn residual_mm(skeleton: &RobotSkeleton, pose: &PoseParams, keypoints: &Frame) -> Result<f64> {
    if skeleton.end_effectors.is_empty() {
        return Err(Error::Precondition("skeleton has no end-effector pairs".into()));
    }
    let state = fk_state(skeleton, pose)?;
    let total: f64 = skeleton
        .end_effectors
        .iter()
        .map(|ee| (state.positions[ee.robot_joint] - Vector3::from(keypoints[ee.keypoint])).norm())
        .sum();
    Ok(1000.0 * total / skeleton.end_effectors.len() as f64)
}

fn solve(
    skeleton: &RobotSkeleton,
    keypoints: &Frame,
    init: &PoseParams,
    opt: &RetargetOptions,
    anchor: Option<(&[f64], f64)>,
) -> Result<(PoseParams, RetargetReport)> {
    init.check(skeleton)?;
    if skeleton.end_effectors.is_empty() {
        return Err(Error::Precondition("skeleton has no end-effector pairs".into()));
    }
    let objective = Objective { skeleton, keypoints, lambda_limits: opt.lambda_limits, limits: skeleton.limits(), anchor };
    let mut x = FlatParams(init.to_flat());
    let (f0, mut grad) = objective.eval(&x.0)?;
    let mut best = (f0, x.0.clone());
    let mut history = vec![f0];
    let mut adam = Adam::new(AdamConfig { beta1: opt.beta1, beta2: opt.beta2, eps: opt.eps });
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..opt.iters {
        adam.step(&mut x, &FlatParams(grad), opt.lr, |_| true);
        let (f, g) = objective.eval(&x.0)?;
        grad = g;
        if f < best.0 {
            best = (f, x.0.clone());
        }
        history.push(f);
        iterations = it + 1;
        let n = history.len();
        if n > opt.patience {
            let window = &history[n - 1 - opt.patience..];
            let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
            if hi - lo < opt.tol {
                converged = true;
                break;
            }
        }
    }
    let pose = PoseParams::from_flat(&best.1);
    let report = RetargetReport {
        residual_mm: residual_mm(skeleton, &pose, keypoints)?,
        iterations,
        converged,
        initial_objective: f0,
        final_objective: best.0,
    };
    Ok((pose, report))
}

/// Fits robot parameters to one frame of keypoints with Adam. The returned
/// pose is the best iterate, so its objective never exceeds the initial one.
pub fn retarget_frame(
    keypoints: &Frame,
    skeleton: &RobotSkeleton,
    init: &PoseParams,
    opt: &RetargetOptions,
) -> Result<(PoseParams, RetargetReport)> {
    solve(skeleton, keypoints, init, opt, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceOptions {
    pub frame: RetargetOptions,
    /// Weight of `||theta_t - theta_{t-1}||^2`; 0 disables the term.
    pub smooth: f64,
    /// Start frame t from frame t-1's solution instead of `init`.
    pub warm_start: bool,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self { frame: RetargetOptions::default(), smooth: 0.0, warm_start: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub frames: Vec<RetargetReport>,
    pub total_iterations: usize,
    pub mean_residual_mm: f64,
    pub max_residual_mm: f64,
}

/// Retargets every frame in order. With `warm_start`, frame t starts from
/// frame t-1's solution; `smooth > 0` also anchors it there.
pub fn retarget_sequence(
    seq: &MotionSequence,
    skeleton: &RobotSkeleton,
    init: &PoseParams,
    opt: &SequenceOptions,
) -> Result<(Vec<PoseParams>, SequenceReport)> {
    let mut poses: Vec<PoseParams> = Vec::with_capacity(seq.len());
    let mut reports = Vec::with_capacity(seq.len());
    for frame in seq.frames() {
        let prev = poses.last().map(|p| p.to_flat());
        let start = match (&prev, opt.warm_start) {
            (Some(p), true) => PoseParams::from_flat(p),
            _ => init.clone(),
        };
        let anchor = match &prev {
            Some(p) if opt.smooth > 0.0 => Some((p.as_slice(), opt.smooth)),
            _ => None,
        };
        let (pose, report) = solve(skeleton, frame, &start, &opt.frame, anchor)?;
        poses.push(pose);
        reports.push(report);
    }
    let total_iterations = reports.iter().map(|r| r.iterations).sum();
    let mean_residual_mm = reports.iter().map(|r| r.residual_mm).sum::<f64>() / reports.len() as f64;
    let max_residual_mm = reports.iter().map(|r| r.residual_mm).fold(0.0, f64::max);
    Ok((poses, SequenceReport { frames: reports, total_iterations, mean_residual_mm, max_residual_mm }))
}

/// Per-frame parameter table: `frame,root_x,root_y,root_z,<joint>_<k>...`.
pub fn poses_to_csv(skeleton: &RobotSkeleton, poses: &[PoseParams]) -> String {
    let mut header = vec!["frame".to_string(), "root_x".into(), "root_y".into(), "root_z".into()];
    for j in &skeleton.joints {
        for k in 0..j.axes.len() {
            header.push(format!("{}_{k}", j.name));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for (t, p) in poses.iter().enumerate() {
        let row: Vec<String> = std::iter::once(t.to_string()).chain(p.to_flat().iter().map(|v| format!("{v:.9}"))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
