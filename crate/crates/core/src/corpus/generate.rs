use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClipRecord, QualityTier};
use crate::error::{Error, Result};
use crate::motion::{Frame, MotionSequence, NUM_JOINTS};
use crate::retarget::{fk_state, PoseParams, RobotSkeleton};
use crate::rng;

/// Standing pelvis height of the generator skeleton.
pub const PELVIS_HEIGHT: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    Walk,
    WaveArm,
    Squat,
    Kick,
    Turn,
    Idle,
}

impl MotionFamily {
    pub const ALL: [MotionFamily; 6] =
        [MotionFamily::Walk, MotionFamily::WaveArm, MotionFamily::Squat, MotionFamily::Kick, MotionFamily::Turn, MotionFamily::Idle];

    pub fn name(self) -> &'static str {
        match self {
            MotionFamily::Walk => "walk",
            MotionFamily::WaveArm => "wave_arm",
            MotionFamily::Squat => "squat",
            MotionFamily::Kick => "kick",
            MotionFamily::Turn => "turn",
            MotionFamily::Idle => "idle",
        }
    }

    /// Caption variants; a clip's seed picks one (`seed % len`).
    pub fn phrase_bank(self) -> &'static [&'static str] {
        match self {
            MotionFamily::Walk => &[
                "the person walks forward",
                "someone walks ahead at a steady pace",
                "a person takes steps forward",
                "the person is walking straight ahead",
            ],
            MotionFamily::WaveArm => &[
                "the person waves the right arm",
                "someone raises a hand and waves",
                "a person waves hello with the right hand",
                "the person lifts the right arm and waves it",
            ],
            MotionFamily::Squat => &[
                "the person squats down and stands up",
                "someone bends the knees into a squat",
                "a person performs a squat",
                "the person lowers the body and rises again",
            ],
            MotionFamily::Kick => &[
                "the person kicks with the right leg",
                "someone kicks forward",
                "a person swings the right leg in a kick",
                "the person performs a forward kick",
            ],
            MotionFamily::Turn => &[
                "the person turns around in place",
                "someone rotates the body to the left",
                "a person turns on the spot",
                "the person spins slowly in place",
            ],
            MotionFamily::Idle => &[
                "the person stays in place",
                "someone waits without moving",
                "a person stands idle",
                "the person stands still",
            ],
        }
    }
}

impl fmt::Display for MotionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown motion family `{s}`")))
    }
}

/// Generator controls. Valid ranges: `frames` 1..=3600, `fps` 1..=240,
/// `speed` 0..=3 m/s, `frequency` 0.1..=1 Hz, `amplitude` 0..=1,
/// `heading` within ±2π rad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub frames: usize,
    pub fps: u32,
    pub speed: f64,
    pub frequency: f64,
    pub amplitude: f64,
    pub heading: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self { frames: 60, fps: 30, speed: 1.0, frequency: 1.0, amplitude: 0.8, heading: 0.0 }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("generator parameter out of range: {what}")));
        if !(1..=3600).contains(&self.frames) {
            return bad("frames must be in 1..=3600");
        }
        if !(1..=240).contains(&self.fps) {
            return bad("fps must be in 1..=240");
        }
        if !(0.0..=3.0).contains(&self.speed) {
            return bad("speed must be in [0, 3] m/s");
        }
        if !(0.1..=1.0).contains(&self.frequency) {
            return bad("frequency must be in [0.1, 1] Hz");
        }
        if !(0.0..=1.0).contains(&self.amplitude) {
            return bad("amplitude must be in [0, 1]");
        }
        if !(self.heading.abs() <= TAU) {
            return bad("heading must be within ±2π");
        }
        Ok(())
    }
}

/// Angle-vector offsets into the generator skeleton (`RobotSkeleton::human`).
mod dof {
    pub const ROOT_YAW: usize = 0;
    pub const L_HIP_PITCH: usize = 3;
    pub const R_HIP_PITCH: usize = 6;
    pub const L_KNEE: usize = 9;
    pub const R_KNEE: usize = 10;
    pub const L_ANKLE: usize = 11;
    pub const R_ANKLE: usize = 12;
    pub const L_SHOULDER_PITCH: usize = 13;
    pub const R_SHOULDER_PITCH: usize = 16;
    pub const R_SHOULDER_ROLL: usize = 17;
    pub const L_ELBOW: usize = 19;
    pub const R_ELBOW: usize = 20;
}

fn smooth_ramp(t: f64, rise: f64) -> f64 {
    0.5 * (1.0 - (PI * (t / rise).min(1.0)).cos())
}

/// Pose parameters of `family` at time `t` seconds after frame 0.
fn pose_at(family: MotionFamily, p: &GenParams, phase: f64, t: f64, elapsed: f64) -> PoseParams {
    let mut angles = vec![0.0; 21];
    let (hx, hy) = (p.heading.cos(), p.heading.sin());
    let mut root = [0.0, 0.0, PELVIS_HEIGHT];
    let a = p.amplitude;
    let ph = TAU * p.frequency * t + phase;
    angles[dof::ROOT_YAW] = p.heading;
    match family {
        MotionFamily::Idle => {}
        MotionFamily::Walk => {
            // Root advances at exactly `speed` along the heading.
            let dist = p.speed * elapsed;
            root = [hx * dist, hy * dist, PELVIS_HEIGHT - 0.02 * a * (1.0 - (2.0 * ph).cos())];
            angles[dof::L_HIP_PITCH] = -0.45 * a * ph.sin();
            angles[dof::R_HIP_PITCH] = 0.45 * a * ph.sin();
            angles[dof::L_KNEE] = 0.35 * a * (1.0 - (ph + FRAC_PI_2).sin());
            angles[dof::R_KNEE] = 0.35 * a * (1.0 + (ph + FRAC_PI_2).sin());
            angles[dof::L_SHOULDER_PITCH] = 0.35 * a * ph.sin();
            angles[dof::R_SHOULDER_PITCH] = -0.35 * a * ph.sin();
            angles[dof::L_ELBOW] = -0.2 * a;
            angles[dof::R_ELBOW] = -0.2 * a;
        }
        MotionFamily::WaveArm => {
            let lift = smooth_ramp(t, 0.5);
            angles[dof::R_SHOULDER_ROLL] = -(1.2 + 0.5 * a) * lift;
            angles[dof::R_ELBOW] = -lift * (0.4 + 0.5 * a * (0.5 + 0.5 * ph.sin()));
        }
        MotionFamily::Squat => {
            let s = 0.5 * (1.0 - ph.cos());
            root[2] = PELVIS_HEIGHT - 0.35 * a * s;
            angles[dof::L_HIP_PITCH] = -1.1 * a * s;
            angles[dof::R_HIP_PITCH] = -1.1 * a * s;
            angles[dof::L_KNEE] = 1.8 * a * s;
            angles[dof::R_KNEE] = 1.8 * a * s;
            angles[dof::L_ANKLE] = -0.7 * a * s;
            angles[dof::R_ANKLE] = -0.7 * a * s;
            angles[dof::L_SHOULDER_PITCH] = -0.9 * a * s;
            angles[dof::R_SHOULDER_PITCH] = -0.9 * a * s;
        }
        MotionFamily::Kick => {
            let pulse = ph.sin().max(0.0).powi(2);
            angles[dof::R_HIP_PITCH] = -1.0 * a * pulse;
            angles[dof::R_KNEE] = 0.5 * a * pulse;
            angles[dof::L_SHOULDER_PITCH] = -0.4 * a * pulse;
            angles[dof::R_SHOULDER_PITCH] = 0.3 * a * pulse;
        }
        MotionFamily::Turn => {
            // Yaw rate of up to a quarter turn per second, with small steps.
            angles[dof::ROOT_YAW] = p.heading + FRAC_PI_2 * a * p.frequency * elapsed;
            angles[dof::L_HIP_PITCH] = -0.15 * a * ph.sin();
            angles[dof::R_HIP_PITCH] = 0.15 * a * ph.sin();
            angles[dof::L_KNEE] = 0.15 * a * (1.0 - ph.cos());
            angles[dof::R_KNEE] = 0.15 * a * (1.0 + ph.cos());
        }
    }
    PoseParams { root, angles }
}

/// Keypoints of a generator-skeleton pose.
pub fn keypoints_of(skeleton: &RobotSkeleton, pose: &PoseParams) -> Result<Frame> {
    let map = skeleton
        .keypoint_joints()
        .ok_or_else(|| Error::Precondition("skeleton does not cover all 15 keypoints".into()))?;
    let state = fk_state(skeleton, pose)?;
    let mut frame = [[0.0; 3]; NUM_JOINTS];
    for (k, &j) in map.iter().enumerate() {
        let p = state.positions[j];
        frame[k] = [p.x, p.y, p.z];
    }
    Ok(frame)
}

/// Generates one procedural clip. Output is a pure function of
/// `(family, params, seed)`: the seed picks the caption variant and the gait
/// phase. Frame `i` is the pose at the end of the `i`-th tick, so a walker
/// starting at the origin has covered `speed * frames / fps` meters by the
/// last frame. Coordinates are rounded to `f32` precision.
pub fn generate_clip(family: MotionFamily, params: &GenParams, seed: u64) -> Result<ClipRecord> {
    params.validate()?;
    let skeleton = RobotSkeleton::human();
    let mut r = rng::rng(seed);
    let phase = if family == MotionFamily::Idle { 0.0 } else { r.random_range(0.0..TAU) };
    let fps = params.fps as f64;
    let frames = (0..params.frames)
        .map(|i| {
            let t = i as f64 / fps;
            let elapsed = (i + 1) as f64 / fps;
            keypoints_of(&skeleton, &pose_at(family, params, phase, t, elapsed))
        })
        .collect::<Result<Vec<_>>>()?;
    let sequence = MotionSequence::new(params.fps, frames)?.round_to_f32();
    let bank = family.phrase_bank();
    let caption = bank[(seed % bank.len() as u64) as usize].to_string();
    Ok(ClipRecord {
        clip_id: format!("{}_{seed:016x}", family.name()),
        sequence,
        caption: Some(caption),
        quality_tier: QualityTier::High,
        family: family.name().to_string(),
        seed,
    })
}

/// Adds zero-mean Gaussian noise of `noise_std` meters to every coordinate
/// and strips the caption, yielding a low-tier record.
pub fn degrade_clip(clip: &ClipRecord, noise_std: f64, seed: u64) -> Result<ClipRecord> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidArgument(format!("noise std must be non-negative, got {noise_std}")));
    }
    let mut frames = clip.sequence.frames().to_vec();
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut r = rng::rng(seed);
        for v in frames.iter_mut().flatten().flatten() {
            *v += normal.sample(&mut r);
        }
    }
    Ok(ClipRecord {
        clip_id: format!("{}_low", clip.clip_id),
        sequence: MotionSequence::new(clip.sequence.fps(), frames)?.round_to_f32(),
        caption: None,
        quality_tier: QualityTier::Low,
        family: clip.family.clone(),
        seed,
    })
}
