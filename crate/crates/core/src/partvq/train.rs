use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::codec::{vq_loss, LossTerms, PartCodecs, PartData, TokenFrame, VqLossReport, CODEBOOK_BLOCK};
use crate::corpus::ClipRecord;
use crate::error::{Error, Result};
use crate::motion::{BodyPart, Frame, MotionSequence, NUM_PARTS, PELVIS};
use crate::params::{Adam, AdamConfig, ParamSet};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqConfig {
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// A code unused for this many consecutive steps is re-seeded.
    pub dead_after: usize,
    pub seed: u64,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self { codebook_size: 1024, latent_dim: 8, beta: 0.25, lr: 3e-3, steps: 2000, batch_size: 64, dead_after: 50, seed: 0 }
    }
}

impl VqConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.codebook_size == 0 || self.latent_dim == 0 || self.batch_size == 0 {
            return bad("codebook_size, latent_dim and batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be non-negative");
        }
        if self.dead_after == 0 {
            return bad("dead_after must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqTrainReport {
    /// Full-data loss before the first step.
    pub initial: VqLossReport,
    /// Full-data loss after the last step.
    pub final_loss: VqLossReport,
    /// Minibatch loss of every step.
    pub curve: Vec<VqLossReport>,
    pub dead_code_resets: usize,
    /// Upper bound, in millimeters, on the mean per-joint reconstruction error
    /// over the training frames: each joint's error is at most the error norm
    /// of its part vector.
    pub rec_bound_mm: f64,
    pub frames: usize,
}

/// Subtracts the pelvis ground-plane position (x, y) from every joint. Height
/// and orientation stay in the pose.
pub fn planar_center(frame: &Frame) -> (Frame, [f64; 3]) {
    let root = [frame[PELVIS][0], frame[PELVIS][1], 0.0];
    let mut out = *frame;
    for p in out.iter_mut() {
        p[0] -= root[0];
        p[1] -= root[1];
    }
    (out, root)
}

/// Root-centered frames of every clip, in order.
pub fn training_frames(clips: &[ClipRecord]) -> Vec<Frame> {
    clips.iter().flat_map(|c| c.sequence.frames().iter().map(|f| planar_center(f).0)).collect()
}

/// Mean-per-joint error bound implied by per-part reconstruction norms.
pub fn rec_bound_mm(report: &VqLossReport) -> f64 {
    let joints: usize = BodyPart::ALL.iter().map(|p| p.joints().len()).sum();
    1000.0 * BodyPart::ALL.iter().map(|p| p.joints().len() as f64 * report.rec_per_part[p.index()]).sum::<f64>()
        / joints as f64
}

/// Trains five part codecs on root-centered frames with Adam.
pub fn train_vq(frames: &[Frame], config: &VqConfig) -> Result<(PartCodecs, VqTrainReport)> {
    train_vq_with(frames, config, |_, _| {})
}

/// [`train_vq`] with a per-step callback receiving `(step, minibatch loss)`.
pub fn train_vq_with(
    frames: &[Frame],
    config: &VqConfig,
    mut on_step: impl FnMut(usize, &VqLossReport),
) -> Result<(PartCodecs, VqTrainReport)> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::Precondition("vector quantizer training needs at least one frame".into()));
    }
    let data = PartData::from_frames(frames)?;
    let mut r = rng::rng(config.seed);
    let mut codecs = PartCodecs::new(config.codebook_size, config.latent_dim, &mut r)?;
    codecs.init_codebooks(&data, &mut r);
    let (initial, _, _) = vq_loss(&data, &codecs, config.beta, LossTerms::ALL)?;

    let mut adam = Adam::new(AdamConfig::default());
    let mut last_used = vec![vec![0usize; config.codebook_size]; NUM_PARTS];
    let mut curve = Vec::with_capacity(config.steps);
    let mut resets = 0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let batch = config.batch_size.min(data.len());
    for step in 0..config.steps {
        if cursor + batch > order.len() {
            order.shuffle(&mut r);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let mb = data.subset(idx);
        let (report, grads, assign) = vq_loss(&mb, &codecs, config.beta, LossTerms::ALL)?;
        if !report.total.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence { step, what: "non-finite vector quantizer loss".into() });
        }
        adam.step(&mut codecs, &grads, config.lr, |_| true);
        on_step(step, &report);
        curve.push(report);

        for (pi, used) in assign.0.iter().enumerate() {
            for &k in used {
                last_used[pi][k] = step + 1;
            }
            let d = config.latent_dim;
            for k in 0..config.codebook_size {
                if step + 1 - last_used[pi][k] >= config.dead_after {
                    let row = r.random_range(0..data.len());
                    let part = codecs.parts[pi].part;
                    let z = codecs.parts[pi].encode(&data.gather(part, &[row]));
                    codecs.parts[pi].codebook[k * d..(k + 1) * d].copy_from_slice(&z);
                    adam.reset_row(pi * 9 + CODEBOOK_BLOCK, k, d);
                    last_used[pi][k] = step + 1;
                    resets += 1;
                }
            }
        }
    }
    let (final_loss, _, _) = vq_loss(&data, &codecs, config.beta, LossTerms::ALL)?;
    if !final_loss.total.is_finite() {
        return Err(Error::Divergence { step: config.steps, what: "non-finite final loss".into() });
    }
    let report = VqTrainReport {
        initial,
        final_loss,
        curve,
        dead_code_resets: resets,
        rec_bound_mm: rec_bound_mm(&final_loss),
        frames: data.len(),
    };
    Ok((codecs, report))
}

/// Per-frame tokens of a clip plus the ground-plane root track that was
/// removed before quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub fps: u32,
    pub frames: Vec<TokenFrame>,
    pub root: Vec<[f64; 3]>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn tokenize_sequence(seq: &MotionSequence, codecs: &PartCodecs) -> Result<TokenSequence> {
    let mut frames = Vec::with_capacity(seq.len());
    let mut root = Vec::with_capacity(seq.len());
    for f in seq.frames() {
        let (centered, r) = planar_center(f);
        frames.push(codecs.encode_frame(&centered)?.0);
        root.push(r);
    }
    Ok(TokenSequence { fps: seq.fps(), frames, root })
}

/// Decodes every token frame and re-applies the root track. An empty root
/// track leaves the motion centered.
pub fn detokenize_sequence(tokens: &TokenSequence, codecs: &PartCodecs) -> Result<MotionSequence> {
    if tokens.frames.is_empty() {
        return Err(Error::Shape("empty token sequence".into()));
    }
    if !tokens.root.is_empty() && tokens.root.len() != tokens.frames.len() {
        return Err(Error::Shape(format!(
            "root track has {} rows for {} token frames",
            tokens.root.len(),
            tokens.frames.len()
        )));
    }
    let frames = tokens
        .frames
        .iter()
        .enumerate()
        .map(|(t, tf)| {
            let mut f = codecs.decode_frame(tf)?;
            if let Some(r) = tokens.root.get(t) {
                for p in f.iter_mut() {
                    for a in 0..3 {
                        p[a] += r[a];
                    }
                }
            }
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    MotionSequence::new(tokens.fps, frames)
}
