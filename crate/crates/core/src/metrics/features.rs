use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::stats::Features;
use crate::error::{Error, Result};
use crate::linalg::{accumulate_col_sums, add_row_bias, gemm, matmul};
use crate::motion::{root_center, Frame, MotionSequence, NUM_JOINTS};
use crate::params::{Adam, AdamConfig, Block, BlockMut, ParamSet};
use crate::rng;

/// Linearly resamples a clip to `frames` frames (endpoints kept).
pub fn resample(seq: &MotionSequence, frames: usize) -> Result<Vec<Frame>> {
    let src = seq.frames();
    if src.is_empty() || frames == 0 {
        return Err(Error::InsufficientLength { needed: 1, got: src.len().min(frames) });
    }
    Ok((0..frames)
        .map(|k| {
            if src.len() == 1 || frames == 1 {
                return src[0];
            }
            let s = k as f64 * (src.len() - 1) as f64 / (frames - 1) as f64;
            let i = (s.floor() as usize).min(src.len() - 2);
            let w = s - i as f64;
            let mut out = [[0.0; 3]; NUM_JOINTS];
            for j in 0..NUM_JOINTS {
                for a in 0..3 {
                    out[j][a] = (1.0 - w) * src[i][j][a] + w * src[i + 1][j][a];
                }
            }
            out
        })
        .collect())
}

/// Root-centered, resampled, flattened clip.
pub fn clip_vector(seq: &MotionSequence, frames: usize) -> Result<Vec<f64>> {
    let (centered, _) = root_center(seq);
    Ok(resample(&centered, frames)?.iter().flatten().flatten().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Fixed Gaussian projection.
    RandomProjection,
    /// Encoder half of a small tanh autoencoder fitted to the clips given.
    TrainedAutoencoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub mode: FeatureMode,
    pub dim: usize,
    /// Frames each clip is resampled to.
    pub frames: usize,
    pub seed: u64,
    pub ae_steps: usize,
    pub ae_lr: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { mode: FeatureMode::RandomProjection, dim: 64, frames: 64, seed: 0, ae_steps: 300, ae_lr: 1e-3 }
    }
}

/// Maps clips to `dim`-wide feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub config: FeatureConfig,
    /// `(frames * 45) x dim`
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

struct Autoencoder {
    enc_w: Vec<f64>,
    enc_b: Vec<f64>,
    dec_w: Vec<f64>,
    dec_b: Vec<f64>,
}

impl ParamSet for Autoencoder {
    fn blocks(&self) -> Vec<Block<'_>> {
        vec![
            Block { name: "enc_w".into(), shape: vec![self.enc_w.len()], data: &self.enc_w },
            Block { name: "enc_b".into(), shape: vec![self.enc_b.len()], data: &self.enc_b },
            Block { name: "dec_w".into(), shape: vec![self.dec_w.len()], data: &self.dec_w },
            Block { name: "dec_b".into(), shape: vec![self.dec_b.len()], data: &self.dec_b },
        ]
    }
    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let s = [self.enc_w.len(), self.enc_b.len(), self.dec_w.len(), self.dec_b.len()];
        vec![
            BlockMut { name: "enc_w".into(), shape: vec![s[0]], data: &mut self.enc_w },
            BlockMut { name: "enc_b".into(), shape: vec![s[1]], data: &mut self.enc_b },
            BlockMut { name: "dec_w".into(), shape: vec![s[2]], data: &mut self.dec_w },
            BlockMut { name: "dec_b".into(), shape: vec![s[3]], data: &mut self.dec_b },
        ]
    }
}

impl FeatureExtractor {
    fn input_dim(config: &FeatureConfig) -> usize {
        config.frames * NUM_JOINTS * 3
    }

    /// Builds the extractor. The autoencoder mode fits itself to
    /// `fit_clips`, which must then be nonempty.
    pub fn new(config: &FeatureConfig, fit_clips: &[&MotionSequence]) -> Result<Self> {
        if config.dim == 0 || config.frames == 0 {
            return Err(Error::Config("feature dim and frames must be positive".into()));
        }
        let n_in = Self::input_dim(config);
        let mut r = rng::rng(config.seed);
        let normal = Normal::new(0.0, 1.0 / (n_in as f64).sqrt()).expect("positive std");
        let w: Vec<f64> = (0..n_in * config.dim).map(|_| normal.sample(&mut r)).collect();
        let b = vec![0.0; config.dim];
        match config.mode {
            FeatureMode::RandomProjection => Ok(Self { config: config.clone(), w, b }),
            FeatureMode::TrainedAutoencoder => {
                if fit_clips.is_empty() {
                    return Err(Error::InvalidArgument("the autoencoder extractor needs clips to fit".into()));
                }
                let x: Vec<f64> =
                    fit_clips.iter().map(|s| clip_vector(s, config.frames)).collect::<Result<Vec<_>>>()?.concat();
                let dec_norm = Normal::new(0.0, 1.0 / (config.dim as f64).sqrt()).expect("positive std");
                let mut ae = Autoencoder {
                    enc_w: w,
                    enc_b: b,
                    dec_w: (0..config.dim * n_in).map(|_| dec_norm.sample(&mut r)).collect(),
                    dec_b: vec![0.0; n_in],
                };
                fit_autoencoder(&mut ae, &x, fit_clips.len(), n_in, config)?;
                Ok(Self { config: config.clone(), w: ae.enc_w, b: ae.enc_b })
            }
        }
    }

    pub fn extract(&self, clips: &[&MotionSequence]) -> Result<Features> {
        let n_in = Self::input_dim(&self.config);
        let x: Vec<f64> = clips.iter().map(|s| clip_vector(s, self.config.frames)).collect::<Result<Vec<_>>>()?.concat();
        let mut h = matmul(&x, &self.w, clips.len(), n_in, self.config.dim);
        add_row_bias(&mut h, &self.b);
        if self.config.mode == FeatureMode::TrainedAutoencoder {
            h.iter_mut().for_each(|v| *v = v.tanh());
        }
        Features::new(self.config.dim, h)
    }
}

fn fit_autoencoder(ae: &mut Autoencoder, x: &[f64], n: usize, n_in: usize, cfg: &FeatureConfig) -> Result<()> {
    let f = cfg.dim;
    let mut adam = Adam::new(AdamConfig::default());
    for step in 0..cfg.ae_steps {
        let mut z = matmul(x, &ae.enc_w, n, n_in, f);
        add_row_bias(&mut z, &ae.enc_b);
        let h: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let mut out = matmul(&h, &ae.dec_w, n, f, n_in);
        add_row_bias(&mut out, &ae.dec_b);
        let scale = 1.0 / (n * n_in) as f64;
        let d_out: Vec<f64> = out.iter().zip(x).map(|(o, t)| 2.0 * (o - t) * scale).collect();
        let loss: f64 = out.iter().zip(x).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() * scale;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, what: "feature autoencoder".into() });
        }
        let mut g = Autoencoder {
            enc_w: vec![0.0; ae.enc_w.len()],
            enc_b: vec![0.0; f],
            dec_w: vec![0.0; ae.dec_w.len()],
            dec_b: vec![0.0; n_in],
        };
        gemm(true, false, f, n_in, n, 1.0, &h, &d_out, 0.0, &mut g.dec_w);
        accumulate_col_sums(&d_out, n_in, &mut g.dec_b);
        let mut d_h = vec![0.0; n * f];
        gemm(false, true, n, f, n_in, 1.0, &d_out, &ae.dec_w, 0.0, &mut d_h);
        let d_z: Vec<f64> = d_h.iter().zip(&h).map(|(d, h)| d * (1.0 - h * h)).collect();
        gemm(true, false, n_in, f, n, 1.0, x, &d_z, 0.0, &mut g.enc_w);
        accumulate_col_sums(&d_z, f, &mut g.enc_b);
        adam.step(ae, &g, cfg.ae_lr, |_| true);
    }
    Ok(())
}
