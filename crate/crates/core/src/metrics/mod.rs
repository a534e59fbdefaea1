//! Motion evaluation: joint-position errors with and without similarity
//! alignment, derivative errors, Fréchet distance between feature
//! distributions, and diversity.

mod align;
mod features;
mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use align::{mpjpe, procrustes_align, vel_accel_error, Alignment, Similarity};
pub use features::{clip_vector, resample, FeatureConfig, FeatureExtractor, FeatureMode};
pub use stats::{diversity, fid, matrix_sqrt_psd, Features, EIG_CLAMP};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub features: FeatureConfig,
    pub diversity_pairs: usize,
    pub diversity_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { features: FeatureConfig::default(), diversity_pairs: 200, diversity_seed: 0 }
    }
}

/// Aggregate metrics over matched (prediction, ground truth) clip pairs.
/// Position errors are in millimeters, velocity in mm/s, acceleration in
/// mm/s². Distribution metrics are `None` with fewer than two clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub e_mpjpe_g: f64,
    pub e_mpjpe_pa: f64,
    pub e_vel: f64,
    pub e_accel: f64,
    pub fid: Option<f64>,
    pub diversity: Option<f64>,
    pub clips: usize,
    pub frames: usize,
    pub feature_seed: u64,
    pub diversity_seed: u64,
}

impl MetricsReport {
    pub fn render_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        format!(
            "{:>12} {:>12} {:>12} {:>14} {:>10} {:>10}\n{:>12.3} {:>12.3} {:>12.3} {:>14.3} {:>10} {:>10}\n",
            "E_mpjpe-g",
            "E_mpjpe-pa",
            "E_vel",
            "E_accel",
            "FID",
            "Diversity",
            self.e_mpjpe_g,
            self.e_mpjpe_pa,
            self.e_vel,
            self.e_accel,
            opt(self.fid),
            opt(self.diversity)
        )
    }
}

/// Computes every metric. Pairs are matched by position; each needs at least
/// three frames. FID compares ground-truth features (reference) against
/// prediction features; diversity is measured on the predictions.
pub fn evaluate(pred: &[MotionSequence], gt: &[MotionSequence], cfg: &EvalConfig) -> Result<MetricsReport> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted clips vs {} reference clips", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let sums: Vec<[f64; 8]> = pred
        .par_iter()
        .zip(gt)
        .map(|(p, g)| {
            let (sg, ng) = align::mpjpe_sum(p, g, Alignment::None)?;
            let (sp, np) = align::mpjpe_sum(p, g, Alignment::Procrustes)?;
            vel_accel_error(p, g)?;
            let (sv, nv) = align::diff_error_sum(p, g, 1)?;
            let (sa, na) = align::diff_error_sum(p, g, 2)?;
            Ok([sg, ng as f64, sp, np as f64, sv, nv as f64, sa, na as f64])
        })
        .collect::<Result<_>>()?;
    let tot = sums.iter().fold([0.0; 8], |mut acc, s| {
        for (a, b) in acc.iter_mut().zip(s) {
            *a += b;
        }
        acc
    });
    let (fid_v, div_v) = if pred.len() >= 2 {
        let refs: Vec<&MotionSequence> = gt.iter().collect();
        let preds: Vec<&MotionSequence> = pred.iter().collect();
        let extractor = FeatureExtractor::new(&cfg.features, &refs)?;
        let fr = extractor.extract(&refs)?;
        let fp = extractor.extract(&preds)?;
        (Some(fid(&fr, &fp)?), Some(diversity(&fp, cfg.diversity_pairs, cfg.diversity_seed)?))
    } else {
        (None, None)
    };
    let report = MetricsReport {
        e_mpjpe_g: 1000.0 * tot[0] / tot[1],
        e_mpjpe_pa: 1000.0 * tot[2] / tot[3],
        e_vel: 1000.0 * tot[4] / tot[5],
        e_accel: 1000.0 * tot[6] / tot[7],
        fid: fid_v,
        diversity: div_v,
        clips: pred.len(),
        frames: pred.iter().map(|p| p.len()).sum(),
        feature_seed: cfg.features.seed,
        diversity_seed: cfg.diversity_seed,
    };
    let values = [report.e_mpjpe_g, report.e_mpjpe_pa, report.e_vel, report.e_accel];
    if values.iter().chain(report.fid.iter()).chain(report.diversity.iter()).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite("metrics report".into()));
    }
    Ok(report)
}
