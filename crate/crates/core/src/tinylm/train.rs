use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{nll_loss, LmParams, LmRecord};
use crate::error::{Error, Result};
use crate::params::{Adam, AdamConfig, ParamSet};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Linear warmup, then cosine decay to zero.
    Cosine,
    /// Linear warmup, then flat.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Fraction of `steps` spent warming up, in `[0, 1)`.
    pub warmup_ratio: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Also score the prompt tokens.
    pub loss_on_prompt: bool,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            warmup_ratio: 0.01,
            schedule: Schedule::Cosine,
            batch_size: 4,
            steps: 2000,
            seed: 0,
            loss_on_prompt: false,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!("warmup_ratio {} is outside [0, 1)", self.warmup_ratio)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.steps as f64).ceil() as usize
    }

    /// Learning rate used at 0-based `step`. Warmup ramps as
    /// `lr * (step + 1) / warmup`; cosine decay reaches exactly zero on the
    /// last step.
    pub fn lr_at(&self, step: usize) -> f64 {
        let w = self.warmup_steps();
        if step < w {
            return self.lr * (step + 1) as f64 / w as f64;
        }
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let span = (self.steps - w).max(1) as f64;
                let progress = ((step + 1 - w) as f64 / span).min(1.0);
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Writes a loss curve as `step,loss,lr` CSV.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("step,loss,lr\n");
    for p in curve {
        s.push_str(&format!("{},{},{}\n", p.step, p.loss, p.lr));
    }
    s
}

/// Minibatch sampler that reshuffles every epoch from a seeded stream.
pub(crate) struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: rng::Rng,
}

impl Batcher {
    pub(crate) fn new(n: usize, seed: u64) -> Self {
        let mut b = Self { order: (0..n).collect(), pos: n, rng: rng::rng(seed) };
        b.pos = b.order.len();
        b
    }

    pub(crate) fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Scales `grads` so their global norm is at most `max`. Returns the norm
/// before clipping.
pub(crate) fn clip_grad_norm<P: ParamSet>(grads: &mut P, max: f64) -> f64 {
    let norm = grads.blocks().iter().flat_map(|b| b.data.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if max > 0.0 && norm > max {
        let s = max / norm;
        for b in grads.blocks_mut() {
            b.data.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Trains in place with Adam. Per-record gradients may be computed in
/// parallel but are summed in a fixed order, so results do not depend on
/// the thread count.
pub fn train(params: &mut LmParams, data: &[LmRecord], cfg: &TrainConfig) -> Result<Vec<CurvePoint>> {
    train_with(params, data, cfg, |_| {})
}

pub fn train_with(
    params: &mut LmParams,
    data: &[LmRecord],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&CurvePoint),
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    for r in data {
        r.validate()?;
        if r.ids.len() > params.config.context {
            return Err(Error::Config(format!(
                "a {}-token record does not fit context {}",
                r.ids.len(),
                params.config.context
            )));
        }
    }
    let mut adam = Adam::new(AdamConfig::default());
    let mut batcher = Batcher::new(data.len(), cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<LmRecord> = batcher.next(cfg.batch_size).into_iter().map(|i| data[i].clone()).collect();
        let (loss, mut grads) = nll_loss(params, &batch, cfg.loss_on_prompt)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, what: format!("language model loss {loss}") });
        }
        clip_grad_norm(&mut grads, cfg.clip_norm);
        let lr = cfg.lr_at(step);
        adam.step(params, &grads, lr, |_| true);
        if !params.all_finite() {
            return Err(Error::Divergence { step, what: "non-finite parameters".into() });
        }
        let point = CurvePoint { step, loss, lr };
        on_step(&point);
        curve.push(point);
    }
    Ok(curve)
}

/// Mean answer NLL of `data` under `params`, without gradients.
pub fn evaluate(params: &LmParams, data: &[LmRecord], loss_on_prompt: bool) -> Result<f64> {
    use super::model::{forward, logit_nll_grad};
    use rayon::prelude::*;
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let parts: Vec<(f64, usize)> = data
        .par_iter()
        .map(|r| {
            r.validate()?;
            let logits = forward(params, &r.ids)?;
            let t = r.targets(loss_on_prompt);
            let n = t.len();
            Ok((logit_nll_grad(&logits, &r.ids, t, params.config.vocab_size).0, n))
        })
        .collect::<Result<_>>()?;
    let (s, n) = parts.iter().fold((0.0, 0), |(s, n), (a, b)| (s + a, n + b));
    Ok(s / n as f64)
}
