use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{forward_cached, Fusion, LmParams};
use crate::error::{Error, Result};
use crate::rng;
use crate::uvocab::{Special, UnifiedVocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Sampling temperature; 0 means greedy argmax.
    pub temperature: f64,
    /// Maximum number of generated tokens, `<eos>` excluded.
    pub max_len: usize,
    /// Constrain output to the motion stream `(part0 .. part4 <frame>)*`.
    pub grammar: bool,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { temperature: 0.0, max_len: 240, grammar: true, seed: 0 }
    }
}

/// Token ranges the motion grammar needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionGrammar {
    pub motion_base: u32,
    pub codebook_size: u32,
    pub frame: u32,
    pub eos: u32,
}

impl MotionGrammar {
    pub fn new(vocab: &UnifiedVocab) -> Self {
        Self {
            motion_base: vocab.motion_base() as u32,
            codebook_size: vocab.codebook_size() as u32,
            frame: vocab.special(Special::Frame),
            eos: vocab.special(Special::Eos),
        }
    }

    /// Whether `id` may follow `emitted` generated tokens.
    pub fn allows(&self, emitted: usize, id: u32) -> bool {
        match emitted % 6 {
            5 => id == self.frame,
            slot => {
                let lo = self.motion_base + slot as u32 * self.codebook_size;
                (lo..lo + self.codebook_size).contains(&id) || (slot == 0 && emitted > 0 && id == self.eos)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    /// Generated tokens, without the prompt and without `<eos>`.
    pub ids: Vec<u32>,
    pub stopped_at_eos: bool,
}

fn pick(logits: &[f64], allowed: impl Fn(u32) -> bool, temperature: f64, r: &mut rng::Rng) -> Option<u32> {
    if temperature <= 0.0 {
        let mut best: Option<(u32, f64)> = None;
        for (i, &z) in logits.iter().enumerate() {
            if allowed(i as u32) && best.is_none_or(|(_, b)| z > b) {
                best = Some((i as u32, z));
            }
        }
        return best.map(|(i, _)| i);
    }
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i as u32))
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let w: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &z)| if allowed(i as u32) { ((z - max) / temperature).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    let mut u = r.random::<f64>() * total;
    let mut last = None;
    for (i, wi) in w.iter().enumerate() {
        if *wi > 0.0 {
            last = Some(i as u32);
            if u < *wi {
                return last;
            }
            u -= wi;
        }
    }
    last
}

/// Autoregressive decoding after `prompt` (which should end with `<sep>`).
/// Stops at `<eos>`, at `max_len`, or when the context is full. With the
/// grammar on, output always consists of whole frames.
pub fn generate(
    params: &LmParams,
    vocab: &UnifiedVocab,
    prompt: &[u32],
    cfg: &DecodeConfig,
    fusion: Option<&Fusion>,
) -> Result<Generation> {
    let ctx = params.config.context;
    if prompt.is_empty() || prompt.len() > ctx {
        return Err(Error::InvalidArgument(format!("prompt of {} tokens does not fit context {ctx}", prompt.len())));
    }
    if vocab.len() != params.config.vocab_size {
        return Err(Error::Vocabulary(format!(
            "model expects {} tokens but the vocabulary has {}",
            params.config.vocab_size,
            vocab.len()
        )));
    }
    let grammar = MotionGrammar::new(vocab);
    let eos = grammar.eos;
    let budget = cfg.max_len.min(ctx - prompt.len());
    let v = params.config.vocab_size;
    let mut r = rng::rng(cfg.seed);
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < budget {
        if cfg.grammar && out.len() % 6 == 0 && out.len() + 6 > budget {
            break;
        }
        let (logits, _) = forward_cached(params, &seq, fusion)?;
        let last = &logits[(seq.len() - 1) * v..];
        let n = out.len();
        let next = if cfg.grammar {
            pick(last, |id| grammar.allows(n, id), cfg.temperature, &mut r)
        } else {
            pick(last, |_| true, cfg.temperature, &mut r)
        }
        .expect("at least one token is always allowed");
        if next == eos {
            return Ok(Generation { ids: out, stopped_at_eos: true });
        }
        out.push(next);
        seq.push(next);
    }
    Ok(Generation { ids: out, stopped_at_eos: false })
}
