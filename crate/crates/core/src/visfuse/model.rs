use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{patchify, PatchEncoder, Patches};
use super::fuse::CrossAttn;
use super::scene::SceneImage;
use crate::error::{Error, Result};
use crate::params::{checksum, Adam, AdamConfig, Block, BlockMut, ParamSet};
use crate::rng;
use crate::tinylm::{
    clip_grad_norm, generate, read_blocks, write_blocks, Batcher, CurvePoint, DecodeConfig, Fusion, Generation,
    LmParams, LmRecord, ModelConfig, Reader, TrainConfig, Want,
};
use crate::uvocab::UnifiedVocab;

pub const VLA_MAGIC: [u8; 4] = *b"HVA1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisConfig {
    pub patch: usize,
    /// Visual token width; a multiple of 4.
    pub d_vis: usize,
    /// Cross-attention width; 0 uses the decoder width.
    pub d_attn: usize,
    /// Keep the patch projector fixed during fine-tuning.
    pub freeze_vision: bool,
    pub seed: u64,
}

impl Default for VisConfig {
    fn default() -> Self {
        Self { patch: 8, d_vis: 32, d_attn: 0, freeze_vision: false, seed: 0 }
    }
}

/// Trainable state of vision-conditioned fine-tuning: the patch projector
/// and one cross-attention adapter per decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub config: VisConfig,
    pub vision: PatchEncoder,
    pub adapters: Vec<CrossAttn>,
}

impl FusionParams {
    pub fn new(config: &VisConfig, base: &ModelConfig) -> Result<Self> {
        let mut r = rng::rng(config.seed);
        let vision = PatchEncoder::new(config.patch, config.d_vis, &mut r)?;
        let d_attn = if config.d_attn == 0 { base.d_model } else { config.d_attn };
        let adapters = (0..base.layers).map(|_| CrossAttn::new(base.d_model, config.d_vis, d_attn, &mut r)).collect();
        Ok(Self { config: config.clone(), vision, adapters })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            vision: self.vision.zeros_like(),
            adapters: self.adapters.iter().map(|a| a.zeros_like()).collect(),
        }
    }

    fn check_base(&self, base: &LmParams) -> Result<()> {
        let ok = self.adapters.len() == base.config.layers
            && self.adapters.iter().all(|a| a.d_model == base.config.d_model && a.d_vis == self.vision.d_vis);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("adapters do not match the base model".into()))
        }
    }
}

impl ParamSet for FusionParams {
    fn blocks(&self) -> Vec<Block<'_>> {
        let (n, d) = (self.vision.w.len() / self.vision.d_vis, self.vision.d_vis);
        let mut out = vec![
            Block { name: "vision.w".into(), shape: vec![n, d], data: &self.vision.w },
            Block { name: "vision.b".into(), shape: vec![d], data: &self.vision.b },
        ];
        for (l, a) in self.adapters.iter().enumerate() {
            for (name, shape, data) in a.named() {
                out.push(Block { name: format!("adapter{l}.{name}"), shape, data });
            }
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let (n, d) = (self.vision.w.len() / self.vision.d_vis, self.vision.d_vis);
        let mut out = vec![
            BlockMut { name: "vision.w".into(), shape: vec![n, d], data: &mut self.vision.w },
            BlockMut { name: "vision.b".into(), shape: vec![d], data: &mut self.vision.b },
        ];
        for (l, a) in self.adapters.iter_mut().enumerate() {
            for (name, shape, data) in a.named_mut() {
                out.push(BlockMut { name: format!("adapter{l}.{name}"), shape, data });
            }
        }
        out
    }
}

/// One fine-tuning example: a scene and a token record whose answer is the
/// target motion.
#[derive(Debug, Clone, PartialEq)]
pub struct VlaRecord {
    pub image: SceneImage,
    pub record: LmRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub curve: Vec<CurvePoint>,
    pub base_checksum_before: String,
    pub base_checksum_after: String,
    /// Squared norm of all updates applied to base blocks.
    pub frozen_update_norm: f64,
}

fn record_step(
    base: &LmParams,
    fusion: &FusionParams,
    patches: &Patches,
    rec: &LmRecord,
    loss_on_prompt: bool,
) -> Result<(f64, usize, FusionParams)> {
    let visual = fusion.vision.encode_patches(patches);
    let fu = Fusion { adapters: &fusion.adapters, visual: &visual, tokens: patches.count() };
    let want = Want { base: false, adapters: true, visual: !fusion.config.freeze_vision };
    let g = crate::tinylm::record_grad(base, rec, loss_on_prompt, Some(&fu), want)?;
    let mut grads = fusion.zeros_like();
    grads.adapters = g.adapters.expect("adapter grads requested");
    if let Some(dv) = g.visual {
        fusion.vision.backward(patches, &dv, &mut grads.vision);
    }
    Ok((g.nll_sum, g.count, grads))
}

/// Trains the vision projector and adapters against a frozen base model
/// with the answer-masked objective. The base model is only borrowed; its
/// block checksum is still compared before and after as a hard check.
pub fn finetune(base: &LmParams, fusion: &mut FusionParams, data: &[VlaRecord], cfg: &TrainConfig) -> Result<FinetuneReport> {
    finetune_with(base, fusion, data, cfg, |_| {})
}

pub fn finetune_with(
    base: &LmParams,
    fusion: &mut FusionParams,
    data: &[VlaRecord],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&CurvePoint),
) -> Result<FinetuneReport> {
    cfg.validate()?;
    fusion.check_base(base)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("fine-tuning set is empty".into()));
    }
    let before = checksum(base, |_| true);
    let patches: Vec<Patches> = data.iter().map(|r| patchify(&r.image, fusion.config.patch)).collect::<Result<_>>()?;
    for r in data {
        r.record.validate()?;
        if r.record.ids.len() > base.config.context {
            return Err(Error::Config(format!("a {}-token record does not fit context {}", r.record.ids.len(), base.config.context)));
        }
    }
    let freeze_vision = fusion.config.freeze_vision;
    let mut adam = Adam::new(AdamConfig::default());
    let mut batcher = Batcher::new(data.len(), cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = batcher.next(cfg.batch_size);
        let parts: Vec<(f64, usize, FusionParams)> = idx
            .par_iter()
            .map(|&i| record_step(base, fusion, &patches[i], &data[i].record, cfg.loss_on_prompt))
            .collect::<Result<_>>()?;
        let total: usize = parts.iter().map(|p| p.1).sum();
        let mut grads = fusion.zeros_like();
        let mut loss = 0.0;
        for (s, _, g) in &parts {
            loss += s;
            grads.add_scaled(g, 1.0 / total as f64);
        }
        loss /= total as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, what: format!("fine-tuning loss {loss}") });
        }
        clip_grad_norm(&mut grads, cfg.clip_norm);
        let lr = cfg.lr_at(step);
        adam.step(fusion, &grads, lr, |name| !(freeze_vision && name.starts_with("vision.")));
        if !fusion.all_finite() {
            return Err(Error::Divergence { step, what: "non-finite adapter parameters".into() });
        }
        let p = CurvePoint { step, loss, lr };
        on_step(&p);
        curve.push(p);
    }
    let after = checksum(base, |_| true);
    if after != before {
        return Err(Error::FrozenViolation(format!("base checksum changed from {before} to {after}")));
    }
    Ok(FinetuneReport { curve, base_checksum_before: before, base_checksum_after: after, frozen_update_norm: 0.0 })
}

/// Decodes a motion answer for a scene.
pub fn generate_vla(
    base: &LmParams,
    fusion: &FusionParams,
    vocab: &UnifiedVocab,
    image: &SceneImage,
    prompt: &[u32],
    cfg: &DecodeConfig,
) -> Result<Generation> {
    fusion.check_base(base)?;
    let p = patchify(image, fusion.config.patch)?;
    let visual = fusion.vision.encode_patches(&p);
    let fu = Fusion { adapters: &fusion.adapters, visual: &visual, tokens: p.count() };
    generate(base, vocab, prompt, cfg, Some(&fu))
}

/// Base checkpoint followed by `"HVA1" | config_len : u32 | config JSON |
/// blocks` in the base block layout.
pub fn encode_vla(base: &LmParams, fusion: &FusionParams) -> Result<Vec<u8>> {
    fusion.check_base(base)?;
    let mut out = crate::tinylm::encode_lm(base);
    out.extend_from_slice(&VLA_MAGIC);
    let cfg = serde_json::to_vec(&fusion.config)?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    write_blocks(&mut out, &fusion.blocks());
    Ok(out)
}

pub fn decode_vla(bytes: &[u8]) -> Result<(LmParams, FusionParams)> {
    let (base, used) = crate::tinylm::decode_lm_prefix(bytes)?;
    let mut r = Reader::new(&bytes[used..]);
    r.magic(VLA_MAGIC)?;
    let n = r.u32("adapter config length")? as usize;
    let config: VisConfig = serde_json::from_slice(r.take(n, "adapter config")?)
        .map_err(|e| Error::Malformed(format!("adapter config: {e}")))?;
    let mut fusion = FusionParams::new(&config, &base.config)?;
    read_blocks(&mut r, fusion.blocks_mut())?;
    if r.pos != r.bytes.len() {
        return Err(Error::Malformed("trailing bytes after adapter blocks".into()));
    }
    Ok((base, fusion))
}

pub fn save_vla(path: &std::path::Path, base: &LmParams, fusion: &FusionParams) -> Result<()> {
    std::fs::write(path, encode_vla(base, fusion)?)?;
    Ok(())
}

pub fn load_vla(path: &std::path::Path) -> Result<(LmParams, FusionParams)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_vla(&std::fs::read(path)?)
}
