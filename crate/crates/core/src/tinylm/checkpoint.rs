//! Language-model checkpoint.
//!
//! ```text
//! "HLM1" | layers heads d_model d_ff context vocab tie : u32 | seed : u64
//! | block count : u32 | blocks
//! block = name_len : u32 | name | ndim : u32 | dims : u32* | data : f32*
//! ```
//!
//! All integers and floats are little-endian. Extra sections (the adapter
//! section written by fine-tuning) may follow the last block; the base loader
//! ignores them.

use std::path::Path;

use super::model::{LmParams, ModelConfig};
use crate::error::{Error, Result};
use crate::params::{Block, BlockMut, ParamSet};

pub const LM_MAGIC: [u8; 4] = *b"HLM1";

pub(crate) fn write_blocks(out: &mut Vec<u8>, blocks: &[Block<'_>]) {
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
        for &s in &b.shape {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for v in b.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
}

/// Byte cursor with truncation-aware reads.
pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Truncated(what.to_string())),
        }
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }
}

/// Reads a block list into `dst`, requiring the same names and shapes in the
/// same order.
pub(crate) fn read_blocks(r: &mut Reader<'_>, dst: Vec<BlockMut<'_>>) -> Result<()> {
    let n = r.u32("block count")? as usize;
    if n != dst.len() {
        return Err(Error::Malformed(format!("checkpoint has {n} blocks, model expects {}", dst.len())));
    }
    for b in dst {
        let len = r.u32("block name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "block name")?)
            .map_err(|_| Error::Malformed("block name is not UTF-8".into()))?;
        if name != b.name {
            return Err(Error::Malformed(format!("expected block {}, found {name}", b.name)));
        }
        let ndim = r.u32("block rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u32("block shape")? as usize);
        }
        if shape != b.shape {
            return Err(Error::Malformed(format!("block {name} has shape {shape:?}, expected {:?}", b.shape)));
        }
        let raw = r.take(4 * b.data.len(), &format!("data of block {name}"))?;
        for (v, c) in b.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("checkpoint block {name}")));
            }
        }
    }
    Ok(())
}

pub fn encode_lm(params: &LmParams) -> Vec<u8> {
    let c = &params.config;
    let mut out = LM_MAGIC.to_vec();
    for v in [c.layers, c.heads, c.d_model, c.d_ff, c.context, c.vocab_size, c.tie_embeddings as usize] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    write_blocks(&mut out, &params.blocks());
    out
}

/// Decodes the base model and returns it with the number of bytes consumed.
pub fn decode_lm_prefix(bytes: &[u8]) -> Result<(LmParams, usize)> {
    let mut r = Reader::new(bytes);
    r.magic(LM_MAGIC)?;
    let mut w = [0usize; 7];
    for x in &mut w {
        *x = r.u32("model header")? as usize;
    }
    let config = ModelConfig {
        layers: w[0],
        heads: w[1],
        d_model: w[2],
        d_ff: w[3],
        context: w[4],
        vocab_size: w[5],
        tie_embeddings: w[6] != 0,
        seed: r.u64("model header")?,
    };
    config.validate().map_err(|e| Error::Malformed(format!("checkpoint config: {e}")))?;
    let mut params = LmParams::zeros(&config);
    read_blocks(&mut r, params.blocks_mut())?;
    Ok((params, r.pos))
}

pub fn decode_lm(bytes: &[u8]) -> Result<LmParams> {
    decode_lm_prefix(bytes).map(|(p, _)| p)
}

pub fn save_lm(path: &Path, params: &LmParams) -> Result<()> {
    std::fs::write(path, encode_lm(params))?;
    Ok(())
}

pub fn load_lm(path: &Path) -> Result<LmParams> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_lm(&std::fs::read(path)?)
}
