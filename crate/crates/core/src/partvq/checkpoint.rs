//! Codec checkpoint: `"HVQ1" | parts u32 | K u32 | d u32`, then for each part
//! in canonical order the blocks `enc_w1 enc_b1 enc_w2 enc_b2 dec_w1 dec_b1
//! dec_w2 dec_b2 codebook`, all little-endian `f32`. Block shapes follow from
//! the part dimensions, `K`, and `d`.

use std::path::Path;

use super::codec::{PartCodec, PartCodecs};
use crate::error::{Error, Result};
use crate::motion::{BodyPart, NUM_PARTS};
use crate::params::ParamSet;
use crate::rng;

pub const VQ_MAGIC: [u8; 4] = *b"HVQ1";

pub fn encode_codecs(codecs: &PartCodecs) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&VQ_MAGIC);
    for v in [NUM_PARTS, codecs.codebook_size, codecs.latent_dim] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for b in codecs.blocks() {
        for v in b.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_codecs(bytes: &[u8]) -> Result<PartCodecs> {
    let magic: [u8; 4] = bytes.get(..4).ok_or_else(|| Error::Truncated("missing magic".into()))?.try_into().unwrap();
    if magic != VQ_MAGIC {
        return Err(Error::BadMagic { expected: VQ_MAGIC, found: magic });
    }
    let header = bytes.get(4..16).ok_or_else(|| Error::Truncated("codec header".into()))?;
    let word = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (parts, k, d) = (word(0), word(1), word(2));
    if parts != NUM_PARTS {
        return Err(Error::Malformed(format!("codec checkpoint has {parts} parts, expected 5")));
    }
    if k == 0 || d == 0 {
        return Err(Error::Malformed("codebook size and latent dim must be positive".into()));
    }
    let mut codecs = PartCodecs {
        codebook_size: k,
        latent_dim: d,
        parts: BodyPart::ALL.map(|p| PartCodec::new(p, k, d, &mut rng::rng(0))),
    };
    let expected: usize = codecs.num_params();
    let payload = &bytes[16..];
    if payload.len() < expected * 4 {
        return Err(Error::Truncated(format!("codec weights: need {} bytes, got {}", expected * 4, payload.len())));
    }
    if payload.len() > expected * 4 {
        return Err(Error::Malformed("trailing bytes after codec weights".into()));
    }
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for b in codecs.blocks_mut() {
        for v in b.data.iter_mut() {
            *v = values.next().unwrap();
        }
    }
    if !codecs.all_finite() {
        return Err(Error::NonFinite("codec checkpoint".into()));
    }
    Ok(codecs)
}

pub fn save_codecs(path: &Path, codecs: &PartCodecs) -> Result<()> {
    std::fs::write(path, encode_codecs(codecs))?;
    Ok(())
}

pub fn load_codecs(path: &Path) -> Result<PartCodecs> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_codecs(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_rounds_to_f32_once() {
        let c = PartCodecs::new(5, 3, &mut rng::rng(1)).unwrap();
        let back = decode_codecs(&encode_codecs(&c)).unwrap();
        for (a, b) in c.blocks().iter().zip(back.blocks()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter().zip(b.data) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        assert_eq!(decode_codecs(&encode_codecs(&back)).unwrap(), back);
    }

    #[test]
    fn corrupt_headers_are_reported() {
        let bytes = encode_codecs(&PartCodecs::new(2, 2, &mut rng::rng(0)).unwrap());
        let mut bad = bytes.clone();
        bad[3] = b'0';
        assert!(matches!(decode_codecs(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_codecs(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
        let mut parts = bytes.clone();
        parts[4] = 4;
        assert!(matches!(decode_codecs(&parts), Err(Error::Malformed(_))));
    }
}
