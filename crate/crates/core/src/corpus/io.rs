//! Clip files.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "HVLA" | version u16 | fps u16 | T u32 | T*15*3 f32 | meta_len u32 | meta JSON
//! ```
//!
//! The trailing metadata block carries the clip id, caption, tier, family,
//! and seed. JSON clips follow the schema in [`ClipJson`].

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClipRecord, QualityTier};
use crate::error::{Error, Result};
use crate::motion::{Frame, MotionSequence, JOINT_NAMES, NUM_JOINTS};

pub const CLIP_MAGIC: [u8; 4] = *b"HVLA";
pub const CLIP_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipFormat {
    Json,
    Binary,
}

impl ClipFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ClipFormat::Json => "json",
            ClipFormat::Binary => "hvla",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "json" => Some(ClipFormat::Json),
            "hvla" => Some(ClipFormat::Binary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipJson {
    pub clip_id: String,
    pub fps: u32,
    pub quality_tier: QualityTier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    pub joint_names: Vec<String>,
    pub frames: Vec<Vec<[f64; 3]>>,
    #[serde(default)]
    pub family: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BinaryMeta {
    clip_id: String,
    quality_tier: QualityTier,
    #[serde(default)]
    caption: Option<String>,
    family: String,
    seed: u64,
}

pub fn clip_to_json(clip: &ClipRecord) -> ClipJson {
    ClipJson {
        clip_id: clip.clip_id.clone(),
        fps: clip.sequence.fps(),
        quality_tier: clip.quality_tier,
        caption: clip.caption.clone(),
        joint_names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        frames: clip.sequence.frames().iter().map(|f| f.to_vec()).collect(),
        family: clip.family.clone(),
        seed: clip.seed,
    }
}

pub fn clip_from_json(json: ClipJson) -> Result<ClipRecord> {
    if json.joint_names.len() != NUM_JOINTS || json.joint_names.iter().zip(JOINT_NAMES).any(|(a, b)| a != b) {
        return Err(Error::Malformed(format!("clip `{}` does not use the canonical joint names", json.clip_id)));
    }
    let frames = json
        .frames
        .iter()
        .enumerate()
        .map(|(t, rows)| {
            <Frame>::try_from(rows.as_slice())
                .map_err(|_| Error::Shape(format!("frame {t} has {} joints, expected 15", rows.len())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClipRecord {
        clip_id: json.clip_id,
        sequence: MotionSequence::new(json.fps, frames)?,
        caption: json.caption,
        quality_tier: json.quality_tier,
        family: json.family,
        seed: json.seed,
    })
}

pub fn encode_binary(clip: &ClipRecord) -> Result<Vec<u8>> {
    let seq = &clip.sequence;
    let fps = u16::try_from(seq.fps()).map_err(|_| Error::InvalidArgument("fps does not fit in u16".into()))?;
    let t = u32::try_from(seq.len()).map_err(|_| Error::InvalidArgument("too many frames".into()))?;
    let mut out = Vec::with_capacity(16 + seq.len() * NUM_JOINTS * 12);
    out.extend_from_slice(&CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    out.extend_from_slice(&fps.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for v in seq.frames().iter().flatten().flatten() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let meta = serde_json::to_vec(&BinaryMeta {
        clip_id: clip.clip_id.clone(),
        quality_tier: clip.quality_tier,
        caption: clip.caption.clone(),
        family: clip.family.clone(),
        seed: clip.seed,
    })?;
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!("{what}: need {n} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<ClipRecord> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = match bytes.get(..4) {
        Some(m) => m.try_into().unwrap(),
        None => return Err(Error::Truncated("missing magic".into())),
    };
    if magic != CLIP_MAGIC {
        return Err(Error::BadMagic { expected: CLIP_MAGIC, found: magic });
    }
    r.pos = 4;
    let version = r.u16("version")?;
    if version != CLIP_VERSION {
        return Err(Error::VersionMismatch { expected: CLIP_VERSION, found: version });
    }
    let fps = r.u16("fps")?;
    let t = r.u32("frame count")? as usize;
    let payload = r.take(t * NUM_JOINTS * 3 * 4, "frame payload")?;
    let mut frames = vec![[[0.0; 3]; NUM_JOINTS]; t];
    for (v, chunk) in frames.iter_mut().flatten().flatten().zip(payload.chunks_exact(4)) {
        *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta: BinaryMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)?;
    Ok(ClipRecord {
        clip_id: meta.clip_id,
        sequence: MotionSequence::new(fps as u32, frames)?,
        caption: meta.caption,
        quality_tier: meta.quality_tier,
        family: meta.family,
        seed: meta.seed,
    })
}

/// Writes a clip; the format follows the file extension unless given.
pub fn save_clip(path: &Path, clip: &ClipRecord, format: Option<ClipFormat>) -> Result<()> {
    let format = format
        .or_else(|| ClipFormat::from_path(path))
        .ok_or_else(|| Error::InvalidArgument(format!("cannot infer clip format for {}", path.display())))?;
    let bytes = match format {
        ClipFormat::Binary => encode_binary(clip)?,
        ClipFormat::Json => serde_json::to_vec(&clip_to_json(clip))?,
    };
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_clip(path: &Path, format: Option<ClipFormat>) -> Result<ClipRecord> {
    let format = format
        .or_else(|| ClipFormat::from_path(path))
        .ok_or_else(|| Error::InvalidArgument(format!("cannot infer clip format for {}", path.display())))?;
    let bytes = fs::read(path)?;
    match format {
        ClipFormat::Binary => decode_binary(&bytes),
        ClipFormat::Json => clip_from_json(serde_json::from_slice(&bytes)?),
    }
}

/// Clip files directly inside `dir`, sorted by file name.
pub fn list_clip_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && ClipFormat::from_path(p).is_some())
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every clip in `dir`, sorted by clip id.
pub fn load_corpus(dir: &Path) -> Result<Vec<ClipRecord>> {
    let mut clips = list_clip_files(dir)?.iter().map(|p| load_clip(p, None)).collect::<Result<Vec<_>>>()?;
    clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_clip, GenParams, MotionFamily};
    use proptest::prelude::*;

    fn sample() -> ClipRecord {
        generate_clip(MotionFamily::WaveArm, &GenParams { frames: 12, ..Default::default() }, 21).unwrap()
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.hvla");
        let clip = sample();
        save_clip(&path, &clip, None).unwrap();
        assert_eq!(load_clip(&path, None).unwrap(), clip);
    }

    #[test]
    fn json_roundtrip_within_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        let clip = sample();
        save_clip(&path, &clip, None).unwrap();
        let back = load_clip(&path, None).unwrap();
        let max = back
            .sequence
            .frames()
            .iter()
            .flatten()
            .flatten()
            .zip(clip.sequence.frames().iter().flatten().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-7);
        assert_eq!(back.caption, clip.caption);
    }

    #[test]
    fn bad_magic_version_and_truncation_are_distinct() {
        let bytes = encode_binary(&sample()).unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_binary(&wrong), Err(Error::BadMagic { .. })));
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(matches!(decode_binary(&ver), Err(Error::VersionMismatch { found: 9, .. })));
        assert!(matches!(decode_binary(&bytes[..bytes.len() / 2]), Err(Error::Truncated(_))));
    }

    #[test]
    fn json_with_wrong_joint_names_is_rejected() {
        let mut j = clip_to_json(&sample());
        j.joint_names[0] = "root".into();
        assert!(clip_from_json(j).is_err());
    }

    proptest! {
        #[test]
        fn binary_roundtrip_any_f32_values(values in proptest::collection::vec(-50.0f32..50.0, 45 * 3), fps in 1u32..240) {
            let frames: Vec<Frame> = values.chunks(45).map(|c| {
                let mut f = [[0.0; 3]; NUM_JOINTS];
                for j in 0..NUM_JOINTS { for a in 0..3 { f[j][a] = c[3 * j + a] as f64; } }
                f
            }).collect();
            let clip = ClipRecord {
                clip_id: "p".into(),
                sequence: MotionSequence::new(fps, frames).unwrap(),
                caption: None,
                quality_tier: QualityTier::Low,
                family: "walk".into(),
                seed: 3,
            };
            prop_assert_eq!(decode_binary(&encode_binary(&clip).unwrap()).unwrap(), clip);
        }
    }
}
