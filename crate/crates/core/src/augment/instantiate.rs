use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::template::{AnswerSpec, Slot, Template, TimeUnit};
use crate::corpus::ClipRecord;
use crate::error::{Error, Result};
use crate::motion::{BodyPart, MotionSequence, NUM_JOINTS, NUM_PARTS};
use crate::partvq::{TokenFrame, TokenSequence};
use crate::rng;
use crate::uvocab::{is_slot_marker, split_words, Special, UnifiedVocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentOptions {
    /// Frames between consecutive track waypoints.
    pub track_stride: usize,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self { track_stride: 5 }
    }
}

/// One prompt/answer record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub task: String,
    pub clip_id: String,
    pub seed: u64,
    pub prompt_ids: Vec<u32>,
    pub answer_ids: Vec<u32>,
    pub prompt_text: String,
    pub template_id: u32,
    /// How each slot was filled.
    pub provenance: BTreeMap<String, serde_json::Value>,
}

/// Flat id stream of a token sequence: five part codes then `<frame>`, per frame.
pub fn motion_stream(frames: &[TokenFrame], vocab: &UnifiedVocab) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(frames.len() * (NUM_PARTS + 1));
    for f in frames {
        for (p, &c) in f.0.iter().enumerate() {
            out.push(vocab.motion_token_id(p, c as usize)?);
        }
        out.push(vocab.special(Special::Frame));
    }
    Ok(out)
}

/// Inverse of [`motion_stream`]. A trailing partial frame is an error.
pub fn parse_motion_stream(ids: &[u32], vocab: &UnifiedVocab) -> Result<Vec<TokenFrame>> {
    if ids.len() % (NUM_PARTS + 1) != 0 {
        return Err(Error::Vocabulary(format!("motion stream length {} is not a multiple of 6", ids.len())));
    }
    ids.chunks_exact(NUM_PARTS + 1)
        .map(|chunk| {
            if chunk[NUM_PARTS] != vocab.special(Special::Frame) {
                return Err(Error::Vocabulary("motion frame does not end with <frame>".into()));
            }
            let mut codes = [0u32; NUM_PARTS];
            for (p, &id) in chunk[..NUM_PARTS].iter().enumerate() {
                let (part, code) = vocab.motion_token(id)?;
                if part.index() != p {
                    return Err(Error::Vocabulary(format!("expected a {} code, found {}", BodyPart::ALL[p].name(), part.name())));
                }
                codes[p] = code as u32;
            }
            Ok(TokenFrame(codes))
        })
        .collect()
}

/// Motion stream with `part`'s codes replaced by `<mask>` on frames `[t0, t1)`.
pub fn make_occlusion(
    tokens: &TokenSequence,
    part: usize,
    span: (usize, usize),
    vocab: &UnifiedVocab,
) -> Result<Vec<u32>> {
    let (t0, t1) = span;
    if part >= NUM_PARTS {
        return Err(Error::InvalidArgument(format!("body part index {part} out of range")));
    }
    if t0 >= t1 || t1 > tokens.len() {
        return Err(Error::InvalidArgument(format!("occlusion span [{t0}, {t1}) invalid for {} frames", tokens.len())));
    }
    let mut ids = motion_stream(&tokens.frames, vocab)?;
    for t in t0..t1 {
        ids[t * (NUM_PARTS + 1) + part] = vocab.special(Special::Mask);
    }
    Ok(ids)
}

/// Track tokens of one joint, sampled every `stride` frames starting at frame
/// 0: three bin ids (x, y, z) per waypoint.
pub fn extract_track(seq: &MotionSequence, joint: usize, stride: usize, vocab: &UnifiedVocab) -> Result<Vec<u32>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("track stride must be positive".into()));
    }
    if joint >= NUM_JOINTS {
        return Err(Error::InvalidArgument(format!("joint {joint} out of range")));
    }
    if seq.is_empty() {
        return Err(Error::Shape("empty clip".into()));
    }
    let mut out = Vec::new();
    for f in seq.frames().iter().step_by(stride) {
        for axis in 0..3 {
            out.push(vocab.track_token_id(axis, vocab.quantize(axis, f[joint][axis]))?);
        }
    }
    Ok(out)
}

/// Unified ids of the five codes of frame `n`.
pub fn extract_state(tokens: &TokenSequence, n: usize, vocab: &UnifiedVocab) -> Result<Vec<u32>> {
    let f = tokens
        .frames
        .get(n)
        .ok_or_else(|| Error::InvalidArgument(format!("frame {n} out of range for {} frames", tokens.len())))?;
    f.0.iter().enumerate().map(|(p, &c)| vocab.motion_token_id(p, c as usize)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationSlots {
    pub frames: String,
    pub seconds: String,
}

pub fn duration_of(frames: usize, fps: u32) -> DurationSlots {
    DurationSlots { frames: frames.to_string(), seconds: format!("{:.1}", frames as f64 / fps as f64) }
}

pub fn duration_slots(seq: &MotionSequence) -> DurationSlots {
    duration_of(seq.len(), seq.fps())
}

/// Every numeral a duration slot can produce for these clips: frame counts
/// and seconds for each prefix length.
pub fn time_numerals<'a>(clips: impl IntoIterator<Item = &'a ClipRecord>) -> Vec<String> {
    let mut set = std::collections::BTreeSet::new();
    for c in clips {
        for t in 1..=c.sequence.len() {
            let d = duration_of(t, c.sequence.fps());
            set.insert(d.frames);
            set.insert(d.seconds);
        }
    }
    set.into_iter().collect()
}

/// Uniform occlusion span covering between a quarter and all of `t` frames.
pub fn sample_span(t: usize, r: &mut rng::Rng) -> (usize, usize) {
    let min_len = t.div_ceil(4).max(1);
    let len = r.random_range(min_len..=t);
    let t0 = r.random_range(0..=t - len);
    (t0, t0 + len)
}

fn time_text(frames: usize, fps: u32, unit: TimeUnit) -> String {
    let d = duration_of(frames, fps);
    match unit {
        TimeUnit::Frames => d.frames,
        TimeUnit::Seconds => d.seconds,
    }
}

/// Fills a template from one clip. Deterministic in `seed`.
pub fn instantiate(
    template: &Template,
    clip: &ClipRecord,
    tokens: &TokenSequence,
    vocab: &UnifiedVocab,
    options: &AugmentOptions,
    seed: u64,
) -> Result<QAPair> {
    let t = tokens.len();
    if t == 0 || t != clip.sequence.len() {
        return Err(Error::Shape(format!("token sequence has {t} frames for a {}-frame clip", clip.sequence.len())));
    }
    let mut r = rng::rng(seed);
    let fps = clip.sequence.fps();
    let mut prov: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    prov.insert("template_line".into(), json!(template.line));

    let caption = if template.slots.contains(&Slot::Caption) {
        Some(clip.caption.clone().ok_or_else(|| {
            Error::Precondition(format!("clip {} has no caption for template {}", clip.clip_id, template.id))
        })?)
    } else {
        None
    };
    // Partial-motion templates show a prefix and state its length.
    let prefix = if template.slots.contains(&Slot::Motion) && template.slots.contains(&Slot::Time) {
        if t < 2 {
            return Err(Error::Precondition(format!("clip {} is too short for a partial motion", clip.clip_id)));
        }
        let lo = t.div_ceil(4).clamp(1, t - 1);
        let hi = (3 * t / 4).clamp(lo, t - 1);
        Some(r.random_range(lo..=hi))
    } else {
        None
    };
    let occlusion = if template.slots.contains(&Slot::Occlusion) {
        let part = match template.part {
            Some(p) => p,
            None => BodyPart::ALL[r.random_range(0..NUM_PARTS)],
        };
        Some((part, sample_span(t, &mut r)))
    } else {
        None
    };

    let mut prompt_ids = Vec::new();
    let mut text = Vec::new();
    for tok in split_words(&template.prompt) {
        if !is_slot_marker(&tok) {
            prompt_ids.push(vocab.word_id(&tok).ok_or_else(|| Error::Vocabulary(format!("unknown word `{tok}`")))?);
            text.push(tok);
            continue;
        }
        let slot = Slot::from_marker(&tok).ok_or_else(|| Error::Template {
            line: template.line,
            msg: format!("unknown slot {tok}"),
        })?;
        match slot {
            Slot::Caption => {
                let c = caption.as_deref().expect("caption resolved above");
                prompt_ids.extend(vocab.encode_text(c)?);
                text.push(crate::uvocab::normalize_text(c));
                prov.insert("caption".into(), json!(c));
            }
            Slot::Time => {
                let frames = prefix.unwrap_or(t);
                let numeral = time_text(frames, fps, template.unit);
                prompt_ids.extend(vocab.encode_text(&numeral)?);
                text.push(numeral.clone());
                prov.insert("time".into(), json!({ "value": numeral, "unit": template.unit.name() }));
            }
            Slot::Motion => {
                let n = prefix.unwrap_or(t);
                prompt_ids.extend(motion_stream(&tokens.frames[..n], vocab)?);
                text.push(format!("[motion {n} frames]"));
                prov.insert("motion_frames".into(), json!(n));
            }
            Slot::Occlusion => {
                let (part, (t0, t1)) = occlusion.expect("occlusion resolved above");
                prompt_ids.extend(make_occlusion(tokens, part.index(), (t0, t1), vocab)?);
                text.push(format!("[{t} frames, {} hidden on {t0}..{t1}]", part.name()));
                prov.insert("occlusion".into(), json!({ "part": part.name(), "span": [t0, t1] }));
            }
            Slot::Track => {
                prompt_ids.extend(extract_track(&clip.sequence, template.joint.joint_index(), options.track_stride, vocab)?);
                text.push(format!("[{} track]", template.joint.name()));
                prov.insert("track".into(), json!({ "joint": template.joint.name(), "stride": options.track_stride }));
            }
            Slot::State1 | Slot::StateN | Slot::State => {
                let n = if slot == Slot::State1 { 0 } else { t - 1 };
                prompt_ids.extend(extract_state(tokens, n, vocab)?);
                text.push(format!("[pose at frame {n}]"));
                prov.insert(format!("state_{}", if n == 0 { "first" } else { "last" }), json!(n));
            }
        }
    }

    let answer_ids = match template.answer {
        AnswerSpec::Motion => motion_stream(&tokens.frames, vocab)?,
        AnswerSpec::Track => {
            prov.insert("track".into(), json!({ "joint": template.joint.name(), "stride": options.track_stride }));
            extract_track(&clip.sequence, template.joint.joint_index(), options.track_stride, vocab)?
        }
        AnswerSpec::Time => vocab.encode_text(&time_text(t, fps, template.unit))?,
        AnswerSpec::StateFirst => extract_state(tokens, 0, vocab)?,
        AnswerSpec::StateLast => extract_state(tokens, t - 1, vocab)?,
    };
    if answer_ids.is_empty() {
        return Err(Error::Precondition("empty answer".into()));
    }
    Ok(QAPair {
        task: template.task.name().to_string(),
        clip_id: clip.clip_id.clone(),
        seed,
        prompt_ids,
        answer_ids,
        prompt_text: text.join(" "),
        template_id: template.id,
        provenance: prov,
    })
}

/// Training sequence `<bos> prompt <sep> answer <eos>` and the index of the
/// first answer token.
pub fn lm_record(pair: &QAPair, vocab: &UnifiedVocab) -> (Vec<u32>, usize) {
    let mut ids = Vec::with_capacity(pair.prompt_ids.len() + pair.answer_ids.len() + 3);
    ids.push(vocab.special(Special::Bos));
    ids.extend(&pair.prompt_ids);
    ids.push(vocab.special(Special::Sep));
    let start = ids.len();
    ids.extend(&pair.answer_ids);
    ids.push(vocab.special(Special::Eos));
    (ids, start)
}

/// Prompt part of [`lm_record`]: `<bos> prompt <sep>`.
pub fn lm_prompt(prompt_ids: &[u32], vocab: &UnifiedVocab) -> Vec<u32> {
    let mut ids = Vec::with_capacity(prompt_ids.len() + 2);
    ids.push(vocab.special(Special::Bos));
    ids.extend(prompt_ids);
    ids.push(vocab.special(Special::Sep));
    ids
}
