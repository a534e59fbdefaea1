use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{generate_vla, FusionParams, VlaRecord};
use super::scene::{render_scene, Bearing, MAX_DISTANCE, MIN_DISTANCE};
use crate::augment::{lm_prompt, motion_stream, parse_motion_stream};
use crate::corpus::{generate_clip, ClipRecord, GenParams, MotionFamily};
use crate::error::{Error, Result};
use crate::partvq::{tokenize_sequence, PartCodecs, TokenFrame};
use crate::rng::{self, derive_seed};
use crate::tinylm::{DecodeConfig, LmParams, LmRecord};
use crate::uvocab::{Special, UnifiedVocab};

/// Scene-conditioned tasks whose answer depends on where the object is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyTask {
    /// Stand facing the object.
    Turn,
    /// Walk toward the object.
    Approach,
    /// Walk away from the object.
    Avoid,
}

impl ToyTask {
    pub const ALL: [ToyTask; 3] = [ToyTask::Turn, ToyTask::Approach, ToyTask::Avoid];

    pub fn name(self) -> &'static str {
        match self {
            ToyTask::Turn => "turn",
            ToyTask::Approach => "approach",
            ToyTask::Avoid => "avoid",
        }
    }

    pub fn instruction(self) -> &'static str {
        match self {
            ToyTask::Turn => "turn to face the object",
            ToyTask::Approach => "walk over to the object",
            ToyTask::Avoid => "step away from the object",
        }
    }

    /// Reference motion for an object at `bearing`.
    pub fn target_clip(self, bearing: Bearing, frames: usize) -> Result<ClipRecord> {
        let heading = match self {
            ToyTask::Avoid => (bearing.azimuth() + PI + PI).rem_euclid(TAU) - PI,
            _ => bearing.azimuth(),
        };
        let (family, speed) = match self {
            ToyTask::Turn => (MotionFamily::Idle, 0.0),
            _ => (MotionFamily::Walk, 1.0),
        };
        let params = GenParams { frames, speed, heading, ..Default::default() };
        // A fixed seed keeps the gait phase identical across bearings.
        generate_clip(family, &params, 0)
    }
}

impl FromStr for ToyTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown toy task `{s}`")))
    }
}

/// Instruction texts, for building the word table.
pub fn toy_instructions() -> Vec<&'static str> {
    ToyTask::ALL.iter().map(|t| t.instruction()).collect()
}

/// Scene parameters `(bearing, distance, seed)`, drawn from `seed`.
pub fn sample_scenes(n: usize, seed: u64) -> Vec<(Bearing, f64, u64)> {
    (0..n)
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let mut r = rng::rng(s);
            let b = Bearing::ALL[r.random_range(0..4)];
            (b, r.random_range(MIN_DISTANCE..=MAX_DISTANCE), s)
        })
        .collect()
}

/// Token sequences of the task's reference motion for every bearing.
pub fn reference_tokens(task: ToyTask, frames: usize, codecs: &PartCodecs) -> Result<Vec<(Bearing, Vec<TokenFrame>)>> {
    Bearing::ALL
        .iter()
        .map(|&b| Ok((b, tokenize_sequence(&task.target_clip(b, frames)?.sequence, codecs)?.frames)))
        .collect()
}

/// Prompt ids for a task: `[bos] instruction [sep]`.
pub fn toy_prompt(task: ToyTask, vocab: &UnifiedVocab) -> Result<Vec<u32>> {
    Ok(lm_prompt(&vocab.encode_text(task.instruction())?, vocab))
}

/// One record per scene, with the reference motion as the answer.
pub fn toy_dataset(
    task: ToyTask,
    scenes: &[(Bearing, f64, u64)],
    refs: &[(Bearing, Vec<TokenFrame>)],
    vocab: &UnifiedVocab,
) -> Result<Vec<VlaRecord>> {
    let prompt = toy_prompt(task, vocab)?;
    scenes
        .iter()
        .map(|&(b, dist, seed)| {
            let frames = &refs.iter().find(|r| r.0 == b).expect("all bearings present").1;
            let mut ids = prompt.clone();
            let answer_start = ids.len();
            ids.extend(motion_stream(frames, vocab)?);
            ids.push(vocab.special(Special::Eos));
            Ok(VlaRecord { image: render_scene(b, dist, seed)?, record: LmRecord { ids, answer_start } })
        })
        .collect()
}

/// The bearing whose reference first frame shares the most part codes with
/// `first`; `None` on a tie.
pub fn classify_bearing(first: &TokenFrame, refs: &[(Bearing, Vec<TokenFrame>)]) -> Option<Bearing> {
    let score = |f: &TokenFrame| f.0.iter().zip(&first.0).filter(|(a, b)| a == b).count();
    let mut ranked: Vec<(usize, Bearing)> = refs.iter().map(|(b, fr)| (score(&fr[0]), *b)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0));
    match ranked.as_slice() {
        [(s0, b), (s1, _), ..] if s0 > s1 => Some(*b),
        [(_, b)] => Some(*b),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BearingEval {
    pub scenes: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `confusion[truth][predicted]`, with a fifth column for "undecided".
    pub confusion: [[usize; 5]; 4],
}

/// Greedy, grammar-constrained decoding of the first frame for each scene,
/// classified against the reference first frames.
pub fn evaluate_bearing(
    base: &LmParams,
    fusion: &FusionParams,
    vocab: &UnifiedVocab,
    task: ToyTask,
    scenes: &[(Bearing, f64, u64)],
    refs: &[(Bearing, Vec<TokenFrame>)],
) -> Result<BearingEval> {
    use rayon::prelude::*;
    let prompt = toy_prompt(task, vocab)?;
    let cfg = DecodeConfig { temperature: 0.0, max_len: 6, grammar: true, seed: 0 };
    let preds: Vec<(Bearing, Option<Bearing>)> = scenes
        .par_iter()
        .map(|&(b, dist, seed)| {
            let img = render_scene(b, dist, seed)?;
            let g = generate_vla(base, fusion, vocab, &img, &prompt, &cfg)?;
            let frames = parse_motion_stream(&g.ids, vocab)?;
            Ok((b, frames.first().and_then(|f| classify_bearing(f, refs))))
        })
        .collect::<Result<_>>()?;
    let mut confusion = [[0usize; 5]; 4];
    for (truth, pred) in &preds {
        confusion[truth.index()][pred.map_or(4, |p| p.index())] += 1;
    }
    let correct = preds.iter().filter(|(t, p)| Some(*t) == *p).count();
    Ok(BearingEval {
        scenes: scenes.len(),
        correct,
        accuracy: if scenes.is_empty() { 0.0 } else { correct as f64 / scenes.len() as f64 },
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partvq::{train_vq, training_frames, VqConfig};

    #[test]
    fn targets_face_the_requested_direction() {
        use crate::motion::{LEFT_HAND, PELVIS, RIGHT_HAND};
        for b in Bearing::ALL {
            let clip = ToyTask::Turn.target_clip(b, 3).unwrap();
            let f = clip.sequence.frames()[0];
            // The left hand sits to the left of the facing direction.
            let side = [f[LEFT_HAND][0] - f[RIGHT_HAND][0], f[LEFT_HAND][1] - f[RIGHT_HAND][1]];
            let facing = [b.azimuth().cos(), b.azimuth().sin()];
            let cross = facing[0] * side[1] - facing[1] * side[0];
            assert!(cross > 0.0, "{b}");
            assert!(f[PELVIS][2] > 0.5);
        }
        let walk = ToyTask::Approach.target_clip(Bearing::Left, 10).unwrap();
        let fr = walk.sequence.frames();
        assert!(fr[9][PELVIS][1] > fr[0][PELVIS][1]);
        let away = ToyTask::Avoid.target_clip(Bearing::Left, 10).unwrap();
        let fa = away.sequence.frames();
        assert!(fa[9][PELVIS][1] < fa[0][PELVIS][1]);
    }

    #[test]
    fn scene_sampling_is_seeded() {
        assert_eq!(sample_scenes(20, 3), sample_scenes(20, 3));
        assert_ne!(sample_scenes(20, 3), sample_scenes(20, 4));
        let s = sample_scenes(200, 1);
        for b in Bearing::ALL {
            assert!(s.iter().filter(|x| x.0 == b).count() > 25);
        }
    }

    #[test]
    fn classification_rules() {
        let refs: Vec<(Bearing, Vec<TokenFrame>)> =
            Bearing::ALL.iter().enumerate().map(|(i, &b)| (b, vec![TokenFrame([i as u32; 5])])).collect();
        assert_eq!(classify_bearing(&TokenFrame([2, 2, 2, 0, 1]), &refs), Some(Bearing::Back));
        assert_eq!(classify_bearing(&TokenFrame([0, 0, 1, 1, 3]), &refs), None);
    }

    #[test]
    fn toy_records_are_well_formed() {
        let frames: Vec<_> = Bearing::ALL
            .iter()
            .flat_map(|&b| training_frames(&[ToyTask::Turn.target_clip(b, 3).unwrap()]))
            .collect();
        let (codecs, _) =
            train_vq(&frames, &VqConfig { codebook_size: 8, latent_dim: 4, steps: 50, ..Default::default() }).unwrap();
        let vocab = UnifiedVocab::build(toy_instructions(), 8, 4, Default::default()).unwrap();
        let refs = reference_tokens(ToyTask::Turn, 3, &codecs).unwrap();
        let data = toy_dataset(ToyTask::Turn, &sample_scenes(6, 0), &refs, &vocab).unwrap();
        for r in &data {
            let answer = &r.record.ids[r.record.answer_start..r.record.ids.len() - 1];
            assert_eq!(parse_motion_stream(answer, &vocab).unwrap().len(), 3);
            assert_eq!(r.image.width, 64);
        }
    }
}
