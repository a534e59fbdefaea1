//! Template-driven prompt/answer records built from tokenized clips.
//!
//! A template line names a task family, an id, prompt text with typed slots,
//! and the answer to derive:
//!
//! ```text
//! TASK occlusion->motion | ID 12 | PROMPT "Recover the left arm in <Occlusion>." | ANSWER motion | PART left_arm
//! ```
//!
//! Optional fields: `PART` (hidden body part), `JOINT` (`pelvis`,
//! `left_hand`, `right_hand`) and `UNIT` (`frames`, `seconds`). Answers are
//! `motion`, `track`, `time`, `state-first` or `state-last`.
//!
//! Slot expansion:
//! * `<Caption>`: the clip caption as words.
//! * `<Motion>`: the motion stream (five codes and `<frame>` per frame). With
//!   `<Time>` in the same prompt it is a prefix and `<Time>` is its length.
//! * `<Occlusion>`: the motion stream with one part's codes replaced by
//!   `<mask>` over a random span covering 25 to 100 percent of the clip.
//! * `<Track>`: binned waypoints of one joint.
//! * `<Time>`: clip length as a numeral word.
//! * `<State1>`: codes of the first frame; `<StateN>` and `<State>`: last frame.
//!
//! The `motion->state` family asks for the pose at one end of a clip.

mod dataset;
mod instantiate;
mod template;

pub use dataset::{build_dataset, read_jsonl, write_jsonl, DatasetStats};
pub use instantiate::{
    duration_of, duration_slots, extract_state, extract_track, instantiate, lm_prompt, lm_record, make_occlusion,
    motion_stream, parse_motion_stream, sample_span, time_numerals, AugmentOptions, DurationSlots, QAPair,
};
pub use template::{
    default_templates, load_templates, parse_templates, AnswerSpec, Slot, TaskFamily, Template, TimeUnit, TrackJoint,
    DEFAULT_TEMPLATES,
};

use crate::corpus::{ClipRecord, MotionFamily};

/// Text the word table must cover: template prompts, every caption variant,
/// the captions present in `clips`, and the duration numerals they can produce.
pub fn vocab_texts(templates: &[Template], clips: &[ClipRecord]) -> Vec<String> {
    let mut out: Vec<String> = templates.iter().map(|t| t.prompt.clone()).collect();
    for fam in MotionFamily::ALL {
        out.extend(fam.phrase_bank().iter().map(|s| s.to_string()));
    }
    out.extend(clips.iter().filter_map(|c| c.caption.clone()));
    out.extend(time_numerals(clips));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{degrade_clip, generate_clip, GenParams};
    use crate::motion::{MotionSequence, NUM_JOINTS, NUM_PARTS};
    use crate::partvq::{TokenFrame, TokenSequence};
    use crate::rng;
    use crate::uvocab::{Special, TrackBox, UnifiedVocab};
    use rand::Rng as _;

    const K: usize = 8;

    fn fake_tokens(t: usize, seed: u64) -> TokenSequence {
        let mut r = rng::rng(seed);
        TokenSequence {
            fps: 30,
            frames: (0..t).map(|_| TokenFrame([0; 5].map(|_| r.random_range(0..K as u32)))).collect(),
            root: vec![[0.0; 3]; t],
        }
    }

    fn setup(frames: usize) -> (Vec<(ClipRecord, TokenSequence)>, UnifiedVocab, Vec<Template>) {
        let templates = default_templates();
        let p = GenParams { frames, ..Default::default() };
        let clips: Vec<ClipRecord> = (0..6)
            .map(|i| {
                let c = generate_clip(MotionFamily::ALL[i % 6], &p, i as u64).unwrap();
                if i % 3 == 2 {
                    degrade_clip(&c, 0.01, i as u64).unwrap()
                } else {
                    c
                }
            })
            .collect();
        let vocab = UnifiedVocab::build(vocab_texts(&templates, &clips).iter().map(|s| s.as_str()), K, 16, TrackBox::default())
            .unwrap();
        let items = clips.into_iter().enumerate().map(|(i, c)| (c, fake_tokens(frames, i as u64))).collect();
        (items, vocab, templates)
    }

    fn template(task: TaskFamily, id: u32) -> Template {
        default_templates().into_iter().find(|t| t.task == task && t.id == id).unwrap()
    }

    #[test]
    fn occlusion_answer_length_and_mask_counts() {
        let (items, vocab, _) = setup(30);
        let tpl = template(TaskFamily::OcclusionToMotion, 12);
        let (clip, toks) = &items[0];
        let pair = instantiate(&tpl, clip, toks, &vocab, &AugmentOptions::default(), 5).unwrap();
        assert_eq!(pair.answer_ids.len(), 30 * 6);
        let full = make_occlusion(toks, 0, (0, 30), &vocab).unwrap();
        let mask = vocab.special(Special::Mask);
        assert_eq!(full.iter().filter(|&&x| x == mask).count(), 30);
        assert!(full.chunks(6).all(|c| c[0] == mask));
        assert!(make_occlusion(toks, 0, (0, 0), &vocab).is_err());
        assert!(make_occlusion(toks, 5, (0, 3), &vocab).is_err());
        // Unmasking with the ground truth restores the plain stream.
        let masked = make_occlusion(toks, 3, (4, 9), &vocab).unwrap();
        let plain = motion_stream(&toks.frames, &vocab).unwrap();
        let restored: Vec<u32> = masked.iter().zip(&plain).map(|(&m, &p)| if m == mask { p } else { m }).collect();
        assert_eq!(restored, plain);
    }

    #[test]
    fn spans_cover_a_quarter_or_more() {
        let mut r = rng::rng(1);
        for t in 1..50 {
            for _ in 0..20 {
                let (a, b) = sample_span(t, &mut r);
                assert!(b <= t && a < b && 4 * (b - a) >= t);
            }
        }
    }

    #[test]
    fn motion_to_time_answers() {
        let (items, vocab, _) = setup(60);
        let (clip, toks) = &items[0];
        let secs = template(TaskFamily::MotionToTime, 51);
        let pair = instantiate(&secs, clip, toks, &vocab, &AugmentOptions::default(), 0).unwrap();
        assert_eq!(vocab.decode_text(&pair.answer_ids).unwrap(), "2.0");
        let frames = template(TaskFamily::MotionToTime, 50);
        let pair = instantiate(&frames, clip, toks, &vocab, &AugmentOptions::default(), 0).unwrap();
        assert_eq!(vocab.decode_text(&pair.answer_ids).unwrap(), "60");
        let d = duration_slots(&clip.sequence);
        assert_eq!((d.frames.as_str(), d.seconds.as_str()), ("60", "2.0"));
    }

    #[test]
    fn caption_templates_reject_uncaptioned_clips() {
        let (items, vocab, _) = setup(10);
        let (low, toks) = &items[2];
        assert!(low.caption.is_none());
        let tpl = template(TaskFamily::CaptionToMotion, 1);
        assert!(matches!(
            instantiate(&tpl, low, toks, &vocab, &AugmentOptions::default(), 0),
            Err(crate::Error::Precondition(_))
        ));
    }

    #[test]
    fn tracks_follow_the_path() {
        let vocab = UnifiedVocab::build(["x"], 4, 8, TrackBox::default()).unwrap();
        let still = MotionSequence::new(30, vec![[[0.3, 0.2, 1.0]; NUM_JOINTS]; 12]).unwrap();
        let ids = extract_track(&still, 0, 5, &vocab).unwrap();
        assert_eq!(ids.len(), 9);
        assert!(ids.chunks(3).all(|w| w == &ids[..3]));
        // Pelvis moving along x from -4 to 4 m crosses several bins.
        let frames = (0..40)
            .map(|i| {
                let mut f = [[0.0, 0.0, 1.0]; NUM_JOINTS];
                f[0][0] = -4.0 + 8.0 * i as f64 / 39.0;
                f
            })
            .collect();
        let walk = MotionSequence::new(30, frames).unwrap();
        let ids = extract_track(&walk, 0, 3, &vocab).unwrap();
        assert_eq!(ids.len(), 40usize.div_ceil(3) * 3);
        let xs: Vec<usize> = ids.chunks(3).map(|w| vocab.track_token(w[0]).unwrap().1).collect();
        assert!(xs.windows(2).all(|w| w[0] <= w[1]));
        let expected: Vec<usize> = (0..40).step_by(3).map(|i| vocab.quantize(0, -4.0 + 8.0 * i as f64 / 39.0)).collect();
        assert_eq!(xs, expected);
        assert!(xs.last().unwrap() - xs[0] >= 4);
        assert_eq!(extract_track(&walk, 0, 100, &vocab).unwrap().len(), 3);
    }

    #[test]
    fn states_pick_end_frames() {
        let (_, vocab, _) = setup(5);
        let constant = TokenSequence { fps: 30, frames: vec![TokenFrame([1, 2, 3, 4, 5]); 7], root: vec![] };
        assert_eq!(extract_state(&constant, 0, &vocab).unwrap(), extract_state(&constant, 6, &vocab).unwrap());
        assert!(extract_state(&constant, 7, &vocab).is_err());
    }

    #[test]
    fn every_template_instantiates_without_markers() {
        let (items, vocab, templates) = setup(24);
        let (clip, toks) = &items[0];
        for (i, tpl) in templates.iter().enumerate() {
            let p = instantiate(tpl, clip, toks, &vocab, &AugmentOptions::default(), i as u64).unwrap();
            assert!(!p.prompt_text.contains('<'), "{}", p.prompt_text);
            assert!(!p.answer_ids.is_empty());
            for &id in p.prompt_ids.iter().chain(&p.answer_ids) {
                assert!((id as usize) < vocab.len());
            }
            if tpl.answer == AnswerSpec::Motion {
                let frames = parse_motion_stream(&p.answer_ids, &vocab).unwrap();
                assert_eq!(frames, toks.frames);
            }
        }
    }

    #[test]
    fn dataset_is_reproducible_and_counted() {
        let (items, vocab, templates) = setup(12);
        let opts = AugmentOptions::default();
        let (a, stats) = build_dataset(&items, &templates, &vocab, 5, 9, &opts).unwrap();
        let (b, _) = build_dataset(&items, &templates, &vocab, 5, 9, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 30);
        assert_eq!(stats.pairs, a.len());
        assert_eq!(stats.per_task.values().sum::<usize>(), a.len());
        assert_eq!(stats.skipped.values().sum::<usize>() + a.len(), 30);
        let dir = tempfile::tempdir().unwrap();
        write_jsonl(&dir.path().join("a.jsonl"), &a).unwrap();
        write_jsonl(&dir.path().join("b.jsonl"), &b).unwrap();
        let bytes = std::fs::read(dir.path().join("a.jsonl")).unwrap();
        assert_eq!(bytes, std::fs::read(dir.path().join("b.jsonl")).unwrap());
        assert_eq!(read_jsonl(&dir.path().join("a.jsonl")).unwrap(), a);
    }

    #[test]
    fn low_tier_corpus_has_no_caption_pairs() {
        let (items, vocab, templates) = setup(12);
        let low: Vec<_> = items.into_iter().map(|(c, t)| (degrade_clip(&c, 0.0, 1).unwrap(), t)).collect();
        let (pairs, _) = build_dataset(&low, &templates, &vocab, 8, 3, &AugmentOptions::default()).unwrap();
        assert!(!pairs.is_empty());
        let caption_tasks: Vec<&str> =
            TaskFamily::ALL.iter().filter(|f| f.needs_caption()).map(|f| f.name()).collect();
        assert!(pairs.iter().all(|p| !caption_tasks.contains(&p.task.as_str())));
    }

    #[test]
    fn occluded_positions_hold_the_masked_truth() {
        let (items, vocab, templates) = setup(20);
        let mask = vocab.special(Special::Mask);
        let occl: Vec<Template> = templates.into_iter().filter(|t| t.slots.contains(&Slot::Occlusion)).collect();
        let (pairs, _) = build_dataset(&items, &occl, &vocab, 6, 4, &AugmentOptions::default()).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            let (clip_tokens, _) = items.iter().map(|(c, t)| (t, c)).find(|(_, c)| c.clip_id == p.clip_id).unwrap();
            let truth = motion_stream(&clip_tokens.frames, &vocab).unwrap();
            // The occluded stream is the only motion-sized run in the prompt.
            let start = p.prompt_ids.iter().position(|&id| vocab.motion_token(id).is_ok() || id == mask).unwrap();
            let shown = &p.prompt_ids[start..start + truth.len()];
            let mut masked = 0;
            for (i, &id) in shown.iter().enumerate() {
                if id == mask {
                    masked += 1;
                    assert_eq!(p.answer_ids[i], truth[i]);
                    assert!(i % (NUM_PARTS + 1) < NUM_PARTS);
                } else {
                    assert_eq!(id, truth[i]);
                }
            }
            assert!(masked > 0);
        }
    }
}
