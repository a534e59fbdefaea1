//! Exit-gate checks, one test per criterion. Each prints a single
//! `criterion N [PASS|FAIL] ...` line before asserting.
//! Run with `cargo test --release --test acceptance -- --nocapture`.

#[path = "support/gradcheck.rs"]
mod gradcheck;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hvla::augment::*;
use hvla::corpus::{degrade_clip, generate_clip, ClipRecord, GenParams, MotionFamily};
use hvla::metrics::{self, fid, matrix_sqrt_psd, mpjpe, Alignment, EvalConfig, Features};
use hvla::motion::{Frame, MotionSequence, NUM_PARTS};
use hvla::params::checksum;
use hvla::partvq::*;
use hvla::retarget::*;
use hvla::rng;
use hvla::tinylm::*;
use hvla::uvocab::{Special, TrackBox, UnifiedVocab};
use hvla::visfuse::*;
use nalgebra::{DMatrix, Rotation3, Vector3};
use rand::Rng as _;
use rand_distr::StandardNormal;

fn verdict(n: u32, name: &str, pass: bool, detail: String) -> bool {
    println!("criterion {n} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn clips(per_family: usize, frames: usize) -> Vec<ClipRecord> {
    let mut out = Vec::new();
    for (i, fam) in MotionFamily::ALL.into_iter().enumerate() {
        for j in 0..per_family {
            let p = GenParams { frames, ..Default::default() };
            out.push(generate_clip(fam, &p, (i * 10 + j) as u64).unwrap());
        }
    }
    out
}

#[test]
fn criterion_01_nearest_code_matches_brute_force() {
    let t = Instant::now();
    let mut r = rng::rng(101);
    let mut mismatches = 0;
    let mut ties = 0;
    for case in 0..1000 {
        let k = r.random_range(1..=64usize);
        let d = r.random_range(1..=16usize);
        let mut cb: Vec<f64> = (0..k * d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        // Every fourth case copies a row so exact ties occur.
        if case % 4 == 0 && k > 1 {
            let (src, dst) = (r.random_range(0..k), r.random_range(0..k));
            let row = cb[src * d..(src + 1) * d].to_vec();
            cb[dst * d..(dst + 1) * d].copy_from_slice(&row);
        }
        let z: Vec<f64> = if case % 8 == 0 {
            cb[r.random_range(0..k) * d..][..d].to_vec()
        } else {
            (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
        };
        let dists: Vec<f64> =
            cb.chunks(d).map(|row| row.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum()).collect();
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let expected = dists.iter().position(|&x| x == min).unwrap();
        if dists.iter().filter(|&&x| x == min).count() > 1 {
            ties += 1;
        }
        if nearest_code(&z, &cb, d) != expected {
            mismatches += 1;
        }
    }
    // The codec method on trained-shape codebooks.
    let codecs = PartCodecs::new(64, 8, &mut rng::rng(5)).unwrap();
    for part in &codecs.parts {
        for _ in 0..50 {
            let z: Vec<f64> = (0..8).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let best = (0..64)
                .min_by(|&a, &b| {
                    let da: f64 = part.code(a).iter().zip(&z).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = part.code(b).iter().zip(&z).map(|(x, y)| (x - y).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            if part.nearest(&z) != best {
                mismatches += 1;
            }
        }
    }
    let el = t.elapsed();
    let ok = mismatches == 0 && el < Duration::from_secs(10);
    assert!(verdict(1, "VQ oracle", ok, format!("{mismatches} mismatches over 1250 cases ({ties} with ties) in {el:.2?}")));
}

#[test]
fn criterion_02_gradient_suite() {
    let t = Instant::now();
    let worst = [
        ("partvq", gradcheck::partvq_decoder_and_codebook_gradients().max(gradcheck::partvq_straight_through_gradient())),
        ("tinylm", gradcheck::tinylm_gradients()),
        ("visfuse", gradcheck::visfuse_gradients()),
        ("retarget fk", gradcheck::forward_kinematics_jacobian()),
    ];
    let el = t.elapsed();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let ok = max < 1e-3 && el < Duration::from_secs(120);
    let detail: Vec<String> = worst.iter().map(|(n, w)| format!("{n} {w:.1e}")).collect();
    assert!(verdict(2, "gradient suite", ok, format!("max relative error {}; in {el:.1?}", detail.join(", "))));
}

#[test]
fn criterion_03_vq_training_converges_deterministically() {
    let frames: Vec<Frame> = training_frames(&clips(3, 28))[..500].to_vec();
    let cfg = VqConfig { codebook_size: 16, latent_dim: 8, steps: 2000, seed: 3, ..Default::default() };
    let (a, ra) = train_vq(&frames, &cfg).unwrap();
    let (b, rb) = train_vq(&frames, &cfg).unwrap();
    let ratio = ra.final_loss.rec / ra.initial.rec;
    let identical = a == b && encode_codecs(&a) == encode_codecs(&b) && ra == rb;
    let ok = ratio < 0.2 && identical && ra.curve.len() <= 2000;
    assert!(verdict(
        3,
        "VQ training",
        ok,
        format!(
            "rec {:.4} -> {:.4} (ratio {ratio:.3}) in {} steps, bound {:.2} mm, repeat bit-identical: {identical}",
            ra.initial.rec,
            ra.final_loss.rec,
            ra.curve.len(),
            ra.rec_bound_mm
        )
    ));
}

#[test]
fn criterion_04_lm_overfits_and_decodes() {
    let clips = clips(4, 10);
    let (codecs, _) = train_vq(
        &training_frames(&clips),
        &VqConfig { codebook_size: 16, latent_dim: 8, steps: 300, ..Default::default() },
    )
    .unwrap();
    let templates: Vec<Template> = default_templates().into_iter().filter(|t| !t.task.needs_caption()).collect();
    let vocab =
        UnifiedVocab::build(vocab_texts(&templates, &clips).iter().map(|s| s.as_str()), 16, 16, TrackBox::default()).unwrap();
    let items: Vec<_> = clips.iter().map(|c| (c.clone(), tokenize_sequence(&c.sequence, &codecs).unwrap())).collect();
    let (pairs, _) = build_dataset(&items, &templates, &vocab, 3, 7, &AugmentOptions::default()).unwrap();
    let recs: Vec<LmRecord> = pairs
        .iter()
        .take(50)
        .map(|p| {
            let (ids, answer_start) = lm_record(p, &vocab);
            LmRecord { ids, answer_start }
        })
        .collect();
    assert_eq!(recs.len(), 50);
    let mc = ModelConfig { layers: 2, d_model: 64, vocab_size: vocab.len(), ..Default::default() };
    let mut lm = LmParams::new(&mc).unwrap();
    let tc = TrainConfig { lr: 3e-3, steps: 2000, batch_size: 4, warmup_ratio: 0.02, ..Default::default() };
    train(&mut lm, &recs, &tc).unwrap();
    let nll = evaluate(&lm, &recs, false).unwrap();

    // Decodability on 100 prompts of motion-answer tasks, drawn from a wider
    // pass over the same clips.
    let (pool, _) = build_dataset(&items, &templates, &vocab, 12, 8, &AugmentOptions::default()).unwrap();
    let motion_prompts: Vec<Vec<u32>> = pool
        .iter()
        .filter(|p| parse_motion_stream(&p.answer_ids, &vocab).is_ok_and(|f| !f.is_empty()))
        .map(|p| lm_prompt(&p.prompt_ids, &vocab))
        .filter(|p| p.len() + 48 <= mc.context)
        .take(100)
        .collect();
    let dc = DecodeConfig { max_len: 48, ..Default::default() };
    let mut decodable = 0;
    for p in &motion_prompts {
        let g = generate(&lm, &vocab, p, &dc, None).unwrap();
        let ok = parse_motion_stream(&g.ids, &vocab).ok().filter(|f| !f.is_empty()).is_some_and(|frames| {
            let root = vec![[0.0; 3]; frames.len()];
            let seq = TokenSequence { fps: 30, frames, root };
            detokenize_sequence(&seq, &codecs).is_ok()
        });
        decodable += ok as usize;
    }
    let ok = nll < 0.1 && motion_prompts.len() == 100 && decodable == 100;
    assert!(verdict(
        4,
        "LM overfit",
        ok,
        format!("answer NLL {nll:.5} after 2000 steps; {decodable}/{} generations decodable", motion_prompts.len())
    ));
}

#[test]
fn criterion_05_uniform_logits_give_log_vocab() {
    let mut worst: f64 = 0.0;
    for v in [7usize, 64, 301] {
        let mc = ModelConfig { layers: 1, heads: 2, d_model: 8, d_ff: 16, context: 32, vocab_size: v, ..Default::default() };
        let p = LmParams::zeros(&mc);
        let batch: Vec<LmRecord> = (0..3)
            .map(|i| LmRecord { ids: (0..10).map(|t| ((t * 7 + i) % v) as u32).collect(), answer_start: 3 + i })
            .collect();
        let (nll, _) = nll_loss(&p, &batch, false).unwrap();
        worst = worst.max((nll - (v as f64).ln()).abs());
    }
    assert!(verdict(5, "uniform loss", worst < 1e-4, format!("max |loss - ln V| = {worst:.2e} for V in 7, 64, 301")));
}

fn toy_setup() -> (UnifiedVocab, PartCodecs, ModelConfig) {
    let mut frames = Vec::new();
    for task in ToyTask::ALL {
        for b in Bearing::ALL {
            frames.extend(training_frames(&[task.target_clip(b, 4).unwrap()]));
        }
    }
    let (codecs, _) =
        train_vq(&frames, &VqConfig { codebook_size: 16, latent_dim: 8, steps: 400, ..Default::default() }).unwrap();
    let vocab = UnifiedVocab::build(toy_instructions(), 16, 8, TrackBox::default()).unwrap();
    let mc = ModelConfig { layers: 2, heads: 4, d_model: 32, d_ff: 64, context: 64, vocab_size: vocab.len(), ..Default::default() };
    (vocab, codecs, mc)
}

#[test]
fn criterion_06_fresh_adapters_are_the_identity() {
    let (vocab, codecs, mc) = toy_setup();
    let base = LmParams::new(&ModelConfig { seed: 11, ..mc.clone() }).unwrap();
    let fusion = FusionParams::new(&VisConfig::default(), &mc).unwrap();
    let mut r = rng::rng(66);
    let words = vocab.num_words() as u32;
    let mut identical = 0;
    for i in 0..100 {
        let len = r.random_range(1..=12);
        let words_ids: Vec<u32> = (0..len).map(|_| r.random_range(0..words)).collect();
        let prompt = lm_prompt(&words_ids, &vocab);
        let dc = DecodeConfig { max_len: 12, grammar: i % 2 == 0, ..Default::default() };
        let img = render_scene(Bearing::ALL[i % 4], r.random_range(1.0..3.0), i as u64).unwrap();
        let plain = generate(&base, &vocab, &prompt, &dc, None).unwrap();
        let fused = generate_vla(&base, &fusion, &vocab, &img, &prompt, &dc).unwrap();
        identical += (plain == fused) as usize;
    }

    let refs = reference_tokens(ToyTask::Turn, 4, &codecs).unwrap();
    let data = toy_dataset(ToyTask::Turn, &sample_scenes(40, 3), &refs, &vocab).unwrap();
    let before = checksum(&base, |_| true);
    let mut tuned = fusion.clone();
    let rep = finetune(&base, &mut tuned, &data, &TrainConfig { lr: 3e-3, steps: 500, batch_size: 4, ..Default::default() })
        .unwrap();
    let after = checksum(&base, |_| true);
    let frozen = before == after && rep.base_checksum_before == rep.base_checksum_after && rep.frozen_update_norm == 0.0;
    let moved = tuned != fusion;
    let ok = identical == 100 && frozen && moved;
    assert!(verdict(
        6,
        "zero-init identity",
        ok,
        format!("{identical}/100 generations identical; base checksum unchanged after 500 steps: {frozen}; adapters trained: {moved}")
    ));
}

#[test]
fn criterion_07_toy_vla_infers_bearing() {
    let t = Instant::now();
    let task = ToyTask::Turn;
    let (vocab, codecs, mc) = toy_setup();
    let refs = reference_tokens(task, 4, &codecs).unwrap();
    let data = toy_dataset(task, &sample_scenes(400, 1), &refs, &vocab).unwrap();
    let recs: Vec<LmRecord> = data.iter().map(|r| r.record.clone()).collect();
    let mut base = LmParams::new(&mc).unwrap();
    train(&mut base, &recs, &TrainConfig { lr: 3e-3, steps: 200, batch_size: 8, ..Default::default() }).unwrap();
    let mut fusion = FusionParams::new(&VisConfig::default(), &mc).unwrap();
    finetune(&base, &mut fusion, &data, &TrainConfig { lr: 3e-3, steps: 600, batch_size: 8, ..Default::default() }).unwrap();
    let eval = evaluate_bearing(&base, &fusion, &vocab, task, &sample_scenes(100, 2), &refs).unwrap();
    let el = t.elapsed();
    let ok = eval.scenes == 100 && eval.accuracy > 0.8 && el < Duration::from_secs(600);
    assert!(verdict(
        7,
        "toy VLA",
        ok,
        format!("held-out bearing accuracy {:.0}% ({}/100, chance 25%) in {el:.1?}", 100.0 * eval.accuracy, eval.correct)
    ));
}

fn transform(seq: &MotionSequence, f: impl Fn([f64; 3]) -> [f64; 3]) -> MotionSequence {
    let frames = seq.frames().iter().map(|fr| fr.map(&f)).collect();
    MotionSequence::new(seq.fps(), frames).unwrap()
}

#[test]
fn criterion_08_metric_oracles() {
    let gt = generate_clip(MotionFamily::Kick, &GenParams { frames: 40, ..Default::default() }, 8).unwrap();
    let pred = degrade_clip(&gt, 0.02, 9).unwrap().sequence;
    let gt = gt.sequence;

    // Similarity invariance of the aligned error.
    let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
    let moved = transform(&pred, |p| {
        let v: Vector3<f64> = 2.7 * rot * Vector3::from(p) + Vector3::new(4.0, -1.0, 0.5);
        [v.x, v.y, v.z]
    });
    let pa = mpjpe(&pred, &gt, Alignment::Procrustes).unwrap();
    let pa_moved = mpjpe(&moved, &gt, Alignment::Procrustes).unwrap();
    let invariance = (pa - pa_moved).abs() / pa;

    // Uniform 10 mm offset.
    let other = generate_clip(MotionFamily::Walk, &GenParams { frames: 40, ..Default::default() }, 1).unwrap().sequence;
    let gts = vec![gt.clone(), other];
    let shifted: Vec<MotionSequence> = gts.iter().map(|s| transform(s, |p| [p[0] + 0.006, p[1] - 0.008, p[2]])).collect();
    let rep = metrics::evaluate(&shifted, &gts, &EvalConfig::default()).unwrap();
    let offset_err = (rep.e_mpjpe_g - 10.0).abs();

    // Gaussians N(0, I) and N(mu, I) with |mu| = 1 have distance exactly 1.
    let (n, d) = (10_000, 4);
    let mut r = rng::rng(8);
    let mut sample = |shift: f64| {
        let data: Vec<f64> = (0..n * d)
            .map(|i| r.sample::<f64, _>(StandardNormal) + if i % d == 0 { shift } else { 0.0 })
            .collect();
        Features::new(d, data).unwrap()
    };
    let (a, b) = (sample(0.0), sample(1.0));
    let fid_v = fid(&a, &b).unwrap();

    // Square root of a random PSD matrix.
    let m = DMatrix::from_fn(8, 8, |_, _| r.sample::<f64, _>(StandardNormal));
    let psd = &m * m.transpose();
    let s = matrix_sqrt_psd(&psd).unwrap();
    let sqrt_rel = (&s * &s - &psd).norm() / psd.norm();

    let ok = invariance < 1e-9 && offset_err < 1e-6 && rep.e_mpjpe_pa < 1e-6 && (fid_v - 1.0).abs() < 0.05 && sqrt_rel < 1e-6;
    assert!(verdict(
        8,
        "metric oracles",
        ok,
        format!(
            "PA invariance {invariance:.1e}; offset e_mpjpe_g {:.9} mm, e_mpjpe_pa {:.1e} mm; Gaussian FID {fid_v:.4}; sqrt error {sqrt_rel:.1e}",
            rep.e_mpjpe_g, rep.e_mpjpe_pa
        )
    ));
}

#[test]
fn criterion_09_retarget_oracles() {
    // Self-retarget: the corpus is animated with the human skeleton.
    let clip = generate_clip(MotionFamily::Walk, &GenParams { frames: 100, ..Default::default() }, 4).unwrap();
    let skel = RobotSkeleton::human();
    let mut init = PoseParams::rest(&skel);
    let pelvis = clip.sequence.frames()[0][hvla::motion::PELVIS];
    init.root = pelvis;
    let opt = SequenceOptions {
        frame: RetargetOptions { iters: 2000, lambda_limits: 0.0, tol: 1e-12, patience: 20, ..Default::default() },
        ..Default::default()
    };
    let (_, rep) = retarget_sequence(&clip.sequence, &skel, &init, &opt).unwrap();

    // Two-link arm against the closed-form elbow angle.
    let arm = RobotSkeleton::from_json(
        r#"{"floating_base": false,
            "joints": [
                {"name": "base", "parent": -1, "offset": [0,0,0], "axes": [[0,0,1]]},
                {"name": "elbow", "parent": 0, "offset": [1,0,0], "axes": [[0,0,1]]},
                {"name": "tip", "parent": 1, "offset": [1,0,0], "axes": []}],
            "end_effectors": [{"robot": "tip", "human": "right_hand"}]}"#,
    )
    .unwrap();
    let mut ik_err: f64 = 0.0;
    let mut monotone = rep.frames.iter().all(|f| f.final_objective <= f.initial_objective);
    for (i, dist) in [0.5f64, 1.0, 1.5, 1.9].into_iter().enumerate() {
        let phi = 0.4 + i as f64;
        let mut kp = [[0.0; 3]; hvla::motion::NUM_JOINTS];
        kp[hvla::motion::RIGHT_HAND] = [dist * phi.cos(), dist * phi.sin(), 0.0];
        let init = PoseParams { root: [0.0; 3], angles: vec![0.1, 0.3] };
        let (pose, r) =
            retarget_frame(&kp, &arm, &init, &RetargetOptions { iters: 3000, lambda_limits: 0.0, ..Default::default() }).unwrap();
        let elbow = ((dist * dist - 2.0) / 2.0).acos();
        ik_err = ik_err.max((pose.angles[1].abs() - elbow).abs()).max(r.residual_mm / 1000.0);
        monotone &= r.final_objective <= r.initial_objective;
    }

    // Monotone objective also on a mismatched robot.
    let robot = RobotSkeleton::humanoid24();
    let mut rinit = PoseParams::rest(&robot);
    rinit.root = pelvis;
    let short = MotionSequence::new(30, clip.sequence.frames()[..20].to_vec()).unwrap();
    let (_, rr) = retarget_sequence(&short, &robot, &rinit, &SequenceOptions::default()).unwrap();
    monotone &= rr.frames.iter().all(|f| f.final_objective <= f.initial_objective);

    let ok = rep.max_residual_mm < 1.0 && rep.frames.len() == 100 && ik_err < 1e-3 && monotone;
    assert!(verdict(
        9,
        "retarget oracles",
        ok,
        format!(
            "self-retarget max residual {:.4} mm over 100 frames; two-link max error {ik_err:.1e}; objective never increased: {monotone}",
            rep.max_residual_mm
        )
    ));
}

#[test]
fn criterion_10_augmentation() {
    let templates = default_templates();
    let mut families: Vec<TaskFamily> = templates.iter().map(|t| t.task).collect();
    families.sort_by_key(|f| f.name());
    families.dedup();

    let clips: Vec<ClipRecord> = clips(2, 16)
        .into_iter()
        .enumerate()
        .map(|(i, c)| if i % 3 == 2 { degrade_clip(&c, 0.01, i as u64).unwrap() } else { c })
        .collect();
    let (codecs, _) = train_vq(
        &training_frames(&clips),
        &VqConfig { codebook_size: 16, latent_dim: 8, steps: 100, ..Default::default() },
    )
    .unwrap();
    let vocab =
        UnifiedVocab::build(vocab_texts(&templates, &clips).iter().map(|s| s.as_str()), 16, 16, TrackBox::default()).unwrap();
    let items: Vec<_> = clips.iter().map(|c| (c.clone(), tokenize_sequence(&c.sequence, &codecs).unwrap())).collect();
    let dir = tempfile::tempdir().unwrap();
    let bytes = |seed: u64, name: &str| {
        let (pairs, _) = build_dataset(&items, &templates, &vocab, 6, seed, &AugmentOptions::default()).unwrap();
        let path = dir.path().join(name);
        write_jsonl(&path, &pairs).unwrap();
        (std::fs::read(&path).unwrap(), pairs)
    };
    let (a, pairs) = bytes(21, "a.jsonl");
    let (b, _) = bytes(21, "b.jsonl");
    let (c, _) = bytes(22, "c.jsonl");
    let reproducible = a == b && a != c;

    // Occlusion answers: positions named by the provenance hold the masked truth.
    let mask = vocab.special(Special::Mask);
    let mut checked = 0;
    let mut bad = 0;
    for p in pairs.iter().filter(|p| p.provenance.contains_key("occlusion")) {
        let occ = &p.provenance["occlusion"];
        let part = hvla::motion::BodyPart::from_name(occ["part"].as_str().unwrap()).unwrap().index();
        let (t0, t1) = (occ["span"][0].as_u64().unwrap() as usize, occ["span"][1].as_u64().unwrap() as usize);
        let tokens = &items.iter().find(|(c, _)| c.clip_id == p.clip_id).unwrap().1;
        let truth = motion_stream(&tokens.frames, &vocab).unwrap();
        let start = p.prompt_ids.iter().position(|&id| vocab.motion_token(id).is_ok() || id == mask).unwrap();
        let shown = &p.prompt_ids[start..start + truth.len()];
        for i in 0..truth.len() {
            let masked = i % (NUM_PARTS + 1) == part && (t0..t1).contains(&(i / (NUM_PARTS + 1)));
            if masked {
                checked += 1;
                bad += (shown[i] != mask || p.answer_ids.get(i) != Some(&truth[i])) as usize;
            } else {
                bad += (shown[i] != truth[i]) as usize;
            }
        }
    }
    let ok = families.len() >= 12 && reproducible && checked > 0 && bad == 0;
    assert!(verdict(
        10,
        "augmentation",
        ok,
        format!(
            "{} task families in shipped templates; same seed byte-identical and new seed differs: {reproducible}; {checked} masked slots checked, {bad} wrong",
            families.len()
        )
    ));
}

fn run_cli(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hvla"))
        .args(args)
        .args(["--smoke", "--log-level", "warn"])
        .current_dir(dir)
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn write_config(dir: &Path, name: &str, value: serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, value.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn criterion_11_cli_smoke_pipeline() {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let steps: Vec<(&str, Option<serde_json::Value>)> = vec![
        ("synth", None),
        ("train-vq", Some(serde_json::json!({"clips": "synth/clips"}))),
        ("tokenize", Some(serde_json::json!({"clips": "synth/clips", "codecs": "train-vq/codecs.hvq"}))),
        ("build-vocab", Some(serde_json::json!({"clips": "synth/clips", "codecs": "train-vq/codecs.hvq"}))),
        (
            "augment",
            Some(serde_json::json!({"clips": "synth/clips", "tokens": "tokenize/tokens.jsonl", "vocab": "build-vocab/vocab.tsv"})),
        ),
        ("train-lm", Some(serde_json::json!({"vocab": "build-vocab/vocab.tsv", "dataset": "augment/dataset.jsonl"}))),
        ("eval", Some(serde_json::json!({"pred": "tokenize/detok", "gt": "synth/clips"}))),
    ];
    let mut codes = Vec::new();
    for (stage, cfg) in &steps {
        let mut args = vec![stage.to_string(), "--seed".into(), "7".into(), "--out".into(), stage.to_string()];
        if let Some(cfg) = cfg {
            args.push("--config".into());
            args.push(write_config(d, &format!("{stage}.json"), cfg.clone()));
        }
        let argv: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let (code, stderr) = run_cli(d, &argv);
        if code != 0 {
            eprintln!("{stage} failed: {stderr}");
        }
        codes.push((*stage, code));
        if code != 0 {
            break;
        }
    }
    let el = t.elapsed();
    let all_zero = codes.len() == steps.len() && codes.iter().all(|c| c.1 == 0);
    let read = |p: &str| -> Option<serde_json::Value> { serde_json::from_str(&std::fs::read_to_string(d.join(p)).ok()?).ok() };
    let err = read("eval/metrics.json").and_then(|m| m["e_mpjpe_g"].as_f64());
    let bound = read("train-vq/vq_report.json").and_then(|m| m["rec_bound_mm"].as_f64());
    let below = matches!((err, bound), (Some(e), Some(b)) if e < b);
    let ok = all_zero && below && el < Duration::from_secs(900);
    assert!(verdict(
        11,
        "end-to-end smoke",
        ok,
        format!("exit codes {codes:?}; e_mpjpe_g {err:?} mm vs VQ bound {bound:?} mm; {el:.1?}")
    ));
}
