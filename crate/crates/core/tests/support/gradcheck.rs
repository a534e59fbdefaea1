//! Central finite-difference checks (step 1e-4) of every hand-written
//! backward pass, at toy sizes. Each check panics on a relative error of
//! 1e-3 or more and returns its worst error.

use hvla::corpus::{generate_clip, GenParams, MotionFamily};
use hvla::params::ParamSet;
use hvla::partvq::{vq_loss, LossTerms, PartCodecs, PartData};
use hvla::retarget::{forward_kinematics, jacobian, PoseParams, RobotSkeleton};
use hvla::rng;
use hvla::tinylm::{nll_loss, record_grad, Fusion, LmParams, LmRecord, ModelConfig, Want};
use hvla::visfuse::{patchify, render_scene, Bearing, FusionParams, VisConfig};
use rand::Rng as _;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-3;

/// `|an - fd| / max(|an|, |fd|, 1e-6)`
fn rel(an: f64, fd: f64) -> f64 {
    (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6)
}

/// Checks sampled entries of every block of `params` whose name passes
/// `select` and returns the worst relative error.
fn check_blocks<P: ParamSet + Clone>(
    params: &P,
    grads: &P,
    select: impl Fn(&str) -> bool,
    samples: usize,
    loss: impl Fn(&P) -> f64,
) -> f64 {
    let names: Vec<String> = params.blocks().iter().map(|b| b.name.clone()).collect();
    let mut worst: f64 = 0.0;
    for (bi, name) in names.iter().enumerate() {
        if !select(name) {
            continue;
        }
        let n = params.blocks()[bi].data.len();
        for k in (0..n).step_by(1 + n / samples) {
            let mut pp = params.clone();
            pp.blocks_mut()[bi].data[k] += EPS;
            let mut pm = params.clone();
            pm.blocks_mut()[bi].data[k] -= EPS;
            let fd = (loss(&pp) - loss(&pm)) / (2.0 * EPS);
            let an = grads.blocks()[bi].data[k];
            let e = rel(an, fd);
            assert!(e < TOL, "{name}[{k}]: analytic {an} vs numeric {fd}");
            worst = worst.max(e);
        }
    }
    worst
}

fn vq_setup() -> (PartCodecs, PartData) {
    let clip = generate_clip(MotionFamily::WaveArm, &GenParams { frames: 6, ..Default::default() }, 3).unwrap();
    let data = PartData::from_frames(clip.sequence.frames()).unwrap();
    let mut r = rng::rng(1);
    let mut c = PartCodecs::new(6, 3, &mut r).unwrap();
    c.init_codebooks(&data, &mut r);
    for p in c.parts.iter_mut() {
        p.enc_b1.iter_mut().chain(p.dec_b1.iter_mut()).for_each(|v| *v = r.random_range(-0.3..0.3));
        p.codebook.iter_mut().for_each(|v| *v += r.random_range(-0.2..0.2));
    }
    (c, data)
}

pub fn partvq_decoder_and_codebook_gradients() -> f64 {
    let mut worst: f64 = 0.0;
    let (c, data) = vq_setup();
    let beta = 0.25;
    let (_, _, assign) = vq_loss(&data, &c, beta, LossTerms::ALL).unwrap();
    let same_codes = |p: &PartCodecs| vq_loss(&data, p, beta, LossTerms::ALL).unwrap().2 .0 == assign.0;

    // The decoder only sees the reconstruction term.
    let (_, g, _) = vq_loss(&data, &c, beta, LossTerms::ALL).unwrap();
    let w = check_blocks(&c, &g, |n| n.contains(".dec_"), 12, |p| {
        assert!(same_codes(p), "a perturbation changed a code assignment");
        vq_loss(&data, p, beta, LossTerms::ALL).unwrap().0.total
    });
    println!("partvq decoder: worst relative error {w:.2e}");
    worst = worst.max(w);

    // The codebook receives only the embedding term.
    let emb_only = LossTerms { rec: false, emb: true, com: false };
    let (_, g, _) = vq_loss(&data, &c, beta, emb_only).unwrap();
    let w = check_blocks(&c, &g, |n| n.ends_with("codebook"), 12, |p| vq_loss(&data, p, beta, LossTerms::ALL).unwrap().0.emb);
    println!("partvq codebook: worst relative error {w:.2e}");
    worst = worst.max(w);

    // The encoder receives beta times the commitment term ...
    let com_only = LossTerms { rec: false, emb: false, com: true };
    let (_, g, _) = vq_loss(&data, &c, beta, com_only).unwrap();
    let w = check_blocks(&c, &g, |n| n.contains(".enc_"), 12, |p| beta * vq_loss(&data, p, beta, LossTerms::ALL).unwrap().0.com);
    println!("partvq encoder (commitment): worst relative error {w:.2e}");
    worst.max(w)
}

pub fn partvq_straight_through_gradient() -> f64 {
    // ... plus the reconstruction gradient carried across the quantizer:
    // the derivative of rec evaluated at e + (z(theta) - z(theta_0)).
    let (c, data) = vq_setup();
    let rec_only = LossTerms { rec: true, emb: false, com: false };
    let (_, g, assign) = vq_loss(&data, &c, 0.25, rec_only).unwrap();
    let b = data.len();
    let z0: Vec<Vec<f64>> = c.parts.iter().map(|p| p.encode_batch(data.part(p.part), b).1).collect();
    let surrogate = |p: &PartCodecs| -> f64 {
        let mut total = 0.0;
        for (pi, codec) in p.parts.iter().enumerate() {
            let x = data.part(codec.part);
            let z = codec.encode_batch(x, b).1;
            let d = codec.latent_dim;
            let e: Vec<f64> = (0..b * d)
                .map(|i| c.parts[pi].code(assign.0[pi][i / d])[i % d] + z[i] - z0[pi][i])
                .collect();
            let out = codec.decode_batch(&e, b).1;
            total += out
                .chunks_exact(codec.input_dim)
                .zip(x.chunks_exact(codec.input_dim))
                .map(|(o, t)| o.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / b as f64;
        }
        total
    };
    let w = check_blocks(&c, &g, |n| n.contains(".enc_"), 12, surrogate);
    println!("partvq encoder (straight-through): worst relative error {w:.2e}");
    w
}

fn perturbed_lm(cfg: &ModelConfig, seed: u64) -> LmParams {
    let mut p = LmParams::new(cfg).unwrap();
    let mut r = rng::rng(seed);
    for b in p.blocks_mut() {
        b.data.iter_mut().for_each(|x| *x += r.random_range(-0.3..0.3));
    }
    p
}

pub fn tinylm_gradients() -> f64 {
    let mut worst: f64 = 0.0;
    for tie in [false, true] {
        let cfg = ModelConfig {
            layers: 2,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            context: 10,
            vocab_size: 12,
            tie_embeddings: tie,
            seed: 4,
        };
        let p = perturbed_lm(&cfg, 5);
        let batch = vec![
            LmRecord { ids: vec![0, 3, 4, 2, 6, 7, 1, 11], answer_start: 4 },
            LmRecord { ids: vec![0, 9, 2, 8, 1], answer_start: 2 },
        ];
        let (_, g) = nll_loss(&p, &batch, false).unwrap();
        let w = check_blocks(&p, &g, |_| true, 16, |q| nll_loss(q, &batch, false).unwrap().0);
        println!("tinylm (tied={tie}): worst relative error {w:.2e}");
        worst = worst.max(w);
    }
    worst
}

pub fn visfuse_gradients() -> f64 {
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 8, d_ff: 16, context: 12, vocab_size: 10, tie_embeddings: false, seed: 6 };
    let base = perturbed_lm(&cfg, 7);
    let mut fusion = FusionParams::new(&VisConfig { patch: 16, d_vis: 8, d_attn: 6, ..Default::default() }, &cfg).unwrap();
    let mut r = rng::rng(8);
    for a in &mut fusion.adapters {
        a.w_o.iter_mut().for_each(|w| *w = r.random_range(-0.3..0.3));
        a.gate[0] = 0.7;
    }
    let patches = patchify(&render_scene(Bearing::Left, 1.5, 2).unwrap(), 16).unwrap();
    let rec = LmRecord { ids: vec![0, 4, 5, 1, 7, 8, 9, 2], answer_start: 4 };
    let want = Want { base: false, adapters: true, visual: true };
    let grads_of = |f: &FusionParams| {
        let visual = f.vision.encode_patches(&patches);
        let fu = Fusion { adapters: &f.adapters, visual: &visual, tokens: patches.count() };
        record_grad(&base, &rec, false, Some(&fu), want).unwrap()
    };
    let out = grads_of(&fusion);
    let mut g = fusion.zeros_like();
    g.adapters = out.adapters.unwrap();
    fusion.vision.backward(&patches, &out.visual.unwrap(), &mut g.vision);
    let w = check_blocks(&fusion, &g, |_| true, 10, |f| grads_of(f).nll_sum);
    println!("visfuse: worst relative error {w:.2e}");
    w
}

pub fn forward_kinematics_jacobian() -> f64 {
    let mut overall: f64 = 0.0;
    for skel in [RobotSkeleton::humanoid24(), RobotSkeleton::human()] {
        let mut pose = PoseParams::rest(&skel);
        pose.angles.iter_mut().enumerate().for_each(|(i, a)| *a = 0.5 * (i as f64 * 0.7).cos());
        pose.root = [0.3, -0.2, 1.0];
        let jac = jacobian(&skel, &pose).unwrap();
        let cols = skel.num_params();
        let mut flat = pose.to_flat();
        let mut worst: f64 = 0.0;
        for c in 0..cols {
            if c < 3 && !skel.floating_base {
                continue;
            }
            let orig = flat[c];
            flat[c] = orig + EPS;
            let plus = forward_kinematics(&skel, &PoseParams::from_flat(&flat)).unwrap();
            flat[c] = orig - EPS;
            let minus = forward_kinematics(&skel, &PoseParams::from_flat(&flat)).unwrap();
            flat[c] = orig;
            for j in 0..skel.joints.len() {
                for a in 0..3 {
                    let fd = (plus[j][a] - minus[j][a]) / (2.0 * EPS);
                    let an = jac[(3 * j + a) * cols + c];
                    let e = rel(an, fd);
                    assert!(e < TOL, "joint {j} axis {a} param {c}: {an} vs {fd}");
                    worst = worst.max(e);
                }
            }
        }
        println!("forward kinematics ({} joints): worst relative error {worst:.2e}", skel.joints.len());
        overall = overall.max(worst);
    }
    overall
}
