use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::linalg::{accumulate_col_sums, add_row_bias, gemm, matmul};
use crate::motion::{assemble_frame, partition_frame, BodyPart, Frame, JointLayout, PartVector, NUM_PARTS};
use crate::params::{Block, BlockMut, ParamSet};
use crate::rng::Rng;

/// Parameter blocks stored per part, in checkpoint order.
pub const BLOCK_NAMES: [&str; 9] = ["enc_w1", "enc_b1", "enc_w2", "enc_b2", "dec_w1", "dec_b1", "dec_w2", "dec_b2", "codebook"];

/// Index of the codebook within a part's blocks.
pub const CODEBOOK_BLOCK: usize = 8;

/// Encoder, codebook, and decoder of one body part.
///
/// Encoder: `z = tanh(x W1 + b1) W2 + b2` with `W1: n x h`, `W2: h x d`.
/// Decoder: `x' = tanh(e W3 + b3) W4 + b4` with `W3: d x h`, `W4: h x n`.
/// The hidden width is `h = 4d`. Matrices are row-major, input-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PartCodec {
    pub part: BodyPart,
    pub input_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub enc_w1: Vec<f64>,
    pub enc_b1: Vec<f64>,
    pub enc_w2: Vec<f64>,
    pub enc_b2: Vec<f64>,
    pub dec_w1: Vec<f64>,
    pub dec_b1: Vec<f64>,
    pub dec_w2: Vec<f64>,
    pub dec_b2: Vec<f64>,
    /// `K x d`, one code per row.
    pub codebook: Vec<f64>,
}

fn uniform_fill(rng: &mut Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..len).map(|_| dist.sample(rng)).collect()
}

impl PartCodec {
    /// Randomly initialized codec with an all-zero codebook.
    pub fn new(part: BodyPart, codebook_size: usize, latent_dim: usize, rng: &mut Rng) -> Self {
        let (n, d) = (part.dim(), latent_dim);
        let h = 4 * d;
        Self {
            part,
            input_dim: n,
            hidden: h,
            latent_dim: d,
            codebook_size,
            enc_w1: uniform_fill(rng, n * h, n),
            enc_b1: vec![0.0; h],
            enc_w2: uniform_fill(rng, h * d, h),
            enc_b2: vec![0.0; d],
            dec_w1: uniform_fill(rng, d * h, d),
            dec_b1: vec![0.0; h],
            dec_w2: uniform_fill(rng, h * n, h),
            dec_b2: vec![0.0; n],
            codebook: vec![0.0; codebook_size * d],
        }
    }

    pub fn code(&self, k: usize) -> &[f64] {
        &self.codebook[k * self.latent_dim..(k + 1) * self.latent_dim]
    }

    fn blocks_raw(&self) -> [(&'static str, Vec<usize>, &[f64]); 9] {
        let (n, h, d, k) = (self.input_dim, self.hidden, self.latent_dim, self.codebook_size);
        [
            ("enc_w1", vec![n, h], &self.enc_w1),
            ("enc_b1", vec![h], &self.enc_b1),
            ("enc_w2", vec![h, d], &self.enc_w2),
            ("enc_b2", vec![d], &self.enc_b2),
            ("dec_w1", vec![d, h], &self.dec_w1),
            ("dec_b1", vec![h], &self.dec_b1),
            ("dec_w2", vec![h, n], &self.dec_w2),
            ("dec_b2", vec![n], &self.dec_b2),
            ("codebook", vec![k, d], &self.codebook),
        ]
    }

    fn blocks_raw_mut(&mut self) -> [(&'static str, Vec<usize>, &mut Vec<f64>); 9] {
        let (n, h, d, k) = (self.input_dim, self.hidden, self.latent_dim, self.codebook_size);
        [
            ("enc_w1", vec![n, h], &mut self.enc_w1),
            ("enc_b1", vec![h], &mut self.enc_b1),
            ("enc_w2", vec![h, d], &mut self.enc_w2),
            ("enc_b2", vec![d], &mut self.enc_b2),
            ("dec_w1", vec![d, h], &mut self.dec_w1),
            ("dec_b1", vec![h], &mut self.dec_b1),
            ("dec_w2", vec![h, n], &mut self.dec_w2),
            ("dec_b2", vec![n], &mut self.dec_b2),
            ("codebook", vec![k, d], &mut self.codebook),
        ]
    }

    /// Encoder outputs for a row-major batch `x` of `b` part vectors.
    /// Returns `(hidden activations, latents)`.
    pub fn encode_batch(&self, x: &[f64], b: usize) -> (Vec<f64>, Vec<f64>) {
        let (n, h, d) = (self.input_dim, self.hidden, self.latent_dim);
        let mut h1 = matmul(x, &self.enc_w1, b, n, h);
        add_row_bias(&mut h1, &self.enc_b1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut z = matmul(&h1, &self.enc_w2, b, h, d);
        add_row_bias(&mut z, &self.enc_b2);
        (h1, z)
    }

    /// Decoder outputs for a batch of `b` latents. Returns `(hidden, output)`.
    pub fn decode_batch(&self, e: &[f64], b: usize) -> (Vec<f64>, Vec<f64>) {
        let (n, h, d) = (self.input_dim, self.hidden, self.latent_dim);
        let mut h3 = matmul(e, &self.dec_w1, b, d, h);
        add_row_bias(&mut h3, &self.dec_b1);
        h3.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = matmul(&h3, &self.dec_w2, b, h, n);
        add_row_bias(&mut out, &self.dec_b2);
        (h3, out)
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        self.encode_batch(x, 1).1
    }

    pub fn decode(&self, e: &[f64]) -> Vec<f64> {
        self.decode_batch(e, 1).1
    }

    pub fn nearest(&self, z: &[f64]) -> usize {
        nearest_code(z, &self.codebook, self.latent_dim)
    }
}

/// Index of the codebook row (`K x d`, row-major) closest to `z` in Euclidean
/// distance. Ties go to the lowest index.
pub fn nearest_code(z: &[f64], codebook: &[f64], d: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, row) in codebook.chunks_exact(d).enumerate() {
        let dist: f64 = row.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best.0 {
            best = (dist, k);
        }
    }
    best.1
}

/// Five independent part codecs sharing `K` and `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartCodecs {
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub parts: [PartCodec; NUM_PARTS],
}

/// Five code indices in canonical part order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct TokenFrame(pub [u32; NUM_PARTS]);

impl PartCodecs {
    /// Random weights; codebooks are all zero until [`PartCodecs::init_codebooks`].
    pub fn new(codebook_size: usize, latent_dim: usize, rng: &mut Rng) -> Result<Self> {
        if codebook_size == 0 || latent_dim == 0 {
            return Err(Error::InvalidArgument("codebook size and latent dim must be positive".into()));
        }
        if codebook_size > u32::MAX as usize {
            return Err(Error::InvalidArgument("codebook size does not fit in u32".into()));
        }
        let parts = BodyPart::ALL.map(|p| PartCodec::new(p, codebook_size, latent_dim, rng));
        Ok(Self { codebook_size, latent_dim, parts })
    }

    /// Seeds every codebook with encoder outputs of randomly drawn frames.
    pub fn init_codebooks(&mut self, data: &PartData, rng: &mut Rng) {
        for codec in self.parts.iter_mut() {
            let rows: Vec<usize> = (0..self.codebook_size).map(|_| rng.random_range(0..data.len())).collect();
            let x = data.gather(codec.part, &rows);
            let (_, z) = codec.encode_batch(&x, rows.len());
            codec.codebook = z;
        }
    }

    pub fn part(&self, part: BodyPart) -> &PartCodec {
        &self.parts[part.index()]
    }

    /// Quantizes one frame. Returns the tokens and the pre-quantization latents.
    pub fn encode_frame(&self, frame: &Frame) -> Result<(TokenFrame, [Vec<f64>; NUM_PARTS])> {
        let pv = partition_frame(frame, &JointLayout::canonical())?;
        let mut tokens = [0u32; NUM_PARTS];
        let mut latents: [Vec<f64>; NUM_PARTS] = Default::default();
        for (i, codec) in self.parts.iter().enumerate() {
            let z = codec.encode(&pv[i].values);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{} encoder output", codec.part.name())));
            }
            tokens[i] = codec.nearest(&z) as u32;
            latents[i] = z;
        }
        Ok((TokenFrame(tokens), latents))
    }

    pub fn decode_frame(&self, tokens: &TokenFrame) -> Result<Frame> {
        let mut parts = Vec::with_capacity(NUM_PARTS);
        for (codec, &t) in self.parts.iter().zip(&tokens.0) {
            if t as usize >= self.codebook_size {
                return Err(Error::Vocabulary(format!(
                    "{} token {t} out of range for codebook size {}",
                    codec.part.name(),
                    self.codebook_size
                )));
            }
            parts.push(PartVector { part: codec.part, values: codec.decode(codec.code(t as usize)) });
        }
        let frame = assemble_frame(&parts, &JointLayout::canonical())?;
        if frame.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoded frame".into()));
        }
        Ok(frame)
    }
}

impl ParamSet for PartCodecs {
    fn blocks(&self) -> Vec<Block<'_>> {
        self.parts
            .iter()
            .flat_map(|c| {
                c.blocks_raw().into_iter().map(move |(name, shape, data)| Block {
                    name: format!("{}.{name}", c.part.name()),
                    shape,
                    data,
                })
            })
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        self.parts
            .iter_mut()
            .flat_map(|c| {
                let part = c.part.name();
                c.blocks_raw_mut().into_iter().map(move |(name, shape, data)| BlockMut {
                    name: format!("{part}.{name}"),
                    shape,
                    data: data.as_mut_slice(),
                })
            })
            .collect()
    }
}

/// Training frames split into per-part row-major matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PartData {
    rows: usize,
    parts: [Vec<f64>; NUM_PARTS],
}

impl PartData {
    pub fn from_frames(frames: &[Frame]) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Shape("no frames".into()));
        }
        let layout = JointLayout::canonical();
        let mut parts: [Vec<f64>; NUM_PARTS] = Default::default();
        for f in frames {
            for pv in partition_frame(f, &layout)? {
                parts[pv.part.index()].extend_from_slice(&pv.values);
            }
        }
        Ok(Self { rows: frames.len(), parts })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn part(&self, part: BodyPart) -> &[f64] {
        &self.parts[part.index()]
    }

    /// Rows `idx` of one part as a contiguous batch.
    pub fn gather(&self, part: BodyPart, idx: &[usize]) -> Vec<f64> {
        let n = part.dim();
        let src = &self.parts[part.index()];
        idx.iter().flat_map(|&i| src[i * n..(i + 1) * n].iter().copied()).collect()
    }

    /// A batch made of the given rows of every part.
    pub fn subset(&self, idx: &[usize]) -> PartData {
        PartData { rows: idx.len(), parts: BodyPart::ALL.map(|p| self.gather(p, idx)) }
    }
}

/// Loss terms, each summed over parts and averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct VqLossReport {
    pub rec: f64,
    pub emb: f64,
    pub com: f64,
    pub total: f64,
    /// Reconstruction term of each part.
    pub rec_per_part: [f64; NUM_PARTS],
}

/// Which loss terms contribute to the returned gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub rec: bool,
    pub emb: bool,
    pub com: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms { rec: true, emb: true, com: true };
}

/// Per-frame code usage produced by a loss evaluation.
pub struct Assignments(pub [Vec<usize>; NUM_PARTS]);

fn unit_residual(r: &[f64]) -> (f64, Vec<f64>) {
    let len = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if len == 0.0 {
        (0.0, vec![0.0; r.len()])
    } else {
        (len, r.iter().map(|v| v / len).collect())
    }
}

/// Loss and gradient for a batch.
///
/// Per part `b` and frame `i`, with `z = E(c)`, `e = codebook[argmin]`:
/// `rec = |c - D(e)|`, `emb = |sg(z) - e|`, `com = |z - sg(e)|`, each
/// averaged over frames and summed over parts; `total = rec + emb + beta*com`.
/// The reconstruction gradient at `e` is passed to `z` unchanged, so it trains
/// the encoder but never the codebook.
pub fn vq_loss(
    data: &PartData,
    codecs: &PartCodecs,
    beta: f64,
    terms: LossTerms,
) -> Result<(VqLossReport, PartCodecs, Assignments)> {
    let b = data.len();
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let inv_b = 1.0 / b as f64;
    let mut grads = codecs.clone();
    grads.fill(0.0);
    let mut report = VqLossReport::default();
    let mut assign: [Vec<usize>; NUM_PARTS] = Default::default();
    for (pi, codec) in codecs.parts.iter().enumerate() {
        let g = &mut grads.parts[pi];
        let (n, h, d) = (codec.input_dim, codec.hidden, codec.latent_dim);
        let x = data.part(codec.part);
        let (h1, z) = codec.encode_batch(x, b);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} encoder output", codec.part.name())));
        }
        let idx: Vec<usize> = z.chunks_exact(d).map(|zi| codec.nearest(zi)).collect();
        let e: Vec<f64> = idx.iter().flat_map(|&k| codec.code(k).iter().copied()).collect();
        let (h3, xr) = codec.decode_batch(&e, b);

        let mut g_out = vec![0.0; b * n];
        let mut g_z = vec![0.0; b * d];
        let (mut rec, mut emb) = (0.0, 0.0);
        for i in 0..b {
            let r: Vec<f64> = (0..n).map(|j| xr[i * n + j] - x[i * n + j]).collect();
            let (len, unit) = unit_residual(&r);
            rec += len * inv_b;
            if terms.rec {
                for j in 0..n {
                    g_out[i * n + j] = unit[j] * inv_b;
                }
            }
            let q: Vec<f64> = (0..d).map(|j| z[i * d + j] - e[i * d + j]).collect();
            let (len, unit) = unit_residual(&q);
            emb += len * inv_b;
            if terms.emb {
                let row = &mut g.codebook[idx[i] * d..(idx[i] + 1) * d];
                for j in 0..d {
                    row[j] -= unit[j] * inv_b;
                }
            }
            if terms.com {
                for j in 0..d {
                    g_z[i * d + j] += beta * unit[j] * inv_b;
                }
            }
        }
        let com = emb;
        report.rec_per_part[pi] = rec;
        report.rec += rec;
        report.emb += emb;
        report.com += com;

        if terms.rec {
            // Decoder.
            gemm(true, false, h, n, b, 1.0, &h3, &g_out, 0.0, &mut g.dec_w2);
            accumulate_col_sums(&g_out, n, &mut g.dec_b2);
            let mut g_a3 = vec![0.0; b * h];
            gemm(false, true, b, h, n, 1.0, &g_out, &codec.dec_w2, 0.0, &mut g_a3);
            for (ga, hv) in g_a3.iter_mut().zip(&h3) {
                *ga *= 1.0 - hv * hv;
            }
            gemm(true, false, d, h, b, 1.0, &e, &g_a3, 0.0, &mut g.dec_w1);
            accumulate_col_sums(&g_a3, h, &mut g.dec_b1);
            // Straight-through: the gradient at the quantized latent lands on z.
            gemm(false, true, b, d, h, 1.0, &g_a3, &codec.dec_w1, 1.0, &mut g_z);
        }
        // Encoder.
        gemm(true, false, h, d, b, 1.0, &h1, &g_z, 0.0, &mut g.enc_w2);
        accumulate_col_sums(&g_z, d, &mut g.enc_b2);
        let mut g_a1 = vec![0.0; b * h];
        gemm(false, true, b, h, d, 1.0, &g_z, &codec.enc_w2, 0.0, &mut g_a1);
        for (ga, hv) in g_a1.iter_mut().zip(&h1) {
            *ga *= 1.0 - hv * hv;
        }
        gemm(true, false, n, h, b, 1.0, x, &g_a1, 0.0, &mut g.enc_w1);
        accumulate_col_sums(&g_a1, h, &mut g.enc_b1);
        assign[pi] = idx;
    }
    report.total = report.rec + report.emb + beta * report.com;
    Ok((report, grads, Assignments(assign)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_clip, GenParams, MotionFamily};
    use crate::rng;
    use proptest::prelude::*;

    fn toy_codecs(k: usize, d: usize, seed: u64) -> (PartCodecs, PartData) {
        let clip = generate_clip(MotionFamily::Walk, &GenParams { frames: 6, ..Default::default() }, seed).unwrap();
        let data = PartData::from_frames(clip.sequence.frames()).unwrap();
        let mut r = rng::rng(seed);
        let mut c = PartCodecs::new(k, d, &mut r).unwrap();
        c.init_codebooks(&data, &mut r);
        for p in c.parts.iter_mut() {
            p.enc_b1.iter_mut().chain(p.dec_b1.iter_mut()).for_each(|v| *v = r.random_range(-0.3..0.3));
            p.codebook.iter_mut().for_each(|v| *v += r.random_range(-0.2..0.2));
        }
        (c, data)
    }

    #[test]
    fn nearest_code_examples() {
        let cb = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        assert_eq!(nearest_code(&[0.9, 0.1], &cb, 2), 1);
        assert_eq!(nearest_code(&[0.5, 0.5], &[0.0, 0.0, 1.0, 1.0, 0.0, 1.0], 2), 0);
        assert_eq!(nearest_code(&[7.0, -3.0], &[0.4, 0.4], 2), 0);
    }

    /// Decoder `x' = 2 tanh(e)` with codes `atanh(x / 2)` of each training
    /// frame reproduces the frames exactly.
    #[test]
    fn identity_codec_reconstructs_training_frames() {
        let clip = generate_clip(MotionFamily::Squat, &GenParams { frames: 8, ..Default::default() }, 2).unwrap();
        let frames = clip.sequence.frames();
        let data = PartData::from_frames(frames).unwrap();
        let mut codecs = PartCodecs::new(8, 1, &mut rng::rng(0)).unwrap();
        for (pi, part) in BodyPart::ALL.into_iter().enumerate() {
            let n = part.dim();
            let eye: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect();
            let c = &mut codecs.parts[pi];
            c.latent_dim = n;
            c.hidden = n;
            c.dec_w1 = eye.clone();
            c.dec_b1 = vec![0.0; n];
            c.dec_w2 = eye.iter().map(|v| 2.0 * v).collect();
            c.dec_b2 = vec![0.0; n];
            c.codebook = data.part(part).iter().map(|v| (v / 2.0).atanh()).collect();
        }
        for (i, f) in frames.iter().enumerate() {
            let back = codecs.decode_frame(&TokenFrame([i as u32; NUM_PARTS])).unwrap();
            for (a, b) in back.iter().flatten().zip(f.iter().flatten()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_token_rejected() {
        let (c, _) = toy_codecs(4, 2, 0);
        assert!(matches!(c.decode_frame(&TokenFrame([0, 0, 4, 0, 0])), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn single_code_maps_everything_to_zero() {
        let (c, data) = toy_codecs(1, 3, 1);
        let (_, _, a) = vq_loss(&data, &c, 0.25, LossTerms::ALL).unwrap();
        assert!(a.0.iter().flatten().all(|&k| k == 0));
    }

    #[test]
    fn zero_distance_batch_has_zero_codebook_terms() {
        let (mut c, data) = toy_codecs(6, 3, 2);
        for codec in c.parts.iter_mut() {
            let x = data.part(codec.part);
            let (_, z) = codec.encode_batch(x, data.len());
            codec.codebook = z;
        }
        let (r, _, _) = vq_loss(&data, &c, 0.25, LossTerms::ALL).unwrap();
        assert_eq!(r.emb, 0.0);
        assert_eq!(r.com, 0.0);
    }

    #[test]
    fn beta_zero_total_is_rec_plus_emb() {
        let (c, data) = toy_codecs(4, 3, 3);
        let (r, _, _) = vq_loss(&data, &c, 0.0, LossTerms::ALL).unwrap();
        assert_eq!(r.total, r.rec + r.emb);
    }

    #[test]
    fn stop_gradient_placement_is_exact() {
        let (c, data) = toy_codecs(4, 3, 4);
        let only = |rec, emb, com| LossTerms { rec, emb, com };
        let (_, g_emb, _) = vq_loss(&data, &c, 0.25, only(false, true, false)).unwrap();
        let (_, g_com, _) = vq_loss(&data, &c, 0.25, only(false, false, true)).unwrap();
        for b in g_emb.blocks() {
            if !b.name.ends_with("codebook") {
                assert!(b.data.iter().all(|&v| v == 0.0), "emb moved {}", b.name);
            }
        }
        let touched = g_emb.blocks().iter().filter(|b| b.name.ends_with("codebook")).any(|b| b.data.iter().any(|&v| v != 0.0));
        assert!(touched);
        for b in g_com.blocks() {
            if b.name.ends_with("codebook") || b.name.contains(".dec_") {
                assert!(b.data.iter().all(|&v| v == 0.0), "com moved {}", b.name);
            }
        }
    }

    #[test]
    fn straight_through_copies_gradient() {
        // d rec / d z must equal d rec / d e: check through enc_b2, whose
        // gradient is the column sum of d rec / d z.
        let (c, data) = toy_codecs(4, 3, 5);
        let rec_only = LossTerms { rec: true, emb: false, com: false };
        let (_, g, a) = vq_loss(&data, &c, 0.25, rec_only).unwrap();
        for (pi, codec) in c.parts.iter().enumerate() {
            let e: Vec<f64> = a.0[pi].iter().flat_map(|&k| codec.code(k).iter().copied()).collect();
            let x = data.part(codec.part);
            let eps = 1e-6;
            for j in 0..codec.latent_dim {
                let shifted = |s: f64| {
                    let mut e2 = e.clone();
                    for i in 0..data.len() {
                        e2[i * codec.latent_dim + j] += s;
                    }
                    let (_, out) = codec.decode_batch(&e2, data.len());
                    out.chunks_exact(codec.input_dim)
                        .zip(x.chunks_exact(codec.input_dim))
                        .map(|(o, t)| o.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                        .sum::<f64>()
                        / data.len() as f64
                };
                let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                let an = g.parts[pi].enc_b2[j];
                assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{fd} vs {an}");
            }
        }
    }

    proptest! {
        #[test]
        fn nearest_matches_brute_force(
            k in 1usize..=64,
            d in 1usize..=8,
            seed in any::<u64>(),
        ) {
            let mut r = rng::rng(seed);
            let cb: Vec<f64> = (0..k * d).map(|_| r.random_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..d).map(|_| r.random_range(-1.5..1.5)).collect();
            let brute = (0..k)
                .map(|i| (cb[i * d..(i + 1) * d].iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap()
                .1;
            prop_assert_eq!(nearest_code(&z, &cb, d), brute);
        }
    }
}
