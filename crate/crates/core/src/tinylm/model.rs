use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{accumulate_col_sums, add_row_bias, gemm, matmul};
use crate::params::{Block, BlockMut, ParamSet};
use crate::rng;
use crate::visfuse::{fuse_layer, fuse_layer_backward, CrossAttn, FuseCache};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context: usize,
    /// Filled from the vocabulary when left at 0.
    pub vocab_size: usize,
    /// Reuse the token embedding as the output projection.
    pub tie_embeddings: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 4, d_model: 64, d_ff: 256, context: 512, vocab_size: 0, tie_embeddings: false, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.d_ff == 0 || self.context == 0 {
            return bad("layers, heads, d_model, d_ff and context must all be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    /// `D x 3D`, columns are `[q | k | v]`.
    pub w_qkv: Vec<f64>,
    pub b_qkv: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w_ff1: Vec<f64>,
    pub b_ff1: Vec<f64>,
    pub w_ff2: Vec<f64>,
    pub b_ff2: Vec<f64>,
}

/// Parameters of the decoder. A `LmParams` of zeros doubles as a gradient
/// buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    pub config: ModelConfig,
    /// `V x D`
    pub tok_emb: Vec<f64>,
    /// `context x D`
    pub pos_emb: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    /// `D x V`; empty when embeddings are tied.
    pub head: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl LmParams {
    /// Gaussian init (std 0.02, residual projections scaled down by
    /// `sqrt(2 * layers)`), unit norm gains, zero biases.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut r = rng::rng(config.seed);
        let base = Normal::new(0.0, 0.02).expect("valid std");
        let resid = Normal::new(0.0, 0.02 / (2.0 * config.layers as f64).sqrt()).expect("valid std");
        let mut fill = |v: &mut Vec<f64>, n: &Normal<f64>| v.iter_mut().for_each(|x| *x = n.sample(&mut r));
        fill(&mut p.tok_emb, &base);
        fill(&mut p.pos_emb, &base);
        for l in &mut p.layers {
            l.ln1_g.fill(1.0);
            l.ln2_g.fill(1.0);
            fill(&mut l.w_qkv, &base);
            fill(&mut l.w_o, &resid);
            fill(&mut l.w_ff1, &base);
            fill(&mut l.w_ff2, &resid);
        }
        p.lnf_g.fill(1.0);
        fill(&mut p.head, &base);
        Ok(p)
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
        let layer = LayerParams {
            ln1_g: vec![0.0; d],
            ln1_b: vec![0.0; d],
            w_qkv: vec![0.0; d * 3 * d],
            b_qkv: vec![0.0; 3 * d],
            w_o: vec![0.0; d * d],
            b_o: vec![0.0; d],
            ln2_g: vec![0.0; d],
            ln2_b: vec![0.0; d],
            w_ff1: vec![0.0; d * f],
            b_ff1: vec![0.0; f],
            w_ff2: vec![0.0; f * d],
            b_ff2: vec![0.0; d],
        };
        Self {
            config: config.clone(),
            tok_emb: vec![0.0; v * d],
            pos_emb: vec![0.0; config.context * d],
            layers: vec![layer; config.layers],
            lnf_g: vec![0.0; d],
            lnf_b: vec![0.0; d],
            head: if config.tie_embeddings { Vec::new() } else { vec![0.0; d * v] },
            head_b: vec![0.0; v],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.config;
        let (d, f, v) = (c.d_model, c.d_ff, c.vocab_size);
        let mut out = vec![("tok_emb".to_string(), vec![v, d]), ("pos_emb".to_string(), vec![c.context, d])];
        for l in 0..c.layers {
            for (n, s) in [
                ("ln1_g", vec![d]),
                ("ln1_b", vec![d]),
                ("w_qkv", vec![d, 3 * d]),
                ("b_qkv", vec![3 * d]),
                ("w_o", vec![d, d]),
                ("b_o", vec![d]),
                ("ln2_g", vec![d]),
                ("ln2_b", vec![d]),
                ("w_ff1", vec![d, f]),
                ("b_ff1", vec![f]),
                ("w_ff2", vec![f, d]),
                ("b_ff2", vec![d]),
            ] {
                out.push((format!("layer{l}.{n}"), s));
            }
        }
        out.push(("lnf_g".into(), vec![d]));
        out.push(("lnf_b".into(), vec![d]));
        if !c.tie_embeddings {
            out.push(("head".into(), vec![d, v]));
        }
        out.push(("head_b".into(), vec![v]));
        out
    }
}

impl LayerParams {
    fn fields(&self) -> [&Vec<f64>; 12] {
        [
            &self.ln1_g, &self.ln1_b, &self.w_qkv, &self.b_qkv, &self.w_o, &self.b_o, &self.ln2_g, &self.ln2_b,
            &self.w_ff1, &self.b_ff1, &self.w_ff2, &self.b_ff2,
        ]
    }
    fn fields_mut(&mut self) -> [&mut Vec<f64>; 12] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w_qkv,
            &mut self.b_qkv,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
        ]
    }
}

impl ParamSet for LmParams {
    fn blocks(&self) -> Vec<Block<'_>> {
        let mut data: Vec<&[f64]> = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            data.extend(l.fields().map(|v| v.as_slice()));
        }
        data.push(&self.lnf_g);
        data.push(&self.lnf_b);
        if !self.config.tie_embeddings {
            data.push(&self.head);
        }
        data.push(&self.head_b);
        self.shapes().into_iter().zip(data).map(|((name, shape), data)| Block { name, shape, data }).collect()
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let shapes = self.shapes();
        let tied = self.config.tie_embeddings;
        let mut data: Vec<&mut [f64]> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            data.extend(l.fields_mut().map(|v| v.as_mut_slice()));
        }
        data.push(&mut self.lnf_g);
        data.push(&mut self.lnf_b);
        if !tied {
            data.push(&mut self.head);
        }
        data.push(&mut self.head_b);
        shapes.into_iter().zip(data).map(|((name, shape), data)| BlockMut { name, shape, data }).collect()
    }
}

/// Visual conditioning for a forward pass: one adapter per layer and a
/// shared `m x d_vis` grid of visual tokens.
#[derive(Debug, Clone, Copy)]
pub struct Fusion<'a> {
    pub adapters: &'a [CrossAttn],
    pub visual: &'a [f64],
    pub tokens: usize,
}

struct LayerNormOut {
    y: Vec<f64>,
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, g: &[f64], b: &[f64]) -> LayerNormOut {
    let t = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; t];
    for i in 0..t {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[i * d + j] = h;
            y[i * d + j] = h * g[j] + b[j];
        }
    }
    LayerNormOut { y, xhat, rstd }
}

fn layer_norm_backward(dy: &[f64], ln: &LayerNormOut, g: &[f64], d: usize, dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let t = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    for i in 0..t {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &ln.xhat[i * d..(i + 1) * d];
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let dxh = dyr[j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            dx[i * d + j] = ln.rstd[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct LayerCache {
    x_in: Vec<f64>,
    ln1: LayerNormOut,
    qkv: Vec<f64>,
    /// `heads x T x T`, zero above the diagonal.
    probs: Vec<f64>,
    attn: Vec<f64>,
    x_attn: Vec<f64>,
    fuse: Option<FuseCache>,
    ln2: LayerNormOut,
    h1: Vec<f64>,
    act: Vec<f64>,
}

/// Activations kept from [`forward_cached`] for [`backward`].
pub struct ForwardCache {
    t: usize,
    layers: Vec<LayerCache>,
    lnf: LayerNormOut,
}

fn check_ids(params: &LmParams, ids: &[u32]) -> Result<()> {
    let c = &params.config;
    if ids.is_empty() {
        return Err(Error::InvalidArgument("empty input sequence".into()));
    }
    if ids.len() > c.context {
        return Err(Error::InvalidArgument(format!("input of {} tokens exceeds context {}", ids.len(), c.context)));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= c.vocab_size) {
        return Err(Error::Vocabulary(format!("token id {bad} outside vocabulary of {}", c.vocab_size)));
    }
    Ok(())
}

fn self_attention(qkv: &[f64], t: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * t * t];
    let mut out = vec![0.0; t * d];
    for h in 0..heads {
        let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
        for i in 0..t {
            let q = &qkv[i * 3 * d + qo..i * 3 * d + qo + dh];
            let row = &mut probs[(h * t + i) * t..(h * t + i) * t + i + 1];
            let mut max = f64::NEG_INFINITY;
            for (j, s) in row.iter_mut().enumerate() {
                let k = &qkv[j * 3 * d + ko..j * 3 * d + ko + dh];
                *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                max = max.max(*s);
            }
            let mut z = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            let o = &mut out[i * d + qo..i * d + qo + dh];
            for (j, s) in row.iter_mut().enumerate() {
                *s /= z;
                let v = &qkv[j * 3 * d + vo..j * 3 * d + vo + dh];
                for (oe, ve) in o.iter_mut().zip(v) {
                    *oe += *s * ve;
                }
            }
        }
    }
    (out, probs)
}

fn self_attention_backward(d_out: &[f64], qkv: &[f64], probs: &[f64], t: usize, d: usize, heads: usize) -> Vec<f64> {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut d_qkv = vec![0.0; t * 3 * d];
    let mut dp = vec![0.0; t];
    for h in 0..heads {
        let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
        for i in 0..t {
            let p = &probs[(h * t + i) * t..(h * t + i) * t + i + 1];
            let go = &d_out[i * d + qo..i * d + qo + dh];
            let mut dot = 0.0;
            for j in 0..=i {
                let v = &qkv[j * 3 * d + vo..j * 3 * d + vo + dh];
                dp[j] = go.iter().zip(v).map(|(a, b)| a * b).sum();
                dot += dp[j] * p[j];
                let dv = &mut d_qkv[j * 3 * d + vo..j * 3 * d + vo + dh];
                for (x, g) in dv.iter_mut().zip(go) {
                    *x += p[j] * g;
                }
            }
            for j in 0..=i {
                let ds = p[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for e in 0..dh {
                    let qe = qkv[i * 3 * d + qo + e];
                    let ke = qkv[j * 3 * d + ko + e];
                    d_qkv[i * 3 * d + qo + e] += ds * ke;
                    d_qkv[j * 3 * d + ko + e] += ds * qe;
                }
            }
        }
    }
    d_qkv
}

/// Full forward pass keeping activations. Returns logits (`T x V`).
pub fn forward_cached(params: &LmParams, ids: &[u32], fusion: Option<&Fusion>) -> Result<(Vec<f64>, ForwardCache)> {
    check_ids(params, ids)?;
    let c = &params.config;
    let (t, d, f, v) = (ids.len(), c.d_model, c.d_ff, c.vocab_size);
    if let Some(fu) = fusion {
        if fu.adapters.len() != c.layers {
            return Err(Error::Shape(format!("{} adapters for {} layers", fu.adapters.len(), c.layers)));
        }
    }
    let mut x = vec![0.0; t * d];
    for (i, &id) in ids.iter().enumerate() {
        let row = &mut x[i * d..(i + 1) * d];
        let te = &params.tok_emb[id as usize * d..(id as usize + 1) * d];
        let pe = &params.pos_emb[i * d..(i + 1) * d];
        for j in 0..d {
            row[j] = te[j] + pe[j];
        }
    }
    let mut caches = Vec::with_capacity(c.layers);
    for (li, lp) in params.layers.iter().enumerate() {
        let ln1 = layer_norm(&x, d, &lp.ln1_g, &lp.ln1_b);
        let mut qkv = matmul(&ln1.y, &lp.w_qkv, t, d, 3 * d);
        add_row_bias(&mut qkv, &lp.b_qkv);
        let (attn, probs) = self_attention(&qkv, t, d, c.heads);
        let mut proj = matmul(&attn, &lp.w_o, t, d, d);
        add_row_bias(&mut proj, &lp.b_o);
        let x_attn: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
        let (x_mid, fuse) = match fusion {
            Some(fu) => {
                let (out, cache) = fuse_layer(&x_attn, t, fu.visual, fu.tokens, &fu.adapters[li])?;
                (out, Some(cache))
            }
            None => (x_attn.clone(), None),
        };
        let ln2 = layer_norm(&x_mid, d, &lp.ln2_g, &lp.ln2_b);
        let mut h1 = matmul(&ln2.y, &lp.w_ff1, t, d, f);
        add_row_bias(&mut h1, &lp.b_ff1);
        let act: Vec<f64> = h1.iter().map(|&z| gelu(z)).collect();
        let mut ff = matmul(&act, &lp.w_ff2, t, f, d);
        add_row_bias(&mut ff, &lp.b_ff2);
        let x_out: Vec<f64> = x_mid.iter().zip(&ff).map(|(a, b)| a + b).collect();
        caches.push(LayerCache { x_in: std::mem::replace(&mut x, x_out), ln1, qkv, probs, attn, x_attn, fuse, ln2, h1, act });
    }
    let lnf = layer_norm(&x, d, &params.lnf_g, &params.lnf_b);
    let mut logits = vec![0.0; t * v];
    if c.tie_embeddings {
        gemm(false, true, t, v, d, 1.0, &lnf.y, &params.tok_emb, 0.0, &mut logits);
    } else {
        gemm(false, false, t, v, d, 1.0, &lnf.y, &params.head, 0.0, &mut logits);
    }
    add_row_bias(&mut logits, &params.head_b);
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("language model logits".into()));
    }
    Ok((logits, ForwardCache { t, layers: caches, lnf }))
}

/// Logits (`len x vocab`) for a token sequence; row `i` depends only on
/// `ids[..=i]`.
pub fn forward(params: &LmParams, ids: &[u32]) -> Result<Vec<f64>> {
    forward_cached(params, ids, None).map(|(l, _)| l)
}

/// Gradient sinks for [`backward`]. Any sink left `None` is skipped, which
/// also skips the matching weight-gradient work.
pub struct GradSinks<'a> {
    pub base: Option<&'a mut LmParams>,
    pub adapters: Option<&'a mut [CrossAttn]>,
    pub visual: Option<&'a mut [f64]>,
}

/// Backpropagates `d_logits` through the network.
pub fn backward(
    params: &LmParams,
    ids: &[u32],
    cache: &ForwardCache,
    d_logits: &[f64],
    fusion: Option<&Fusion>,
    mut sinks: GradSinks,
) {
    let c = &params.config;
    let (t, d, f, v) = (cache.t, c.d_model, c.d_ff, c.vocab_size);
    let mut scratch_vis = fusion.map(|fu| vec![0.0; fu.visual.len()]);

    let mut d_xf = vec![0.0; t * d];
    if c.tie_embeddings {
        gemm(false, false, t, d, v, 1.0, d_logits, &params.tok_emb, 0.0, &mut d_xf);
    } else {
        gemm(false, true, t, d, v, 1.0, d_logits, &params.head, 0.0, &mut d_xf);
    }
    let mut dummy_g = vec![0.0; d];
    let mut dummy_b = vec![0.0; d];
    let mut dx = match sinks.base.as_deref_mut() {
        Some(g) => {
            if c.tie_embeddings {
                gemm(true, false, v, d, t, 1.0, d_logits, &cache.lnf.y, 1.0, &mut g.tok_emb);
            } else {
                gemm(true, false, d, v, t, 1.0, &cache.lnf.y, d_logits, 1.0, &mut g.head);
            }
            accumulate_col_sums(d_logits, v, &mut g.head_b);
            layer_norm_backward(&d_xf, &cache.lnf, &params.lnf_g, d, &mut g.lnf_g, &mut g.lnf_b)
        }
        None => layer_norm_backward(&d_xf, &cache.lnf, &params.lnf_g, d, &mut dummy_g, &mut dummy_b),
    };

    for li in (0..c.layers).rev() {
        let lp = &params.layers[li];
        let lc = &cache.layers[li];
        let mut gl = sinks.base.as_deref_mut().map(|g| &mut g.layers[li]);
        // feed-forward
        let mut d_act = vec![0.0; t * f];
        gemm(false, true, t, f, d, 1.0, &dx, &lp.w_ff2, 0.0, &mut d_act);
        let d_h1: Vec<f64> = d_act.iter().zip(&lc.h1).map(|(g, &z)| g * gelu_grad(z)).collect();
        let mut d_ln2 = vec![0.0; t * d];
        gemm(false, true, t, d, f, 1.0, &d_h1, &lp.w_ff1, 0.0, &mut d_ln2);
        let d_mid_ln = match gl.as_deref_mut() {
            Some(g) => {
                gemm(true, false, f, d, t, 1.0, &lc.act, &dx, 1.0, &mut g.w_ff2);
                accumulate_col_sums(&dx, d, &mut g.b_ff2);
                gemm(true, false, d, f, t, 1.0, &lc.ln2.y, &d_h1, 1.0, &mut g.w_ff1);
                accumulate_col_sums(&d_h1, f, &mut g.b_ff1);
                layer_norm_backward(&d_ln2, &lc.ln2, &lp.ln2_g, d, &mut g.ln2_g, &mut g.ln2_b)
            }
            None => layer_norm_backward(&d_ln2, &lc.ln2, &lp.ln2_g, d, &mut dummy_g, &mut dummy_b),
        };
        let d_mid: Vec<f64> = dx.iter().zip(&d_mid_ln).map(|(a, b)| a + b).collect();
        // cross-attention adapter
        let d_attn_out = match (fusion, &lc.fuse) {
            (Some(fu), Some(fc)) => {
                let mut tmp;
                let ga = match sinks.adapters.as_deref_mut() {
                    Some(a) => &mut a[li],
                    None => {
                        tmp = fu.adapters[li].zeros_like();
                        &mut tmp
                    }
                };
                let dvis = scratch_vis.as_mut().expect("fusion scratch");
                fuse_layer_backward(&d_mid, &lc.x_attn, t, fu.visual, fu.tokens, &fu.adapters[li], fc, ga, dvis)
            }
            _ => d_mid,
        };
        // self-attention
        let mut d_attn = vec![0.0; t * d];
        gemm(false, true, t, d, d, 1.0, &d_attn_out, &lp.w_o, 0.0, &mut d_attn);
        let d_qkv = self_attention_backward(&d_attn, &lc.qkv, &lc.probs, t, d, c.heads);
        let mut d_ln1 = vec![0.0; t * d];
        gemm(false, true, t, d, 3 * d, 1.0, &d_qkv, &lp.w_qkv, 0.0, &mut d_ln1);
        let d_in_ln = match gl.as_deref_mut() {
            Some(g) => {
                gemm(true, false, d, d, t, 1.0, &lc.attn, &d_attn_out, 1.0, &mut g.w_o);
                accumulate_col_sums(&d_attn_out, d, &mut g.b_o);
                gemm(true, false, d, 3 * d, t, 1.0, &lc.ln1.y, &d_qkv, 1.0, &mut g.w_qkv);
                accumulate_col_sums(&d_qkv, 3 * d, &mut g.b_qkv);
                layer_norm_backward(&d_ln1, &lc.ln1, &lp.ln1_g, d, &mut g.ln1_g, &mut g.ln1_b)
            }
            None => layer_norm_backward(&d_ln1, &lc.ln1, &lp.ln1_g, d, &mut dummy_g, &mut dummy_b),
        };
        dx = d_attn_out.iter().zip(&d_in_ln).map(|(a, b)| a + b).collect();
        debug_assert_eq!(lc.x_in.len(), dx.len());
    }

    if let Some(g) = sinks.base.as_deref_mut() {
        for (i, &id) in ids.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            for j in 0..d {
                g.tok_emb[id as usize * d + j] += row[j];
                g.pos_emb[i * d + j] += row[j];
            }
        }
    }
    if let (Some(dst), Some(src)) = (sinks.visual.as_deref_mut(), scratch_vis) {
        for (a, b) in dst.iter_mut().zip(src) {
            *a += b;
        }
    }
}

/// A training sequence: `[bos] prompt [sep] answer [eos]` plus the index of
/// the first answer token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmRecord {
    pub ids: Vec<u32>,
    pub answer_start: usize,
}

impl LmRecord {
    /// Target positions (indices into `ids`) that carry loss.
    pub fn targets(&self, loss_on_prompt: bool) -> std::ops::Range<usize> {
        let start = if loss_on_prompt { 1 } else { self.answer_start.max(1) };
        start..self.ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.answer_start == 0 || self.answer_start >= self.ids.len() {
            return Err(Error::InvalidArgument(format!(
                "record of {} tokens has an empty answer segment (answer_start {})",
                self.ids.len(),
                self.answer_start
            )));
        }
        Ok(())
    }
}

/// Summed NLL of `ids[j]` under logit row `j - 1` for every `j` in
/// `targets`, and its gradient with respect to the logits. Rows that predict
/// no target stay exactly zero.
pub fn logit_nll_grad(logits: &[f64], ids: &[u32], targets: std::ops::Range<usize>, v: usize) -> (f64, Vec<f64>) {
    let mut d_logits = vec![0.0; logits.len()];
    let mut nll_sum = 0.0;
    for j in targets {
        let i = j - 1;
        let row = &logits[i * v..(i + 1) * v];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let lse = max + z.ln();
        let tgt = ids[j] as usize;
        nll_sum += lse - row[tgt];
        let drow = &mut d_logits[i * v..(i + 1) * v];
        for (k, dz) in drow.iter_mut().enumerate() {
            *dz = (row[k] - lse).exp();
        }
        drow[tgt] -= 1.0;
    }
    (nll_sum, d_logits)
}

/// Loss and gradients for one record.
pub struct RecordGrad {
    /// Summed negative log-likelihood over target positions.
    pub nll_sum: f64,
    pub count: usize,
    pub base: Option<LmParams>,
    pub adapters: Option<Vec<CrossAttn>>,
    pub visual: Option<Vec<f64>>,
}

/// Which gradients [`record_grad`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Want {
    pub base: bool,
    pub adapters: bool,
    pub visual: bool,
}

/// Log-softmax cross-entropy over the record's target positions, with
/// gradients. Prompt positions get exactly zero logit gradient unless
/// `loss_on_prompt` is set.
pub fn record_grad(
    params: &LmParams,
    rec: &LmRecord,
    loss_on_prompt: bool,
    fusion: Option<&Fusion>,
    want: Want,
) -> Result<RecordGrad> {
    rec.validate()?;
    let (logits, cache) = forward_cached(params, &rec.ids, fusion)?;
    let targets = rec.targets(loss_on_prompt);
    let count = targets.len();
    let (nll_sum, d_logits) = logit_nll_grad(&logits, &rec.ids, targets, params.config.vocab_size);
    let mut base = want.base.then(|| params.zeros_like());
    let mut adapters = match (want.adapters, fusion) {
        (true, Some(fu)) => Some(fu.adapters.iter().map(|a| a.zeros_like()).collect::<Vec<_>>()),
        _ => None,
    };
    let mut visual = match (want.visual, fusion) {
        (true, Some(fu)) => Some(vec![0.0; fu.visual.len()]),
        _ => None,
    };
    if want.base || adapters.is_some() || visual.is_some() {
        backward(
            params,
            &rec.ids,
            &cache,
            &d_logits,
            fusion,
            GradSinks { base: base.as_mut(), adapters: adapters.as_deref_mut(), visual: visual.as_deref_mut() },
        );
    }
    Ok(RecordGrad { nll_sum, count, base, adapters, visual })
}

/// Mean answer-position NLL over a batch, with base-parameter gradients of
/// that mean.
pub fn nll_loss(params: &LmParams, batch: &[LmRecord], loss_on_prompt: bool) -> Result<(f64, LmParams)> {
    use rayon::prelude::*;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let want = Want { base: true, adapters: false, visual: false };
    let parts: Vec<RecordGrad> =
        batch.par_iter().map(|r| record_grad(params, r, loss_on_prompt, None, want)).collect::<Result<_>>()?;
    let total: usize = parts.iter().map(|p| p.count).sum();
    let mut grads = params.zeros_like();
    let mut sum = 0.0;
    for p in &parts {
        sum += p.nll_sum;
        grads.add_scaled(p.base.as_ref().expect("base grads requested"), 1.0 / total as f64);
    }
    Ok((sum / total as f64, grads))
}
