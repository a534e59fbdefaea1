use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{gemm, matmul, softmax_in_place};
use crate::rng::Rng;

/// Single-head cross-attention from decoder states (`T x D`) onto visual
/// tokens (`M x Dv`), with a gated residual:
///
/// `X_u = X_d + gate * (softmax(Q K^T / sqrt(A)) V) W_o`,
/// `Q = X_d W_q`, `K = X_v W_k`, `V = X_v W_v`.
///
/// `W_o` starts at zero, so a fresh adapter leaves `X_d` unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttn {
    pub d_model: usize,
    pub d_vis: usize,
    pub d_attn: usize,
    /// `D x A`
    pub w_q: Vec<f64>,
    /// `Dv x A`
    pub w_k: Vec<f64>,
    /// `Dv x A`
    pub w_v: Vec<f64>,
    /// `A x D`
    pub w_o: Vec<f64>,
    pub gate: Vec<f64>,
}

impl CrossAttn {
    pub fn new(d_model: usize, d_vis: usize, d_attn: usize, rng: &mut Rng) -> Self {
        let mut draw = |rows: usize, cols: usize| {
            let n = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("positive std");
            (0..rows * cols).map(|_| n.sample(rng)).collect::<Vec<f64>>()
        };
        Self {
            d_model,
            d_vis,
            d_attn,
            w_q: draw(d_model, d_attn),
            w_k: draw(d_vis, d_attn),
            w_v: draw(d_vis, d_attn),
            w_o: vec![0.0; d_attn * d_model],
            gate: vec![1.0],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_q: vec![0.0; self.w_q.len()],
            w_k: vec![0.0; self.w_k.len()],
            w_v: vec![0.0; self.w_v.len()],
            w_o: vec![0.0; self.w_o.len()],
            gate: vec![0.0],
            ..*self
        }
    }

    pub(crate) fn named(&self) -> [(&'static str, Vec<usize>, &[f64]); 5] {
        let (d, v, a) = (self.d_model, self.d_vis, self.d_attn);
        [
            ("w_q", vec![d, a], &self.w_q),
            ("w_k", vec![v, a], &self.w_k),
            ("w_v", vec![v, a], &self.w_v),
            ("w_o", vec![a, d], &self.w_o),
            ("gate", vec![1], &self.gate),
        ]
    }

    pub(crate) fn named_mut(&mut self) -> [(&'static str, Vec<usize>, &mut Vec<f64>); 5] {
        let (d, v, a) = (self.d_model, self.d_vis, self.d_attn);
        [
            ("w_q", vec![d, a], &mut self.w_q),
            ("w_k", vec![v, a], &mut self.w_k),
            ("w_v", vec![v, a], &mut self.w_v),
            ("w_o", vec![a, d], &mut self.w_o),
            ("gate", vec![1], &mut self.gate),
        ]
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct FuseCache {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Attention weights, `T x M`.
    pub p: Vec<f64>,
    pub ctx: Vec<f64>,
    pub proj: Vec<f64>,
}

/// Applies one adapter to `t` decoder rows given `m` visual tokens.
pub fn fuse_layer(x: &[f64], t: usize, vis: &[f64], m: usize, layer: &CrossAttn) -> Result<(Vec<f64>, FuseCache)> {
    let (d, dv, a) = (layer.d_model, layer.d_vis, layer.d_attn);
    if x.len() != t * d || vis.len() != m * dv || m == 0 {
        return Err(Error::Shape(format!(
            "cross-attention expects {t}x{d} states and a nonempty {m}x{dv} visual grid, got {} and {} values",
            x.len(),
            vis.len()
        )));
    }
    let q = matmul(x, &layer.w_q, t, d, a);
    let k = matmul(vis, &layer.w_k, m, dv, a);
    let v = matmul(vis, &layer.w_v, m, dv, a);
    let mut p = vec![0.0; t * m];
    gemm(false, true, t, m, a, 1.0 / (a as f64).sqrt(), &q, &k, 0.0, &mut p);
    for row in p.chunks_exact_mut(m) {
        softmax_in_place(row);
    }
    let ctx = matmul(&p, &v, t, m, a);
    let proj = matmul(&ctx, &layer.w_o, t, a, d);
    let g = layer.gate[0];
    let out = x.iter().zip(&proj).map(|(xi, pi)| xi + g * pi).collect();
    Ok((out, FuseCache { q, k, v, p, ctx, proj }))
}

/// Backward of [`fuse_layer`]. Accumulates parameter gradients into `grad`
/// and visual-token gradients into `d_vis`; returns the gradient at `x`.
#[allow(clippy::too_many_arguments)]
pub fn fuse_layer_backward(
    d_out: &[f64],
    x: &[f64],
    t: usize,
    vis: &[f64],
    m: usize,
    layer: &CrossAttn,
    cache: &FuseCache,
    grad: &mut CrossAttn,
    d_vis: &mut [f64],
) -> Vec<f64> {
    let (d, dv, a) = (layer.d_model, layer.d_vis, layer.d_attn);
    let g = layer.gate[0];
    grad.gate[0] += d_out.iter().zip(&cache.proj).map(|(u, p)| u * p).sum::<f64>();
    let d_proj: Vec<f64> = d_out.iter().map(|u| g * u).collect();
    gemm(true, false, a, d, t, 1.0, &cache.ctx, &d_proj, 1.0, &mut grad.w_o);
    let mut d_ctx = vec![0.0; t * a];
    gemm(false, true, t, a, d, 1.0, &d_proj, &layer.w_o, 0.0, &mut d_ctx);
    let mut d_p = vec![0.0; t * m];
    gemm(false, true, t, m, a, 1.0, &d_ctx, &cache.v, 0.0, &mut d_p);
    let mut d_v = vec![0.0; m * a];
    gemm(true, false, m, a, t, 1.0, &cache.p, &d_ctx, 0.0, &mut d_v);
    let scale = 1.0 / (a as f64).sqrt();
    let mut d_s = d_p;
    for (ds, p) in d_s.chunks_exact_mut(m).zip(cache.p.chunks_exact(m)) {
        let dot: f64 = ds.iter().zip(p).map(|(x, y)| x * y).sum();
        for (x, y) in ds.iter_mut().zip(p) {
            *x = y * (*x - dot) * scale;
        }
    }
    let mut d_q = vec![0.0; t * a];
    gemm(false, false, t, a, m, 1.0, &d_s, &cache.k, 0.0, &mut d_q);
    let mut d_k = vec![0.0; m * a];
    gemm(true, false, m, a, t, 1.0, &d_s, &cache.q, 0.0, &mut d_k);
    gemm(true, false, d, a, t, 1.0, x, &d_q, 1.0, &mut grad.w_q);
    gemm(true, false, dv, a, m, 1.0, vis, &d_k, 1.0, &mut grad.w_k);
    gemm(true, false, dv, a, m, 1.0, vis, &d_v, 1.0, &mut grad.w_v);
    gemm(false, true, m, dv, a, 1.0, &d_k, &layer.w_k, 1.0, d_vis);
    gemm(false, true, m, dv, a, 1.0, &d_v, &layer.w_v, 1.0, d_vis);
    let mut dx = d_out.to_vec();
    gemm(false, true, t, d, a, 1.0, &d_q, &layer.w_q, 1.0, &mut dx);
    dx
}
