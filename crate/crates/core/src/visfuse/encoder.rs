use rand_distr::{Distribution, Normal};

use super::scene::SceneImage;
use crate::error::{Error, Result};
use crate::linalg::{accumulate_col_sums, add_row_bias, gemm, matmul};
use crate::rng::Rng;

/// Non-overlapping `P x P` patches flattened to rows of `P * P * 3` values
/// (row-major within the patch, channels last), patches in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct Patches {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Patches {
    pub fn count(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

pub fn patchify(img: &SceneImage, patch: usize) -> Result<Patches> {
    if patch == 0 || img.width % patch != 0 || img.height % patch != 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is not divisible into {patch}x{patch} patches",
            img.width, img.height
        )));
    }
    let (gh, gw) = (img.height / patch, img.width / patch);
    let dim = patch * patch * 3;
    let mut data = Vec::with_capacity(gh * gw * dim);
    for pi in 0..gh {
        for pj in 0..gw {
            for r in 0..patch {
                let row = pi * patch + r;
                let start = (row * img.width + pj * patch) * 3;
                data.extend_from_slice(&img.pixels[start..start + patch * 3]);
            }
        }
    }
    Ok(Patches { grid_h: gh, grid_w: gw, dim, data })
}

/// 2-D sinusoidal position code: the first half of each `d`-vector encodes
/// the patch row, the second half the column, as interleaved sin/cos pairs at
/// geometrically spaced frequencies. `d` must be a multiple of 4.
pub fn position_encoding(grid_h: usize, grid_w: usize, d: usize) -> Vec<f64> {
    let half = d / 2;
    let freq = |k: usize| 1.0 / 100f64.powf(2.0 * k as f64 / half as f64);
    let mut out = vec![0.0; grid_h * grid_w * d];
    for i in 0..grid_h {
        for j in 0..grid_w {
            let row = &mut out[(i * grid_w + j) * d..(i * grid_w + j + 1) * d];
            for k in 0..half / 2 {
                row[2 * k] = (i as f64 * freq(k)).sin();
                row[2 * k + 1] = (i as f64 * freq(k)).cos();
                row[half + 2 * k] = (j as f64 * freq(k)).sin();
                row[half + 2 * k + 1] = (j as f64 * freq(k)).cos();
            }
        }
    }
    out
}

/// Affine patch projector with fixed 2-D position codes.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEncoder {
    pub patch: usize,
    pub d_vis: usize,
    /// `(P * P * 3) x d_vis`
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl PatchEncoder {
    pub fn new(patch: usize, d_vis: usize, rng: &mut Rng) -> Result<Self> {
        if patch == 0 || d_vis == 0 || d_vis % 4 != 0 {
            return Err(Error::Config(format!("patch must be positive and d_vis a multiple of 4, got {patch} and {d_vis}")));
        }
        let n = patch * patch * 3;
        let normal = Normal::new(0.0, 1.0 / (n as f64).sqrt()).expect("positive std");
        Ok(Self { patch, d_vis, w: (0..n * d_vis).map(|_| normal.sample(rng)).collect(), b: vec![0.0; d_vis] })
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: vec![0.0; self.w.len()], b: vec![0.0; self.b.len()], ..*self }
    }

    /// Visual tokens, `(H/P * W/P) x d_vis`.
    pub fn encode(&self, img: &SceneImage) -> Result<Vec<f64>> {
        Ok(self.encode_patches(&patchify(img, self.patch)?))
    }

    pub fn encode_patches(&self, p: &Patches) -> Vec<f64> {
        let mut out = matmul(&p.data, &self.w, p.count(), p.dim, self.d_vis);
        add_row_bias(&mut out, &self.b);
        for (o, e) in out.iter_mut().zip(position_encoding(p.grid_h, p.grid_w, self.d_vis)) {
            *o += e;
        }
        out
    }

    /// Accumulates parameter gradients given the gradient at the tokens.
    pub fn backward(&self, p: &Patches, d_tokens: &[f64], grad: &mut PatchEncoder) {
        gemm(true, false, p.dim, self.d_vis, p.count(), 1.0, &p.data, d_tokens, 1.0, &mut grad.w);
        accumulate_col_sums(d_tokens, self.d_vis, &mut grad.b);
    }
}
