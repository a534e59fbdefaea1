use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Eigenvalues above `-EIG_CLAMP` (relative to the spectral scale) are
/// treated as rounding noise and clamped to zero.
pub const EIG_CLAMP: f64 = 1e-8;

/// Square root of a symmetric positive semi-definite matrix via its
/// eigendecomposition.
pub fn matrix_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Shape(format!("matrix square root of a {}x{} matrix", a.nrows(), a.ncols())));
    }
    let scale = a.abs().max().max(1.0);
    let asym = (a - a.transpose()).abs().max();
    if asym > 1e-9 * scale {
        return Err(Error::InvalidArgument(format!("matrix is not symmetric (max deviation {asym:e})")));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -EIG_CLAMP * scale {
            return Err(Error::InvalidArgument(format!("matrix has a negative eigenvalue {v:e}")));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Row-major `n x f` feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Shape(format!("{} values do not form rows of width {dim}", data.len())));
        }
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn mean_cov(&self) -> (DVector<f64>, DMatrix<f64>) {
        let (n, f) = (self.len(), self.dim);
        let m = DMatrix::from_row_slice(n, f, &self.data);
        let mean = DVector::from_fn(f, |j, _| m.column(j).mean());
        let mut centered = m;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
        (mean, cov)
    }
}

/// Fréchet distance between Gaussians fitted to two feature sets:
/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S2^½ S1 S2^½)^½)`, floored at zero.
pub fn fid(real: &Features, generated: &Features) -> Result<f64> {
    if real.dim != generated.dim {
        return Err(Error::Shape(format!("feature widths differ: {} vs {}", real.dim, generated.dim)));
    }
    if real.len() < 2 || generated.len() < 2 {
        return Err(Error::InsufficientLength { needed: 2, got: real.len().min(generated.len()) });
    }
    if real.len() <= real.dim || generated.len() <= real.dim {
        log::warn!(
            "FID from {} and {} samples of width {}: covariance estimates are rank-deficient",
            real.len(),
            generated.len(),
            real.dim
        );
    }
    let (m1, s1) = real.mean_cov();
    let (m2, s2) = generated.mean_cov();
    let r2 = matrix_sqrt_psd(&s2)?;
    let inner = &r2 * &s1 * &r2;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?.trace();
    let d = (m1 - m2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Mean distance between `pairs` seeded, disjoint pairs of rows. With fewer
/// than `2 * pairs` rows the pair count shrinks to `n / 2`.
pub fn diversity(features: &Features, pairs: usize, seed: u64) -> Result<f64> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InsufficientLength { needed: 2, got: n });
    }
    let mut p = pairs.max(1);
    if n < 2 * p {
        log::warn!("diversity over {n} samples: using {} pairs instead of {p}", n / 2);
        p = n / 2;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng(seed));
    let total: f64 = (0..p)
        .map(|k| {
            let (a, b) = (features.row(idx[k]), features.row(idx[p + k]));
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        })
        .sum();
    Ok(total / p as f64)
}
