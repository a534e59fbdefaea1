//! Named parameter blocks, the Adam optimizer, and block checksums.

use sha2::{Digest, Sha256};

pub struct Block<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct BlockMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// A model whose trainable state is a fixed, ordered list of named blocks.
/// Gradient containers use the same type as the parameters they describe.
pub trait ParamSet {
    fn blocks(&self) -> Vec<Block<'_>>;
    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>>;

    fn fill(&mut self, value: f64) {
        for b in self.blocks_mut() {
            b.data.fill(value);
        }
    }

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.data.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, block by block.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }
}

/// SHA-256 over the names and little-endian bytes of every block accepted by
/// `select`.
pub fn checksum<P: ParamSet + ?Sized>(params: &P, select: impl Fn(&str) -> bool) -> String {
    let mut h = Sha256::new();
    for b in params.blocks() {
        if !select(&b.name) {
            continue;
        }
        h.update(b.name.as_bytes());
        for v in b.data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam over a [`ParamSet`]. Moment buffers are allocated lazily on the first
/// step and indexed by block position.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every block whose name passes `trainable`.
    /// Returns the squared norm of the applied update (zero for skipped blocks).
    pub fn step<P: ParamSet>(
        &mut self,
        params: &mut P,
        grads: &P,
        lr: f64,
        trainable: impl Fn(&str) -> bool,
    ) -> f64 {
        let grad_blocks = grads.blocks();
        if self.m.is_empty() {
            self.m = grad_blocks.iter().map(|b| vec![0.0; b.data.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut update_sq = 0.0;
        for (i, (p, g)) in params.blocks_mut().into_iter().zip(grad_blocks).enumerate() {
            if !trainable(&p.name) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let delta = lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                p.data[j] -= delta;
                update_sq += delta * delta;
            }
        }
        update_sq
    }

    /// Clears the moment estimates of one row of a block (used when a codebook
    /// entry is re-seeded).
    pub fn reset_row(&mut self, block: usize, row: usize, width: usize) {
        if let (Some(m), Some(v)) = (self.m.get_mut(block), self.v.get_mut(block)) {
            m[row * width..(row + 1) * width].fill(0.0);
            v[row * width..(row + 1) * width].fill(0.0);
        }
    }
}

/// Plain-`Vec` parameter set, mostly for optimizers over small vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub Vec<f64>);

impl ParamSet for FlatParams {
    fn blocks(&self) -> Vec<Block<'_>> {
        vec![Block { name: "x".into(), shape: vec![self.0.len()], data: &self.0 }]
    }
    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let n = self.0.len();
        vec![BlockMut { name: "x".into(), shape: vec![n], data: &mut self.0 }]
    }
}
