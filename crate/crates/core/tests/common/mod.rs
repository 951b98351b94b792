#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cerwu::DenseMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

pub fn random_spd(m: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let a = random(m, m + 2, rng);
    let mut h = a.matmul_transposed(&a).unwrap();
    h.add_to_diagonal(0.5);
    h.symmetrize();
    h
}

/// `2 X Xᵀ` by explicit loops.
pub fn hessian_of(x: &DenseMatrix) -> DenseMatrix {
    let (m, p) = x.shape();
    DenseMatrix::from_fn(m, m, |a, b| 2.0 * (0..p).map(|c| x[(a, c)] * x[(b, c)]).sum::<f64>())
}
