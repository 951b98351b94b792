//! Quadratic-loss machinery: the layer Hessian `H = 2 X Xᵀ`, the rate
//! regularizer γ, and the regularized context (W', C') the quantizer runs on.

use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{dot, DenseMatrix};

/// Default relative ridge added to the Hessian diagonal before regularization.
pub const DEFAULT_DAMPING: f64 = 1e-2;

const VARIANCE_FLOOR: f64 = 1e-30;

const PIVOT_RTOL: f64 = 1e-12;

/// Returns `2 · Σ_b X_b X_bᵀ` over calibration batches of shape `m × p_b`.
///
/// Batches are reduced in input order so the result does not depend on the
/// thread schedule.
pub fn accumulate_hessian(batches: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = batches
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one activation batch is required".into()))?;
    let m = first.rows();
    if let Some(bad) = batches.iter().find(|b| b.rows() != m) {
        return Err(Error::shape(format!(
            "activation batches disagree on feature count ({} vs {})",
            m,
            bad.rows()
        )));
    }

    let partials: Vec<DenseMatrix> = batches.par_iter().map(gram_upper).collect();
    let mut h = DenseMatrix::zeros(m, m);
    for part in &partials {
        h.add_assign(part)?;
    }
    for i in 0..m {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
    h.scale(2.0);
    h.symmetrize();
    Ok(h)
}

// Upper triangle (including diagonal) of X Xᵀ.
fn gram_upper(x: &DenseMatrix) -> DenseMatrix {
    let m = x.rows();
    let mut g = DenseMatrix::zeros(m, m);
    for a in 0..m {
        let ra = x.row(a);
        for b in a..m {
            g[(a, b)] = dot(ra, x.row(b));
        }
    }
    g
}

/// γ = 1 / (ln 2 · Var(W)) with the population variance of all entries.
pub fn compute_gamma(weights: &DenseMatrix) -> f64 {
    let n = weights.len() as f64;
    let mean = weights.data().iter().sum::<f64>() / n;
    let var = weights
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    1.0 / (LN_2 * var.max(VARIANCE_FLOOR))
}

/// Lower-triangular `L` with `L Lᵀ = A`.
pub fn cholesky_lower(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::shape("cholesky needs a square matrix"));
    }
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let lj = l.row(j)[..j].to_vec();
        let d = a[(j, j)] - dot(&lj, &lj);
        // Pivots lost to cancellation count as singular.
        if !(d > PIVOT_RTOL * a[(j, j)].abs()) || !d.is_finite() {
            return Err(Error::Factorization { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let s = a[(i, j)] - dot(&l.row(i)[..j], &lj);
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Inverse of an upper-triangular matrix with nonzero diagonal.
pub fn invert_upper(u: &DenseMatrix) -> DenseMatrix {
    let n = u.rows();
    let mut inv = DenseMatrix::zeros(n, n);
    // Row i of U⁻¹ is (e_i − Σ_{l>i} U_il · row_l) / U_ii; rows below i are final.
    let mut acc = vec![0.0; n];
    for i in (0..n).rev() {
        let uii = u[(i, i)];
        acc.iter_mut().for_each(|v| *v = 0.0);
        acc[i] = 1.0;
        for l in (i + 1)..n {
            let f = u[(i, l)];
            if f == 0.0 {
                continue;
            }
            for (a, &b) in acc[l..].iter_mut().zip(&inv.row(l)[l..]) {
                *a -= f * b;
            }
        }
        for (dst, &a) in inv.row_mut(i)[i..].iter_mut().zip(&acc[i..]) {
            *dst = a / uii;
        }
    }
    inv
}

/// Upper-triangular `C` with `Cᵀ C = A⁻¹` for symmetric positive definite `A`.
///
/// Factors the index-reversed matrix `J A J = L Lᵀ`, so `A = U Uᵀ` with the
/// upper-triangular `U = J L J`, and returns `C = U⁻¹`. This avoids forming
/// `A⁻¹` explicitly.
pub fn inverse_upper_cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::shape("inverse_upper_cholesky needs a square matrix"));
    }
    let n = a.rows();
    let reversed = DenseMatrix::from_fn(n, n, |i, j| a[(n - 1 - i, n - 1 - j)]);
    let l = cholesky_lower(&reversed).map_err(|e| match e {
        Error::Factorization { pivot, value } => Error::Factorization {
            pivot: n - 1 - pivot,
            value,
        },
        other => other,
    })?;
    let u = DenseMatrix::from_fn(n, n, |i, j| l[(n - 1 - i, n - 1 - j)]);
    Ok(invert_upper(&u))
}

/// `W'` and `C'` for one layer at a given rate/distortion trade-off.
#[derive(Debug, Clone)]
pub struct RegularizedLayerContext {
    /// `W · H_d · (H')⁻¹`, the minimizer of the regularized quadratic loss.
    pub w_prime: DenseMatrix,
    /// Upper-triangular factor with `C'ᵀ C' = (H')⁻¹`.
    pub chol_upper: DenseMatrix,
    pub gamma: f64,
    pub lambda: f64,
    pub damping_delta: f64,
}

impl RegularizedLayerContext {
    /// `H_d + λγ·I`, reassembled from its inverse factor (test/diagnostic use).
    pub fn regularized_hessian(&self) -> DenseMatrix {
        let u = invert_upper(&self.chol_upper);
        u.matmul_transposed(&u).expect("square factor")
    }
}

/// Dampened Hessian `H_d = H + δ · mean(diag H) · I`.
pub fn dampen(hessian: &DenseMatrix, damping_delta: f64) -> DenseMatrix {
    let mut h = hessian.clone();
    if damping_delta > 0.0 {
        let diag = hessian.diagonal();
        let mean = diag.iter().sum::<f64>() / diag.len() as f64;
        h.add_to_diagonal(damping_delta * mean);
    }
    h
}

/// Builds the context with γ taken from the weight variance.
pub fn build_context(
    weights: &DenseMatrix,
    hessian: &DenseMatrix,
    lambda: f64,
    damping_delta: f64,
) -> Result<RegularizedLayerContext> {
    build_context_with_gamma(weights, hessian, lambda, damping_delta, compute_gamma(weights))
}

/// Builds the context for an explicit γ (γ = 0 gives unregularized updates).
pub fn build_context_with_gamma(
    weights: &DenseMatrix,
    hessian: &DenseMatrix,
    lambda: f64,
    damping_delta: f64,
    gamma: f64,
) -> Result<RegularizedLayerContext> {
    if !(lambda >= 0.0) || !(damping_delta >= 0.0) || !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda, damping and gamma must be nonnegative (got {lambda}, {damping_delta}, {gamma})"
        )));
    }
    if !hessian.is_square() || hessian.rows() != weights.cols() {
        return Err(Error::shape(format!(
            "hessian {}x{} does not match weights {}x{}",
            hessian.rows(),
            hessian.cols(),
            weights.rows(),
            weights.cols()
        )));
    }
    let ridge = lambda * gamma;
    let mut h_prime = dampen(hessian, damping_delta);
    h_prime.add_to_diagonal(ridge);
    let chol_upper = inverse_upper_cholesky(&h_prime)?;

    // H_d (H')⁻¹ = I − λγ (H')⁻¹, so W' = W − λγ · W Cᵀ C.
    let w_prime = if ridge == 0.0 {
        weights.clone()
    } else {
        let wct = weights.matmul_transposed(&chol_upper)?;
        let mut correction = wct.matmul(&chol_upper)?;
        correction.scale(ridge);
        weights.sub(&correction)?
    };

    Ok(RegularizedLayerContext {
        w_prime,
        chol_upper,
        gamma,
        lambda,
        damping_delta,
    })
}
