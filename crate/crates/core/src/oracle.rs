//! Brute-force and closed-form reference computations.
//!
//! Nothing here reuses the engine's linear algebra or coding paths; only the
//! entropy-model interface is shared, since that defines what "rate" means.

use crate::entropy::{EntropyModel, ModelSpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, QuantizedLayer, ScanOrder};
use crate::matrix::DenseMatrix;

/// Largest search space [`brute_force_minimize`] accepts.
pub const BRUTE_FORCE_LIMIT: f64 = 2e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    /// ‖WX − ŴX‖².
    pub distortion: f64,
    pub rate_bits: f64,
    pub total: f64,
}

/// ‖WX − ŴX‖² by explicit loops.
pub fn layer_distortion(
    weights: &DenseMatrix,
    activations: &DenseMatrix,
    reconstruction: &DenseMatrix,
) -> Result<f64> {
    let (n, m) = weights.shape();
    if reconstruction.shape() != (n, m) || activations.rows() != m {
        return Err(Error::shape(format!(
            "weights {n}x{m}, reconstruction {}x{}, activations {}x{}",
            reconstruction.rows(),
            reconstruction.cols(),
            activations.rows(),
            activations.cols()
        )));
    }
    let p = activations.cols();
    let mut total = 0.0;
    let mut diff = vec![0.0; m];
    for i in 0..n {
        for (j, d) in diff.iter_mut().enumerate() {
            *d = weights[(i, j)] - reconstruction[(i, j)];
        }
        for col in 0..p {
            let mut s = 0.0;
            for (j, &d) in diff.iter().enumerate() {
                s += d * activations[(j, col)];
            }
            total += s * s;
        }
    }
    Ok(total)
}

/// Σ −log₂ p over `symbols` under a fresh model from `spec`.
pub fn replay_rate(symbols: &[u32], spec: &ModelSpec) -> Result<f64> {
    let mut model = spec.build()?;
    let mut bits = 0.0;
    for &s in symbols {
        bits += model.rate_bits(s);
        model.update(s);
    }
    Ok(bits)
}

/// `L_λ(Ŵ) = ‖WX − ŴX‖² + λ·R(Ŵ)`, with the rate replayed in the layer's scan order.
pub fn evaluate_objective(
    weights: &DenseMatrix,
    activations: &DenseMatrix,
    quantized: &QuantizedLayer,
    lambda: f64,
    spec: &ModelSpec,
) -> Result<ObjectiveBreakdown> {
    let distortion = layer_distortion(weights, activations, &quantized.dequantize())?;
    let rate_bits = replay_rate(&quantized.symbols_in_scan_order(), spec)?;
    Ok(ObjectiveBreakdown {
        distortion,
        rate_bits,
        total: distortion + lambda * rate_bits,
    })
}

/// Exact minimizer of `L_λ` over all `k^(n·m)` assignments.
///
/// Enumeration is little-endian over scan order; exact ties resolve to the
/// lexicographically smallest symbol sequence.
pub fn brute_force_minimize(
    weights: &DenseMatrix,
    activations: &DenseMatrix,
    grid: &Grid,
    lambda: f64,
    spec: &ModelSpec,
    scan_order: ScanOrder,
) -> Result<(QuantizedLayer, ObjectiveBreakdown)> {
    let (n, m) = weights.shape();
    let k = grid.size();
    let size = (k as f64).powi((n * m) as i32);
    if size > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            size,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut symbols = vec![0u32; n * m];
    let mut best: Option<(Vec<u32>, ObjectiveBreakdown)> = None;
    loop {
        let q = QuantizedLayer::from_scan_symbols(n, m, &symbols, grid.clone(), scan_order)?;
        let obj = evaluate_objective(weights, activations, &q, lambda, spec)?;
        let better = match &best {
            None => true,
            Some((seq, b)) => obj.total < b.total || (obj.total == b.total && symbols < *seq),
        };
        if better {
            best = Some((symbols.clone(), obj));
        }
        // Little-endian increment.
        let mut pos = 0;
        loop {
            if pos == symbols.len() {
                let (seq, obj) = best.expect("at least one assignment");
                let q = QuantizedLayer::from_scan_symbols(n, m, &seq, grid.clone(), scan_order)?;
                return Ok((q, obj));
            }
            symbols[pos] += 1;
            if (symbols[pos] as usize) < k {
                break;
            }
            symbols[pos] = 0;
            pos += 1;
        }
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if !a.is_square() || b.len() != n {
        return Err(Error::shape("solve needs a square system"));
    }
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = a.row(i).to_vec();
            r.push(b[i]);
            r
        })
        .collect();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        if aug[pivot][col].abs() <= 1e-14 * scale {
            return Err(Error::Singular);
        }
        aug.swap(col, pivot);
        for r in (col + 1)..n {
            let f = aug[r][col] / aug[col][col];
            if f != 0.0 {
                for c in col..=n {
                    aug[r][c] -= f * aug[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = aug[i][n];
        for j in (i + 1)..n {
            s -= aug[i][j] * x[j];
        }
        x[i] = s / aug[i][i];
    }
    Ok(x)
}

/// Inverse by solving against each unit vector.
pub fn invert(a: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    let mut inv = DenseMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let col = solve(a, &e)?;
        for r in 0..n {
            inv[(r, c)] = col[r];
        }
    }
    Ok(inv)
}

fn submatrix(a: &DenseMatrix, rows: &[usize], cols: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Minimizer of `½ (w₀ − w) H' (w₀ − w)ᵀ` over the suffix of `w` with the
/// first `prefix.len()` entries pinned to `prefix`.
///
/// From stationarity, `w_S = w₀_S − (H'_SS)⁻¹ H'_SP (prefix − w₀_P)`.
pub fn constrained_quadratic_minimizer(
    w_prime_row: &[f64],
    h_prime: &DenseMatrix,
    prefix: &[f64],
) -> Result<Vec<f64>> {
    let m = w_prime_row.len();
    if h_prime.shape() != (m, m) || prefix.len() > m {
        return Err(Error::shape("row, hessian and prefix disagree"));
    }
    let j = prefix.len();
    if j == m {
        return Ok(Vec::new());
    }
    if j == 0 {
        return Ok(w_prime_row.to_vec());
    }
    let p: Vec<usize> = (0..j).collect();
    let s: Vec<usize> = (j..m).collect();
    let h_ss = submatrix(h_prime, &s, &s);
    let h_sp = submatrix(h_prime, &s, &p);
    let shift: Vec<f64> = (0..j).map(|t| prefix[t] - w_prime_row[t]).collect();
    let rhs: Vec<f64> = (0..s.len())
        .map(|r| (0..j).map(|t| h_sp[(r, t)] * shift[t]).sum())
        .collect();
    let delta = solve(&h_ss, &rhs)?;
    Ok((0..s.len()).map(|r| w_prime_row[j + r] - delta[r]).collect())
}

/// `½ (w₀ − w) H' (w₀ − w)ᵀ`.
pub fn row_quadratic_loss(w0: &[f64], w: &[f64], h_prime: &DenseMatrix) -> f64 {
    let m = w0.len();
    let d: Vec<f64> = (0..m).map(|t| w0[t] - w[t]).collect();
    let mut s = 0.0;
    for a in 0..m {
        for b in 0..m {
            s += d[a] * h_prime[(a, b)] * d[b];
        }
    }
    0.5 * s
}

/// Inverse of the trailing block `H'_{≥j,≥j}`.
pub fn trailing_inverse(h_prime: &DenseMatrix, j: usize) -> Result<DenseMatrix> {
    let idx: Vec<usize> = (j..h_prime.rows()).collect();
    invert(&submatrix(h_prime, &idx, &idx))
}

/// OBS compensation via the trailing-block inverse: the update to entries
/// `> j` and the loss increase for moving entry `j` by `err = w_j − ŵ_j`.
pub fn obs_update_via_inverse(h_prime: &DenseMatrix, j: usize, err: f64) -> Result<(Vec<f64>, f64)> {
    let inv = trailing_inverse(h_prime, j)?;
    let hjj = inv[(0, 0)];
    let update = (1..inv.cols()).map(|c| -err / hjj * inv[(0, c)]).collect();
    Ok((update, 0.5 * err * err / hjj))
}

/// OPTQ-style reference: nearest-level rounding in row-major order with OBS
/// updates computed from explicit trailing-block inverses of `H'`.
///
/// `H'` is built here from `H`, the relative damping, and the ridge `λγ`.
pub fn optq_reference(
    weights: &DenseMatrix,
    hessian: &DenseMatrix,
    grid: &Grid,
    damping_delta: f64,
) -> Result<(QuantizedLayer, f64)> {
    let (n, m) = weights.shape();
    let mean_diag = (0..m).map(|t| hessian[(t, t)]).sum::<f64>() / m as f64;
    let h_prime = DenseMatrix::from_fn(m, m, |a, b| {
        hessian[(a, b)] + if a == b { damping_delta * mean_diag } else { 0.0 }
    });
    let inverses: Vec<DenseMatrix> = (0..m)
        .map(|j| trailing_inverse(&h_prime, j))
        .collect::<Result<_>>()?;

    let mut indices = vec![0u32; n * m];
    let mut loss = 0.0;
    for i in 0..n {
        let mut row = weights.row(i).to_vec();
        for j in 0..m {
            // Nearest level by exhaustive comparison.
            let mut q = 0usize;
            for (t, &g) in grid.levels().iter().enumerate() {
                let e = (row[j] - g).powi(2);
                let eb = (row[j] - grid.levels()[q]).powi(2);
                let cur = grid.levels()[q];
                if e < eb || (e == eb && (g.abs() < cur.abs() || (g.abs() == cur.abs() && g < cur))) {
                    q = t;
                }
            }
            let value = grid.levels()[q];
            let inv = &inverses[j];
            let hjj = inv[(0, 0)];
            let err = row[j] - value;
            for c in 1..inv.cols() {
                row[j + c] -= err / hjj * inv[(0, c)];
            }
            loss += 0.5 * err * err / hjj;
            row[j] = value;
            indices[i * m + j] = q as u32;
        }
    }
    let q = QuantizedLayer::new(n, m, indices, grid.clone(), ScanOrder::RowMajor)?;
    Ok((q, loss))
}
