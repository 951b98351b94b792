//! Rate-aware quantization with entropy-regularized OBS weight updates.
//!
//! For every entry in scan order the engine picks the grid level minimizing
//! `½(W'ᵢⱼ − g)²/C'ⱼⱼ² − λ log₂ P(g) − (λγ/2) g²` under the current state of
//! the entropy model, then compensates the not yet quantized entries of the
//! same row: `W'ᵢ,>ⱼ −= ((W'ᵢⱼ − Ŵᵢⱼ)/C'ⱼⱼ) · C'ⱼ,>ⱼ`.

use crate::entropy::{EntropyModel, ModelKind, ModelSpec, SymbolDistribution};
use crate::error::{Error, Result};
use crate::grid::{build_grid, prefer, round_to_nearest, Grid, QuantizedLayer, ScanOrder};
use crate::linalg::{build_context_with_gamma, compute_gamma, RegularizedLayerContext, DEFAULT_DAMPING};
use crate::matrix::DenseMatrix;
use crate::range_coder::{self, Payload};

const MIN_CHOL_DIAG: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GammaMode {
    Standard,
    /// Unregularized weight updates (γ = 0).
    ForcedZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionConfig {
    pub lambda: f64,
    pub grid_size: usize,
    pub scan_order: ScanOrder,
    pub model_kind: ModelKind,
    pub damping_delta: f64,
    pub gamma_mode: GammaMode,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            grid_size: 17,
            scan_order: ScanOrder::RowMajor,
            model_kind: ModelKind::ContextAdaptive,
            damping_delta: DEFAULT_DAMPING,
            gamma_mode: GammaMode::Standard,
        }
    }
}

impl CompressionConfig {
    pub fn gamma_for(&self, weights: &DenseMatrix) -> f64 {
        match self.gamma_mode {
            GammaMode::Standard => compute_gamma(weights),
            GammaMode::ForcedZero => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerResult {
    pub quantized: QuantizedLayer,
    /// Σ −log₂ p of the chosen symbols under the replayed model.
    pub predicted_rate_bits: f64,
    /// Σ ½(W'ᵢⱼ − Ŵᵢⱼ)²/C'ⱼⱼ² over all steps.
    pub quadratic_loss_delta: f64,
    pub symbols_in_scan_order: Vec<u32>,
    pub model: ModelSpec,
    /// Number of grid candidates scored; n·m·k for a full layer.
    pub candidate_evaluations: u64,
}

/// One greedy step: exhaustive search over all levels.
///
/// At λ = 0 the objective reduces to the squared distance, which is scored
/// directly so the choice coincides with round-to-nearest.
pub fn quantization_step(
    w_prime_entry: f64,
    c_diag: f64,
    grid: &Grid,
    lambda: f64,
    gamma: f64,
    dist: &SymbolDistribution,
) -> u32 {
    let levels = grid.levels();
    debug_assert_eq!(levels.len(), dist.len());
    let inv_two_c2 = 0.5 / (c_diag * c_diag);
    let half_lg = 0.5 * lambda * gamma;
    let mut best = 0usize;
    let mut best_obj = f64::INFINITY;
    for (idx, &g) in levels.iter().enumerate() {
        let d = w_prime_entry - g;
        let obj = if lambda == 0.0 {
            d * d
        } else {
            d * d * inv_two_c2 + lambda * dist.rate_bits(idx as u32) - half_lg * g * g
        };
        if obj < best_obj || (obj == best_obj && prefer(g, levels[best])) {
            best = idx;
            best_obj = obj;
        }
    }
    best as u32
}

/// Applies the OBS compensation for fixing entry `j` of `row` to `value`.
/// Returns the quadratic-loss increase `½(rowⱼ − value)²/C'ⱼⱼ²`.
#[inline]
pub fn obs_update_row(row: &mut [f64], j: usize, value: f64, chol_upper: &DenseMatrix) -> f64 {
    let c_row = chol_upper.row(j);
    let c_jj = c_row[j].max(MIN_CHOL_DIAG);
    let err = (row[j] - value) / c_jj;
    row[j] = value;
    for (w, &c) in row[j + 1..].iter_mut().zip(&c_row[j + 1..]) {
        *w -= err * c;
    }
    0.5 * err * err
}

/// Entropy model spec the engine uses for a layer. Static histograms are fitted
/// to the round-to-nearest symbols so the header carries a sensible prior.
pub fn model_spec_for(kind: ModelKind, weights: &DenseMatrix, grid: &Grid) -> ModelSpec {
    match kind {
        ModelKind::StaticHistogram => {
            let rtn = round_to_nearest(weights, grid, ScanOrder::RowMajor);
            let mut hist = vec![0u64; grid.size()];
            for &i in &rtn.indices {
                hist[i as usize] += 1;
            }
            ModelSpec::static_from_histogram(grid.size(), &hist)
        }
        _ => ModelSpec::adaptive(kind, grid.size()),
    }
}

/// Full quantization of one layer given its calibration Hessian.
pub fn quantize_layer(
    weights: &DenseMatrix,
    hessian: &DenseMatrix,
    grid: &Grid,
    config: &CompressionConfig,
) -> Result<LayerResult> {
    let gamma = config.gamma_for(weights);
    let ctx = build_context_with_gamma(weights, hessian, config.lambda, config.damping_delta, gamma)?;
    let spec = model_spec_for(config.model_kind, weights, grid);
    quantize_with_context(&ctx, grid, config.scan_order, &spec)
}

/// Runs the greedy scan on a prebuilt context, so callers sweeping grid sizes,
/// scan orders or model kinds at a fixed λ can share one factorization.
pub fn quantize_with_context(
    ctx: &RegularizedLayerContext,
    grid: &Grid,
    scan_order: ScanOrder,
    spec: &ModelSpec,
) -> Result<LayerResult> {
    if spec.k != grid.size() {
        return Err(Error::InvalidArgument(format!(
            "model alphabet {} does not match grid size {}",
            spec.k,
            grid.size()
        )));
    }
    let model = spec.build()?;
    let mut result = quantize_with_model(ctx, grid, scan_order, model)?;
    result.model = spec.clone();
    Ok(result)
}

/// Generic form over any entropy model implementation.
pub fn quantize_with_model<M: EntropyModel>(
    ctx: &RegularizedLayerContext,
    grid: &Grid,
    scan_order: ScanOrder,
    mut model: M,
) -> Result<LayerResult> {
    let (n, m) = ctx.w_prime.shape();
    let c = &ctx.chol_upper;
    if c.rows() != m || model.alphabet_size() != grid.size() {
        return Err(Error::shape("context, grid and model disagree"));
    }
    let c_diag: Vec<f64> = c.diagonal().into_iter().map(|v| v.max(MIN_CHOL_DIAG)).collect();
    let k = grid.size() as u64;

    let mut w = ctx.w_prime.clone();
    let mut indices = vec![0u32; n * m];
    let mut symbols = Vec::with_capacity(n * m);
    let mut rate = 0.0;
    let mut loss_delta = 0.0;

    for (i, j) in scan_order.positions(n, m) {
        let dist = model.distribution();
        let row = w.row_mut(i);
        let q = quantization_step(row[j], c_diag[j], grid, ctx.lambda, ctx.gamma, dist);
        rate += dist.rate_bits(q);
        loss_delta += obs_update_row(row, j, grid.level(q), c);
        indices[i * m + j] = q;
        symbols.push(q);
        model.update(q);
    }

    Ok(LayerResult {
        quantized: QuantizedLayer::new(n, m, indices, grid.clone(), scan_order)?,
        predicted_rate_bits: rate,
        quadratic_loss_delta: loss_delta,
        symbols_in_scan_order: symbols,
        model: ModelSpec::adaptive(ModelKind::AdaptiveLaplace, grid.size()),
        candidate_evaluations: (n * m) as u64 * k,
    })
}

/// Quantized layer plus its coded payload.
#[derive(Debug, Clone)]
pub struct CompressedLayer {
    pub result: LayerResult,
    pub payload: Payload,
}

/// Quantizes with a grid built from the weights and entropy-codes the symbols
/// by replaying a fresh model of the same kind.
pub fn compress_layer(
    weights: &DenseMatrix,
    hessian: &DenseMatrix,
    config: &CompressionConfig,
) -> Result<CompressedLayer> {
    let grid = build_grid(weights, config.grid_size)?;
    let result = quantize_layer(weights, hessian, &grid, config)?;
    encode_result(result)
}

pub fn encode_result(result: LayerResult) -> Result<CompressedLayer> {
    let payload = range_coder::encode(&result.symbols_in_scan_order, result.model.build()?)?;
    Ok(CompressedLayer { result, payload })
}

/// Round-to-nearest followed by entropy coding.
pub fn rtn_layer(
    weights: &DenseMatrix,
    grid: &Grid,
    scan_order: ScanOrder,
    kind: ModelKind,
) -> Result<LayerResult> {
    let quantized = round_to_nearest(weights, grid, scan_order);
    let spec = model_spec_for(kind, weights, grid);
    let symbols = quantized.symbols_in_scan_order();
    let rate = range_coder::information_content(&symbols, spec.build()?);
    Ok(LayerResult {
        quantized,
        predicted_rate_bits: rate,
        quadratic_loss_delta: f64::NAN,
        symbols_in_scan_order: symbols,
        model: spec,
        candidate_evaluations: 0,
    })
}
