//! Whole-model compression: layer selection, Hessian accumulation with an
//! on-disk cache, per-layer quantization in parallel, and evaluation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::engine::{encode_result, quantize_with_context, rtn_layer, model_spec_for, CompressedLayer, GammaMode};
use crate::entropy::ModelKind;
use crate::error::{Error, Result};
use crate::grid::{build_grid, ScanOrder};
use crate::linalg::{accumulate_hessian, build_context_with_gamma, compute_gamma, RegularizedLayerContext, DEFAULT_DAMPING};
use crate::matrix::DenseMatrix;
use crate::model_io::{CompressedModel, LayerRecord, QuantizedRecord, RecordBody, Tensor, TensorFile};

pub const ACTIVATIONS_SUFFIX: &str = ".activations";
const HESSIAN_SUFFIX: &str = ".hessian";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Cerwu,
    /// Rate-aware search, but weight updates ignore the rate term.
    CerwuGammaZero,
    /// Round to nearest, then entropy code.
    Rtn,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cerwu, Method::CerwuGammaZero, Method::Rtn];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cerwu => "cerwu",
            Method::CerwuGammaZero => "cerwu-gamma0",
            Method::Rtn => "rtn",
        }
    }

    pub fn gamma_mode(self) -> Option<GammaMode> {
        match self {
            Method::Cerwu => Some(GammaMode::Standard),
            Method::CerwuGammaZero => Some(GammaMode::ForcedZero),
            Method::Rtn => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}' (cerwu, cerwu-gamma0, rtn)")))
    }
}

/// Everything that selects one compressed model.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub method: Method,
    pub lambda: f64,
    pub grid_size: usize,
    pub scan_order: ScanOrder,
    pub model_kind: ModelKind,
    pub damping_delta: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            method: Method::Cerwu,
            lambda: 1e-3,
            grid_size: 17,
            scan_order: ScanOrder::RowMajor,
            model_kind: ModelKind::ContextAdaptive,
            damping_delta: DEFAULT_DAMPING,
        }
    }
}

/// A tensor selected for quantization, viewed as a matrix.
#[derive(Debug, Clone)]
pub struct LayerPlan {
    pub name: String,
    pub shape: Vec<usize>,
    pub weights: DenseMatrix,
}

/// Every tensor of rank ≥ 2 not listed in `keep_raw`, in file order.
pub fn plan_layers(model: &TensorFile, keep_raw: &[String]) -> Result<Vec<LayerPlan>> {
    model
        .entries
        .iter()
        .filter(|(name, t)| t.rank() >= 2 && !keep_raw.iter().any(|k| k == name))
        .map(|(name, t)| {
            Ok(LayerPlan {
                name: name.clone(),
                shape: t.shape.clone(),
                weights: t.to_matrix()?,
            })
        })
        .collect()
}

/// Calibration inputs `X` (`m × p`) for a layer, stored as `<layer>.activations`.
pub fn layer_activations(calib: &TensorFile, layer: &LayerPlan) -> Result<DenseMatrix> {
    let entry = calib
        .get(&format!("{}{ACTIVATIONS_SUFFIX}", layer.name))
        .ok_or_else(|| Error::MissingActivations(layer.name.clone()))?;
    if entry.rank() != 2 || entry.shape[0] != layer.weights.cols() {
        return Err(Error::shape(format!(
            "activations for '{}' have shape {:?}, expected [{}, p]",
            layer.name,
            entry.shape,
            layer.weights.cols()
        )));
    }
    entry.to_matrix()
}

/// `H = 2 X Xᵀ` for each planned layer.
pub fn compute_hessians(calib: &TensorFile, plan: &[LayerPlan]) -> Result<Vec<DenseMatrix>> {
    plan.iter()
        .map(|layer| accumulate_hessian(&[layer_activations(calib, layer)?]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CacheStatus {
    Hit(PathBuf),
    Miss(PathBuf),
}

impl fmt::Display for CacheStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheStatus::Hit(p) => write!(f, "hessian cache hit: {}", p.display()),
            CacheStatus::Miss(p) => write!(f, "hessian cache miss, accumulated and stored: {}", p.display()),
        }
    }
}

/// Cache location beside the calibration file, keyed by the calibration bytes
/// and the planned layer names and widths.
pub fn hessian_cache_path(calib_path: &Path, calib_bytes: &[u8], plan: &[LayerPlan]) -> PathBuf {
    let mut hasher = Sha256::new();
    hasher.update(calib_bytes);
    for layer in plan {
        hasher.update((layer.name.len() as u64).to_le_bytes());
        hasher.update(layer.name.as_bytes());
        hasher.update((layer.weights.cols() as u64).to_le_bytes());
    }
    let digest = hex::encode(hasher.finalize());
    let stem = calib_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "calib".into());
    calib_path.with_file_name(format!("{stem}.hessians-{}.cwtf", &digest[..16]))
}

/// Loads Hessians from the cache if present, otherwise accumulates them from
/// the calibration file and writes the cache.
pub fn load_or_compute_hessians(
    calib_path: &Path,
    plan: &[LayerPlan],
) -> Result<(Vec<DenseMatrix>, CacheStatus)> {
    let calib_bytes = std::fs::read(calib_path)?;
    let cache = hessian_cache_path(calib_path, &calib_bytes, plan);
    if let Ok(file) = TensorFile::read(&cache) {
        if let Some(h) = hessians_from_cache(&file, plan) {
            return Ok((h, CacheStatus::Hit(cache)));
        }
    }
    let calib = TensorFile::from_bytes(&calib_bytes)?;
    let hessians = compute_hessians(&calib, plan)?;
    let mut file = TensorFile::new();
    for (layer, h) in plan.iter().zip(&hessians) {
        file.insert(
            format!("{}{HESSIAN_SUFFIX}", layer.name),
            Tensor::f64(vec![h.rows(), h.cols()], h.data().to_vec())?,
        );
    }
    let tmp = cache.with_extension("tmp");
    file.write(&tmp)?;
    std::fs::rename(&tmp, &cache)?;
    Ok((hessians, CacheStatus::Miss(cache)))
}

fn hessians_from_cache(file: &TensorFile, plan: &[LayerPlan]) -> Option<Vec<DenseMatrix>> {
    plan.iter()
        .map(|layer| {
            let m = layer.weights.cols();
            let t = file.get(&format!("{}{HESSIAN_SUFFIX}", layer.name))?;
            (t.shape == [m, m]).then(|| t.to_matrix().ok()).flatten()
        })
        .collect()
}

/// Per-layer regularized contexts for one (method, λ, δ). `None` for RTN.
pub fn build_contexts(
    plan: &[LayerPlan],
    hessians: &[DenseMatrix],
    method: Method,
    lambda: f64,
    damping_delta: f64,
) -> Result<Option<Vec<RegularizedLayerContext>>> {
    let Some(mode) = method.gamma_mode() else {
        return Ok(None);
    };
    if plan.len() != hessians.len() {
        return Err(Error::shape("one Hessian per planned layer is required"));
    }
    plan.par_iter()
        .zip(hessians)
        .map(|(layer, h)| {
            let gamma = match mode {
                GammaMode::Standard => compute_gamma(&layer.weights),
                GammaMode::ForcedZero => 0.0,
            };
            build_context_with_gamma(&layer.weights, h, lambda, damping_delta, gamma)
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

#[derive(Debug, Clone)]
pub struct LayerSummary {
    pub name: String,
    pub params: usize,
    pub record_bytes: usize,
    pub predicted_rate_bits: f64,
    /// Σ Δ of the regularized quadratic loss; NaN for RTN.
    pub quadratic_loss_delta: f64,
    pub candidate_evaluations: u64,
}

impl LayerSummary {
    pub fn bits_per_weight(&self) -> f64 {
        8.0 * self.record_bytes as f64 / self.params as f64
    }
}

#[derive(Debug, Clone)]
pub struct CompressionOutput {
    pub model: CompressedModel,
    pub layers: Vec<LayerSummary>,
    /// Dequantized matrices in plan order.
    pub reconstructed: Vec<DenseMatrix>,
}

impl CompressionOutput {
    pub fn bits_per_weight(&self) -> f64 {
        self.model.bits_per_weight()
    }

    pub fn total_loss_delta(&self) -> f64 {
        self.layers.iter().map(|l| l.quadratic_loss_delta).sum()
    }

    /// The original tensor file with quantized tensors replaced by their
    /// reconstructions.
    pub fn dequantized(&self, source: &TensorFile, plan: &[LayerPlan]) -> Result<TensorFile> {
        let mut out = source.clone();
        for (layer, w) in plan.iter().zip(&self.reconstructed) {
            out.insert(layer.name.clone(), Tensor::f32(layer.shape.clone(), w.to_f32())?);
        }
        Ok(out)
    }
}

/// Compresses every planned layer and stores the remaining tensors raw.
pub fn compress_model(
    model: &TensorFile,
    plan: &[LayerPlan],
    hessians: &[DenseMatrix],
    settings: &Settings,
) -> Result<CompressionOutput> {
    let contexts = build_contexts(plan, hessians, settings.method, settings.lambda, settings.damping_delta)?;
    compress_with_contexts(model, plan, contexts.as_deref(), settings)
}

/// Like [`compress_model`] with prebuilt contexts from [`build_contexts`];
/// `settings.lambda` and `settings.damping_delta` are taken as already applied.
pub fn compress_with_contexts(
    model: &TensorFile,
    plan: &[LayerPlan],
    contexts: Option<&[RegularizedLayerContext]>,
    settings: &Settings,
) -> Result<CompressionOutput> {
    let layers: Vec<CompressedLayer> = plan
        .par_iter()
        .enumerate()
        .map(|(idx, layer)| {
            let grid = build_grid(&layer.weights, settings.grid_size)?;
            let result = match contexts {
                Some(ctx) => {
                    let spec = model_spec_for(settings.model_kind, &layer.weights, &grid);
                    quantize_with_context(&ctx[idx], &grid, settings.scan_order, &spec)?
                }
                None => rtn_layer(&layer.weights, &grid, settings.scan_order, settings.model_kind)?,
            };
            encode_result(result)
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(model.len());
    let mut summaries = Vec::with_capacity(plan.len());
    let mut reconstructed = Vec::with_capacity(plan.len());
    let mut compressed = plan.iter().zip(layers);
    let mut pending = compressed.next();
    for (name, tensor) in &model.entries {
        match &pending {
            Some((layer, c)) if layer.name == *name => {
                let record = LayerRecord {
                    name: name.clone(),
                    body: RecordBody::Quantized(QuantizedRecord::from_compressed(layer.shape.clone(), c)?),
                };
                summaries.push(LayerSummary {
                    name: name.clone(),
                    params: layer.weights.len(),
                    record_bytes: record.encoded_len(),
                    predicted_rate_bits: c.result.predicted_rate_bits,
                    quadratic_loss_delta: c.result.quadratic_loss_delta,
                    candidate_evaluations: c.result.candidate_evaluations,
                });
                reconstructed.push(c.result.quantized.dequantize());
                records.push(record);
                pending = compressed.next();
            }
            _ => records.push(LayerRecord {
                name: name.clone(),
                body: RecordBody::Raw(tensor.clone()),
            }),
        }
    }
    if let Some((layer, _)) = pending {
        return Err(Error::InvalidArgument(format!(
            "planned layer '{}' is not in the model file order",
            layer.name
        )));
    }
    Ok(CompressionOutput {
        model: CompressedModel { layers: records },
        layers: summaries,
        reconstructed,
    })
}

/// Decodes every record back into a tensor file, layers in parallel.
pub fn decompress_model(model: &CompressedModel) -> Result<TensorFile> {
    let tensors: Vec<Tensor> = model
        .layers
        .par_iter()
        .map(LayerRecord::reconstruct)
        .collect::<Result<_>>()?;
    Ok(TensorFile {
        entries: model.layers.iter().map(|l| l.name.clone()).zip(tensors).collect(),
    })
}

/// ‖(W − Ŵ) X‖² per planned layer, from the calibration activations.
pub fn layer_losses(
    calib: &TensorFile,
    plan: &[LayerPlan],
    reconstructed: &[DenseMatrix],
) -> Result<Vec<f64>> {
    if plan.len() != reconstructed.len() {
        return Err(Error::shape("one reconstruction per planned layer is required"));
    }
    plan.par_iter()
        .zip(reconstructed)
        .map(|(layer, w_hat)| {
            let x = layer_activations(calib, layer)?;
            let diff = layer.weights.sub(w_hat)?;
            Ok(diff.matmul(&x)?.frobenius_sq())
        })
        .collect()
}

/// Labeled evaluation set: `features` `[N, d]` and `labels` `[N]`.
#[derive(Debug, Clone)]
pub struct LabeledData {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
}

impl LabeledData {
    pub fn from_tensors(file: &TensorFile) -> Result<Self> {
        let features = file
            .get("features")
            .ok_or_else(|| Error::InvalidArgument("test data has no 'features' entry".into()))?;
        let labels = file
            .get("labels")
            .ok_or_else(|| Error::InvalidArgument("test data has no 'labels' entry".into()))?;
        if features.rank() != 2 || labels.rank() != 1 || labels.shape[0] != features.shape[0] {
            return Err(Error::shape(format!(
                "features {:?} and labels {:?} do not pair up",
                features.shape, labels.shape
            )));
        }
        let labels = labels
            .data
            .to_f64()
            .into_iter()
            .map(|v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::InvalidArgument(format!("label {v} is not a class index")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            features: features.to_matrix()?,
            labels,
        })
    }

    pub fn to_tensors(&self) -> Result<TensorFile> {
        let mut f = TensorFile::new();
        f.insert("features", Tensor::from_matrix(&self.features));
        f.insert(
            "labels",
            Tensor::f32(vec![self.labels.len()], self.labels.iter().map(|&l| l as f32).collect())?,
        );
        Ok(f)
    }
}

/// Feed-forward stack of dense layers with ReLU between them.
///
/// Layers are the `<name>.weight` entries (`[out, in]`) in file order, each
/// with an optional `<name>.bias` (`[out]`).
#[derive(Debug, Clone)]
pub struct DenseNetwork {
    pub layers: Vec<(DenseMatrix, Vec<f64>)>,
}

impl DenseNetwork {
    pub fn from_tensors(file: &TensorFile) -> Result<Self> {
        let mut layers = Vec::new();
        for (name, t) in &file.entries {
            let Some(base) = name.strip_suffix(".weight") else {
                continue;
            };
            if t.rank() != 2 {
                return Err(Error::shape(format!("'{name}' is not a dense weight: {:?}", t.shape)));
            }
            let w = t.to_matrix()?;
            let bias = match file.get(&format!("{base}.bias")) {
                Some(b) if b.shape == [w.rows()] => b.data.to_f64(),
                Some(b) => {
                    return Err(Error::shape(format!(
                        "bias of '{base}' has shape {:?}, expected [{}]",
                        b.shape,
                        w.rows()
                    )))
                }
                None => vec![0.0; w.rows()],
            };
            if let Some((prev, _)) = layers.last() {
                let prev: &DenseMatrix = prev;
                if prev.rows() != w.cols() {
                    return Err(Error::shape(format!(
                        "architecture mismatch: '{name}' takes {} inputs, previous layer gives {}",
                        w.cols(),
                        prev.rows()
                    )));
                }
            }
            layers.push((w, bias));
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model has no '<layer>.weight' entries".into()));
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.cols()
    }

    /// Logits `[N, classes]`.
    pub fn forward(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        if features.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "architecture mismatch: features have {} columns, network expects {}",
                features.cols(),
                self.input_dim()
            )));
        }
        let mut x = features.clone();
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let mut y = x.matmul_transposed(w)?;
            for r in 0..y.rows() {
                for (v, &bias) in y.row_mut(r).iter_mut().zip(b) {
                    *v += bias;
                    if l < last {
                        *v = v.max(0.0);
                    }
                }
            }
            x = y;
        }
        Ok(x)
    }

    pub fn predict(&self, features: &DenseMatrix) -> Result<Vec<usize>> {
        let logits = self.forward(features)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    /// Top-1 accuracy.
    pub fn accuracy(&self, data: &LabeledData) -> Result<f64> {
        let pred = self.predict(&data.features)?;
        let hits = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / data.labels.len().max(1) as f64)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Layer losses, bpw and optional accuracy of one compressed model.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub layer_losses: Vec<(String, f64)>,
    pub bits_per_weight: f64,
    pub accuracy: Option<f64>,
}

impl Evaluation {
    pub fn total_loss(&self) -> f64 {
        self.layer_losses.iter().map(|(_, l)| l).sum()
    }
}

/// Compares a decompressed model against the original on calibration data and
/// optionally on labeled test data.
pub fn evaluate(
    original: &TensorFile,
    compressed: &CompressedModel,
    calib: &TensorFile,
    test: Option<&LabeledData>,
) -> Result<Evaluation> {
    let decoded = decompress_model(compressed)?;
    let plan: Vec<LayerPlan> = compressed
        .layers
        .iter()
        .filter(|l| matches!(l.body, RecordBody::Quantized(_)))
        .map(|l| {
            let t = original
                .get(&l.name)
                .ok_or_else(|| Error::InvalidArgument(format!("layer '{}' missing from the original model", l.name)))?;
            Ok(LayerPlan {
                name: l.name.clone(),
                shape: t.shape.clone(),
                weights: t.to_matrix()?,
            })
        })
        .collect::<Result<_>>()?;
    let reconstructed: Vec<DenseMatrix> = plan
        .iter()
        .map(|l| decoded.get(&l.name).expect("decoded model has every layer").to_matrix())
        .collect::<Result<_>>()?;
    let losses = layer_losses(calib, &plan, &reconstructed)?;
    let accuracy = match test {
        Some(data) => Some(DenseNetwork::from_tensors(&decoded)?.accuracy(data)?),
        None => None,
    };
    Ok(Evaluation {
        layer_losses: plan.into_iter().map(|l| l.name).zip(losses).collect(),
        bits_per_weight: compressed.bits_per_weight(),
        accuracy,
    })
}
