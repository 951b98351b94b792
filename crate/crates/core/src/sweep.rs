//! Parameter sweeps over compression settings, CSV output, and Pareto-front
//! extraction.

use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;

use crate::entropy::ModelKind;
use crate::error::{Error, Result};
use crate::grid::ScanOrder;
use crate::linalg::DEFAULT_DAMPING;
use crate::matrix::DenseMatrix;
use crate::model_io::TensorFile;
use crate::pipeline::{
    build_contexts, compress_with_contexts, layer_losses, DenseNetwork, LabeledData, LayerPlan, Method, Settings,
};

pub const CSV_HEADER: [&str; 10] = [
    "lambda",
    "grid_size",
    "scan_order",
    "model_kind",
    "bpw",
    "layer_loss",
    "accuracy",
    "wall_ms",
    "method",
    "status",
];

/// `10^-8, 10^-7.5, …, 10^-1`.
pub fn default_lambdas() -> Vec<f64> {
    (0..=14).map(|i| 10f64.powf(-8.0 + 0.5 * i as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub method: Method,
    pub lambda: f64,
    pub grid_size: usize,
    pub scan_order: ScanOrder,
    pub model_kind: ModelKind,
    pub bits_per_weight: f64,
    pub layer_loss: f64,
    pub accuracy: Option<f64>,
    pub wall_ms: f64,
    /// `None` on success, otherwise the error message.
    pub error: Option<String>,
}

impl SweepPoint {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// Quantity the Pareto front maximizes: accuracy, or −loss without it.
    pub fn objective(&self) -> f64 {
        self.accuracy.unwrap_or(-self.layer_loss)
    }

    fn failed(settings: &Settings, err: &Error) -> Self {
        Self {
            method: settings.method,
            lambda: settings.lambda,
            grid_size: settings.grid_size,
            scan_order: settings.scan_order,
            model_kind: settings.model_kind,
            bits_per_weight: f64::NAN,
            layer_loss: f64::NAN,
            accuracy: None,
            wall_ms: 0.0,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub methods: Vec<Method>,
    pub lambdas: Vec<f64>,
    pub grid_sizes: Vec<usize>,
    pub scan_orders: Vec<ScanOrder>,
    pub model_kinds: Vec<ModelKind>,
    pub damping_delta: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            methods: vec![Method::Cerwu],
            lambdas: default_lambdas(),
            grid_sizes: vec![5, 9, 17, 33],
            scan_orders: vec![ScanOrder::RowMajor],
            model_kinds: vec![ModelKind::ContextAdaptive],
            damping_delta: DEFAULT_DAMPING,
        }
    }
}

impl SweepGrid {
    fn validate(&self) -> Result<()> {
        let empty = [
            ("methods", self.methods.is_empty()),
            ("lambdas", self.lambdas.is_empty()),
            ("grid sizes", self.grid_sizes.is_empty()),
            ("scan orders", self.scan_orders.is_empty()),
            ("model kinds", self.model_kinds.is_empty()),
        ];
        match empty.iter().find(|(_, e)| *e) {
            Some((what, _)) => Err(Error::InvalidArgument(format!("sweep needs at least one of: {what}"))),
            None => Ok(()),
        }
    }

    /// Rows in output order. RTN ignores λ and contributes one λ = 0 row per
    /// remaining combination.
    pub fn configurations(&self) -> Vec<Settings> {
        let mut out = Vec::new();
        for &method in &self.methods {
            let lambdas = if method == Method::Rtn { vec![0.0] } else { self.lambdas.clone() };
            for &lambda in &lambdas {
                for &grid_size in &self.grid_sizes {
                    for &scan_order in &self.scan_orders {
                        for &model_kind in &self.model_kinds {
                            out.push(Settings {
                                method,
                                lambda,
                                grid_size,
                                scan_order,
                                model_kind,
                                damping_delta: self.damping_delta,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Model, layer plan, Hessians and evaluation data shared by every point.
pub struct SweepInputs<'a> {
    pub model: &'a TensorFile,
    pub plan: &'a [LayerPlan],
    pub hessians: &'a [DenseMatrix],
    pub calib: &'a TensorFile,
    pub test: Option<&'a LabeledData>,
}

/// Compresses and evaluates every configuration. Contexts are factored once
/// per (method, λ) and shared by the grid sizes, scan orders and model kinds
/// under it. A failing configuration yields an error row; the sweep goes on.
pub fn run_sweep(inputs: &SweepInputs<'_>, grid: &SweepGrid) -> Result<Vec<SweepPoint>> {
    grid.validate()?;
    let configs = grid.configurations();
    let mut points = Vec::with_capacity(configs.len());
    let mut start = 0;
    while start < configs.len() {
        let head = &configs[start];
        let end = start
            + configs[start..]
                .iter()
                .take_while(|c| c.method == head.method && c.lambda.to_bits() == head.lambda.to_bits())
                .count();
        let group = &configs[start..end];
        match build_contexts(inputs.plan, inputs.hessians, head.method, head.lambda, grid.damping_delta) {
            Ok(ctx) => {
                let rows: Vec<SweepPoint> = group
                    .par_iter()
                    .map(|s| evaluate_point(inputs, ctx.as_deref(), s).unwrap_or_else(|e| SweepPoint::failed(s, &e)))
                    .collect();
                points.extend(rows);
            }
            Err(e) => points.extend(group.iter().map(|s| SweepPoint::failed(s, &e))),
        }
        start = end;
    }
    Ok(points)
}

fn evaluate_point(
    inputs: &SweepInputs<'_>,
    contexts: Option<&[crate::linalg::RegularizedLayerContext]>,
    settings: &Settings,
) -> Result<SweepPoint> {
    let t0 = Instant::now();
    let out = compress_with_contexts(inputs.model, inputs.plan, contexts, settings)?;
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    let loss = layer_losses(inputs.calib, inputs.plan, &out.reconstructed)?.iter().sum();
    let accuracy = match inputs.test {
        Some(data) => {
            let net = DenseNetwork::from_tensors(&out.dequantized(inputs.model, inputs.plan)?)?;
            Some(net.accuracy(data)?)
        }
        None => None,
    };
    Ok(SweepPoint {
        method: settings.method,
        lambda: settings.lambda,
        grid_size: settings.grid_size,
        scan_order: settings.scan_order,
        model_kind: settings.model_kind,
        bits_per_weight: out.bits_per_weight(),
        layer_loss: loss,
        accuracy,
        wall_ms,
        error: None,
    })
}

/// Keeps every point not discarded by another with strictly lower rate and
/// greater or equal objective; sorted by rate, input order among equal rates.
/// Failed points are dropped.
pub fn pareto_front(points: &[SweepPoint]) -> Vec<SweepPoint> {
    let ok: Vec<&SweepPoint> = points.iter().filter(|p| p.is_ok()).collect();
    let pairs: Vec<(f64, f64)> = ok.iter().map(|p| (p.bits_per_weight, p.objective())).collect();
    pareto_indices(&pairs).into_iter().map(|i| ok[i].clone()).collect()
}

/// Indices of the `(rate, objective)` pairs on the front, by ascending rate.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].0.total_cmp(&points[b].0).then(a.cmp(&b)));
    let mut keep = Vec::new();
    // Best objective among strictly lower rates seen so far.
    let mut best_below = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let rate = points[order[i]].0;
        let mut j = i;
        let mut best_here = f64::NEG_INFINITY;
        while j < order.len() && points[order[j]].0 == rate {
            let obj = points[order[j]].1;
            if !(best_below >= obj) {
                keep.push(order[j]);
            }
            best_here = best_here.max(obj);
            j += 1;
        }
        best_below = best_below.max(best_here);
        i = j;
    }
    keep
}

/// Smallest bpw among successful points reaching `min_accuracy`.
pub fn min_rate_at_accuracy(points: &[SweepPoint], min_accuracy: f64) -> Option<f64> {
    points
        .iter()
        .filter(|p| p.is_ok() && p.accuracy.is_some_and(|a| a >= min_accuracy))
        .map(|p| p.bits_per_weight)
        .min_by(f64::total_cmp)
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn write_csv<W: Write>(out: W, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for p in points {
        w.write_record([
            fmt_f64(p.lambda),
            p.grid_size.to_string(),
            p.scan_order.as_str().to_string(),
            p.model_kind.as_str().to_string(),
            fmt_f64(p.bits_per_weight),
            fmt_f64(p.layer_loss),
            p.accuracy.map(fmt_f64).unwrap_or_default(),
            fmt_f64(p.wall_ms),
            p.method.as_str().to_string(),
            p.error.clone().map_or_else(|| "ok".to_string(), |e| format!("error: {e}")),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepPoint>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("CSV has no '{name}' column")))
    };
    let idx: Vec<usize> = CSV_HEADER[..8].iter().map(|h| col(h)).collect::<Result<_>>()?;
    let method_col = col("method").ok();
    let status_col = col("status").ok();
    let mut points = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let bad = |what: &str| Error::InvalidArgument(format!("CSV row {}: bad {what}", line + 1));
        let num = |i: usize, what: &str| -> Result<f64> {
            let s = field(i);
            if s.is_empty() {
                Ok(f64::NAN)
            } else {
                s.parse().map_err(|_| bad(what))
            }
        };
        let status = status_col.map(field).unwrap_or("ok");
        let accuracy = num(idx[6], "accuracy")?;
        points.push(SweepPoint {
            lambda: num(idx[0], "lambda")?,
            grid_size: field(idx[1]).parse().map_err(|_| bad("grid_size"))?,
            scan_order: field(idx[2]).parse().map_err(|_| bad("scan_order"))?,
            model_kind: field(idx[3]).parse().map_err(|_| bad("model_kind"))?,
            bits_per_weight: num(idx[4], "bpw")?,
            layer_loss: num(idx[5], "layer_loss")?,
            accuracy: (!accuracy.is_nan()).then_some(accuracy),
            wall_ms: num(idx[7], "wall_ms")?,
            method: match method_col {
                Some(c) => field(c).parse()?,
                None => Method::Cerwu,
            },
            error: (status != "ok").then(|| status.trim_start_matches("error: ").to_string()),
        });
    }
    Ok(points)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("CSV: {e}"))
}
