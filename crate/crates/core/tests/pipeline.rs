mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use cerwu::entropy::ModelKind;
use cerwu::fixture::{build_fixture, Fixture, FixtureConfig};
use cerwu::grid::{build_grid, round_to_nearest, ScanOrder};
use cerwu::model_io::{CompressedModel, Tensor, TensorFile};
use cerwu::oracle::layer_distortion;
use cerwu::pipeline::{
    compress_model, compute_hessians, decompress_model, evaluate, layer_activations, load_or_compute_hessians,
    plan_layers, CacheStatus, DenseNetwork, LabeledData, Method, Settings,
};
use cerwu::sweep::{pareto_front, pareto_indices, run_sweep, SweepGrid, SweepInputs, SweepPoint};
use cerwu::{DenseMatrix, Error};
use common::*;

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| build_fixture(&FixtureConfig::default()).unwrap())
}

/// Two small layers whose activations are scaled unit vectors, so each `H` is diagonal.
fn diagonal_model(seed: u64) -> (TensorFile, TensorFile) {
    let mut r = rng(seed);
    let mut model = TensorFile::new();
    let mut calib = TensorFile::new();
    for (name, n, m) in [("l1.weight", 5, 8), ("l2.weight", 3, 5)] {
        model.insert(name, Tensor::from_matrix(&random(n, m, &mut r)));
        let scales: Vec<f64> = (0..m).map(|_| 0.5 + normal(&mut r).abs()).collect();
        let x = DenseMatrix::from_fn(m, m, |a, b| if a == b { scales[a] } else { 0.0 });
        calib.insert(format!("{name}.activations"), Tensor::from_matrix(&x));
    }
    model.insert("l2.bias", Tensor::f32(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
    (model, calib)
}

fn settings(method: Method, lambda: f64, k: usize, delta: f64) -> Settings {
    Settings {
        method,
        lambda,
        grid_size: k,
        scan_order: ScanOrder::RowMajor,
        model_kind: ModelKind::ContextAdaptive,
        damping_delta: delta,
    }
}

#[test]
fn compress_write_read_decompress() {
    let f = fixture();
    let plan = plan_layers(&f.model, &[]).unwrap();
    assert_eq!(plan.iter().map(|l| l.name.as_str()).collect::<Vec<_>>(), ["fc1.weight", "fc2.weight"]);
    let h = compute_hessians(&f.calib, &plan).unwrap();
    let out = compress_model(&f.model, &plan, &h, &Settings::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cerw");
    out.model.write(&path).unwrap();
    let back = CompressedModel::read(&path).unwrap();
    assert_eq!(back, out.model);
    let decoded = decompress_model(&back).unwrap();
    assert_eq!(decoded, out.dequantized(&f.model, &plan).unwrap());
    assert_eq!(decoded.names().collect::<Vec<_>>(), f.model.names().collect::<Vec<_>>());
    assert_eq!(decoded.get("fc1.bias"), f.model.get("fc1.bias"));
}

#[test]
fn missing_activations_name_the_layer() {
    let f = fixture();
    let plan = plan_layers(&f.model, &[]).unwrap();
    let mut calib = TensorFile::new();
    calib.insert("fc1.weight.activations", f.calib.get("fc1.weight.activations").unwrap().clone());
    let err = compute_hessians(&calib, &plan).unwrap_err();
    assert!(matches!(err, Error::MissingActivations(ref l) if l == "fc2.weight"));
    assert!(err.to_string().contains("fc2.weight"));
    assert!(err.is_input_error());
}

#[test]
fn keep_raw_skips_layers() {
    let f = fixture();
    let plan = plan_layers(&f.model, &["fc2.weight".to_string()]).unwrap();
    assert_eq!(plan.len(), 1);
    let h = compute_hessians(&f.calib, &plan).unwrap();
    let out = compress_model(&f.model, &plan, &h, &Settings::default()).unwrap();
    assert_eq!(out.model.size_report().quantized_params, 32 * 784);
    assert_eq!(decompress_model(&out.model).unwrap().get("fc2.weight"), f.model.get("fc2.weight"));
}

#[test]
fn hessian_cache_miss_then_hit() {
    let (model, calib) = diagonal_model(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("calib.cwtf");
    calib.write(&path).unwrap();
    let plan = plan_layers(&model, &[]).unwrap();
    let (first, status) = load_or_compute_hessians(&path, &plan).unwrap();
    assert!(status.to_string().starts_with("hessian cache miss"));
    let CacheStatus::Miss(cache) = status else { panic!("expected a miss") };
    assert!(cache.exists());
    let (second, status) = load_or_compute_hessians(&path, &plan).unwrap();
    assert!(matches!(status, CacheStatus::Hit(ref p) if *p == cache));
    assert_eq!(first, second);
    assert_eq!(first, compute_hessians(&calib, &plan).unwrap());

    let fewer = plan_layers(&model, &["l2.weight".to_string()]).unwrap();
    let (_, status) = load_or_compute_hessians(&path, &fewer).unwrap();
    assert!(matches!(status, CacheStatus::Miss(ref p) if *p != cache));
}

#[test]
fn diagonal_hessian_without_rate_matches_rtn_bytes() {
    let (model, calib) = diagonal_model(2);
    let plan = plan_layers(&model, &[]).unwrap();
    let h = compute_hessians(&calib, &plan).unwrap();
    for k in [3, 4, 9] {
        let cerwu = compress_model(&model, &plan, &h, &settings(Method::Cerwu, 0.0, k, 0.0)).unwrap();
        let rtn = compress_model(&model, &plan, &h, &settings(Method::Rtn, 0.0, k, 0.0)).unwrap();
        assert_eq!(cerwu.model.to_bytes().unwrap(), rtn.model.to_bytes().unwrap(), "k = {k}");
    }
}

#[test]
fn rtn_layer_loss_matches_oracle() {
    let f = fixture();
    let plan = plan_layers(&f.model, &[]).unwrap();
    let h = compute_hessians(&f.calib, &plan).unwrap();
    let out = compress_model(&f.model, &plan, &h, &settings(Method::Rtn, 0.0, 3, 0.0)).unwrap();
    let eval = evaluate(&f.model, &out.model, &f.calib, None).unwrap();
    for ((name, loss), layer) in eval.layer_losses.iter().zip(&plan) {
        assert_eq!(name, &layer.name);
        let grid = build_grid(&layer.weights, 3).unwrap();
        let w_hat = round_to_nearest(&layer.weights, &grid, ScanOrder::RowMajor).dequantize();
        // The stored reconstruction passes through f32.
        let w_hat = DenseMatrix::new(w_hat.rows(), w_hat.cols(), w_hat.to_f32().into_iter().map(f64::from).collect())
            .unwrap();
        let x = layer_activations(&f.calib, layer).unwrap();
        let want = layer_distortion(&layer.weights, &x, &w_hat).unwrap();
        assert!((loss - want).abs() <= 1e-10 * want.max(1.0), "{name}: {loss} vs {want}");
    }
}

#[test]
fn uncompressed_model_evaluates_to_itself() {
    let f = fixture();
    let plan = plan_layers(&f.model, &[]).unwrap();
    let out = compress_model(&f.model, &[], &[], &Settings::default()).unwrap();
    assert!(out.model.layers.iter().all(|l| matches!(l.body, cerwu::model_io::RecordBody::Raw(_))));
    let net = DenseNetwork::from_tensors(&f.model).unwrap();
    let losses = cerwu::pipeline::layer_losses(&f.calib, &plan, &plan.iter().map(|l| l.weights.clone()).collect::<Vec<_>>())
        .unwrap();
    assert!(losses.iter().all(|&l| l == 0.0));
    let decoded = DenseNetwork::from_tensors(&decompress_model(&out.model).unwrap()).unwrap();
    assert_eq!(decoded.accuracy(&f.test).unwrap(), net.accuracy(&f.test).unwrap());
    assert_eq!(net.accuracy(&f.test).unwrap(), f.test_accuracy);
}

#[test]
fn architecture_mismatch_is_rejected() {
    let f = fixture();
    let mut bad = f.model.clone();
    bad.insert("fc2.weight", Tensor::f32(vec![10, 31], vec![0.0; 310]).unwrap());
    assert!(DenseNetwork::from_tensors(&bad).is_err());
    let narrow = LabeledData {
        features: DenseMatrix::zeros(4, 100),
        labels: vec![0; 4],
    };
    assert!(DenseNetwork::from_tensors(&f.model).unwrap().accuracy(&narrow).is_err());
}

#[test]
fn labeled_data_round_trips() {
    let f = fixture();
    let back = LabeledData::from_tensors(&f.test.to_tensors().unwrap()).unwrap();
    assert_eq!(back.labels, f.test.labels);
    assert_eq!(back.features, f.test.features);
}

fn inputs<'a>(f: &'a Fixture, plan: &'a [cerwu::pipeline::LayerPlan], h: &'a [DenseMatrix]) -> SweepInputs<'a> {
    SweepInputs {
        model: &f.model,
        plan,
        hessians: h,
        calib: &f.calib,
        test: Some(&f.test),
    }
}

#[test]
fn singleton_sweep_equals_compress_and_evaluate() {
    let f = fixture();
    let plan = plan_layers(&f.model, &[]).unwrap();
    let h = compute_hessians(&f.calib, &plan).unwrap();
    let s = settings(Method::Cerwu, 1e-3, 9, 1e-2);
    let grid = SweepGrid {
        lambdas: vec![s.lambda],
        grid_sizes: vec![s.grid_size],
        ..SweepGrid::default()
    };
    let points = run_sweep(&inputs(f, &plan, &h), &grid).unwrap();
    assert_eq!(points.len(), 1);
    let out = compress_model(&f.model, &plan, &h, &s).unwrap();
    let eval = evaluate(&f.model, &out.model, &f.calib, Some(&f.test)).unwrap();
    let p = &points[0];
    assert!(p.is_ok());
    assert_eq!(p.bits_per_weight, eval.bits_per_weight);
    assert!((p.layer_loss - eval.total_loss()).abs() <= 1e-12 * eval.total_loss());
    assert_eq!(p.accuracy, eval.accuracy);
}

#[test]
fn sweep_rows_follow_configuration_order() {
    let f = fixture();
    let plan = plan_layers(&f.model, &[]).unwrap();
    let h = compute_hessians(&f.calib, &plan).unwrap();
    let grid = SweepGrid {
        lambdas: vec![1e-4, 1e-2],
        grid_sizes: vec![5, 17],
        ..SweepGrid::default()
    };
    let points = run_sweep(&inputs(f, &plan, &h), &grid).unwrap();
    let got: Vec<(f64, usize)> = points.iter().map(|p| (p.lambda, p.grid_size)).collect();
    assert_eq!(got, [(1e-4, 5), (1e-4, 17), (1e-2, 5), (1e-2, 17)]);
    assert!(points.iter().all(SweepPoint::is_ok));
}

#[test]
fn failing_configuration_becomes_error_row() {
    let f = fixture();
    let plan = plan_layers(&f.model, &[]).unwrap();
    let h = compute_hessians(&f.calib, &plan).unwrap();
    let grid = SweepGrid {
        lambdas: vec![1e-3],
        grid_sizes: vec![1, 5],
        ..SweepGrid::default()
    };
    let points = run_sweep(&inputs(f, &plan, &h), &grid).unwrap();
    assert_eq!(points.len(), 2);
    assert!(!points[0].is_ok());
    assert!(points[1].is_ok());
    assert_eq!(pareto_front(&points).len(), 1);
}

#[test]
fn rate_falls_with_lambda_on_fixture() {
    let f = fixture();
    let plan = plan_layers(&f.model, &[]).unwrap();
    let h = compute_hessians(&f.calib, &plan).unwrap();
    let grid = SweepGrid::default();
    let points = run_sweep(&inputs(f, &plan, &h), &grid).unwrap();
    let mut means = Vec::new();
    for &lambda in &grid.lambdas {
        let at: Vec<f64> = points.iter().filter(|p| p.lambda == lambda).map(|p| p.bits_per_weight).collect();
        means.push(at.iter().sum::<f64>() / at.len() as f64);
    }
    let inversions = means.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "{means:?}");
    assert!(means.last().unwrap() < &means[0]);
}

#[test]
fn moderate_setting_keeps_accuracy() {
    let f = fixture();
    let plan = plan_layers(&f.model, &[]).unwrap();
    let h = compute_hessians(&f.calib, &plan).unwrap();
    let out = compress_model(&f.model, &plan, &h, &settings(Method::Cerwu, 1e-3, 17, 1e-2)).unwrap();
    let eval = evaluate(&f.model, &out.model, &f.calib, Some(&f.test)).unwrap();
    let acc = eval.accuracy.unwrap();
    assert!(acc >= f.test_accuracy - 0.01, "{acc} vs {}", f.test_accuracy);
}

/// O(n²) reference: keep a point unless another has strictly lower rate and
/// objective at least as high.
fn pareto_oracle(points: &[(f64, f64)]) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..points.len())
        .filter(|&i| !points.iter().any(|q| q.0 < points[i].0 && q.1 >= points[i].1))
        .collect();
    keep.sort_by(|&a, &b| points[a].0.total_cmp(&points[b].0).then(a.cmp(&b)));
    keep
}

#[test]
fn pareto_matches_quadratic_reference() {
    let mut r = rng(9);
    let points: Vec<(f64, f64)> = (0..100)
        .map(|_| ((normal(&mut r) * 4.0).round() / 4.0, (normal(&mut r) * 4.0).round() / 4.0))
        .collect();
    assert_eq!(pareto_indices(&points), pareto_oracle(&points));
}

proptest! {
    #[test]
    fn pareto_agrees_and_is_idempotent(
        raw in prop::collection::vec((0u8..20, 0u8..20), 0..60),
    ) {
        let points: Vec<(f64, f64)> = raw.iter().map(|&(a, b)| (f64::from(a), f64::from(b))).collect();
        let front = pareto_indices(&points);
        prop_assert_eq!(&front, &pareto_oracle(&points));
        let sub: Vec<(f64, f64)> = front.iter().map(|&i| points[i]).collect();
        prop_assert_eq!(pareto_indices(&sub), (0..sub.len()).collect::<Vec<_>>());
    }
}
