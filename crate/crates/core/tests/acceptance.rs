//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cerwu::engine::{compress_layer, encode_result, obs_update_row, quantize_layer, rtn_layer, CompressionConfig, GammaMode};
use cerwu::entropy::{init_model, ModelKind, ModelSpec};
use cerwu::fixture::{build_fixture, FixtureConfig};
use cerwu::grid::{build_grid, ScanOrder};
use cerwu::linalg::{build_context, compute_gamma, inverse_upper_cholesky};
use cerwu::model_io::{CompressedModel, Tensor, TensorFile};
use cerwu::oracle::{
    brute_force_minimize, constrained_quadratic_minimizer, evaluate_objective, obs_update_via_inverse,
    optq_reference, row_quadratic_loss, trailing_inverse,
};
use cerwu::pipeline::{compress_model, compute_hessians, decompress_model, plan_layers, Method, Settings};
use cerwu::range_coder::{decode, encode, information_content};
use cerwu::sweep::{default_lambdas, min_rate_at_accuracy, run_sweep, SweepGrid, SweepInputs, SweepPoint};
use cerwu::DenseMatrix;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// A Aᵀ + c·I with a random scale, comfortably positive definite.
fn random_spd(m: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let a = random(m, m + 2, rng);
    let mut h = a.matmul_transposed(&a).unwrap();
    h.add_to_diagonal(0.5 + rng.gen::<f64>());
    h.scale(10f64.powf(rng.gen_range(-1.0..1.0)));
    h.symmetrize();
    h
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed())
}

fn within(d: Duration, limit: f64) -> bool {
    d.as_secs_f64() < limit
}

// 1. Both forms of the regularized quadratic differ by a Ŵ-independent constant.
fn completing_the_square() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (worst, t) = timed(|| {
        let mut worst = 0.0f64;
        for inst in 0..100 {
            let n = rng.gen_range(1..=8);
            let m = rng.gen_range(1..=8);
            let p = m + rng.gen_range(0..6);
            let w = random(n, m, &mut rng);
            let x = random(m, p, &mut rng);
            let delta = if inst % 2 == 0 { 0.0 } else { 1e-2 };
            let lambda = 10f64.powf(rng.gen_range(-3.0..0.0));
            let h = DenseMatrix::from_fn(m, m, |a, b| 2.0 * (0..p).map(|c| x[(a, c)] * x[(b, c)]).sum::<f64>());
            let ctx = build_context(&w, &h, lambda, delta).unwrap();
            let gamma = compute_gamma(&w);
            let ridge = delta * (0..m).map(|t| h[(t, t)]).sum::<f64>() / m as f64;
            let h_prime = ctx.regularized_hessian();
            let mut diffs = Vec::new();
            for _ in 0..10 {
                let w_hat = random(n, m, &mut rng);
                // Direct: ‖(W − Ŵ)X‖² + ridge/2·‖W − Ŵ‖² + λγ/2·‖Ŵ‖², by loops.
                let mut direct = 0.0;
                for i in 0..n {
                    for c in 0..p {
                        let s: f64 = (0..m).map(|j| (w[(i, j)] - w_hat[(i, j)]) * x[(j, c)]).sum();
                        direct += s * s;
                    }
                    for j in 0..m {
                        let d = w[(i, j)] - w_hat[(i, j)];
                        direct += 0.5 * ridge * d * d + 0.5 * lambda * gamma * w_hat[(i, j)].powi(2);
                    }
                }
                let mut square = 0.0;
                for i in 0..n {
                    let a: Vec<f64> = (0..m).map(|j| ctx.w_prime[(i, j)] - w_hat[(i, j)]).collect();
                    for r in 0..m {
                        for c in 0..m {
                            square += 0.5 * a[r] * h_prime[(r, c)] * a[c];
                        }
                    }
                }
                diffs.push((direct - square, direct.abs().max(square.abs())));
            }
            let mean = diffs.iter().map(|d| d.0).sum::<f64>() / 10.0;
            let sd = (diffs.iter().map(|d| (d.0 - mean).powi(2)).sum::<f64>() / 10.0).sqrt();
            let mag = diffs.iter().map(|d| d.1).fold(0.0, f64::max);
            worst = worst.max(sd / mag);
        }
        worst
    });
    outcome(
        worst <= 1e-6 && within(t, 1.0),
        format!("worst relative spread {worst:.2e} (limit 1e-6), {:.0} ms", t.as_secs_f64() * 1e3),
    )
}

struct RowCase {
    h_prime: DenseMatrix,
    chol: DenseMatrix,
    w0: Vec<f64>,
    prefix: Vec<f64>,
}

fn row_cases(seed: u64, count: usize) -> Vec<RowCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let m = rng.gen_range(2..=8);
            let h_prime = random_spd(m, &mut rng);
            let chol = inverse_upper_cholesky(&h_prime).unwrap();
            let w0: Vec<f64> = (0..m).map(|_| normal(&mut rng)).collect();
            let j = rng.gen_range(1..m);
            let prefix = (0..j).map(|t| (w0[t] * 2.0).round() / 2.0 + 0.1 * normal(&mut rng)).collect();
            RowCase {
                h_prime,
                chol,
                w0,
                prefix,
            }
        })
        .collect()
}

// 2. After the sequential updates the suffix is the constrained minimizer.
fn optimal_compensation() -> Outcome {
    let cases = row_cases(2, 500);
    let (worst, t) = timed(|| {
        let mut worst = 0.0f64;
        for c in &cases {
            let mut row = c.w0.clone();
            for (j, &v) in c.prefix.iter().enumerate() {
                obs_update_row(&mut row, j, v, &c.chol);
            }
            let exact = constrained_quadratic_minimizer(&c.w0, &c.h_prime, &c.prefix).unwrap();
            for (a, b) in row[c.prefix.len()..].iter().zip(&exact) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
        worst
    });
    outcome(
        worst <= 1e-8 && within(t, 1.0),
        format!("max suffix deviation {worst:.2e} (limit 1e-8), {:.0} ms", t.as_secs_f64() * 1e3),
    )
}

// 3. The reported loss increase equals the direct difference of quadratic losses.
fn loss_increase_formula() -> Outcome {
    let cases = row_cases(3, 500);
    let (worst, t) = timed(|| {
        let mut worst = 0.0f64;
        for c in &cases {
            let mut row = c.w0.clone();
            for (j, &v) in c.prefix.iter().enumerate() {
                let before = row_quadratic_loss(&c.w0, &row, &c.h_prime);
                let reported = obs_update_row(&mut row, j, v, &c.chol);
                let after = row_quadratic_loss(&c.w0, &row, &c.h_prime);
                let direct = after - before;
                worst = worst.max((reported - direct).abs() / direct.abs().max(after.abs()).max(1e-12));
            }
        }
        worst
    });
    outcome(
        worst <= 1e-8 && within(t, 1.0),
        format!("max relative error {worst:.2e} (limit 1e-8), {:.0} ms", t.as_secs_f64() * 1e3),
    )
}

// 4. Inverse-based and Cholesky-based updates agree.
fn cholesky_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (worst, t) = timed(|| {
        let (mut worst_update, mut worst_diag) = (0.0f64, 0.0f64);
        for _ in 0..200 {
            let m = rng.gen_range(1..=8);
            let h_prime = random_spd(m, &mut rng);
            let chol = inverse_upper_cholesky(&h_prime).unwrap();
            for j in 0..m {
                let inv = trailing_inverse(&h_prime, j).unwrap();
                let cjj = chol[(j, j)];
                worst_diag = worst_diag.max(rel(inv[(0, 0)], cjj * cjj));
                let mut row: Vec<f64> = (0..m).map(|_| normal(&mut rng)).collect();
                let value = row[j] + normal(&mut rng);
                let err = row[j] - value;
                let before = row.clone();
                obs_update_row(&mut row, j, value, &chol);
                let (update, _) = obs_update_via_inverse(&h_prime, j, err).unwrap();
                for (c, u) in update.iter().enumerate() {
                    let ours = row[j + 1 + c] - before[j + 1 + c];
                    worst_update = worst_update.max((ours - u).abs() / u.abs().max(1.0));
                }
            }
        }
        (worst_update, worst_diag)
    });
    outcome(
        worst.0 <= 1e-10 && worst.1 <= 1e-10 && within(t, 1.0),
        format!(
            "update deviation {:.2e}, diagonal deviation {:.2e} (limits 1e-10), {:.0} ms",
            worst.0,
            worst.1,
            t.as_secs_f64() * 1e3
        ),
    )
}

// 5. Coded size tracks information content; decoding is lossless.
fn coder_achievability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ((bound_ok, worst_excess, roundtrip_ok, fuzzed), t) = timed(|| {
        let mut bound_ok = true;
        let mut worst_excess = f64::NEG_INFINITY;
        for s in 0..50 {
            let kind = ModelKind::ALL[s % 3];
            let k = rng.gen_range(2..=40);
            let p_zero = rng.gen::<f64>();
            let symbols: Vec<u32> = (0..10_000)
                .map(|_| {
                    if rng.gen::<f64>() < p_zero {
                        (k / 2) as u32
                    } else {
                        rng.gen_range(0..k as u32)
                    }
                })
                .collect();
            let make = || match kind {
                ModelKind::StaticHistogram => {
                    let counts: Vec<u32> = (0..k).map(|i| 1 + (i as u32 * 13) % 17).collect();
                    init_model(kind, k, Some(&counts)).unwrap()
                }
                _ => init_model(kind, k, None).unwrap(),
            };
            let info = information_content(&symbols, make());
            let payload = encode(&symbols, make()).unwrap();
            let excess = payload.bits() as f64 - info;
            worst_excess = worst_excess.max(excess / (64.0 + 1e-3 * info));
            bound_ok &= excess >= 0.0 && excess <= 64.0 + 1e-3 * info;
            bound_ok &= decode(&payload, make(), k).unwrap() == symbols;
        }
        let mut roundtrip_ok = true;
        let mut fuzzed = 0usize;
        while fuzzed < 1_000_000 {
            let kind = ModelKind::ALL[fuzzed / 50_000 % 3];
            let k = rng.gen_range(2..=64);
            let len = 50_000;
            let symbols: Vec<u32> = (0..len)
                .map(|i| match i % 7 {
                    0 => rng.gen_range(0..k as u32),
                    1..=3 => (k / 2) as u32,
                    _ => ((k / 2) as u32 + rng.gen_range(0..3)).min(k as u32 - 1),
                })
                .collect();
            let make = || match kind {
                ModelKind::StaticHistogram => init_model(kind, k, Some(&vec![1; k])).unwrap(),
                _ => init_model(kind, k, None).unwrap(),
            };
            let payload = encode(&symbols, make()).unwrap();
            roundtrip_ok &= decode(&payload, make(), k).map(|d| d == symbols).unwrap_or(false);
            fuzzed += len;
        }
        (bound_ok, worst_excess, roundtrip_ok, fuzzed)
    });
    outcome(
        bound_ok && roundtrip_ok && within(t, 10.0),
        format!(
            "50 sequences within [0, 64 + 0.001·info] (worst at {:.2} of bound), {fuzzed} fuzzed symbols {}, {:.0} ms",
            worst_excess,
            if roundtrip_ok { "round-trip exactly" } else { "FAILED to round-trip" },
            t.as_secs_f64() * 1e3
        ),
    )
}

// 6. Reductions to round-to-nearest and to the OPTQ reference.
fn reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ((rtn_ok, rtn_cases, worst_optq, worst_loss), t) = timed(|| {
        let mut rtn_ok = true;
        let mut rtn_cases = 0;
        for _ in 0..20 {
            let n = rng.gen_range(1..12);
            let m = rng.gen_range(1..12);
            let w = random(n, m, &mut rng);
            let h = DenseMatrix::from_fn(m, m, |a, b| if a == b { 0.1 + rng.gen::<f64>() * 5.0 } else { 0.0 });
            for k in [3, 4, 9] {
                for kind in ModelKind::ALL {
                    for scan in ScanOrder::ALL {
                        let config = CompressionConfig {
                            lambda: 0.0,
                            grid_size: k,
                            scan_order: scan,
                            model_kind: kind,
                            damping_delta: 0.0,
                            gamma_mode: GammaMode::Standard,
                        };
                        let ours = compress_layer(&w, &h, &config).unwrap();
                        let grid = build_grid(&w, k).unwrap();
                        let base = encode_result(rtn_layer(&w, &grid, scan, kind).unwrap()).unwrap();
                        rtn_ok &= ours.payload == base.payload && ours.result.quantized == base.result.quantized;
                        rtn_cases += 1;
                    }
                }
            }
        }
        let mut worst_optq = 0.0f64;
        let mut worst_loss = 0.0f64;
        for _ in 0..50 {
            let n = rng.gen_range(1..10);
            let m = rng.gen_range(1..16);
            let w = random(n, m, &mut rng);
            let x = random(m, rng.gen_range(1..2 * m + 2), &mut rng);
            let h = {
                let mut h = x.matmul_transposed(&x).unwrap();
                h.scale(2.0);
                h
            };
            let grid = build_grid(&w, 2 * rng.gen_range(1..8) + 1).unwrap();
            let config = CompressionConfig {
                lambda: 0.0,
                damping_delta: 1e-2,
                ..CompressionConfig::default()
            };
            let ours = quantize_layer(&w, &h, &grid, &config).unwrap();
            let (reference, ref_loss) = optq_reference(&w, &h, &grid, 1e-2).unwrap();
            worst_optq = worst_optq.max(ours.quantized.dequantize().max_abs_diff(&reference.dequantize()));
            worst_loss = worst_loss.max(rel(ours.quadratic_loss_delta, ref_loss));
        }
        (rtn_ok, rtn_cases, worst_optq, worst_loss)
    });
    outcome(
        rtn_ok && worst_optq <= 1e-9 && worst_loss <= 1e-9 && within(t, 5.0),
        format!(
            "{rtn_cases} diagonal cases byte-identical to RTN: {rtn_ok}; OPTQ reference entry deviation {worst_optq:.2e}, loss deviation {worst_loss:.2e} (limits 1e-9), {:.0} ms",
            t.as_secs_f64() * 1e3
        ),
    )
}

// 7. Greedy never beats exhaustive search and stays close to it.
fn greedy_vs_exhaustive() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ((never_below, geo_mean, worst), t) = timed(|| {
        let mut never_below = true;
        let mut log_sum = 0.0;
        let mut worst = 1.0f64;
        for inst in 0..100 {
            let (n, m) = if inst % 2 == 0 { (1, 4) } else { (2, 2) };
            let w = random(n, m, &mut rng);
            let x = random(m, 8, &mut rng);
            let mut h = x.matmul_transposed(&x).unwrap();
            h.scale(2.0);
            let lambda = 10f64.powf(rng.gen_range(-2.0..1.0));
            let grid = build_grid(&w, 3).unwrap();
            let config = CompressionConfig {
                lambda,
                grid_size: 3,
                scan_order: ScanOrder::RowMajor,
                model_kind: ModelKind::AdaptiveLaplace,
                damping_delta: 0.0,
                gamma_mode: GammaMode::Standard,
            };
            let ours = quantize_layer(&w, &h, &grid, &config).unwrap();
            let spec = ModelSpec::adaptive(ModelKind::AdaptiveLaplace, 3);
            let greedy = evaluate_objective(&w, &x, &ours.quantized, lambda, &spec).unwrap();
            let (_, best) = brute_force_minimize(&w, &x, &grid, lambda, &spec, ScanOrder::RowMajor).unwrap();
            never_below &= greedy.total >= best.total * (1.0 - 1e-12);
            let ratio = greedy.total / best.total;
            log_sum += ratio.ln();
            worst = worst.max(ratio);
        }
        (never_below, (log_sum / 100.0).exp(), worst)
    });
    outcome(
        never_below && geo_mean <= 1.25 && within(t, 30.0),
        format!(
            "greedy >= exhaustive in all 100: {never_below}; geometric-mean ratio {geo_mean:.4} (limit 1.25), worst {worst:.3}, {:.0} ms",
            t.as_secs_f64() * 1e3
        ),
    )
}

struct FixtureSweep {
    train_accuracy: f64,
    float_accuracy: f64,
    points: Vec<SweepPoint>,
    elapsed: Duration,
}

fn fixture_sweep() -> FixtureSweep {
    let t0 = Instant::now();
    let f = build_fixture(&FixtureConfig::default()).unwrap();
    let plan = plan_layers(&f.model, &[]).unwrap();
    let hessians = compute_hessians(&f.calib, &plan).unwrap();
    let inputs = SweepInputs {
        model: &f.model,
        plan: &plan,
        hessians: &hessians,
        calib: &f.calib,
        test: Some(&f.test),
    };
    let mut grid = SweepGrid {
        methods: vec![Method::Cerwu, Method::CerwuGammaZero, Method::Rtn],
        lambdas: default_lambdas(),
        grid_sizes: vec![5, 9, 17, 33],
        scan_orders: ScanOrder::ALL.to_vec(),
        model_kinds: vec![ModelKind::ContextAdaptive],
        ..SweepGrid::default()
    };
    let mut points = run_sweep(&inputs, &grid).unwrap();
    // λ = 0 ablation, kept apart from the λ > 0 runs by its λ value.
    grid.methods = vec![Method::Cerwu];
    grid.lambdas = vec![0.0];
    points.extend(run_sweep(&inputs, &grid).unwrap());
    FixtureSweep {
        train_accuracy: f.train_accuracy,
        float_accuracy: f.test_accuracy,
        points,
        elapsed: t0.elapsed(),
    }
}

fn rate_at_99(s: &FixtureSweep, keep: impl Fn(&SweepPoint) -> bool) -> Option<f64> {
    let pts: Vec<SweepPoint> = s.points.iter().filter(|p| keep(p)).cloned().collect();
    min_rate_at_accuracy(&pts, 0.99 * s.float_accuracy)
}

fn cerwu_points(p: &SweepPoint) -> bool {
    p.method == Method::Cerwu && p.lambda > 0.0
}

// 8. Rate at 99 % accuracy: CERWU at least 10 % below RTN + entropy coding.
fn rd_dominance(s: &FixtureSweep) -> Outcome {
    let ours = rate_at_99(s, cerwu_points);
    let rtn = rate_at_99(s, |p| p.method == Method::Rtn);
    let failed = s.points.iter().filter(|p| !p.is_ok()).count();
    let pass = match (ours, rtn) {
        (Some(a), Some(b)) => a <= 0.9 * b,
        _ => false,
    };
    outcome(
        pass && s.train_accuracy >= 0.9 && failed == 0 && within(s.elapsed, 300.0),
        format!(
            "train accuracy {:.4}, float test accuracy {:.4}; bpw at 99%: CERWU {} vs RTN+EC {} ({} points, {failed} failed, {:.1} s)",
            s.train_accuracy,
            s.float_accuracy,
            fmt_rate(ours),
            fmt_rate(rtn),
            s.points.len(),
            s.elapsed.as_secs_f64()
        ),
    )
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "none".into(), |v| format!("{v:.4}"))
}

// 9. Ablations order as CERWU ≤ γ=0 ≤ λ=0 within a 2 % band.
fn ablation_ordering(s: &FixtureSweep) -> Outcome {
    let full = rate_at_99(s, cerwu_points);
    let gamma0 = rate_at_99(s, |p| p.method == Method::CerwuGammaZero);
    let lambda0 = rate_at_99(s, |p| p.method == Method::Cerwu && p.lambda == 0.0);
    let pass = match (full, gamma0, lambda0) {
        (Some(a), Some(b), Some(c)) => a <= 1.02 * b && b <= 1.02 * c,
        _ => false,
    };
    outcome(
        pass,
        format!(
            "bpw at 99%: CERWU {}, CERWU-gamma0 {}, CERWU-lambda0 {}",
            fmt_rate(full),
            fmt_rate(gamma0),
            fmt_rate(lambda0)
        ),
    )
}

// 10. Doubling m costs at most 10×; exactly n·m·k candidate evaluations.
fn complexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let k = 17;
    let mut run = |m: usize| {
        let w = random(m, m, &mut rng);
        let x = random(m, 2 * m, &mut rng);
        let mut h = x.matmul_transposed(&x).unwrap();
        h.scale(2.0);
        let grid = build_grid(&w, k).unwrap();
        let config = CompressionConfig {
            grid_size: k,
            ..CompressionConfig::default()
        };
        let mut best = Duration::MAX;
        let mut evals = 0;
        for _ in 0..3 {
            let (r, t) = timed(|| quantize_layer(&w, &h, &grid, &config).unwrap());
            best = best.min(t);
            evals = r.candidate_evaluations;
        }
        (best, evals == (m * m * k) as u64)
    };
    let (small, ok_small) = run(160);
    let (large, ok_large) = run(320);
    let ratio = large.as_secs_f64() / small.as_secs_f64();
    outcome(
        ratio <= 10.0 && ok_small && ok_large,
        format!(
            "m=160: {:.1} ms, m=320: {:.1} ms, ratio {ratio:.2} (limit 10); candidate count n·m·k: {}",
            small.as_secs_f64() * 1e3,
            large.as_secs_f64() * 1e3,
            ok_small && ok_large
        ),
    )
}

// 11. A 10⁶-parameter model decodes in under 2 s on one thread.
fn decompression_speed() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = TensorFile::new();
    for l in 0..4 {
        let w: Vec<f32> = (0..500 * 500).map(|_| (0.05 * normal(&mut rng)) as f32).collect();
        model.insert(format!("layer{l}.weight"), Tensor::f32(vec![500, 500], w).unwrap());
        model.insert(format!("layer{l}.bias"), Tensor::f32(vec![500], vec![0.0; 500]).unwrap());
    }
    let plan = plan_layers(&model, &[]).unwrap();
    let settings = Settings {
        method: Method::Rtn,
        grid_size: 17,
        ..Settings::default()
    };
    let out = compress_model(&model, &plan, &[], &settings).unwrap();
    let bytes = out.model.to_bytes().unwrap();
    let params = out.model.size_report().quantized_params;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (decoded, t) = pool.install(|| timed(|| decompress_model(&CompressedModel::from_bytes(&bytes).unwrap()).unwrap()));
    let exact = plan
        .iter()
        .zip(&out.reconstructed)
        .all(|(l, w)| decoded.get(&l.name).unwrap().to_matrix().unwrap() == DenseMatrix::from_f32(w.rows(), w.cols(), &w.to_f32()).unwrap());
    outcome(
        params == 1_000_000 && exact && within(t, 2.0),
        format!(
            "{params} params ({} bytes) decoded single-threaded in {:.0} ms (limit 2000), exact: {exact}",
            bytes.len(),
            t.as_secs_f64() * 1e3
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "completing the square", completing_the_square()),
        (2, "optimal compensation", optimal_compensation()),
        (3, "loss increase formula", loss_increase_formula()),
        (4, "inverse vs Cholesky update", cholesky_equivalence()),
        (5, "coder achievability", coder_achievability()),
        (6, "reduction properties", reductions()),
        (7, "greedy vs exhaustive", greedy_vs_exhaustive()),
    ];
    let sweep = fixture_sweep();
    results.push((8, "rate-distortion dominance", rd_dominance(&sweep)));
    results.push((9, "ablation ordering", ablation_ordering(&sweep)));
    results.push((10, "complexity", complexity()));
    results.push((11, "decompression speed", decompression_speed()));

    let mut failed = 0;
    for (id, name, o) in &results {
        println!(
            "criterion {id:>2} {:<28} {}  {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
