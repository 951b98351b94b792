use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use cerwu::engine::{quantize_layer, CompressionConfig, GammaMode};
use cerwu::entropy::ModelKind;
use cerwu::fixture::{build_fixture, FixtureConfig};
use cerwu::grid::{build_grid, ScanOrder};
use cerwu::linalg::{accumulate_hessian, DEFAULT_DAMPING};
use cerwu::model_io::{CompressedModel, TensorFile};
use cerwu::oracle::{brute_force_minimize, evaluate_objective};
use cerwu::pipeline::{
    compress_model, decompress_model, evaluate, layer_activations, load_or_compute_hessians, plan_layers,
    DenseNetwork, LabeledData, Method, Settings,
};
use cerwu::sweep::{default_lambdas, pareto_front, read_csv, run_sweep, write_csv, SweepGrid, SweepInputs};
use cerwu::Error;

#[derive(Parser)]
#[command(name = "cerwu", version, about = "Rate-distortion optimized post-training weight compression")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize and entropy-code every weight matrix of a model.
    Compress(CompressArgs),
    /// Decode a compressed model back into a tensor file.
    Decompress {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Layer losses, bits per weight and optional accuracy of a compressed model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        compressed: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Compress and evaluate a grid of settings, one CSV row each.
    Sweep(SweepArgs),
    /// Reduce a sweep CSV to its Pareto front.
    Pareto {
        #[arg(long = "in", value_name = "CSV")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only consider rows of this method.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Write the synthetic model, calibration and test files.
    Fixture {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = FixtureConfig::default().seed)]
        seed: u64,
    },
    /// Exhaustive search against the greedy engine on one tiny layer.
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DAMPING)]
    delta: f64,
    /// Tensors to store unquantized even though they have rank >= 2.
    #[arg(long, value_delimiter = ',')]
    keep_raw: Vec<String>,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, short = 'k', default_value_t = 17)]
    grid_size: usize,
    #[arg(long, default_value = "row")]
    scan: ScanOrder,
    #[arg(long, default_value = "context")]
    model_kind: ModelKind,
    #[arg(long, default_value = "cerwu")]
    method: Method,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    csv: PathBuf,
    /// Comma-separated values, or "default" for 1e-8 ... 1e-1 at half-decade steps.
    #[arg(long, default_value = "default")]
    lambdas: String,
    #[arg(long, value_delimiter = ',', default_value = "5,9,17,33")]
    grid_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "row,column")]
    scan_orders: Vec<ScanOrder>,
    #[arg(long, value_delimiter = ',', default_value = "context")]
    model_kinds: Vec<ModelKind>,
    #[arg(long, value_delimiter = ',', default_value = "cerwu")]
    methods: Vec<Method>,
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    layer: String,
    #[arg(long, short = 'k', default_value_t = 3)]
    grid_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, default_value = "adaptive")]
    model_kind: ModelKind,
    #[arg(long, default_value = "row")]
    scan: ScanOrder,
    #[arg(long, default_value_t = DEFAULT_DAMPING)]
    delta: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> cerwu::Result<()> {
    match command {
        Command::Compress(args) => compress(args),
        Command::Decompress { input, out } => {
            let t0 = Instant::now();
            let model = CompressedModel::read(&input)?;
            decompress_model(&model)?.write(&out)?;
            println!(
                "decompressed {} layers to {} in {:.1} ms",
                model.layers.len(),
                out.display(),
                ms(t0)
            );
            Ok(())
        }
        Command::Eval {
            model,
            compressed,
            calib,
            test,
        } => eval(&model, &compressed, &calib, test.as_deref()),
        Command::Sweep(args) => sweep(args),
        Command::Pareto { input, out, method } => {
            let mut points = read_csv(File::open(&input)?)?;
            if let Some(m) = method {
                points.retain(|p| p.method == m);
            }
            let front = pareto_front(&points);
            match out {
                Some(path) => write_csv(BufWriter::new(File::create(path)?), &front),
                None => write_csv(io::stdout().lock(), &front),
            }
        }
        Command::Fixture { out_dir, seed } => fixture(&out_dir, seed),
        Command::Oracle(args) => oracle(args),
    }
}

fn ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

fn compress(args: CompressArgs) -> cerwu::Result<()> {
    let t0 = Instant::now();
    let model = TensorFile::read(&args.common.model)?;
    let plan = plan_layers(&model, &args.common.keep_raw)?;
    let (hessians, cache) = load_or_compute_hessians(&args.common.calib, &plan)?;
    eprintln!("{cache}");
    let settings = Settings {
        method: args.method,
        lambda: args.lambda,
        grid_size: args.grid_size,
        scan_order: args.scan,
        model_kind: args.model_kind,
        damping_delta: args.common.delta,
    };
    let out = compress_model(&model, &plan, &hessians, &settings)?;
    out.model.write(&args.out)?;
    for l in &out.layers {
        println!(
            "layer {}: {} params, {} bytes, {:.4} bpw, loss delta {:.6e}",
            l.name,
            l.params,
            l.record_bytes,
            l.bits_per_weight(),
            l.quadratic_loss_delta
        );
    }
    let size = out.model.size_report();
    println!(
        "total: {:.4} bpw over {} quantized params, file {} bytes, loss delta {:.6e}, {:.1} ms",
        size.bits_per_weight(),
        size.quantized_params,
        size.file_bytes,
        out.total_loss_delta(),
        ms(t0)
    );
    Ok(())
}

fn eval(model: &Path, compressed: &Path, calib: &Path, test: Option<&Path>) -> cerwu::Result<()> {
    let original = TensorFile::read(model)?;
    let compressed = CompressedModel::read(compressed)?;
    let calib = TensorFile::read(calib)?;
    let test = test.map(|p| TensorFile::read(p).and_then(|f| LabeledData::from_tensors(&f))).transpose()?;
    let ev = evaluate(&original, &compressed, &calib, test.as_ref())?;
    for (name, loss) in &ev.layer_losses {
        println!("layer {name}: loss {loss:.6e}");
    }
    println!("total loss {:.6e}", ev.total_loss());
    println!("bpw {:.4}", ev.bits_per_weight);
    if let (Some(acc), Some(data)) = (ev.accuracy, &test) {
        let float = DenseNetwork::from_tensors(&original)?.accuracy(data)?;
        println!("accuracy {acc:.4} (uncompressed {float:.4})");
    }
    Ok(())
}

fn parse_lambdas(s: &str) -> cerwu::Result<Vec<f64>> {
    if s.trim() == "default" {
        return Ok(default_lambdas());
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad lambda '{v}'")))
        })
        .collect()
}

fn sweep(args: SweepArgs) -> cerwu::Result<()> {
    let t0 = Instant::now();
    let model = TensorFile::read(&args.common.model)?;
    let calib = TensorFile::read(&args.common.calib)?;
    let plan = plan_layers(&model, &args.common.keep_raw)?;
    let (hessians, cache) = load_or_compute_hessians(&args.common.calib, &plan)?;
    eprintln!("{cache}");
    let test = args
        .test
        .as_deref()
        .map(|p| TensorFile::read(p).and_then(|f| LabeledData::from_tensors(&f)))
        .transpose()?;
    let grid = SweepGrid {
        methods: args.methods,
        lambdas: parse_lambdas(&args.lambdas)?,
        grid_sizes: args.grid_sizes,
        scan_orders: args.scan_orders,
        model_kinds: args.model_kinds,
        damping_delta: args.common.delta,
    };
    let inputs = SweepInputs {
        model: &model,
        plan: &plan,
        hessians: &hessians,
        calib: &calib,
        test: test.as_ref(),
    };
    let points = run_sweep(&inputs, &grid)?;
    let mut w = BufWriter::new(File::create(&args.csv)?);
    write_csv(&mut w, &points)?;
    w.flush()?;
    let failed = points.iter().filter(|p| !p.is_ok()).count();
    println!(
        "{} configurations ({} failed) written to {} in {:.1} ms",
        points.len(),
        failed,
        args.csv.display(),
        ms(t0)
    );
    Ok(())
}

fn fixture(dir: &Path, seed: u64) -> cerwu::Result<()> {
    std::fs::create_dir_all(dir)?;
    let f = build_fixture(&FixtureConfig {
        seed,
        ..FixtureConfig::default()
    })?;
    f.model.write(dir.join("model.cwtf"))?;
    f.calib.write(dir.join("calib.cwtf"))?;
    f.test.to_tensors()?.write(dir.join("test.cwtf"))?;
    println!(
        "fixture written to {}: train accuracy {:.4}, test accuracy {:.4}",
        dir.display(),
        f.train_accuracy,
        f.test_accuracy
    );
    Ok(())
}

fn oracle(args: OracleArgs) -> cerwu::Result<()> {
    let model = TensorFile::read(&args.model)?;
    let calib = TensorFile::read(&args.calib)?;
    let plan = plan_layers(&model, &[])?;
    let layer = plan
        .iter()
        .find(|l| l.name == args.layer)
        .ok_or_else(|| Error::InvalidArgument(format!("no quantizable layer '{}'", args.layer)))?;
    let x = layer_activations(&calib, layer)?;
    let h = accumulate_hessian(std::slice::from_ref(&x))?;
    let grid = build_grid(&layer.weights, args.grid_size)?;
    let config = CompressionConfig {
        lambda: args.lambda,
        grid_size: args.grid_size,
        scan_order: args.scan,
        model_kind: args.model_kind,
        damping_delta: args.delta,
        gamma_mode: GammaMode::Standard,
    };
    let greedy = quantize_layer(&layer.weights, &h, &grid, &config)?;
    let (_, best) = brute_force_minimize(&layer.weights, &x, &grid, args.lambda, &greedy.model, args.scan)?;
    let ours = evaluate_objective(&layer.weights, &x, &greedy.quantized, args.lambda, &greedy.model)?;
    println!(
        "exhaustive: distortion {:.6e} rate {:.3} total {:.6e}",
        best.distortion, best.rate_bits, best.total
    );
    println!(
        "greedy:     distortion {:.6e} rate {:.3} total {:.6e} (ratio {:.4})",
        ours.distortion,
        ours.rate_bits,
        ours.total,
        ours.total / best.total
    );
    Ok(())
}
