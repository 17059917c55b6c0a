//! `sliced-ot`: sliced and max-sliced Wasserstein distances from the command
//! line.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use sliced_ot::experiments::{run_experiment, write_outputs, RunOptions, EXPERIMENTS};
use sliced_ot::max_sliced::{dense_grid_oracle, lipo_maximize, subgrad_descent, Init, SubgradConfig};
use sliced_ot::robust::{resilience_report, spectral_filter, AscentConfig, FilterConfig, DEFAULT_THRESHOLD_MULT, MAX_GUARANTEED_EPS};
use sliced_ot::{estimate_swp, rng, BenchmarkModel, Error, PointCloud};

#[derive(Parser, Debug)]
#[command(name = "sliced-ot", version, about = "Sliced and max-sliced Wasserstein distances")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SLICED_OT_WORKERS", value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo sliced W_p between two point clouds.
    Sw(SwArgs),
    /// Max-sliced W_p by projected subgradient, LIPO or a dense grid.
    Msw(MswArgs),
    /// Spectral filtering of a contaminated point cloud.
    Robust(RobustArgs),
    /// Runs a named experiment and writes curve CSVs plus a manifest.
    Experiment(ExperimentArgs),
}

/// Two point clouds, from files or sampled from a benchmark model.
#[derive(Args, Debug)]
struct PairInput {
    /// Headerless CSV files, one point per row.
    #[arg(num_args = 0..=2)]
    inputs: Vec<PathBuf>,
    /// Treat the last column of each input as a nonnegative weight
    /// (normalized to sum to one).
    #[arg(long)]
    weighted: bool,
    /// Sample both clouds from benchmark model 1, 2 or 3 instead of reading files.
    #[arg(long, conflicts_with = "inputs", requires_all = ["d", "n"])]
    model: Option<u8>,
    /// Dimension for --model.
    #[arg(long)]
    d: Option<usize>,
    /// Sample size per cloud for --model.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct SwArgs {
    #[command(flatten)]
    input: PairInput,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Number of random directions.
    #[arg(long, default_value_t = 1000)]
    m: usize,
    #[arg(long)]
    seed: u64,
    /// Directory for report.json and per-direction values.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Subgrad,
    Lipo,
    Grid,
}

#[derive(Args, Debug)]
struct MswArgs {
    #[command(flatten)]
    input: PairInput,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, value_enum, default_value_t = Method::Subgrad)]
    method: Method,
    /// Subgradient steps.
    #[arg(long = "T", default_value_t = 1000)]
    iterations: usize,
    /// LIPO evaluation budget.
    #[arg(long, default_value_t = 500)]
    budget: usize,
    /// Grid resolution (angles at d=2, lattice side at d=3).
    #[arg(long, default_value_t = 10_000)]
    resolution: usize,
    /// Subgradient start: mean-gap, random, or comma-separated coordinates.
    #[arg(long, default_value = "mean-gap")]
    init: String,
    /// Step scale c in c/sqrt(t+1).
    #[arg(long)]
    step_scale: Option<f64>,
    #[arg(long)]
    seed: u64,
    /// Directory for result.json and the optimizer trace.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RobustArgs {
    /// Headerless CSV of points to filter.
    input: PathBuf,
    #[arg(long)]
    weighted: bool,
    /// Contamination fraction.
    #[arg(long)]
    eps: f64,
    /// Covariance bound of the clean distribution.
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_MULT)]
    threshold_mult: f64,
    /// Allow eps outside (0, 1/12].
    #[arg(long)]
    force: bool,
    /// Clean reference cloud; adds mean-gap and max-sliced W_1 comparisons.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Ascent steps for the max-sliced W_1 comparison.
    #[arg(long = "T", default_value_t = 200)]
    iterations: usize,
    #[arg(long)]
    seed: u64,
    /// Directory for weights.csv and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// One of mc-complexity, sample-complexity, rates, msw-bench, robust.
    name: String,
    /// JSON config; omitted keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Record wall-clock times in the manifest (breaks byte-reproducibility).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numerical(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) | Error::TooLarge(_) => CliError::Numerical(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn read_cloud(path: &Path, weighted: bool) -> CliResult<PointCloud> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_error(path, e))?;
        let row = record
            .iter()
            .map(|field| field.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| io_error(path, format!("line {}: {e}", line + 1)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(io_error(path, "no points"));
    }
    if !weighted {
        return Ok(PointCloud::from_rows(&rows)?);
    }
    let mut weights = Vec::with_capacity(rows.len());
    for row in &mut rows {
        if row.len() < 2 {
            return Err(io_error(path, "--weighted needs at least one coordinate and a weight column"));
        }
        weights.push(row.pop().expect("nonempty row"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| *w < 0.0) {
        return Err(io_error(path, "weights must be nonnegative with a positive finite sum"));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    let cloud = PointCloud::from_rows(&rows)?;
    Ok(PointCloud::with_weights(cloud.points().clone(), weights)?)
}

fn load_pair(input: &PairInput, seed: u64) -> CliResult<(PointCloud, PointCloud)> {
    if let Some(id) = input.model {
        let (d, n) = (input.d.expect("required by clap"), input.n.expect("required by clap"));
        let (mu, nu) = BenchmarkModel::from_id(id)?.pair(d, seed)?;
        let base = rng::derive_seed(seed, &[0x5a3]);
        return Ok((mu.sample(n, &mut rng::stream(base, 0))?, nu.sample(n, &mut rng::stream(base, 1))?));
    }
    match input.inputs.as_slice() {
        [a, b] => Ok((read_cloud(a, input.weighted)?, read_cloud(b, input.weighted)?)),
        _ => Err(CliError::Usage("expected two input files or --model with --d and --n".into())),
    }
}

/// Rebuilds objects with sorted keys at every level.
fn sorted(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sorted(v))).collect::<Map<_, _>>())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sorted).collect()),
        other => other,
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let v = sorted(serde_json::to_value(value).expect("serializable output"));
    let mut text = serde_json::to_string_pretty(&v).expect("serializable output");
    text.push('\n');
    text
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn cmd_sw(args: &SwArgs) -> CliResult<String> {
    let (x, y) = load_pair(&args.input, args.seed)?;
    let mut report = estimate_swp(&x, &y, args.p, args.m, args.seed)?;
    let per_projection = std::mem::take(&mut report.per_projection);
    let text = to_json(&report);
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        write_file(&dir.join("report.json"), &text)?;
        let values: String = per_projection.iter().map(|v| format!("{v}\n")).collect();
        write_file(&dir.join("projections.csv"), &values)?;
    }
    Ok(text)
}

fn cmd_msw(args: &MswArgs) -> CliResult<String> {
    let (x, y) = load_pair(&args.input, args.seed)?;
    let mut out = Map::new();
    out.insert("method".into(), json!(format!("{:?}", args.method).to_lowercase()));
    out.insert("p".into(), json!(args.p));
    out.insert("seed".into(), json!(args.seed));
    let mut trace_csv = None;
    match args.method {
        Method::Subgrad => {
            let cfg = SubgradConfig {
                iterations: args.iterations,
                step_scale: args.step_scale,
                init: args.init.parse::<Init>()?,
                seed: args.seed,
            };
            let trace = subgrad_descent(&x, &y, args.p, &cfg)?;
            out.insert("theta".into(), json!(trace.returned_best.as_slice()));
            out.insert("value".into(), json!(trace.value_at_best));
            out.insert("best_index".into(), json!(trace.best_index));
            out.insert("sampled_index".into(), json!(trace.sampled_index));
            out.insert("sampled_theta".into(), json!(trace.returned_sampled));
            out.insert("value_at_sampled".into(), json!(trace.value_at_sampled));
            out.insert("step_scale".into(), json!(trace.step_scale));
            out.insert("iterations".into(), json!(args.iterations));
            out.insert("heuristic".into(), json!(trace.heuristic));
            let mut buf = Vec::new();
            trace.write_csv(&mut buf).expect("writing to memory");
            trace_csv = Some(String::from_utf8(buf).expect("ascii csv"));
        }
        Method::Lipo => {
            let res = lipo_maximize(&x, &y, args.p, args.budget, args.seed)?;
            out.insert("theta".into(), json!(res.theta.as_slice()));
            out.insert("value".into(), json!(res.value));
            out.insert("l_hat".into(), json!(res.state.l_hat));
            out.insert("evaluations".into(), json!(res.state.evaluated.len()));
            out.insert("proposals_tried".into(), json!(res.state.proposals_tried));
            let rows: String = res.state.best_so_far().iter().enumerate().map(|(k, v)| format!("{},{v}\n", k + 1)).collect();
            trace_csv = Some(format!("evaluations,best_value\n{rows}"));
        }
        Method::Grid => {
            if x.dim() > 3 {
                return Err(CliError::Usage(format!("grid method needs d <= 3, got d = {}", x.dim())));
            }
            let (theta, value) = dense_grid_oracle(&x, &y, args.p, args.resolution)?;
            out.insert("theta".into(), json!(theta.as_slice()));
            out.insert("value".into(), json!(value));
            out.insert("resolution".into(), json!(args.resolution));
        }
    }
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        if let Some(csv) = &trace_csv {
            let path = dir.join("trace.csv");
            write_file(&path, csv)?;
            out.insert("trace_path".into(), json!("trace.csv"));
        }
        write_file(&dir.join("result.json"), &to_json(&out))?;
    }
    Ok(to_json(&out))
}

fn cmd_robust(args: &RobustArgs) -> CliResult<String> {
    if !args.force && !(args.eps > 0.0 && args.eps <= MAX_GUARANTEED_EPS) {
        return Err(CliError::Usage(format!(
            "--eps must lie in (0, 1/12] (got {}); pass --force to run outside the guarantee regime",
            args.eps
        )));
    }
    let points = read_cloud(&args.input, args.weighted)?;
    let cfg = FilterConfig { epsilon: args.eps, sigma2: args.sigma2, threshold_mult: args.threshold_mult };
    let weights = spectral_filter(&points, &cfg)?;
    let filtered_mean = points.reweighted(weights.w.clone())?.mean();
    let mut out = Map::new();
    out.insert("epsilon".into(), json!(args.eps));
    out.insert("sigma2".into(), json!(args.sigma2));
    out.insert("threshold_mult".into(), json!(args.threshold_mult));
    out.insert("removed_mass".into(), json!(weights.removed_mass));
    out.insert("iterations".into(), json!(weights.iterations));
    out.insert("top_eigenvalue".into(), json!(weights.top_eigenvalue));
    out.insert("stop".into(), serde_json::to_value(weights.stop).expect("serializable"));
    out.insert("filtered_mean".into(), json!(filtered_mean));
    if let Some(w) = &weights.warning {
        out.insert("warning".into(), json!(w));
    }
    if let Some(path) = &args.reference {
        let reference = read_cloud(path, args.weighted)?;
        let report = resilience_report(&points, &weights, &reference, &AscentConfig::new(args.iterations, args.seed))?;
        out.insert("report".into(), serde_json::to_value(&report).expect("serializable"));
    }
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        let rows: String = weights.w.iter().map(|v| format!("{v}\n")).collect();
        write_file(&dir.join("weights.csv"), &rows)?;
        out.insert("weights_path".into(), json!("weights.csv"));
        write_file(&dir.join("report.json"), &to_json(&out))?;
    }
    Ok(to_json(&out))
}

fn cmd_experiment(args: &ExperimentArgs) -> CliResult<String> {
    if !EXPERIMENTS.contains(&args.name.as_str()) {
        return Err(CliError::Usage(format!("unknown experiment {:?}; expected one of {}", args.name, EXPERIMENTS.join(", "))));
    }
    let doc: Value = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            serde_json::from_str(&text).map_err(|e| io_error(path, e))?
        }
        None => json!({}),
    };
    let (output, resolved) = run_experiment(&args.name, &doc, args.seed, RunOptions { timing: args.timing })?;
    let manifest = write_outputs(&args.out, &output, &resolved, args.seed)?;
    Ok(to_json(&manifest))
}

fn run(cli: &Cli) -> CliResult<String> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers as usize)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    }
    match &cli.command {
        Command::Sw(a) => cmd_sw(a),
        Command::Msw(a) => cmd_msw(a),
        Command::Robust(a) => cmd_robust(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
