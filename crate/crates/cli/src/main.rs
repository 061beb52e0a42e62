//! `tarp`: simulate data, fit, benchmark and screen from the command line.
//!
//! Every failure prints a single JSON object on stderr:
//! `{"error": "<kind>", "message": "..."}`. Usage errors exit with 2, all
//! other failures with 1.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tarp::config::{apply_entries, parse_entries, render_config};
use tarp::data::{read_csv, read_prediction_rows, CsvOptions, ResponseColumn};
use tarp::ensemble::{Aggregation, Backend, DeltaSetting, TarpConfig};
use tarp::harness::{
    fit_and_write, run_benchmark, screen_report, write_benchmark, write_screen, write_simulation, DataSource,
    DatasetTable, ExperimentSpec,
};
use tarp::simgen::{generate, Scheme, SchemeSpec};
use tarp::TarpError;

#[derive(Parser)]
#[command(name = "tarp", version, about = "Targeted random projection regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated train/test pair with a JSON sidecar.
    Simulate(SimulateArgs),
    /// Fit on a training CSV and predict a test CSV.
    Fit(FitArgs),
    /// Repeat simulate + fit over many datasets and summarize.
    Benchmark(BenchmarkArgs),
    /// Draw screening masks and report selection frequencies.
    Screen(ScreenArgs),
}

#[derive(Args, Clone)]
struct SchemeArgs {
    /// ar1, block_diag, pcr_scheme or brownian_bridge.
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    p: usize,
    #[arg(long = "n-test", default_value_t = 100)]
    n_test: usize,
    #[arg(long = "n-active")]
    n_active: Option<usize>,
    #[arg(long = "noise-sd")]
    noise_sd: Option<f64>,
    /// Use a zero coefficient vector (pure-noise response).
    #[arg(long = "null-model")]
    null_model: bool,
}

impl SchemeArgs {
    fn spec(&self, seed: u64) -> Result<SchemeSpec, CliError> {
        let scheme = self
            .scheme
            .ok_or_else(|| CliError::usage("--scheme is required"))?;
        let mut spec = SchemeSpec::new(scheme, self.n, self.p, seed);
        spec.n_test = self.n_test;
        if let Some(k) = self.n_active {
            spec.n_active = k;
        }
        if let Some(s) = self.noise_sd {
            spec.noise_sd = s;
        }
        if self.null_model {
            spec.coef_value = 0.0;
        }
        Ok(spec)
    }
}

#[derive(Args, Clone, Default)]
struct TarpArgs {
    /// Key = value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_backend)]
    backend: Option<Backend>,
    /// Screening exponent, or "auto".
    #[arg(long, value_parser = parse_delta)]
    delta: Option<DeltaSetting>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Single replicate with fixed m (and psi for random projections).
    #[arg(long = "no-aggregate")]
    no_aggregate: bool,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long = "a-sigma")]
    a_sigma: Option<f64>,
    #[arg(long = "b-sigma")]
    b_sigma: Option<f64>,
    #[arg(long, value_parser = parse_aggregation)]
    aggregation: Option<Aggregation>,
}

impl TarpArgs {
    /// Defaults, then the config file, then flags.
    fn resolve(&self, seed: Option<u64>) -> Result<TarpConfig, CliError> {
        let mut cfg = TarpConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| CliError::from(TarpError::Io {
                path: path.clone(),
                source: e,
            }))?;
            cfg = apply_entries(&parse_entries(&text)?, &cfg)?;
        }
        if let Some(v) = self.backend {
            cfg.backend = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(v) = self.replicates {
            cfg.n_replicates = v;
        }
        if let Some(v) = self.level {
            cfg.level = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.m {
            cfg.m_range = Some((v, v));
        }
        if let Some(v) = self.psi {
            cfg.psi_range = (v, v);
        }
        if let Some(v) = self.kappa {
            cfg.kappa = v;
        }
        if let Some(v) = self.a_sigma {
            cfg.prior.a_sigma = v;
        }
        if let Some(v) = self.b_sigma {
            cfg.prior.b_sigma = v;
        }
        if let Some(v) = self.aggregation {
            cfg.aggregation = v;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if self.no_aggregate {
            if self.m.is_none() && cfg.m_range.is_none_or(|(a, b)| a != b) {
                return Err(CliError::usage("--no-aggregate needs --m"));
            }
            if cfg.backend != Backend::RisPcr && self.psi.is_none() && cfg.psi_range.0 != cfg.psi_range.1 {
                return Err(CliError::usage("--no-aggregate with a random projection needs --psi"));
            }
            cfg.n_replicates = 1;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Name of the response column.
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    tarp: TarpArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    scheme: SchemeArgs,
    /// Re-split this CSV per dataset instead of simulating.
    #[arg(long, conflicts_with = "scheme")]
    data: Option<PathBuf>,
    #[arg(long = "test-fraction", default_value_t = 0.25)]
    test_fraction: f64,
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long, default_value_t = 100)]
    datasets: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    label: Option<String>,
    #[command(flatten)]
    tarp: TarpArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScreenArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long, value_parser = parse_delta, default_value = "auto")]
    delta: DeltaSetting,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|e: TarpError| e.to_string())
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse().map_err(|e: TarpError| e.to_string())
}

fn parse_delta(s: &str) -> Result<DeltaSetting, String> {
    s.parse().map_err(|e: TarpError| e.to_string())
}

fn parse_aggregation(s: &str) -> Result<Aggregation, String> {
    s.parse().map_err(|e: TarpError| e.to_string())
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
    usage: bool,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: "usage",
            message: message.into(),
            usage: true,
        }
    }
}

impl From<TarpError> for CliError {
    fn from(e: TarpError) -> Self {
        CliError {
            kind: e.kind(),
            message: e.to_string(),
            usage: false,
        }
    }
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: &'a str,
}

fn report_error(e: &CliError) -> ExitCode {
    let body = serde_json::to_string(&ErrorJson {
        error: e.kind,
        message: &e.message,
    })
    .unwrap_or_else(|_| String::from("{\"error\":\"internal\"}"));
    eprintln!("{body}");
    ExitCode::from(if e.usage { 2 } else { 1 })
}

fn response_opts(name: &str) -> CsvOptions {
    CsvOptions {
        header_row: true,
        response: ResponseColumn::Name(name.to_string()),
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let spec = args.scheme.spec(args.seed)?;
    let sim = generate(&spec)?;
    print_paths(&write_simulation(&args.out, &spec, &sim)?);
    Ok(())
}

fn fit(args: FitArgs) -> Result<(), CliError> {
    let cfg = args.tarp.resolve(args.seed)?;
    let train = read_csv(&args.train, &response_opts(&args.response))?;
    let test = read_prediction_rows(&args.test, &response_opts(&args.response))?;
    if test.names != train.names() {
        return Err(TarpError::Dimension(format!(
            "test columns do not match training columns ({} vs {})",
            test.names.len(),
            train.p()
        ))
        .into());
    }
    let summary = fit_and_write(&args.out, &train, &test.x, test.y.as_ref(), &cfg)?;
    write_config_echo(&args.out, &summary.config)?;
    println!("{}", args.out.join("predictions.csv").display());
    println!("{}", args.out.join("summary.json").display());
    Ok(())
}

fn write_config_echo(dir: &Path, cfg: &TarpConfig) -> Result<(), CliError> {
    let path = dir.join("config.txt");
    fs::write(&path, render_config(cfg)).map_err(|e| CliError::from(TarpError::Io { path, source: e }))
}

fn benchmark(args: BenchmarkArgs) -> Result<(), CliError> {
    let mut tarp = args.tarp.resolve(None)?;
    let workers = tarp.workers;
    // Datasets are the parallel unit; each fit runs inside the same pool.
    tarp.workers = 1;
    let source = match (&args.data, args.scheme.scheme) {
        (Some(path), _) => {
            let data = read_csv(path, &response_opts(&args.response))?;
            DataSource::Table {
                data: DatasetTable::from_dataset(path.clone(), &data),
                test_fraction: args.test_fraction,
            }
        }
        (None, Some(_)) => DataSource::Scheme(args.scheme.spec(0)?),
        (None, None) => return Err(CliError::usage("benchmark needs --scheme or --data")),
    };
    let label = args.label.unwrap_or_else(|| {
        let mut l = tarp.backend.name().to_string();
        if args.tarp.no_aggregate {
            l.push_str("-single");
        }
        l
    });
    let spec = ExperimentSpec {
        label,
        source,
        n_datasets: args.datasets,
        seed: args.seed,
        tarp,
        workers,
    };
    let report = run_benchmark(&spec)?;
    let paths = write_benchmark(&args.out, &report)?;
    write_config_echo(&args.out, &spec.tarp)?;
    print_paths(&paths);
    Ok(())
}

fn screen(args: ScreenArgs) -> Result<(), CliError> {
    let data = read_csv(&args.data, &response_opts(&args.response))?;
    let delta = args.delta.resolve(data.n(), data.p());
    let report = screen_report(&data, delta, args.replicates, args.seed)?;
    print_paths(&write_screen(&args.out, &report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            return report_error(&CliError::usage(first));
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Screen(a) => screen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}
