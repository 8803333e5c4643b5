//! Command-line interface. Exit codes: 0 success, 1 runtime or I/O
//! failure, 2 usage error.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dp_batcher_core::binom::{Method, Truncation};
use dp_batcher_core::costsim::{sweep_physical_batch, sweep_rate, ExcessCurve, SweepConfig};
use dp_batcher_core::engine::{linear_regression, linearly_separable, Dataset};
use rayon::prelude::*;

use crate::dataset::{read_dataset, write_dataset};
use crate::error::Error;
use crate::sweep_csv::{emit_csv, write_curve_to};
use crate::training::{
    run_bench, run_training, value_name, AccumulationArg, ClipMethodArg, Mode, ModelKind, TrainOptions,
};
use crate::verify::SamplerCheck;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dp-batcher",
    version,
    about = "DP-SGD with Poisson subsampling on fixed-size physical batches, and its padding cost",
    after_help = "Every command is deterministic given --seed; the default seed is 0xDB5EED (14376685)."
)]
pub struct Cli {
    /// Master seed, decimal or 0x-prefixed hex.
    #[arg(long, global = true, default_value = "0xDB5EED", value_parser = parse_seed)]
    pub seed: u64,

    /// Worker threads for per-example gradients and sweeps.
    #[arg(long, global = true, env = "DP_BATCHER_THREADS", default_value_t = 1, value_parser = parse_threads)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expected excess gradients per step over a grid of sampling rates (CSV).
    SimulateExcess(SimulateExcessArgs),
    /// Masked expected excess for every physical batch size in a range (CSV).
    SweepPhysicalBatch(SweepPhysicalBatchArgs),
    /// Train a model with DP-SGD and write a JSON report.
    Train(TrainArgs),
    /// Chi-square test of the sampler's active set against independent inclusion.
    VerifySampler(VerifySamplerArgs),
    /// Measure gradient throughput, with and without padding.
    Bench(BenchArgs),
    /// Write a synthetic dataset CSV.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Masked,
    Truncated,
    UpperBound,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Masked => Method::Masked,
            MethodArg::Truncated => Method::Truncated,
            MethodArg::UpperBound => Method::UpperBound,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateExcessArgs {
    /// Dataset size N.
    #[arg(long, default_value_t = 50_000)]
    pub n: u64,
    /// Sampling rates: `start:stop:step` or a comma-separated list [default: 0.01:1:0.01].
    #[arg(long, value_parser = parse_grid)]
    pub q_grid: Option<Grid>,
    /// Physical batch size (repeatable).
    #[arg(long = "p", default_values_t = [64, 256, 1024])]
    pub p: Vec<usize>,
    /// Privacy budget for the truncated method (repeatable).
    #[arg(long = "epsilon", default_values_t = [1.0, 8.0])]
    pub epsilon: Vec<f64>,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// Fraction of δ granted to the truncation event.
    #[arg(long, default_value_t = 1e-5)]
    pub tau: f64,
    /// Training length; T = round(epochs / q).
    #[arg(long, default_value_t = 40.0)]
    pub epochs: f64,
    /// Methods to include (repeatable) [default: all].
    #[arg(long = "method", value_enum)]
    pub methods: Vec<MethodArg>,
    /// Truncate both tails of the batch-size distribution.
    #[arg(long)]
    pub two_sided: bool,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepPhysicalBatchArgs {
    #[arg(long, default_value_t = 50_000)]
    pub n: u64,
    #[arg(long, default_value_t = 0.5)]
    pub q: f64,
    #[arg(long, default_value_t = 1)]
    pub p_min: usize,
    #[arg(long, default_value_t = 1024)]
    pub p_max: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Logistic)]
    pub model: ModelKind,
    /// Hidden units for the mlp model.
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    /// Expected logical batch size L.
    #[arg(long)]
    pub l: f64,
    /// Physical batch size.
    #[arg(long, default_value_t = 64)]
    pub p: usize,
    #[arg(long, default_value_t = 50)]
    pub steps: u64,
    /// Clipping norm C.
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    /// Noise multiplier σ.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = ClipMethodArg::PerExample)]
    pub clip_method: ClipMethodArg,
    #[arg(long, value_enum, default_value_t = AccumulationArg::Sequential)]
    pub accumulation: AccumulationArg,
}

impl ModelArgs {
    fn options(&self, mode: Mode, seed: u64, threads: usize) -> TrainOptions {
        TrainOptions {
            model: self.model,
            hidden: self.hidden,
            mode,
            expected_batch: self.l,
            physical_batch: self.p,
            steps: self.steps,
            clip: self.clip,
            sigma: self.sigma,
            learning_rate: self.lr,
            clip_method: self.clip_method,
            accumulation: self.accumulation,
            seed,
            threads,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV: header row, feature columns, then the label.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Mode::Masked)]
    pub mode: Mode,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifySamplerArgs {
    /// Dataset size (at most 12).
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 0.3)]
    pub q: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub draws: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub alpha: f64,
    /// Physical batch size used when building plans [default: min(3, n)].
    #[arg(long)]
    pub p: Option<usize>,
    /// Run the sampler at this rate instead of --q (negative control).
    #[arg(long, hide = true)]
    pub sampler_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset CSV; a synthetic classification set when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rows of the synthetic dataset.
    #[arg(long, default_value_t = 10_000)]
    pub synthetic_rows: usize,
    /// Features of the synthetic dataset.
    #[arg(long, default_value_t = 16)]
    pub synthetic_dim: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Mode::Masked)]
    pub mode: Mode,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SyntheticKind {
    /// Linearly separable 0/1 labels.
    Classification,
    /// Real-valued linear targets with Gaussian noise.
    Regression,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long, value_enum, default_value_t = SyntheticKind::Classification)]
    pub kind: SyntheticKind,
    #[arg(long, default_value_t = 1000)]
    pub rows: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Label noise for regression.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// A list of sampling rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

fn parse_rate(s: &str) -> Result<f64, String> {
    let q: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if q > 0.0 && q <= 1.0 {
        Ok(q)
    } else {
        Err(format!("rate {q} is outside (0, 1]"))
    }
}

/// `start:stop:step` (inclusive) or `a,b,c`.
pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let rates = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop) = (parse_rate(start)?, parse_rate(stop)?);
            let step: f64 = step.trim().parse().map_err(|_| format!("not a number: {step:?}"))?;
            if step.is_nan() || step <= 0.0 || stop < start {
                return Err("need start <= stop and a positive step".into());
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect()
        }
        [list] => list.split(',').map(parse_rate).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(format!("expected start:stop:step or a comma-separated list, got {s:?}")),
    };
    Ok(Grid(rates))
}

fn parse_seed(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("invalid seed {s:?}: {e}"))
}

fn parse_threads(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("expected a positive integer, got {s:?}")),
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::SimulateExcess(a) => cmd_simulate_excess(a, cli.threads),
        Command::SweepPhysicalBatch(a) => cmd_sweep_physical_batch(a),
        Command::Train(a) => cmd_train(a, cli.seed, cli.threads),
        Command::VerifySampler(a) => cmd_verify_sampler(a, cli.seed),
        Command::Bench(a) => cmd_bench(a, cli.seed, cli.threads),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a, cli.seed),
    }
}

fn write_curve(curve: &ExcessCurve, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => emit_csv(curve, path).map_err(|e| Failure::Runtime(e.to_string())),
        None => write_curve_to(io::stdout().lock(), curve).map_err(|e| Failure::Runtime(format!("stdout: {e}"))),
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Runtime(format!("cannot start worker threads: {e}")))
}

fn cmd_simulate_excess(a: &SimulateExcessArgs, threads: usize) -> CmdResult {
    let methods = if a.methods.is_empty() {
        vec![Method::Masked, Method::Truncated, Method::UpperBound]
    } else {
        a.methods.iter().map(|&m| m.into()).collect()
    };
    let cfg = SweepConfig {
        dataset_size: a.n,
        rates: a.q_grid.clone().map_or_else(SweepConfig::default_rates, |g| g.0),
        physical_batches: a.p.clone(),
        epsilons: a.epsilon.clone(),
        delta: a.delta,
        tau: a.tau,
        epochs: a.epochs,
        methods,
        truncation: if a.two_sided { Truncation::TwoSided } else { Truncation::Upper },
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let rows =
        pool(threads)?.install(|| cfg.rates.par_iter().map(|&q| sweep_rate(&cfg, q)).collect::<Result<Vec<_>, _>>());
    let rows = rows.map_err(|e| Failure::Usage(e.to_string()))?;
    let curve = ExcessCurve::from_rows(rows.into_iter().flatten().collect());
    write_curve(&curve, a.out.as_deref())?;
    Ok(EXIT_OK)
}

fn cmd_sweep_physical_batch(a: &SweepPhysicalBatchArgs) -> CmdResult {
    let sweep = sweep_physical_batch(a.n, a.q, a.p_min..=a.p_max).map_err(|e| Failure::Usage(e.to_string()))?;
    write_curve(&sweep.curve, a.out.as_deref())?;
    if let Some((p, excess)) = sweep.best() {
        eprintln!("best physical batch in [{}, {}]: p = {p} (expected excess {excess:.6})", a.p_min, a.p_max);
    }
    Ok(EXIT_OK)
}

fn load(path: &Path) -> Result<Dataset, Failure> {
    // Any problem reading the dataset is a usage error.
    read_dataset(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn warn_if_not_poisson(mode: Mode) {
    if mode == Mode::ShuffleBaseline {
        eprintln!(
            "warning: shuffle-baseline batches are NOT Poisson subsampled; \
             privacy accounting that assumes Poisson subsampling does not apply to this run"
        );
    }
}

fn cmd_train(a: &TrainArgs, seed: u64, threads: usize) -> CmdResult {
    let data = load(&a.data)?;
    warn_if_not_poisson(a.mode);
    let opts = a.model.options(a.mode, seed, threads);
    let report = run_training(&opts, &data, Some(&a.data.to_string_lossy()))?;
    match &a.report {
        Some(path) => {
            report.write(path).map_err(|e| Failure::Runtime(e.to_string()))?;
            let acc = report.final_metrics.accuracy.map_or(String::new(), |v| format!(", accuracy {v:.4}"));
            println!("final loss {:.6}{acc}; report written to {}", report.final_metrics.loss, path.display());
        }
        None => {
            let mut out = io::stdout().lock();
            report
                .to_writer(&mut out)
                .map_err(io::Error::from)
                .and_then(|()| writeln!(out))
                .map_err(|e| Failure::Runtime(format!("stdout: {e}")))?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_verify_sampler(a: &VerifySamplerArgs, seed: u64) -> CmdResult {
    let mut check = SamplerCheck::new(a.n, a.q, a.draws, seed);
    check.physical_batch = a.p.unwrap_or(a.n.clamp(1, 3));
    if let Some(rate) = a.sampler_rate {
        check.sampler_rate = rate;
    }
    let out = check.run()?;
    let pass = out.passes(a.alpha);
    println!(
        "n={} q={} draws={} chi2={:.4} df={} p-value={:.6e} alpha={} {}",
        a.n,
        a.q,
        a.draws,
        out.statistic,
        out.df,
        out.p_value,
        a.alpha,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { EXIT_OK } else { EXIT_RUNTIME })
}

fn cmd_bench(a: &BenchArgs, seed: u64, threads: usize) -> CmdResult {
    let data = match &a.data {
        Some(path) => load(path)?,
        None => linearly_separable(a.synthetic_rows, a.synthetic_dim, seed).map_err(Error::from)?,
    };
    warn_if_not_poisson(a.mode);
    let opts = a.model.options(a.mode, seed, threads);
    let summary = run_bench(&opts, &data, a.repeats)?;
    println!(
        "# mode={} N={} L={} p={} steps={} threads={threads}",
        value_name(&a.mode),
        data.len(),
        a.model.l,
        a.model.p,
        a.model.steps
    );
    println!("repeat,wall_s,samples_per_s,active_per_s,processed,active");
    for (i, r) in summary.runs.iter().enumerate() {
        println!(
            "{i},{:.6},{:.1},{:.1},{},{}",
            r.wall_time.as_secs_f64(),
            r.samples_per_sec(),
            r.active_per_sec(),
            r.processed,
            r.active
        );
    }
    let first = summary.runs[0];
    let ratio = first.processed as f64 / first.active.max(1) as f64;
    println!("median,,{:.1},{:.1},,", summary.median_samples_per_sec, summary.median_active_per_sec);
    println!("# processed/active = {ratio:.6}; bound 1+(p-1)/L = {:.6}", 1.0 + (a.model.p as f64 - 1.0) / a.model.l);
    Ok(EXIT_OK)
}

fn cmd_gen_synthetic(a: &GenSyntheticArgs, seed: u64) -> CmdResult {
    let data = match a.kind {
        SyntheticKind::Classification => linearly_separable(a.rows, a.dim, seed),
        SyntheticKind::Regression => linear_regression(a.rows, a.dim, a.noise, seed),
    }
    .map_err(|e| Failure::Usage(e.to_string()))?;
    write_dataset(&a.out, &data).map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(EXIT_OK)
}
