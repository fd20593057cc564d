//! `trdre`: fit trimmed density ratio models, generate synthetic data, and run
//! the reference experiments.

mod experiments;
mod io;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use trdre::synthetic::gen_truncation_1d;
use trdre::{featurize, fit, kkt_check, FeatureMap64, L1Step, MnChangeProtocol, Protocol1d, Regularizer, TrimConfig64};

pub const DEFAULT_SEED: u64 = 42;
const THREADS_ENV: &str = "TRDRE_THREADS";

#[derive(Parser)]
#[command(name = "trdre", version, about = "Trimmed density ratio estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a ratio model to two CSV samples.
    Fit(FitArgs),
    /// Run a reference experiment and write its CSV/JSON bundle.
    #[command(subcommand)]
    Experiment(experiments::Experiment),
    /// Export a synthetic dataset.
    #[command(subcommand)]
    Gen(GenCommand),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Features {
    Linear,
    Quadratic,
    Rbf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Reg {
    None,
    L1,
    L2sq,
}

impl From<Reg> for Regularizer {
    fn from(r: Reg) -> Self {
        match r {
            Reg::None => Regularizer::None,
            Reg::L1 => Regularizer::L1,
            Reg::L2sq => Regularizer::L2Sq,
        }
    }
}

/// Optimizer flags shared by every command that fits.
#[derive(Args, Clone, Debug, Serialize)]
pub struct SolverArgs {
    /// Base step size; step `it` is `eta0 / sqrt(it + 1)`.
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Stop when the best objective gains less than this over 50 iterations.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Use plain subgradient steps for the L1 penalty instead of proximal ones.
    #[arg(long)]
    pub l1_subgradient: bool,
}

impl SolverArgs {
    pub fn config(&self, default_eta0: f64, default_max_iter: usize) -> TrimConfig64 {
        let mut cfg = TrimConfig64::default()
            .with_eta0(self.eta0.unwrap_or(default_eta0))
            .with_max_iter(self.max_iter.unwrap_or(default_max_iter));
        if let Some(tol) = self.tol {
            cfg = cfg.with_tol(tol);
        }
        if self.l1_subgradient {
            cfg.l1_step = L1Step::Subgradient;
        }
        cfg
    }
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    /// Numerator sample (rows are observations).
    #[arg(long)]
    xp: PathBuf,
    /// Denominator sample.
    #[arg(long)]
    xq: PathBuf,
    #[arg(long, value_enum, default_value = "linear")]
    features: Features,
    /// Kernel width for `--features rbf`; median heuristic when omitted.
    #[arg(long)]
    rbf_bandwidth: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "none")]
    reg: Reg,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Also check the saddle-point conditions and report them in the JSON.
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum GenCommand {
    /// Two Gaussian Markov networks differing on a few edges, plus samples.
    Mnpair(GenMnArgs),
    /// N(0,1) inliers with uniform outliers against N(-0.75,1).
    Outlier1d(GenOutlierArgs),
    /// N(0,1) against a right-truncated N(-0.5,1).
    Truncation1d(GenTruncArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenMnArgs {
    #[arg(long, default_value_t = 25)]
    d: usize,
    /// Number of changed edges (default d/2).
    #[arg(long)]
    n_changed: Option<usize>,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Copies of `[outlier_value; d]` appended to the numerator sample.
    #[arg(long, default_value_t = 0)]
    outlier_count: usize,
    #[arg(long, default_value_t = 10.0)]
    outlier_value: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct GenOutlierArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Centre of the outlier interval `[b - 0.4, b + 0.4]`.
    #[arg(long, default_value_t = 6.0)]
    b: f64,
    #[arg(long, default_value_t = 0.2)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct GenTruncArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// The denominator is truncated at the `nu` quantile of N(0,1).
    #[arg(long, default_value_t = 0.5)]
    nu: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Serialize)]
struct FitOutput<'a> {
    config: &'a FitArgs,
    bandwidth: Option<f64>,
    feature_names: Vec<String>,
    fit: trdre::FitRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    kkt: Option<KktSummary>,
}

#[derive(Serialize)]
struct KktSummary {
    passed: bool,
    weights_ok: bool,
    max_weight_violation: f64,
    violating_index: Option<usize>,
    stationarity: f64,
    stationarity_ok: bool,
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let xp = io::read_samples(&args.xp)?;
    let xq = io::read_samples(&args.xq)?;
    if xp.d() != xq.d() {
        bail!(
            "{} has {} columns but {} has {}",
            args.xp.display(),
            xp.d(),
            args.xq.display(),
            xq.d()
        );
    }
    let map = match args.features {
        Features::Linear => FeatureMap64::Linear,
        Features::Quadratic => FeatureMap64::PairwiseQuadratic,
        Features::Rbf => FeatureMap64::gaussian_kernel(xp.clone(), args.rbf_bandwidth)?,
    };
    let bandwidth = match &map {
        FeatureMap64::GaussianKernel { bandwidth, .. } => Some(*bandwidth),
        _ => None,
    };
    let cfg = args
        .solver
        .config(1.0, 5000)
        .with_nu(args.nu)
        .with_regularizer(args.reg.into(), args.lambda)
        .with_seed(args.seed);
    let res = fit(&xp, &xq, &map, &cfg).context("fit failed")?;

    let kkt = if args.verify {
        let phi_p = featurize(&xp, &map)?;
        let phi_q = featurize(&xq, &map)?;
        let report = kkt_check(&res, &phi_p, &phi_q, &cfg, 1e-6, 1e-2)?;
        Some(KktSummary {
            passed: report.passed(),
            weights_ok: report.weights_ok,
            max_weight_violation: report.max_weight_violation,
            violating_index: report.violating_index,
            stationarity: report.stationarity,
            stationarity_ok: report.stationarity_ok,
        })
    } else {
        None
    };

    let out = io::ensure_dir(&args.out)?;
    let record = res.record(&cfg);
    let config = serde_json::json!({ "args": args, "solver": &record.config });
    let mut kept = io::CsvOut::new(&config, &["index"])?;
    for &i in &record.kept_indices {
        kept.row([i]);
    }
    let mut trimmed = io::CsvOut::new(&config, &["index"])?;
    for i in res.w_best.trimmed_indices() {
        trimmed.row([i]);
    }
    kept.write(&out.join("kept_indices.csv"))?;
    trimmed.write(&out.join("trimmed_indices.csv"))?;
    io::write_json(
        &out.join("fit.json"),
        &FitOutput {
            config: args,
            bandwidth,
            feature_names: map.feature_names(xp.d()),
            fit: record,
            kkt,
        },
    )?;
    eprintln!(
        "objective {:.6} after {} iterations (converged: {}), {} of {} numerator rows kept",
        res.objective_best,
        res.iterations_run,
        res.converged,
        res.w_best.kept_indices().len(),
        xp.n()
    );
    Ok(())
}

fn cmd_gen(cmd: &GenCommand) -> Result<()> {
    match cmd {
        GenCommand::Mnpair(a) => {
            let out = io::ensure_dir(&a.out)?;
            let protocol = MnChangeProtocol {
                n: a.n,
                n_changed: a.n_changed.unwrap_or(a.d / 2),
                outlier_value: a.outlier_value,
                outlier_count: a.outlier_count,
                ..MnChangeProtocol::new(a.d)
            };
            let data = protocol.generate(a.seed)?;
            io::write_json(
                &out.join("pair.json"),
                &serde_json::json!({ "config": a, "pair": data.pair.record(a.seed) }),
            )?;
            io::write_samples(&out.join("xp.csv"), a, &data.xp_outlier)?;
            io::write_samples(&out.join("xq.csv"), a, &data.xq)?;
        }
        GenCommand::Outlier1d(a) => {
            let out = io::ensure_dir(&a.out)?;
            let protocol = Protocol1d::Outlier {
                b: a.b,
                outlier_fraction: a.outlier_fraction,
                nu: 1.0 - a.outlier_fraction,
            };
            let (xp, xq) = protocol.generate(a.n, a.seed)?;
            io::write_samples(&out.join("xp.csv"), a, &xp)?;
            io::write_samples(&out.join("xq.csv"), a, &xq)?;
        }
        GenCommand::Truncation1d(a) => {
            let out = io::ensure_dir(&a.out)?;
            let (xp, xq) = gen_truncation_1d(a.n, a.n, a.nu, a.seed)?;
            io::write_samples(&out.join("xp.csv"), a, &xp)?;
            io::write_samples(&out.join("xq.csv"), a, &xq)?;
        }
    }
    Ok(())
}

fn seed_of(cmd: &Command) -> u64 {
    match cmd {
        Command::Fit(a) => a.seed,
        Command::Experiment(e) => e.seed(),
        Command::Gen(GenCommand::Mnpair(a)) => a.seed,
        Command::Gen(GenCommand::Outlier1d(a)) => a.seed,
        Command::Gen(GenCommand::Truncation1d(a)) => a.seed,
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    init_threads()?;
    eprintln!("seed = {}", seed_of(&cli.command));
    match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Experiment(e) => e.run(),
        Command::Gen(g) => cmd_gen(g),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
