use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use trdre::evaluation::{default_lambda_grid, error_grid, log_grid, DETECTION_THRESHOLD, MN_ETA0, MN_SWEEP_MAX_ITER};
use trdre::synthetic::{derive_seed, inverse_normal_cdf};
use trdre::{
    featurize, fit, fit_kliep, kkt_check, ratio_curve_error, support_metrics, CurveNorm, FeatureMap64,
    MnChangeProtocol, MnMethod, Protocol1d, SupportCurve, TrimConfig64,
};

use crate::io::{ensure_dir, write_json, CsvOut};
use crate::{SolverArgs, DEFAULT_SEED};

#[derive(Subcommand)]
pub enum Experiment {
    /// Gaussian shift with uniform outliers centred at each b.
    Outlier1d(Outlier1dArgs),
    /// Gaussian shift against a truncated denominator, plus error scaling.
    Truncation1d(Truncation1dArgs),
    /// Sparse change detection between Gaussian Markov networks.
    Mnchange(MnChangeArgs),
}

impl Experiment {
    pub fn seed(&self) -> u64 {
        match self {
            Experiment::Outlier1d(a) => a.seed,
            Experiment::Truncation1d(a) => a.seed,
            Experiment::Mnchange(a) => a.seed,
        }
    }

    pub fn run(&self) -> Result<()> {
        match self {
            Experiment::Outlier1d(a) => outlier1d(a).context("outlier1d experiment"),
            Experiment::Truncation1d(a) => truncation1d(a).context("truncation1d experiment"),
            Experiment::Mnchange(a) => mnchange(a).context("mnchange experiment"),
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct Outlier1dArgs {
    /// Size of each sample.
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0.2)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 0.8)]
    nu: f64,
    /// Comma-separated outlier centres.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6")]
    b_values: Vec<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Serialize)]
struct Outlier1dRow {
    b: f64,
    method: &'static str,
    delta: f64,
    delta_star: f64,
    sup_error: f64,
    l2_error: f64,
    iterations: usize,
    converged: bool,
}

fn outlier1d(a: &Outlier1dArgs) -> Result<()> {
    let out = ensure_dir(&a.out)?;
    let cfg = a.solver.config(1.0, 5000).with_seed(a.seed);
    let config = resolved(a, &cfg);
    let grid = error_grid(-2.0, 2.0);
    let curve_x = trdre::evaluation::curve_grid();

    let per_b: Vec<(Vec<Outlier1dRow>, Vec<(&'static str, f64, f64, f64)>)> = a
        .b_values
        .par_iter()
        .enumerate()
        .map(|(k, &b)| -> Result<_> {
            let protocol = Protocol1d::Outlier {
                b,
                outlier_fraction: a.outlier_fraction,
                nu: a.nu,
            };
            let (xp, xq) = protocol.generate(a.n, derive_seed(a.seed, &[k as u64]))?;
            let phi_q = featurize(&xq, &FeatureMap64::Linear)?;
            let mut rows = Vec::new();
            let mut curves = Vec::new();
            let fits = [
                ("trimmed", fit(&xp, &xq, &FeatureMap64::Linear, &cfg.clone().with_nu(a.nu))),
                ("kliep", fit_kliep(&xp, &xq, &FeatureMap64::Linear, &cfg)),
            ];
            for (name, res) in fits {
                let res = res.with_context(|| format!("{name} fit at b = {b}"))?;
                let model = res.model(FeatureMap64::Linear, &phi_q)?;
                let truth = |x: f64| protocol.true_log_ratio(x);
                rows.push(Outlier1dRow {
                    b,
                    method: name,
                    delta: res.delta_best[0],
                    delta_star: protocol.delta_star(),
                    sup_error: ratio_curve_error(&model, truth, &grid, CurveNorm::Sup)?,
                    l2_error: ratio_curve_error(&model, truth, &grid, CurveNorm::L2)?,
                    iterations: res.iterations_run,
                    converged: res.converged,
                });
                for &x in &curve_x {
                    let est = model.log_ratio_at(ndarray::aview1(&[x]))?.exp();
                    curves.push((name, x, est, truth(x).exp()));
                }
            }
            Ok((rows, curves))
        })
        .collect::<Result<_>>()?;

    let mut table = CsvOut::new(&config, &["b", "method", "delta", "delta_star", "sup_error", "l2_error"])?;
    let mut curves = CsvOut::new(&config, &["b", "method", "x", "ratio", "true_ratio"])?;
    let mut rows = Vec::new();
    for (r, c) in per_b {
        for row in &r {
            table.row([
                row.b.to_string(),
                row.method.to_string(),
                row.delta.to_string(),
                row.delta_star.to_string(),
                row.sup_error.to_string(),
                row.l2_error.to_string(),
            ]);
        }
        let b = r[0].b;
        for (name, x, est, truth) in c {
            curves.row([b.to_string(), name.to_string(), x.to_string(), est.to_string(), truth.to_string()]);
        }
        rows.extend(r);
    }
    table.write(&out.join("results.csv"))?;
    curves.write(&out.join("curves.csv"))?;
    write_json(&out.join("summary.json"), &serde_json::json!({ "config": config, "results": rows }))
}

#[derive(Args, Debug, Serialize)]
pub struct Truncation1dArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    nu: f64,
    /// Sample sizes for the error-scaling table.
    #[arg(long, value_delimiter = ',', default_value = "250,1000,4000")]
    scaling_n: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

fn truncation1d(a: &Truncation1dArgs) -> Result<()> {
    let out = ensure_dir(&a.out)?;
    let cfg = a.solver.config(1.0, 5000).with_seed(a.seed).with_nu(a.nu);
    let config = resolved(a, &cfg);
    let protocol = Protocol1d::Truncation { nu: a.nu };
    let upper = inverse_normal_cdf(a.nu)?;

    let (xp, xq) = protocol.generate(a.n, a.seed)?;
    let phi_p = featurize(&xp, &FeatureMap64::Linear)?;
    let phi_q = featurize(&xq, &FeatureMap64::Linear)?;
    let res = trdre::fit_features(&phi_p, &phi_q, &cfg, None)?;
    let kkt = kkt_check(&res, &phi_p, &phi_q, &cfg, 1e-2, 1e-2)?;
    let model = res.model(FeatureMap64::Linear, &phi_q)?;
    let truth = |x: f64| protocol.true_log_ratio(x);
    let grid = error_grid(-2.0, upper.min(2.0));

    let mut curve = CsvOut::new(&config, &["x", "ratio", "true_ratio"])?;
    for x in trdre::evaluation::curve_grid().into_iter().filter(|&x| x <= upper) {
        let est = model.log_ratio_at(ndarray::aview1(&[x]))?.exp();
        curve.row([x, est, truth(x).exp()]);
    }

    let scaling: Vec<_> = a
        .scaling_n
        .par_iter()
        .map(|&n| trdre::evaluation::error_scaling(&protocol, &[n], a.repeats, a.seed, &cfg).map(|mut v| v.remove(0)))
        .collect::<trdre::Result<_>>()?;
    let mut table = CsvOut::new(&config, &["n", "error"])?;
    for row in &scaling {
        table.row([row.n.to_string(), row.mean_error.to_string()]);
    }

    curve.write(&out.join("curve.csv"))?;
    table.write(&out.join("scaling.csv"))?;
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "config": config,
            "delta_hat": res.delta_best[0],
            "delta_star": protocol.delta_star(),
            "t_hat": res.t_hat,
            "kept_fraction": res.w_best.kept_indices().len() as f64 / xp.n() as f64,
            "kkt_weights_ok": kkt.weights_ok,
            "sup_error": ratio_curve_error(&model, truth, &grid, CurveNorm::Sup)?,
            "l2_error": ratio_curve_error(&model, truth, &grid, CurveNorm::L2)?,
            "iterations": res.iterations_run,
            "converged": res.converged,
            "scaling": scaling,
        }),
    )
}

#[derive(Args, Debug, Serialize)]
pub struct MnChangeArgs {
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',', default_value = "20,25,36")]
    d: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Changed edges per network pair (default d/2).
    #[arg(long)]
    n_changed: Option<usize>,
    /// Penalty for the single-lambda heat maps.
    #[arg(long, default_value_t = 0.0938)]
    lambda: f64,
    #[arg(long, default_value_t = 0.9)]
    nu: f64,
    #[arg(long, default_value_t = 10.0)]
    outlier_value: f64,
    #[arg(long, default_value_t = 1)]
    outlier_count: usize,
    /// Sweep grid; the default is 30 log-spaced values on [1e-4, 1].
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    lambda_points: Option<usize>,
    #[arg(long, default_value_t = MN_SWEEP_MAX_ITER)]
    sweep_max_iter: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

impl MnChangeArgs {
    fn lambda_grid(&self) -> Result<Vec<f64>> {
        if self.lambda_min.is_none() && self.lambda_max.is_none() && self.lambda_points.is_none() {
            return Ok(default_lambda_grid());
        }
        Ok(log_grid(
            self.lambda_min.unwrap_or(1e-4),
            self.lambda_max.unwrap_or(1.0),
            self.lambda_points.unwrap_or(30),
        )?)
    }
}

#[derive(Serialize)]
struct MnRow {
    d: usize,
    method: &'static str,
    auc: f64,
    tpr: f64,
    tnr: f64,
    nonzero_edges: usize,
}

fn mnchange(a: &MnChangeArgs) -> Result<()> {
    let out = ensure_dir(&a.out)?;
    let grid = a.lambda_grid()?;
    let cfg = a.solver.config(MN_ETA0, 5000).with_seed(a.seed);
    let sweep_cfg = cfg.clone().with_max_iter(a.sweep_max_iter);
    let config = serde_json::json!({ "args": a, "solver": cfg.record(), "sweep_solver": sweep_cfg.record() });

    let mut jobs = Vec::new();
    for (k, &d) in a.d.iter().enumerate() {
        let protocol = MnChangeProtocol {
            n: a.n,
            n_changed: a.n_changed.unwrap_or(d / 2),
            outlier_value: a.outlier_value,
            outlier_count: a.outlier_count,
            nu: a.nu,
            ..MnChangeProtocol::new(d)
        };
        let data = protocol
            .generate(derive_seed(a.seed, &[k as u64]))
            .with_context(|| format!("data for d = {d}"))?;
        write_matrix(&out.join(format!("delta_star_d{d}.csv")), &config, &data.pair.delta_star)?;
        for method in MnMethod::ALL {
            jobs.push((protocol.clone(), data.clone(), method));
        }
    }

    let results: Vec<(usize, MnMethod, ndarray::Array2<f64>, SupportCurve, (f64, f64))> = jobs
        .par_iter()
        .map(|(protocol, data, method)| -> Result<_> {
            let delta_hat = data.fit_delta(protocol, *method, a.lambda, &cfg)?;
            let rates = support_metrics(&delta_hat, &data.pair.delta_star, DETECTION_THRESHOLD)?;
            let curve = data.curve(protocol, *method, &grid, &sweep_cfg)?;
            Ok((protocol.d, *method, delta_hat, curve, rates))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (d, method, delta_hat, curve, (tpr, tnr)) in &results {
        let name = method.name();
        write_matrix(&out.join(format!("heatmap_{name}_d{d}.csv")), &config, delta_hat)?;
        let mut c = CsvOut::new(&config, &["lambda", "tnr", "tpr"])?;
        for p in &curve.points {
            c.row([p.lambda, p.tnr, p.tpr]);
        }
        c.write(&out.join(format!("curve_{name}_d{d}.csv")))?;
        let nonzero_edges = (0..*d)
            .flat_map(|i| ((i + 1)..*d).map(move |j| (i, j)))
            .filter(|&(i, j)| delta_hat[[i, j]].abs() > DETECTION_THRESHOLD)
            .count();
        rows.push(MnRow {
            d: *d,
            method: name,
            auc: curve.auc,
            tpr: *tpr,
            tnr: *tnr,
            nonzero_edges,
        });
    }
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({ "config": config, "lambda_grid": grid, "results": rows }),
    )
}

/// Command flags together with the solver settings they resolve to.
fn resolved<A: Serialize>(args: &A, cfg: &TrimConfig64) -> serde_json::Value {
    serde_json::json!({ "args": args, "solver": cfg.record() })
}

fn write_matrix<C: Serialize>(path: &Path, config: &C, m: &ndarray::Array2<f64>) -> Result<()> {
    let mut c = CsvOut::new(config, &[])?;
    for row in m.rows() {
        c.row(row.iter());
    }
    c.write(path)
}
