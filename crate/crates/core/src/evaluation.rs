//! Metrics: support recovery of the differential precision matrix, ratio-curve
//! error against an analytic log-ratio, and parameter-error scaling.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratio_model::{featurize, FeatureMap, RatioModel, SampleMatrix};
use crate::scalar::Scalar;
use crate::synthetic::{
    derive_seed, gen_gaussian_mn_pair, gen_outlier_1d, gen_truncation_1d, inject_outliers, inverse_normal_cdf,
    normal_cdf, sample_gaussian, GaussianMNPair, OUTLIER_Q_MEAN, TRUNCATION_Q_MEAN,
};
use crate::trimmed_estimator::{fit, fit_features, Regularizer, TrimConfig};

/// Detection threshold on `|Delta_hat_ij|` used by the lambda sweep.
pub const DETECTION_THRESHOLD: f64 = 1e-6;

/// Log-ratio of `N(mu_p, 1)` to `N(mu_q, 1)`.
pub fn true_gaussian_log_ratio(x: f64, mu_p: f64, mu_q: f64) -> f64 {
    (mu_p - mu_q) * x + (mu_q * mu_q - mu_p * mu_p) / 2.0
}

/// Log-ratio of the two unit-variance Gaussians both truncated to
/// `x <= upper` (and renormalized there).
pub fn truncated_gaussian_log_ratio(x: f64, mu_p: f64, mu_q: f64, upper: f64) -> f64 {
    true_gaussian_log_ratio(x, mu_p, mu_q) + (normal_cdf(upper - mu_q) / normal_cdf(upper - mu_p)).ln()
}

/// Places fitted pairwise-quadratic parameters into a `d x d` change matrix
/// under `p/q ~ exp(-sum_{i,j} Delta_ij x_i x_j)`: diagonal `-delta_ii`,
/// off-diagonal `-delta_ij / 2` on both `(i, j)` and `(j, i)`.
pub fn delta_matrix_from_params<T: Scalar>(params: &[T], d: usize) -> Result<Array2<T>> {
    let m = d * (d + 1) / 2;
    if params.len() != m {
        return Err(Error::DimensionMismatch {
            context: "pairwise-quadratic parameter length",
            expected: m,
            actual: params.len(),
        });
    }
    let half = T::of(0.5);
    let mut out = Array2::zeros((d, d));
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            if i == j {
                out[[i, i]] = -params[k];
            } else {
                out[[i, j]] = -params[k] * half;
                out[[j, i]] = out[[i, j]];
            }
            k += 1;
        }
    }
    Ok(out)
}

/// `(tpr, tnr)` of the support `|Delta_hat_ij| > threshold` against the
/// nonzeros of `delta_star`, over the strict upper triangle `i < j`.
pub fn support_metrics<T: Scalar>(
    delta_hat: &Array2<T>,
    delta_star: &Array2<T>,
    threshold: T,
) -> Result<(f64, f64)> {
    if delta_hat.dim() != delta_star.dim() || delta_hat.nrows() != delta_hat.ncols() {
        return Err(Error::DimensionMismatch {
            context: "square estimate vs truth shape",
            expected: delta_star.nrows(),
            actual: delta_hat.nrows(),
        });
    }
    if !(threshold >= T::zero()) {
        return Err(Error::InvalidParameter(format!("threshold must be >= 0, got {threshold}")));
    }
    let d = delta_hat.nrows();
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..d {
        for j in (i + 1)..d {
            let detected = delta_hat[[i, j]].abs() > threshold;
            if delta_star[[i, j]] != T::zero() {
                pos += 1;
                tp += usize::from(detected);
            } else {
                neg += 1;
                tn += usize::from(!detected);
            }
        }
    }
    if pos == 0 {
        return Err(Error::Undefined("TPR undefined: the true change has no nonzero entries".into()));
    }
    if neg == 0 {
        return Err(Error::Undefined("TNR undefined: the true change has no zero entries".into()));
    }
    Ok((tp as f64 / pos as f64, tn as f64 / neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub lambda: f64,
    pub threshold: f64,
    pub tnr: f64,
    pub tpr: f64,
}

/// TNR-TPR curve with its area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportCurve {
    pub points: Vec<SupportPoint>,
    pub auc: f64,
}

impl SupportCurve {
    /// Sorts by ascending `lambda` (then `threshold`) and computes the area.
    pub fn from_points(mut points: Vec<SupportPoint>) -> Self {
        points.sort_by(|a, b| {
            a.lambda
                .total_cmp(&b.lambda)
                .then(a.threshold.total_cmp(&b.threshold))
        });
        let auc = curve_auc(&points);
        Self { points, auc }
    }
}

/// Area under the TPR vs `1 - TNR` curve by the trapezoid rule, anchored at
/// `(0, 0)` and `(1, 1)`, with points ordered by false-positive rate.
pub fn curve_auc(points: &[SupportPoint]) -> f64 {
    let mut roc: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 2);
    roc.push((0.0, 0.0));
    roc.extend(points.iter().map(|p| (1.0 - p.tnr, p.tpr)));
    roc.push((1.0, 1.0));
    roc.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    roc.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Lambda sweep of the trimmed estimator with pairwise-quadratic features and
/// an L1 penalty. Fits run from the largest lambda down, each warm-started at
/// the previous solution; every fit gives one `(tnr, tpr)` point at
/// [`DETECTION_THRESHOLD`].
pub fn support_curve<T: Scalar>(
    xp: &SampleMatrix<T>,
    xq: &SampleMatrix<T>,
    delta_star: &Array2<T>,
    nu: T,
    lambda_grid: &[T],
    cfg: &TrimConfig<T>,
) -> Result<SupportCurve> {
    if lambda_grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    if lambda_grid.iter().any(|&l| !(l > T::zero())) {
        return Err(Error::InvalidParameter("lambda grid must be positive".into()));
    }
    let d = xp.d();
    let map = FeatureMap::PairwiseQuadratic;
    let phi_p = featurize(xp, &map)?;
    let phi_q = featurize(xq, &map)?;
    let mut order: Vec<usize> = (0..lambda_grid.len()).collect();
    order.sort_by(|&a, &b| lambda_grid[b].partial_cmp(&lambda_grid[a]).expect("finite lambda"));

    let threshold = T::of(DETECTION_THRESHOLD);
    let mut warm: Option<Array1<T>> = None;
    let mut points = Vec::with_capacity(order.len());
    for idx in order {
        let lambda = lambda_grid[idx];
        let cfg_l = cfg.clone().with_nu(nu).with_regularizer(Regularizer::L1, lambda);
        let res = fit_features(&phi_p, &phi_q, &cfg_l, warm.as_ref().map(|w| w.view()))
            .map_err(|e| e.context(format!("fit at lambda = {lambda}")))?;
        let delta_hat = delta_matrix_from_params(res.delta_best.as_slice().expect("contiguous"), d)?;
        let (tpr, tnr) = support_metrics(&delta_hat, delta_star, threshold)?;
        points.push(SupportPoint {
            lambda: lambda.as_f64(),
            threshold: DETECTION_THRESHOLD,
            tnr,
            tpr,
        });
        warm = Some(res.delta_best);
    }
    Ok(SupportCurve::from_points(points))
}

/// Alternate sweep: one fitted estimate, varying detection threshold.
pub fn support_curve_thresholds<T: Scalar>(
    delta_hat: &Array2<T>,
    delta_star: &Array2<T>,
    thresholds: &[T],
    lambda: T,
) -> Result<SupportCurve> {
    if thresholds.is_empty() {
        return Err(Error::Empty("threshold grid"));
    }
    let points = thresholds
        .iter()
        .map(|&t| {
            support_metrics(delta_hat, delta_star, t).map(|(tpr, tnr)| SupportPoint {
                lambda: lambda.as_f64(),
                threshold: t.as_f64(),
                tnr,
                tpr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SupportCurve::from_points(points))
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "log grid needs 0 < lo <= hi and n >= 1, got [{lo}, {hi}], n = {n}"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect())
}

/// Default lambda sweep: 30 log-spaced values on `[1e-4, 1]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-4, 1.0, 30).expect("valid constants")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveNorm {
    Sup,
    L2,
}

/// Distance between `exp(model log-ratio)` and `exp(truth)` over a 1-D grid:
/// the maximum absolute gap (`Sup`) or the root-mean-square gap (`L2`).
pub fn ratio_curve_error<T: Scalar, F: Fn(T) -> T>(
    model: &RatioModel<T>,
    truth: F,
    grid: &[T],
    norm: CurveNorm,
) -> Result<T> {
    if grid.is_empty() {
        return Err(Error::Empty("evaluation grid"));
    }
    let mut sup = T::zero();
    let mut sq = T::zero();
    for &x in grid {
        let est = model.log_ratio_at(ndarray::aview1(&[x]))?.exp();
        let gap = (est - truth(x).exp()).abs();
        sup = sup.max(gap);
        sq = sq + gap * gap;
    }
    Ok(match norm {
        CurveNorm::Sup => sup,
        CurveNorm::L2 => (sq / T::of_usize(grid.len())).sqrt(),
    })
}

/// 401 points on `[-3, 3]`.
pub fn curve_grid() -> Vec<f64> {
    (0..401).map(|k| -3.0 + 6.0 * k as f64 / 400.0).collect()
}

/// Points of [`curve_grid`] inside `[lo, hi]`, where curve errors are reported.
pub fn error_grid(lo: f64, hi: f64) -> Vec<f64> {
    curve_grid()
        .into_iter()
        .filter(|&x| x >= lo - 1e-12 && x <= hi + 1e-12)
        .collect()
}

/// One-dimensional data protocols with an analytic target parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Protocol1d {
    /// `N(0,1)` inliers plus `round(outlier_fraction n)` uniform outliers
    /// centred at `b`, against `N(-0.75, 1)`.
    Outlier { b: f64, outlier_fraction: f64, nu: f64 },
    /// `N(0,1)` against `TN(-0.5, 1, -inf, Phi^-1(nu))`, fitted at `nu`.
    Truncation { nu: f64 },
}

impl Protocol1d {
    /// Natural-parameter difference of the generating Gaussians.
    pub fn delta_star(&self) -> f64 {
        match self {
            Protocol1d::Outlier { .. } => 0.0 - OUTLIER_Q_MEAN,
            Protocol1d::Truncation { .. } => 0.0 - TRUNCATION_Q_MEAN,
        }
    }

    pub fn nu(&self) -> f64 {
        match *self {
            Protocol1d::Outlier { nu, .. } | Protocol1d::Truncation { nu } => nu,
        }
    }

    /// Samples `(Xp, Xq)` with `n` rows each.
    pub fn generate(&self, n: usize, seed: u64) -> Result<(SampleMatrix<f64>, SampleMatrix<f64>)> {
        match *self {
            Protocol1d::Outlier { b, outlier_fraction, .. } => {
                if !(0.0..=1.0).contains(&outlier_fraction) {
                    return Err(Error::InvalidParameter(format!(
                        "outlier fraction must lie in [0, 1], got {outlier_fraction}"
                    )));
                }
                let n_out = (outlier_fraction * n as f64).round() as usize;
                gen_outlier_1d(n - n_out, n_out, b, seed)
            }
            Protocol1d::Truncation { nu } => gen_truncation_1d(n, n, nu, seed),
        }
    }

    /// Analytic log-ratio the estimator targets.
    pub fn true_log_ratio(&self, x: f64) -> f64 {
        match *self {
            Protocol1d::Outlier { .. } => true_gaussian_log_ratio(x, 0.0, OUTLIER_Q_MEAN),
            Protocol1d::Truncation { nu } => {
                let upper = inverse_normal_cdf(nu).expect("nu validated in (0, 1)");
                truncated_gaussian_log_ratio(x, 0.0, TRUNCATION_Q_MEAN, upper)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub mean_error: f64,
}

/// Mean `|delta_hat - delta_star|_2` over `repeats` runs of `protocol` for
/// each sample size; repetition `r` at size `n` uses seed
/// `derive_seed(seed, [n, r])`.
pub fn error_scaling(
    protocol: &Protocol1d,
    n_grid: &[usize],
    repeats: usize,
    seed: u64,
    cfg: &TrimConfig<f64>,
) -> Result<Vec<ScalingRow>> {
    if n_grid.is_empty() || repeats == 0 {
        return Err(Error::Empty("sample-size grid or repeat count"));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("sample-size grid must be strictly ascending".into()));
    }
    let cfg = cfg.clone().with_nu(protocol.nu());
    let target = protocol.delta_star();
    n_grid
        .iter()
        .map(|&n| {
            let mut total = 0.0;
            for r in 0..repeats {
                let (xp, xq) = protocol.generate(n, derive_seed(seed, &[n as u64, r as u64]))?;
                let res = fit(&xp, &xq, &FeatureMap::Linear, &cfg)
                    .map_err(|e| e.context(format!("error scaling at n = {n}, repeat {r}")))?;
                total += (res.delta_best[0] - target).abs();
            }
            Ok(ScalingRow {
                n,
                mean_error: total / repeats as f64,
            })
        })
        .collect()
}

/// Base step for change-detection fits; warm-started sweeps overshoot at 1.
pub const MN_ETA0: f64 = 0.3;
/// Iteration cap for each fit inside a change-detection lambda sweep.
pub const MN_SWEEP_MAX_ITER: usize = 1000;

/// Which sample pair an MN change fit sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MnMethod {
    /// Untrimmed fit on clean data.
    Gold,
    /// Untrimmed fit with the outlier present.
    Dre,
    /// Trimmed fit with the outlier present.
    Trimmed,
}

impl MnMethod {
    pub const ALL: [MnMethod; 3] = [MnMethod::Gold, MnMethod::Dre, MnMethod::Trimmed];

    pub fn name(&self) -> &'static str {
        match self {
            MnMethod::Gold => "gold",
            MnMethod::Dre => "dre",
            MnMethod::Trimmed => "trimmed",
        }
    }
}

/// Gaussian Markov network change detection: two precision matrices differing
/// on `n_changed` edges, `n` draws from each, and `outlier_count` copies of
/// `[outlier_value; d]` appended to the numerator sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnChangeProtocol {
    pub d: usize,
    pub n: usize,
    pub n_changed: usize,
    pub outlier_value: f64,
    pub outlier_count: usize,
    /// Trimming level for [`MnMethod::Trimmed`]; the other methods use 1.
    pub nu: f64,
}

impl MnChangeProtocol {
    /// `n = 500`, one outlier at `[10, ..., 10]`, `nu = 0.9`, `d / 2` changed edges.
    pub fn new(d: usize) -> Self {
        Self {
            d,
            n: 500,
            n_changed: d / 2,
            outlier_value: 10.0,
            outlier_count: 1,
            nu: 0.9,
        }
    }

    pub fn method_nu(&self, method: MnMethod) -> f64 {
        match method {
            MnMethod::Trimmed => self.nu,
            MnMethod::Gold | MnMethod::Dre => 1.0,
        }
    }

    /// Pair and samples for one trial; the numerator sample is returned
    /// both clean and contaminated.
    pub fn generate(&self, seed: u64) -> Result<MnChangeData> {
        let pair = gen_gaussian_mn_pair(self.d, self.n_changed, derive_seed(seed, &[0]))?;
        let xp = sample_gaussian(&pair.theta_p, self.n, derive_seed(seed, &[1]))?;
        let xq = sample_gaussian(&pair.theta_q, self.n, derive_seed(seed, &[2]))?;
        let xp_outlier = inject_outliers(&xp, &vec![self.outlier_value; self.d], self.outlier_count)?;
        Ok(MnChangeData {
            pair,
            xp,
            xp_outlier,
            xq,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnChangeData {
    pub pair: GaussianMNPair,
    pub xp: SampleMatrix<f64>,
    pub xp_outlier: SampleMatrix<f64>,
    pub xq: SampleMatrix<f64>,
}

impl MnChangeData {
    pub fn numerator(&self, method: MnMethod) -> &SampleMatrix<f64> {
        match method {
            MnMethod::Gold => &self.xp,
            MnMethod::Dre | MnMethod::Trimmed => &self.xp_outlier,
        }
    }

    /// Estimated differential precision matrix at a single `lambda`.
    pub fn fit_delta(
        &self,
        protocol: &MnChangeProtocol,
        method: MnMethod,
        lambda: f64,
        cfg: &TrimConfig<f64>,
    ) -> Result<Array2<f64>> {
        let cfg = cfg
            .clone()
            .with_nu(protocol.method_nu(method))
            .with_regularizer(Regularizer::L1, lambda);
        let res = fit(self.numerator(method), &self.xq, &FeatureMap::PairwiseQuadratic, &cfg)
            .map_err(|e| e.context(format!("{} fit at lambda = {lambda}", method.name())))?;
        delta_matrix_from_params(res.delta_best.as_slice().expect("contiguous"), protocol.d)
    }

    pub fn curve(
        &self,
        protocol: &MnChangeProtocol,
        method: MnMethod,
        lambda_grid: &[f64],
        cfg: &TrimConfig<f64>,
    ) -> Result<SupportCurve> {
        support_curve(
            self.numerator(method),
            &self.xq,
            &self.pair.delta_star,
            protocol.method_nu(method),
            lambda_grid,
            cfg,
        )
        .map_err(|e| e.context(format!("{} support curve", method.name())))
    }
}
