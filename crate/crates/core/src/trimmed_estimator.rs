//! Trimmed max-min objective, its gradient, the closed-form inner weight
//! solver and the gradient-ascent-and-trimming loop.
//!
//! The estimator solves
//!
//! ```text
//! max_delta  min_{w in [0, 1/n_p]^n_p, sum(w) = nu}  sum_i w_i log r(x_p_i; delta) - lambda R(delta)
//! ```
//!
//! For fixed `delta` the inner problem is a linear program whose extreme
//! optimum puts weight `1/n_p` on the `k_keep = round(nu n_p)` samples with the
//! smallest log-ratio. The outer loop alternates that assignment with a
//! diminishing-step ascent step on `delta`, keeping the best iterate.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratio_model::{
    featurize, log_mean_exp, softmax, FeatureMap, FeatureMatrix, RatioModel, SampleMatrix,
};
use crate::scalar::Scalar;

/// Penalty `R(delta)` subtracted from the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    #[default]
    None,
    /// `sum |delta_k|`
    L1,
    /// `|delta|_2^2`
    L2Sq,
}

/// How the L1 penalty enters the ascent step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum L1Step {
    /// Soft-thresholding after the smooth step; yields exact zeros.
    #[default]
    Proximal,
    /// Plain subgradient `-lambda sign(delta)` with `sign(0) = 0`.
    Subgradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimConfig<T> {
    /// Kept fraction of the numerator sample, in `(0, 1]`.
    pub nu: T,
    pub lambda: T,
    pub regularizer: Regularizer,
    pub l1_step: L1Step,
    /// Base step; iteration `it` uses `eta0 / sqrt(it + 1)`.
    pub eta0: T,
    pub max_iter: usize,
    /// Minimum best-objective gain over `window` iterations before stopping.
    pub tol: T,
    pub window: usize,
    /// Optional L1-ball projection radius applied after every step.
    pub ball_radius: Option<T>,
    pub seed: u64,
}

impl<T: Scalar> Default for TrimConfig<T> {
    fn default() -> Self {
        Self {
            nu: T::one(),
            lambda: T::zero(),
            regularizer: Regularizer::None,
            l1_step: L1Step::Proximal,
            eta0: T::one(),
            max_iter: 5000,
            tol: T::of(1e-7),
            window: 50,
            ball_radius: None,
            seed: 42,
        }
    }
}

impl<T: Scalar> TrimConfig<T> {
    pub fn with_nu(mut self, nu: T) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_regularizer(mut self, regularizer: Regularizer, lambda: T) -> Self {
        self.regularizer = regularizer;
        self.lambda = lambda;
        self
    }

    pub fn with_eta0(mut self, eta0: T) -> Self {
        self.eta0 = eta0;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Number of kept samples, `round(nu * n_p)`.
    pub fn k_keep(&self, n_p: usize) -> Result<usize> {
        k_keep(self.nu, n_p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > T::zero() && self.nu <= T::one()) {
            return Err(Error::InvalidParameter(format!("nu must lie in (0, 1], got {}", self.nu)));
        }
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.eta0 > T::zero()) || !self.eta0.is_finite() {
            return Err(Error::InvalidParameter(format!("eta0 must be > 0, got {}", self.eta0)));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::InvalidParameter(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidParameter("convergence window must be at least 1".into()));
        }
        if let Some(r) = self.ball_radius {
            if !(r > T::zero()) {
                return Err(Error::InvalidParameter(format!("ball radius must be > 0, got {r}")));
            }
        }
        Ok(())
    }

    pub fn record(&self) -> ConfigRecord {
        ConfigRecord {
            nu: self.nu.as_f64(),
            lambda: self.lambda.as_f64(),
            regularizer: self.regularizer,
            l1_step: self.l1_step,
            eta0: self.eta0.as_f64(),
            max_iter: self.max_iter,
            tol: self.tol.as_f64(),
            window: self.window,
            ball_radius: self.ball_radius.map(Scalar::as_f64),
            seed: self.seed,
        }
    }
}

/// Plain-data echo of a [`TrimConfig`] for serialized outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub nu: f64,
    pub lambda: f64,
    pub regularizer: Regularizer,
    pub l1_step: L1Step,
    pub eta0: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub window: usize,
    pub ball_radius: Option<f64>,
    pub seed: u64,
}

/// `round(nu * n_p)`, rejecting `nu` outside `(0, 1]` and empty keeps.
pub fn k_keep<T: Scalar>(nu: T, n_p: usize) -> Result<usize> {
    if !(nu > T::zero() && nu <= T::one()) {
        return Err(Error::InvalidParameter(format!("nu must lie in (0, 1], got {nu}")));
    }
    let k = (nu * T::of_usize(n_p)).round().to_usize().unwrap_or(0).min(n_p);
    if k == 0 {
        return Err(Error::InvalidParameter(format!(
            "round(nu * n_p) = 0 for nu = {nu}, n_p = {n_p}: nothing to fit"
        )));
    }
    Ok(k)
}

/// Trimming weights over the numerator sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T> {
    weights: Array1<T>,
    kept: Vec<usize>,
}

impl<T: Scalar> WeightVector<T> {
    /// Extreme-point weights: `1/n_p` on `kept`, zero elsewhere.
    pub fn from_kept(n_p: usize, mut kept: Vec<usize>) -> Result<Self> {
        kept.sort_unstable();
        kept.dedup();
        if let Some(&bad) = kept.iter().find(|&&i| i >= n_p) {
            return Err(Error::InvalidParameter(format!("kept index {bad} out of range for n_p = {n_p}")));
        }
        let unit = T::one() / T::of_usize(n_p);
        let mut weights = Array1::zeros(n_p);
        for &i in &kept {
            weights[i] = unit;
        }
        Ok(Self { weights, kept })
    }

    /// Arbitrary weights inside the box `[0, 1/n_p]`; `kept` lists the
    /// strictly positive entries.
    pub fn from_weights(weights: Array1<T>) -> Result<Self> {
        let n_p = weights.len();
        if n_p == 0 {
            return Err(Error::Empty("weight vector"));
        }
        let unit = T::one() / T::of_usize(n_p);
        let slack = unit * T::of(1e-12);
        for (i, &w) in weights.iter().enumerate() {
            if !(w >= T::zero() && w <= unit + slack) {
                return Err(Error::InvalidParameter(format!(
                    "weight {i} = {w} outside [0, 1/n_p]"
                )));
            }
        }
        let kept = (0..n_p).filter(|&i| weights[i] > T::zero()).collect();
        Ok(Self { weights, kept })
    }

    pub fn weights(&self) -> ArrayView1<'_, T> {
        self.weights.view()
    }

    pub fn n_p(&self) -> usize {
        self.weights.len()
    }

    /// Indices with positive weight, ascending.
    pub fn kept_indices(&self) -> &[usize] {
        &self.kept
    }

    pub fn trimmed_indices(&self) -> Vec<usize> {
        (0..self.n_p()).filter(|i| self.kept.binary_search(i).is_err()).collect()
    }

    pub fn sum(&self) -> T {
        self.weights.iter().copied().sum()
    }
}

/// Inner minimizer: weight `1/n_p` on the `round(nu n_p)` smallest log-ratios.
/// Ties go to the lower original index.
pub fn assign_weights<T: Scalar>(log_ratios: ArrayView1<'_, T>, nu: T) -> Result<WeightVector<T>> {
    let n_p = log_ratios.len();
    if n_p == 0 {
        return Err(Error::Empty("log-ratio vector"));
    }
    if let Some(col) = log_ratios.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "log-ratios",
            row: 0,
            col,
        });
    }
    let k = k_keep(nu, n_p)?;
    Ok(WeightVector::from_kept(n_p, smallest_k(log_ratios, k))?)
}

fn smallest_k<T: Scalar>(values: ArrayView1<'_, T>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable: equal values keep ascending index order
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite log-ratios"));
    order.truncate(k);
    order
}

/// Value and minimum-norm subgradient of the penalty (no `lambda` factor).
pub fn reg_value_and_subgradient<T: Scalar>(
    delta: ArrayView1<'_, T>,
    regularizer: Regularizer,
) -> (T, Array1<T>) {
    match regularizer {
        Regularizer::None => (T::zero(), Array1::zeros(delta.len())),
        Regularizer::L1 => (
            delta.iter().map(|v| v.abs()).sum(),
            delta.mapv(|v| if v > T::zero() { T::one() } else if v < T::zero() { -T::one() } else { T::zero() }),
        ),
        Regularizer::L2Sq => (delta.dot(&delta), delta.mapv(|v| T::of(2.0) * v)),
    }
}

fn check_shapes<T: Scalar>(
    delta: ArrayView1<'_, T>,
    w: &WeightVector<T>,
    phi_p: &FeatureMatrix<T>,
    phi_q: &FeatureMatrix<T>,
) -> Result<()> {
    if phi_p.ncols() != phi_q.ncols() {
        return Err(Error::DimensionMismatch {
            context: "numerator vs denominator feature columns",
            expected: phi_p.ncols(),
            actual: phi_q.ncols(),
        });
    }
    if delta.len() != phi_p.ncols() {
        return Err(Error::DimensionMismatch {
            context: "parameter length vs feature columns",
            expected: phi_p.ncols(),
            actual: delta.len(),
        });
    }
    if w.n_p() != phi_p.nrows() {
        return Err(Error::DimensionMismatch {
            context: "weight length vs numerator rows",
            expected: phi_p.nrows(),
            actual: w.n_p(),
        });
    }
    if phi_q.nrows() == 0 {
        return Err(Error::Empty("denominator feature matrix"));
    }
    Ok(())
}

/// `sum_i w_i log r(x_p_i; delta) - lambda R(delta)`.
pub fn objective<T: Scalar>(
    delta: ArrayView1<'_, T>,
    w: &WeightVector<T>,
    phi_p: &FeatureMatrix<T>,
    phi_q: &FeatureMatrix<T>,
    cfg: &TrimConfig<T>,
) -> Result<T> {
    check_shapes(delta, w, phi_p, phi_q)?;
    let log_norm = log_mean_exp(phi_q.values().dot(&delta).view());
    let s_p = phi_p.values().dot(&delta);
    let fit: T = w.weights().dot(&s_p) - w.sum() * log_norm;
    let (reg, _) = reg_value_and_subgradient(delta, cfg.regularizer);
    Ok(fit - cfg.lambda * reg)
}

/// Gradient in `delta` of the unpenalized objective:
/// `sum_i w_i phi_p_i - nu * sum_j softmax_j phi_q_j` with `nu = sum(w)`.
pub fn gradient<T: Scalar>(
    delta: ArrayView1<'_, T>,
    w: &WeightVector<T>,
    phi_p: &FeatureMatrix<T>,
    phi_q: &FeatureMatrix<T>,
) -> Result<Array1<T>> {
    check_shapes(delta, w, phi_p, phi_q)?;
    let soft = softmax(phi_q.values().dot(&delta).view());
    Ok(smooth_gradient(w.weights(), w.sum(), soft.view(), phi_p.values().t(), phi_q.values().t()))
}

/// Takes transposed features (`m x n`); contiguous rows make this much faster.
fn smooth_gradient<T: Scalar>(
    w: ArrayView1<'_, T>,
    nu: T,
    soft: ArrayView1<'_, T>,
    phi_p_t: ArrayView2<'_, T>,
    phi_q_t: ArrayView2<'_, T>,
) -> Array1<T> {
    let mut g = phi_p_t.dot(&w);
    let q_mean = phi_q_t.dot(&soft);
    g.scaled_add(-nu, &q_mean);
    g
}

/// Output of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub delta_best: Array1<T>,
    pub w_best: WeightVector<T>,
    pub objective_best: T,
    /// Largest kept log-ratio under `delta_best`.
    pub t_hat: T,
    /// Log-normalizer of `delta_best` over the denominator sample.
    pub log_normalizer: T,
    /// `(iteration, objective at that iterate)`.
    pub trace: Vec<(usize, T)>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl<T: Scalar> FitResult<T> {
    /// Running maximum of the trace.
    pub fn best_trace(&self) -> Vec<T> {
        let mut best = T::neg_infinity();
        self.trace
            .iter()
            .map(|&(_, v)| {
                best = best.max(v);
                best
            })
            .collect()
    }

    /// Ratio model at the best iterate.
    pub fn model(&self, features: FeatureMap<T>, phi_q: &FeatureMatrix<T>) -> Result<RatioModel<T>> {
        RatioModel::new(self.delta_best.clone(), features, phi_q)
    }

    pub fn record(&self, cfg: &TrimConfig<T>) -> FitRecord {
        FitRecord {
            delta: self.delta_best.iter().map(|v| v.as_f64()).collect(),
            kept_indices: self.w_best.kept_indices().to_vec(),
            t_hat: self.t_hat.as_f64(),
            objective_best: self.objective_best.as_f64(),
            log_normalizer: self.log_normalizer.as_f64(),
            iterations_run: self.iterations_run,
            converged: self.converged,
            trace: self.trace.iter().map(|&(i, v)| (i, v.as_f64())).collect(),
            config: cfg.record(),
        }
    }
}

/// JSON form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub delta: Vec<f64>,
    pub kept_indices: Vec<usize>,
    pub t_hat: f64,
    pub objective_best: f64,
    pub log_normalizer: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub trace: Vec<(usize, f64)>,
    pub config: ConfigRecord,
}

/// Featurizes both samples and runs [`fit_features`] from `delta = 0`.
pub fn fit<T: Scalar>(
    xp: &SampleMatrix<T>,
    xq: &SampleMatrix<T>,
    map: &FeatureMap<T>,
    cfg: &TrimConfig<T>,
) -> Result<FitResult<T>> {
    if xp.d() != xq.d() {
        return Err(Error::DimensionMismatch {
            context: "numerator vs denominator sample dimension",
            expected: xp.d(),
            actual: xq.d(),
        });
    }
    let phi_p = featurize(xp, map)?;
    let phi_q = featurize(xq, map)?;
    fit_features(&phi_p, &phi_q, cfg, None)
}

/// Untrimmed log-linear KLIEP: [`fit`] with `nu = 1`.
pub fn fit_kliep<T: Scalar>(
    xp: &SampleMatrix<T>,
    xq: &SampleMatrix<T>,
    map: &FeatureMap<T>,
    cfg: &TrimConfig<T>,
) -> Result<FitResult<T>> {
    fit(xp, xq, map, &cfg.clone().with_nu(T::one()))
}

/// Gradient ascent and trimming on pre-featurized samples. `init` warm-starts
/// `delta` (zero otherwise).
pub fn fit_features<T: Scalar>(
    phi_p: &FeatureMatrix<T>,
    phi_q: &FeatureMatrix<T>,
    cfg: &TrimConfig<T>,
    init: Option<ArrayView1<'_, T>>,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    let n_p = phi_p.nrows();
    if n_p == 0 {
        return Err(Error::Empty("numerator feature matrix"));
    }
    if phi_q.nrows() == 0 {
        return Err(Error::Empty("denominator feature matrix"));
    }
    if phi_p.ncols() != phi_q.ncols() {
        return Err(Error::DimensionMismatch {
            context: "numerator vs denominator feature columns",
            expected: phi_p.ncols(),
            actual: phi_q.ncols(),
        });
    }
    let m = phi_p.ncols();
    let k = cfg.k_keep(n_p)?;
    let unit = T::one() / T::of_usize(n_p);
    let nu_eff = T::of_usize(k) * unit;

    let mut delta = match init {
        Some(d0) => {
            if d0.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "initial parameter length",
                    expected: m,
                    actual: d0.len(),
                });
            }
            d0.to_owned()
        }
        None => Array1::zeros(m),
    };

    let mut best: Option<(T, Array1<T>, Vec<usize>, T, T)> = None;
    let mut best_history: Vec<T> = Vec::with_capacity(cfg.max_iter.min(1 << 16));
    let mut trace = Vec::with_capacity(cfg.max_iter.min(1 << 16));
    let mut converged = false;
    let mut iterations_run = 0;
    let mut w = Array1::zeros(n_p);
    let phi_p_t = phi_p.values().t().as_standard_layout().into_owned();
    let phi_q_t = phi_q.values().t().as_standard_layout().into_owned();

    for it in 0..cfg.max_iter {
        iterations_run = it + 1;
        let s_q = phi_q.values().dot(&delta);
        let log_norm = log_mean_exp(s_q.view());
        let mut log_ratios = phi_p.values().dot(&delta);
        log_ratios.mapv_inplace(|v| v - log_norm);

        let (reg, _) = reg_value_and_subgradient(delta.view(), cfg.regularizer);
        let finite = log_norm.is_finite() && log_ratios.iter().all(|v| v.is_finite());
        let (obj, kept) = if finite {
            let kept = smallest_k(log_ratios.view(), k);
            let fit: T = kept.iter().map(|&i| log_ratios[i]).sum::<T>() * unit;
            (fit - cfg.lambda * reg, kept)
        } else {
            (T::nan(), Vec::new())
        };
        if !obj.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                delta_norm: delta.dot(&delta).sqrt().as_f64(),
            });
        }
        trace.push((it, obj));

        if best.as_ref().map_or(true, |b| obj > b.0) {
            let t_hat = kept.iter().map(|&i| log_ratios[i]).fold(T::neg_infinity(), T::max);
            best = Some((obj, delta.clone(), kept.clone(), t_hat, log_norm));
        }
        let best_now = best.as_ref().expect("set above").0;
        best_history.push(best_now);
        if it >= cfg.window && best_now - best_history[it - cfg.window] < cfg.tol {
            converged = true;
            break;
        }
        if it + 1 == cfg.max_iter {
            break;
        }

        w.fill(T::zero());
        for &i in &kept {
            w[i] = unit;
        }
        let soft = softmax(s_q.view());
        let g = smooth_gradient(w.view(), nu_eff, soft.view(), phi_p_t.view(), phi_q_t.view());
        let eta = cfg.eta0 / T::of_usize(it + 1).sqrt();
        ascent_step(&mut delta, &g, eta, cfg);
        if let Some(radius) = cfg.ball_radius {
            project_l1_ball(&mut delta, radius);
        }
    }

    let (objective_best, delta_best, kept, t_hat, log_normalizer) = best.expect("at least one iteration");
    Ok(FitResult {
        delta_best,
        w_best: WeightVector::from_kept(n_p, kept)?,
        objective_best,
        t_hat,
        log_normalizer,
        trace,
        iterations_run,
        converged,
    })
}

fn ascent_step<T: Scalar>(delta: &mut Array1<T>, g: &Array1<T>, eta: T, cfg: &TrimConfig<T>) {
    let lambda = cfg.lambda;
    match cfg.regularizer {
        Regularizer::None => delta.scaled_add(eta, g),
        Regularizer::L2Sq => {
            let shrink = T::one() - eta * T::of(2.0) * lambda;
            delta.mapv_inplace(|v| v * shrink);
            delta.scaled_add(eta, g);
        }
        Regularizer::L1 => match cfg.l1_step {
            L1Step::Subgradient => {
                let (_, sub) = reg_value_and_subgradient(delta.view(), Regularizer::L1);
                delta.scaled_add(eta, g);
                delta.scaled_add(-eta * lambda, &sub);
            }
            L1Step::Proximal => {
                delta.scaled_add(eta, g);
                let thr = eta * lambda;
                delta.mapv_inplace(|v| soft_threshold(v, thr));
            }
        },
    }
}

fn soft_threshold<T: Scalar>(v: T, thr: T) -> T {
    if v > thr {
        v - thr
    } else if v < -thr {
        v + thr
    } else {
        T::zero()
    }
}

/// Euclidean projection onto `{ |x|_1 <= radius }` (sort-based).
pub fn project_l1_ball<T: Scalar>(delta: &mut Array1<T>, radius: T) {
    let l1: T = delta.iter().map(|v| v.abs()).sum();
    if l1 <= radius {
        return;
    }
    let mut mags: Vec<T> = delta.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).expect("finite parameters"));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (j, &u) in mags.iter().enumerate() {
        cumsum = cumsum + u;
        let t = (cumsum - radius) / T::of_usize(j + 1);
        if u > t {
            theta = t;
        } else {
            break;
        }
    }
    delta.mapv_inplace(|v| soft_threshold(v, theta));
}

/// Diagnostic produced by [`kkt_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport<T> {
    /// Weights match the threshold structure (full below `t_hat`, zero above).
    pub weights_ok: bool,
    pub max_weight_violation: T,
    pub violating_index: Option<usize>,
    /// Sup-norm of the gradient minus the closest penalty subgradient.
    pub stationarity: T,
    pub stationarity_ok: bool,
}

impl<T: Scalar> KktReport<T> {
    pub fn passed(&self) -> bool {
        self.weights_ok && self.stationarity_ok
    }
}

/// Checks the saddle-point conditions at `result.delta_best`.
///
/// Samples whose log-ratio is below `t_hat - weight_tol` must carry weight
/// `1/n_p`, those above `t_hat + weight_tol` weight zero; samples inside the
/// band may take any value in the box. Stationarity uses the
/// minimum-norm element of `gradient - lambda dR`.
pub fn kkt_check<T: Scalar>(
    result: &FitResult<T>,
    phi_p: &FeatureMatrix<T>,
    phi_q: &FeatureMatrix<T>,
    cfg: &TrimConfig<T>,
    weight_tol: T,
    stationarity_tol: T,
) -> Result<KktReport<T>> {
    let delta = result.delta_best.view();
    let w = &result.w_best;
    check_shapes(delta, w, phi_p, phi_q)?;
    let n_p = w.n_p();
    let unit = T::one() / T::of_usize(n_p);
    let s_q = phi_q.values().dot(&delta);
    let log_norm = log_mean_exp(s_q.view());
    let log_ratios = phi_p.values().dot(&delta).mapv(|v| v - log_norm);

    let mut max_violation = T::zero();
    let mut violating_index = None;
    for (i, (&lr, &wi)) in log_ratios.iter().zip(w.weights().iter()).enumerate() {
        let violation = if lr < result.t_hat - weight_tol {
            (wi - unit).abs()
        } else if lr > result.t_hat + weight_tol {
            wi.abs()
        } else {
            T::zero()
        };
        if violation > max_violation {
            max_violation = violation;
            violating_index = Some(i);
        }
    }
    let weights_ok = max_violation <= unit * T::of(1e-9);

    let soft = softmax(s_q.view());
    let g = smooth_gradient(w.weights(), w.sum(), soft.view(), phi_p.values().t(), phi_q.values().t());
    let lambda = cfg.lambda;
    let residual = match cfg.regularizer {
        Regularizer::None => g,
        Regularizer::L2Sq => &g - &delta.mapv(|v| T::of(2.0) * lambda * v),
        Regularizer::L1 => ndarray::Zip::from(&g).and(delta).map_collect(|&gk, &dk| {
            if dk > T::zero() {
                gk - lambda
            } else if dk < T::zero() {
                gk + lambda
            } else {
                (gk.abs() - lambda).max(T::zero())
            }
        }),
    };
    let stationarity = residual.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    Ok(KktReport {
        weights_ok,
        max_weight_violation: max_violation,
        violating_index,
        stationarity,
        stationarity_ok: stationarity <= stationarity_tol,
    })
}
