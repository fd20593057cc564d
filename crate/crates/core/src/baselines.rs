//! Exhaustive reference solvers used as oracles for the estimator.
//!
//! These deliberately avoid the estimator's code path: the grid search sorts
//! log-ratios directly and evaluates its own log-sum-exp, and the vertex
//! enumerator lists every extreme point of the weight polytope.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::ratio_model::FeatureMatrix;
use crate::scalar::Scalar;
use crate::trimmed_estimator::{k_keep, WeightVector};

/// Largest `n_p` accepted by [`enumerate_weight_vertices`].
pub const MAX_ENUMERATION_SIZE: usize = 12;

/// Closed grid `lo, lo + step, ..., hi` for a scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1d<T> {
    pub lo: T,
    pub hi: T,
    pub step: T,
}

impl<T: Scalar> Grid1d<T> {
    pub fn new(lo: T, hi: T, step: T) -> Result<Self> {
        if !(step > T::zero()) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid needs finite lo <= hi and step > 0, got [{lo}, {hi}] step {step}"
            )));
        }
        Ok(Self { lo, hi, step })
    }

    pub fn points(&self) -> impl Iterator<Item = T> + '_ {
        let count = ((self.hi - self.lo) / self.step).round().to_usize().unwrap_or(0) + 1;
        (0..count).map(move |k| self.lo + T::of_usize(k) * self.step)
    }
}

/// Max over a grid of scalar `delta` of the inner-minimized trimmed objective
/// `(1/n_p) * (sum of the round(nu n_p) smallest log-ratios)`. Returns the
/// maximizing grid point and the value there. Features must be 1-column.
pub fn brute_force_maxmin_1d<T: Scalar>(
    phi_p: &FeatureMatrix<T>,
    phi_q: &FeatureMatrix<T>,
    nu: T,
    grid: &Grid1d<T>,
) -> Result<(T, T)> {
    for (fm, ctx) in [(phi_p, "numerator"), (phi_q, "denominator")] {
        if fm.ncols() != 1 {
            return Err(Error::DimensionMismatch {
                context: if ctx == "numerator" {
                    "numerator features for a scalar parameter"
                } else {
                    "denominator features for a scalar parameter"
                },
                expected: 1,
                actual: fm.ncols(),
            });
        }
        if fm.nrows() == 0 {
            return Err(Error::Empty("feature matrix"));
        }
    }
    let n_p = phi_p.nrows();
    let k = k_keep(nu, n_p)?;
    let fp: Vec<T> = phi_p.values().column(0).to_vec();
    let fq: Vec<T> = phi_q.values().column(0).to_vec();
    let nq = T::of_usize(fq.len());

    let mut best = (T::nan(), T::neg_infinity());
    let mut scratch = vec![T::zero(); n_p];
    for delta in grid.points() {
        let top = fq.iter().map(|&v| delta * v).fold(T::neg_infinity(), T::max);
        let acc: T = fq.iter().map(|&v| (delta * v - top).exp()).sum();
        let log_norm = top + (acc / nq).ln();
        for (s, &v) in scratch.iter_mut().zip(&fp) {
            *s = delta * v - log_norm;
        }
        scratch.sort_by(|a, b| a.partial_cmp(b).expect("finite log-ratios"));
        let value = scratch[..k].iter().copied().sum::<T>() / T::of_usize(n_p);
        if value > best.1 {
            best = (delta, value);
        }
    }
    Ok(best)
}

/// Every extreme point of `{ w in [0, 1/n_p]^n_p : sum w = k/n_p }` with
/// `k = round(nu n_p)`, in lexicographic order of kept index sets.
pub fn enumerate_weight_vertices<T: Scalar>(n_p: usize, nu: T) -> Result<Vec<WeightVector<T>>> {
    if n_p == 0 {
        return Err(Error::Empty("weight vector"));
    }
    if n_p > MAX_ENUMERATION_SIZE {
        return Err(Error::InvalidParameter(format!(
            "vertex enumeration limited to n_p <= {MAX_ENUMERATION_SIZE}, got {n_p}"
        )));
    }
    let k = k_keep(nu, n_p)?;
    let unit = T::one() / T::of_usize(n_p);
    let mut out = Vec::new();
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let mut w = Array1::zeros(n_p);
        for &i in &subset {
            w[i] = unit;
        }
        out.push(WeightVector::from_weights(w)?);
        // next k-combination
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            if subset[pos] < n_p - k + pos {
                break;
            }
        }
        subset[pos] += 1;
        for j in (pos + 1)..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
}
