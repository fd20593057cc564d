//! Seeded generators for the synthetic experiments.
//!
//! Every generator is a pure function of its parameters and seed. The stream
//! is ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`). Uniforms on the open
//! interval `(0, 1)` are `((u64 >> 11) + 0.5) / 2^53`; standard normals are
//! produced by pushing one such uniform through [`inverse_normal_cdf`], so a
//! stream can be replayed from the seed without a ziggurat table.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::ratio_model::SampleMatrix;

/// Magnitude of off-diagonal precision entries and of each structural change.
pub const EDGE_WEIGHT: f64 = 0.3;
/// Diagonal margin added on top of the off-diagonal row sum.
pub const DIAGONAL_MARGIN: f64 = 0.5;
const MAX_RESAMPLES: usize = 100;

/// Generator behind every sampler in this module.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child seed for stream `path` under `seed` (SplitMix64 finalizer chain).
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// Uniform draw on the open interval `(0, 1)`.
pub fn open_unit<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    inverse_normal_cdf(open_unit(rng)).expect("open unit interval")
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile (Wichura's AS 241, relative accuracy ~1e-16).
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "inverse normal CDF needs p in (0, 1), got {p}"
        )));
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    Ok(if q < 0.0 { -x } else { x })
}

/// Lower Cholesky factor `L` with `a = L L^T`.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "square matrix",
            expected: n,
            actual: a.ncols(),
        });
    }
    for i in 0..n {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-12 * (1.0 + a[[i, j]].abs()) {
                return Err(Error::NotPositiveDefinite(format!("not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite(format!("pivot {j} = {diag}")));
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(l)
}

/// Pair of Gaussian Markov networks differing on a sparse set of edges.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMNPair {
    pub theta_p: Array2<f64>,
    pub theta_q: Array2<f64>,
    /// `theta_p - theta_q`.
    pub delta_star: Array2<f64>,
    /// Changed `(i, j)` with `i < j`, ascending.
    pub changed_edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMNPairRecord {
    pub d: usize,
    pub seed: u64,
    pub theta_p: Vec<Vec<f64>>,
    pub theta_q: Vec<Vec<f64>>,
    pub delta_star: Vec<Vec<f64>>,
    pub changed_edges: Vec<(usize, usize)>,
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl GaussianMNPair {
    pub fn d(&self) -> usize {
        self.theta_q.nrows()
    }

    pub fn record(&self, seed: u64) -> GaussianMNPairRecord {
        GaussianMNPairRecord {
            d: self.d(),
            seed,
            theta_p: rows_of(&self.theta_p),
            theta_q: rows_of(&self.theta_q),
            delta_star: rows_of(&self.delta_star),
            changed_edges: self.changed_edges.clone(),
        }
    }
}

/// Random sparse precision pair.
///
/// `theta_q` has an Erdos-Renyi support with edge probability `2/d`, weights
/// `+-0.3` and diagonal `row off-diagonal l1 sum + 0.5`. `theta_p` copies it
/// and shifts `n_changed` uniformly chosen pairs by `+-0.3`. Both must pass a
/// Cholesky factorization; otherwise everything is redrawn.
pub fn gen_gaussian_mn_pair(d: usize, n_changed: usize, seed: u64) -> Result<GaussianMNPair> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("need d >= 2, got {d}")));
    }
    let n_pairs = d * (d - 1) / 2;
    if n_changed > n_pairs {
        return Err(Error::InvalidParameter(format!(
            "n_changed = {n_changed} exceeds the {n_pairs} available pairs"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect();
    let edge_prob = 2.0 / d as f64;
    let mut rng = rng_from_seed(seed);

    for _ in 0..MAX_RESAMPLES {
        let mut theta_q = Array2::<f64>::zeros((d, d));
        for &(i, j) in &pairs {
            if open_unit(&mut rng) < edge_prob {
                let w = if rng.gen::<bool>() { EDGE_WEIGHT } else { -EDGE_WEIGHT };
                theta_q[[i, j]] = w;
                theta_q[[j, i]] = w;
            }
        }
        for i in 0..d {
            let off: f64 = (0..d).filter(|&j| j != i).map(|j| theta_q[[i, j]].abs()).sum();
            theta_q[[i, i]] = off + DIAGONAL_MARGIN;
        }

        let mut chosen: Vec<usize> = index::sample(&mut rng, n_pairs, n_changed).into_vec();
        chosen.sort_unstable();
        let mut theta_p = theta_q.clone();
        let mut changed_edges = Vec::with_capacity(n_changed);
        for c in chosen {
            let (i, j) = pairs[c];
            let shift = if rng.gen::<bool>() { EDGE_WEIGHT } else { -EDGE_WEIGHT };
            theta_p[[i, j]] += shift;
            theta_p[[j, i]] += shift;
            changed_edges.push((i, j));
        }

        if cholesky(&theta_q).is_ok() && cholesky(&theta_p).is_ok() {
            let mut delta_star = &theta_p - &theta_q;
            // exact zeros off the changed set
            for ((i, j), v) in delta_star.indexed_iter_mut() {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                if a == b || changed_edges.binary_search(&(a, b)).is_err() {
                    *v = 0.0;
                }
            }
            return Ok(GaussianMNPair {
                theta_p,
                theta_q,
                delta_star,
                changed_edges,
            });
        }
    }
    Err(Error::NotPositiveDefinite(format!(
        "no positive-definite pair after {MAX_RESAMPLES} resamples (d = {d}, n_changed = {n_changed})"
    )))
}

/// `n` draws from `N(0, precision^-1)`: with `precision = L L^T`, each row
/// solves `L^T z = eps` for standard normal `eps`.
pub fn sample_gaussian(precision: &Array2<f64>, n: usize, seed: u64) -> Result<SampleMatrix<f64>> {
    if n == 0 {
        return Err(Error::Empty("requested sample"));
    }
    let l = cholesky(precision)?;
    let d = l.nrows();
    let mut rng = rng_from_seed(seed);
    let mut out = Array2::<f64>::zeros((n, d));
    let mut eps = Array1::<f64>::zeros(d);
    for mut row in out.rows_mut() {
        eps.mapv_inplace(|_| standard_normal(&mut rng));
        for i in (0..d).rev() {
            let mut s = eps[i];
            for k in (i + 1)..d {
                s -= l[[k, i]] * row[k];
            }
            row[i] = s / l[[i, i]];
        }
    }
    SampleMatrix::new(out)
}

/// Appends `count` copies of `point`.
pub fn inject_outliers(x: &SampleMatrix<f64>, point: &[f64], count: usize) -> Result<SampleMatrix<f64>> {
    if point.len() != x.d() {
        return Err(Error::DimensionMismatch {
            context: "outlier point length",
            expected: x.d(),
            actual: point.len(),
        });
    }
    let mut data = x.view().to_owned();
    let row = ndarray::ArrayView1::from(point);
    for _ in 0..count {
        data.push_row(row).expect("row length checked");
    }
    SampleMatrix::new(data)
}

/// One-dimensional outlier protocol.
///
/// `Xp` is a shuffle of `n_good` draws from `N(0, 1)` and `n_out` draws from
/// `U(b - 0.4, b + 0.4)`; `Xq` holds `n_good + n_out` draws from
/// `N(-0.75, 1)` so both samples have the same size.
pub fn gen_outlier_1d(
    n_good: usize,
    n_out: usize,
    b: f64,
    seed: u64,
) -> Result<(SampleMatrix<f64>, SampleMatrix<f64>)> {
    if !b.is_finite() {
        return Err(Error::InvalidParameter(format!("outlier center b must be finite, got {b}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut xp: Vec<f64> = (0..n_good).map(|_| standard_normal(&mut rng)).collect();
    xp.extend((0..n_out).map(|_| b - 0.4 + 0.8 * open_unit(&mut rng)));
    xp.shuffle(&mut rng);
    let xq: Vec<f64> = (0..n_good + n_out)
        .map(|_| OUTLIER_Q_MEAN + standard_normal(&mut rng))
        .collect();
    Ok((SampleMatrix::from_column(&xp)?, SampleMatrix::from_column(&xq)?))
}

/// `n` draws from `N(mu, sigma2)` conditioned on `x <= upper`, by inverse-CDF
/// sampling `Phi^-1(u Phi((upper - mu) / sigma))`.
pub fn sample_truncated_gaussian(
    mu: f64,
    sigma2: f64,
    upper: f64,
    n: usize,
    seed: u64,
) -> Result<SampleMatrix<f64>> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma2 must be > 0, got {sigma2}")));
    }
    if n == 0 {
        return Err(Error::Empty("requested sample"));
    }
    let sigma = sigma2.sqrt();
    let mass = normal_cdf((upper - mu) / sigma);
    if !(mass > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation mass Phi(({upper} - {mu}) / {sigma}) underflows to zero"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let u = open_unit(&mut rng) * mass;
        let z = inverse_normal_cdf(u.min(1.0 - f64::EPSILON / 2.0))?;
        xs.push((mu + sigma * z).min(upper));
    }
    SampleMatrix::from_column(&xs)
}

/// One-dimensional truncation protocol: `Xp ~ N(0, 1)` and
/// `Xq ~ TN(-0.5, 1, -inf, Phi^-1(nu))`.
pub fn gen_truncation_1d(
    n_p: usize,
    n_q: usize,
    nu: f64,
    seed: u64,
) -> Result<(SampleMatrix<f64>, SampleMatrix<f64>)> {
    let upper = inverse_normal_cdf(nu)?;
    if n_p == 0 {
        return Err(Error::Empty("requested sample"));
    }
    let mut rng = rng_from_seed(derive_seed(seed, &[0]));
    let xp: Vec<f64> = (0..n_p).map(|_| standard_normal(&mut rng)).collect();
    let xq = sample_truncated_gaussian(TRUNCATION_Q_MEAN, 1.0, upper, n_q, derive_seed(seed, &[1]))?;
    Ok((SampleMatrix::from_column(&xp)?, xq))
}

/// Mean of the denominator in the truncation protocol.
pub const TRUNCATION_Q_MEAN: f64 = -0.5;
/// Mean of the denominator in the outlier protocol.
pub const OUTLIER_Q_MEAN: f64 = -0.75;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn quantile_examples() {
        assert_eq!(inverse_normal_cdf(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(inverse_normal_cdf(0.975).unwrap(), 1.959964, epsilon = 1e-6);
        assert_abs_diff_eq!(inverse_normal_cdf(0.025).unwrap(), -1.959964, epsilon = 1e-6);
        for p in [0.0, 1.0, -0.1, 1.1, f64::NAN] {
            assert!(inverse_normal_cdf(p).is_err());
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky(&array![[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(cholesky(&array![[1.0, 0.5], [0.0, 1.0]]).is_err());
        let l = cholesky(&array![[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let back = l.dot(&l.t());
        for (a, b) in back.iter().zip([4.0, 2.0, 2.0, 3.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn mn_pair_without_changes() {
        let pair = gen_gaussian_mn_pair(10, 0, 3).unwrap();
        assert!(pair.delta_star.iter().all(|&v| v == 0.0));
        assert_eq!(pair.theta_p, pair.theta_q);
        assert!(gen_gaussian_mn_pair(1, 0, 0).is_err());
        assert!(gen_gaussian_mn_pair(3, 4, 0).is_err());
    }

    #[test]
    fn mn_pair_support_matches_changes() {
        let pair = gen_gaussian_mn_pair(20, 12, 11).unwrap();
        let nonzero = pair.delta_star.iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 2 * pair.changed_edges.len());
        assert_eq!(pair.changed_edges.len(), 12);
        for &(i, j) in &pair.changed_edges {
            assert!(i < j);
            assert_abs_diff_eq!(pair.delta_star[[i, j]].abs(), EDGE_WEIGHT, epsilon = 1e-12);
            assert_eq!(pair.delta_star[[i, j]], pair.delta_star[[j, i]]);
        }
        assert_eq!(pair.theta_p, pair.theta_p.t());
    }

    #[test]
    fn samplers_are_seeded() {
        let prec = array![[2.0, 0.3], [0.3, 1.0]];
        assert_eq!(sample_gaussian(&prec, 50, 9).unwrap(), sample_gaussian(&prec, 50, 9).unwrap());
        assert_ne!(sample_gaussian(&prec, 50, 9).unwrap(), sample_gaussian(&prec, 50, 10).unwrap());
        assert!(sample_gaussian(&prec, 0, 9).is_err());
        assert!(sample_gaussian(&array![[1.0, 2.0], [2.0, 1.0]], 5, 9).is_err());
        assert_eq!(gen_outlier_1d(10, 5, 2.0, 1).unwrap(), gen_outlier_1d(10, 5, 2.0, 1).unwrap());
        assert_eq!(
            sample_truncated_gaussian(-0.5, 1.0, 0.0, 20, 4).unwrap(),
            sample_truncated_gaussian(-0.5, 1.0, 0.0, 20, 4).unwrap()
        );
    }

    #[test]
    fn inject_outliers_appends_copies() {
        let x = SampleMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let y = inject_outliers(&x, &[10.0, 10.0], 2).unwrap();
        assert_eq!(y.n(), 4);
        assert_eq!(y.row(0).to_vec(), vec![1.0, 2.0]);
        assert_eq!(y.row(2).to_vec(), vec![10.0, 10.0]);
        assert_eq!(y.row(3).to_vec(), vec![10.0, 10.0]);
        assert_eq!(inject_outliers(&x, &[10.0, 10.0], 0).unwrap(), x);
        assert!(inject_outliers(&x, &[10.0], 1).is_err());
    }

    #[test]
    fn outlier_protocol_layout() {
        let (xp, xq) = gen_outlier_1d(4000, 1000, 6.0, 5).unwrap();
        assert_eq!((xp.n(), xq.n()), (5000, 5000));
        let outliers = xp.view().iter().filter(|&&v| (5.6..=6.4).contains(&v)).count();
        // a N(0,1) draw above 5.6 is ~1e-8 likely
        assert_eq!(outliers, 1000);
        let (xp, _) = gen_outlier_1d(0, 300, 2.5, 5).unwrap();
        assert!(xp.view().iter().all(|&v| (2.1..=2.9).contains(&v)));
    }

    #[test]
    fn truncation_protocol_layout() {
        let (xp, xq) = gen_truncation_1d(100, 80, 0.5, 3).unwrap();
        assert_eq!((xp.n(), xq.n()), (100, 80));
        assert!(xq.view().iter().all(|&v| v <= 0.0));
        assert!(xp.view().iter().any(|&v| v > 0.0));
        assert_ne!(derive_seed(1, &[2]), derive_seed(1, &[3]));
        assert_ne!(derive_seed(1, &[2, 0]), derive_seed(1, &[2]));
    }

    #[test]
    fn truncated_respects_bound() {
        let x = sample_truncated_gaussian(-0.5, 1.0, 0.0, 10_000, 7).unwrap();
        assert!(x.view().iter().all(|&v| v <= 0.0));
        assert!(sample_truncated_gaussian(0.0, 1.0, -40.0, 5, 7).is_err());
        assert!(sample_truncated_gaussian(0.0, 0.0, 1.0, 5, 7).is_err());
        assert!(sample_truncated_gaussian(0.0, 1.0, 1.0, 0, 7).is_err());
    }
}
