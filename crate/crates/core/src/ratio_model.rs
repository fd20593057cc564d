//! Feature transforms and the log-linear density ratio model
//!
//! The model is `r(x; delta) = exp(<delta, f(x)> - log N(delta))` where the
//! normalizer `N(delta)` is the sample mean of `exp(<delta, f(x_q)>)` over the
//! denominator sample. All normalizer and softmax evaluations go through a
//! max-shifted log-sum-exp, so scores of magnitude ~700 are handled without
//! overflow.

use std::io::{self, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `n x d` matrix of observations, one sample per row. All entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix<T> {
    data: Array2<T>,
}

impl<T: Scalar> SampleMatrix<T> {
    pub fn new(data: Array2<T>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Empty("sample matrix"));
        }
        if data.ncols() == 0 {
            return Err(Error::Empty("sample dimension"));
        }
        check_finite(data.view(), "sample matrix")?;
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("sample matrix"));
        }
        let d = rows[0].len();
        let mut flat = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "sample row length",
                    expected: d,
                    actual: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let data = Array2::from_shape_vec((n, d), flat).expect("shape checked");
        Self::new(data)
    }

    /// One-dimensional sample, one scalar per row.
    pub fn from_column(values: &[T]) -> Result<Self> {
        let data = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .expect("column shape");
        Self::new(data)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.data.row(i)
    }

    pub fn into_inner(self) -> Array2<T> {
        self.data
    }

    /// Rows in the given order. `order` must index existing rows.
    pub fn select_rows(&self, order: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), order),
        }
    }

    /// Converts every entry to another scalar type.
    pub fn cast<U: Scalar>(&self) -> SampleMatrix<U> {
        SampleMatrix {
            data: self.data.mapv(|v| U::of(v.as_f64())),
        }
    }

    /// Writes the matrix as comma-separated rows without a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for row in self.data.rows() {
            write_csv_row(&mut out, row.iter().copied())?;
        }
        Ok(())
    }
}

/// Sufficient-statistic transform `x -> f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap<T> {
    /// `f(x) = x`.
    Linear,
    /// Products `x_i * x_j` for `i <= j`, emitted row-major over the upper
    /// triangle: `x1*x1, x1*x2, ..., x1*xd, x2*x2, ...`.
    PairwiseQuadratic,
    /// `exp(-|x - b_k|^2 / (2 sigma^2))` for every basis row `b_k`.
    GaussianKernel {
        basis: SampleMatrix<T>,
        bandwidth: T,
    },
}

impl<T: Scalar> FeatureMap<T> {
    /// Gaussian kernel map. Without an explicit bandwidth the median pairwise
    /// distance of the basis rows is used.
    pub fn gaussian_kernel(basis: SampleMatrix<T>, bandwidth: Option<T>) -> Result<Self> {
        let bandwidth = match bandwidth {
            Some(bw) => bw,
            None => median_pairwise_distance(&basis)?,
        };
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(FeatureMap::GaussianKernel { basis, bandwidth })
    }

    /// Number of features produced for inputs of dimension `d`.
    pub fn output_dim(&self, d: usize) -> usize {
        match self {
            FeatureMap::Linear => d,
            FeatureMap::PairwiseQuadratic => d * (d + 1) / 2,
            FeatureMap::GaussianKernel { basis, .. } => basis.n(),
        }
    }

    /// Column names: `x1`, `x1*x2`, `k(b3,.)` (all 1-based).
    pub fn feature_names(&self, d: usize) -> Vec<String> {
        match self {
            FeatureMap::Linear => (1..=d).map(|i| format!("x{i}")).collect(),
            FeatureMap::PairwiseQuadratic => {
                let mut names = Vec::with_capacity(d * (d + 1) / 2);
                for i in 1..=d {
                    for j in i..=d {
                        names.push(format!("x{i}*x{j}"));
                    }
                }
                names
            }
            FeatureMap::GaussianKernel { basis, .. } => {
                (1..=basis.n()).map(|k| format!("k(b{k},.)")).collect()
            }
        }
    }

    fn check_input_dim(&self, d: usize) -> Result<()> {
        if let FeatureMap::GaussianKernel { basis, .. } = self {
            if basis.d() != d {
                return Err(Error::DimensionMismatch {
                    context: "kernel basis columns vs input dimension",
                    expected: basis.d(),
                    actual: d,
                });
            }
        }
        Ok(())
    }

    /// Features of a single point.
    pub fn apply(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
        self.check_input_dim(x.len())?;
        if let Some(col) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "featurize input",
                row: 0,
                col,
            });
        }
        let mut out = Array1::zeros(self.output_dim(x.len()));
        self.fill_row(x, out.view_mut().into_slice().expect("contiguous"));
        Ok(out)
    }

    fn fill_row(&self, x: ArrayView1<'_, T>, out: &mut [T]) {
        match self {
            FeatureMap::Linear => {
                for (o, &v) in out.iter_mut().zip(x.iter()) {
                    *o = v;
                }
            }
            FeatureMap::PairwiseQuadratic => {
                let d = x.len();
                let mut k = 0;
                for i in 0..d {
                    for j in i..d {
                        out[k] = x[i] * x[j];
                        k += 1;
                    }
                }
            }
            FeatureMap::GaussianKernel { basis, bandwidth } => {
                let denom = T::of(2.0) * *bandwidth * *bandwidth;
                for (o, b) in out.iter_mut().zip(basis.view().rows()) {
                    let sq: T = x
                        .iter()
                        .zip(b.iter())
                        .map(|(&a, &c)| (a - c) * (a - c))
                        .sum();
                    *o = (-sq / denom).exp();
                }
            }
        }
    }
}

fn median_pairwise_distance<T: Scalar>(basis: &SampleMatrix<T>) -> Result<T> {
    let n = basis.n();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "median-heuristic bandwidth needs at least two basis rows".into(),
        ));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: T = basis
                .row(i)
                .iter()
                .zip(basis.row(j).iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            dists.push(sq.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        (dists[m / 2 - 1] + dists[m / 2]) / T::of(2.0)
    };
    if median > T::zero() {
        Ok(median)
    } else {
        Err(Error::InvalidParameter(
            "median pairwise distance of the kernel basis is zero".into(),
        ))
    }
}

/// Featurized samples: row `i` is `f(x_i)`, with one name per column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    values: Array2<T>,
    names: Vec<String>,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Wraps raw feature values with generic names `f1, f2, ...`.
    pub fn from_array(values: Array2<T>) -> Result<Self> {
        check_finite(values.view(), "feature matrix")?;
        let names = (1..=values.ncols()).map(|k| format!("f{k}")).collect();
        Ok(Self { values, names })
    }

    pub fn with_names(values: Array2<T>, names: Vec<String>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::DimensionMismatch {
                context: "feature names",
                expected: values.ncols(),
                actual: names.len(),
            });
        }
        check_finite(values.view(), "feature matrix")?;
        Ok(Self { values, names })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.values.row(i)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Scores `<delta, phi_i>` for every row.
    pub fn scores(&self, delta: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if delta.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                context: "parameter length vs feature columns",
                expected: self.ncols(),
                actual: delta.len(),
            });
        }
        Ok(self.values.dot(&delta))
    }

    /// CSV with a header row of feature names.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", self.names.join(","))?;
        for row in self.values.rows() {
            write_csv_row(&mut out, row.iter().copied())?;
        }
        Ok(())
    }
}

/// Applies `map` to every row of `x`. Output row order follows input order.
pub fn featurize<T: Scalar>(x: &SampleMatrix<T>, map: &FeatureMap<T>) -> Result<FeatureMatrix<T>> {
    map.check_input_dim(x.d())?;
    let m = map.output_dim(x.d());
    let mut values = Array2::zeros((x.n(), m));
    for (src, mut dst) in x.view().rows().into_iter().zip(values.rows_mut()) {
        map.fill_row(src, dst.as_slice_mut().expect("standard layout"));
    }
    Ok(FeatureMatrix {
        values,
        names: map.feature_names(x.d()),
    })
}

/// `log( (1/n) sum_j exp(s_j) )` with max subtraction.
pub(crate) fn log_mean_exp<T: Scalar>(scores: ArrayView1<'_, T>) -> T {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = scores.iter().map(|&s| (s - max).exp()).sum();
    max + sum.ln() - T::of_usize(scores.len()).ln()
}

/// Empirical log-normalizer `log N(delta)` over the denominator features.
pub fn log_normalizer<T: Scalar>(delta: ArrayView1<'_, T>, phi_q: &FeatureMatrix<T>) -> Result<T> {
    if phi_q.nrows() == 0 {
        return Err(Error::Empty("denominator feature matrix"));
    }
    let scores = phi_q.scores(delta)?;
    Ok(log_mean_exp(scores.view()))
}

/// Normalized weights `exp<delta, phi_q_j> / sum_k exp<delta, phi_q_k>`.
pub fn softmax_weights<T: Scalar>(
    delta: ArrayView1<'_, T>,
    phi_q: &FeatureMatrix<T>,
) -> Result<Array1<T>> {
    if phi_q.nrows() == 0 {
        return Err(Error::Empty("denominator feature matrix"));
    }
    let scores = phi_q.scores(delta)?;
    Ok(softmax(scores.view()))
}

pub(crate) fn softmax<T: Scalar>(scores: ArrayView1<'_, T>) -> Array1<T> {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let mut w = scores.mapv(|s| (s - max).exp());
    let total: T = w.iter().copied().sum();
    w.mapv_inplace(|v| v / total);
    // second pass pins the sum to one after rounding
    let total: T = w.iter().copied().sum();
    w.mapv_inplace(|v| v / total);
    w
}

/// Log-linear ratio model with a log-normalizer cached against one
/// featurized denominator sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioModel<T> {
    delta: Array1<T>,
    features: FeatureMap<T>,
    log_normalizer: T,
}

impl<T: Scalar> RatioModel<T> {
    pub fn new(delta: Array1<T>, features: FeatureMap<T>, phi_q: &FeatureMatrix<T>) -> Result<Self> {
        let log_normalizer = log_normalizer(delta.view(), phi_q)?;
        Ok(Self {
            delta,
            features,
            log_normalizer,
        })
    }

    pub fn delta(&self) -> ArrayView1<'_, T> {
        self.delta.view()
    }

    pub fn features(&self) -> &FeatureMap<T> {
        &self.features
    }

    pub fn log_normalizer(&self) -> T {
        self.log_normalizer
    }

    /// Replaces the parameter and recomputes the cached normalizer.
    pub fn set_delta(&mut self, delta: Array1<T>, phi_q: &FeatureMatrix<T>) -> Result<()> {
        self.log_normalizer = log_normalizer(delta.view(), phi_q)?;
        self.delta = delta;
        Ok(())
    }

    /// `<delta, phi> - log N(delta)`.
    pub fn log_ratio(&self, phi: ArrayView1<'_, T>) -> Result<T> {
        if phi.len() != self.delta.len() {
            return Err(Error::DimensionMismatch {
                context: "feature vector length vs parameter length",
                expected: self.delta.len(),
                actual: phi.len(),
            });
        }
        Ok(self.delta.dot(&phi) - self.log_normalizer)
    }

    pub fn ratio(&self, phi: ArrayView1<'_, T>) -> Result<T> {
        self.log_ratio(phi).map(T::exp)
    }

    /// Log-ratio at a raw input point.
    pub fn log_ratio_at(&self, x: ArrayView1<'_, T>) -> Result<T> {
        let phi = self.features.apply(x)?;
        self.log_ratio(phi.view())
    }

    /// Log-ratios for every row of a feature matrix.
    pub fn log_ratios(&self, phi: &FeatureMatrix<T>) -> Result<Array1<T>> {
        let mut s = phi.scores(self.delta.view())?;
        s.mapv_inplace(|v| v - self.log_normalizer);
        Ok(s)
    }
}

fn check_finite<T: Scalar>(data: ArrayView2<'_, T>, context: &'static str) -> Result<()> {
    for ((row, col), v) in data.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { context, row, col });
        }
    }
    Ok(())
}

fn write_csv_row<W: Write, T: Scalar>(out: &mut W, values: impl Iterator<Item = T>) -> io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            out.write_all(b",")?;
        }
        first = false;
        write!(out, "{v}")?;
    }
    out.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    fn fm(rows: &[&[f64]]) -> FeatureMatrix<f64> {
        let n = rows.len();
        let m = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        FeatureMatrix::from_array(Array2::from_shape_vec((n, m), flat).unwrap()).unwrap()
    }

    #[test]
    fn linear_is_identity() {
        let x = SampleMatrix::from_rows(&[vec![2.0, -1.0]]).unwrap();
        let phi = featurize(&x, &FeatureMap::Linear).unwrap();
        assert_eq!(phi.row(0).to_vec(), vec![2.0, -1.0]);
        assert_eq!(phi.names(), &["x1", "x2"]);
    }

    #[test]
    fn quadratic_upper_triangle_order() {
        let x = SampleMatrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let phi = featurize(&x, &FeatureMap::PairwiseQuadratic).unwrap();
        assert_eq!(phi.row(0).to_vec(), vec![4.0, 6.0, 9.0]);
        assert_eq!(phi.names(), &["x1*x1", "x1*x2", "x2*x2"]);
        let names = FeatureMap::<f64>::PairwiseQuadratic.feature_names(3);
        assert_eq!(names, ["x1*x1", "x1*x2", "x1*x3", "x2*x2", "x2*x3", "x3*x3"]);
    }

    #[test]
    fn kernel_at_center_is_one() {
        let basis = SampleMatrix::from_rows(&[vec![0.0]]).unwrap();
        let map = FeatureMap::gaussian_kernel(basis, Some(1.0)).unwrap();
        let x = SampleMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let phi = featurize(&x, &map).unwrap();
        assert_eq!(phi.row(0)[0], 1.0);
        assert_abs_diff_eq!(phi.row(1)[0], (-0.5f64).exp(), epsilon = 1e-15);
        assert_eq!(phi.names(), &["k(b1,.)"]);
    }

    #[test]
    fn kernel_median_bandwidth() {
        let basis = SampleMatrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        // distances 1, 3, 2 -> median 2
        match FeatureMap::gaussian_kernel(basis, None).unwrap() {
            FeatureMap::GaussianKernel { bandwidth, .. } => assert_eq!(bandwidth, 2.0),
            _ => unreachable!(),
        }
        let single = SampleMatrix::from_rows(&[vec![0.0]]).unwrap();
        assert!(FeatureMap::gaussian_kernel(single, None).is_err());
        let b = SampleMatrix::from_rows(&[vec![0.0]]).unwrap();
        assert!(FeatureMap::gaussian_kernel(b, Some(0.0)).is_err());
    }

    #[test]
    fn featurize_errors() {
        let basis = SampleMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let map = FeatureMap::gaussian_kernel(basis, Some(1.0)).unwrap();
        let x = SampleMatrix::from_rows(&[vec![0.0]]).unwrap();
        assert!(matches!(
            featurize(&x, &map),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            SampleMatrix::from_rows(&[vec![f64::NAN]]),
            Err(Error::NonFinite { .. })
        ));
        assert!(SampleMatrix::<f64>::from_rows(&[]).is_err());
        assert!(FeatureMap::Linear.apply(array![1.0, f64::INFINITY].view()).is_err());
    }

    #[test]
    fn normalizer_examples() {
        let q = fm(&[&[1.0], &[-1.0]]);
        assert_eq!(log_normalizer(array![0.0].view(), &q).unwrap(), 0.0);
        let single = fm(&[&[0.3, -2.0]]);
        assert_abs_diff_eq!(
            log_normalizer(array![1.5, 0.25].view(), &single).unwrap(),
            0.45 - 0.5,
            epsilon = 1e-15
        );
        let ln2 = 2f64.ln();
        assert_abs_diff_eq!(
            log_normalizer(array![ln2].view(), &q).unwrap(),
            0.2231435513,
            epsilon = 1e-10
        );
        let empty = FeatureMatrix::from_array(Array2::<f64>::zeros((0, 1))).unwrap();
        assert_eq!(
            log_normalizer(array![0.0].view(), &empty),
            Err(Error::Empty("denominator feature matrix"))
        );
    }

    #[test]
    fn normalizer_does_not_overflow() {
        let q = fm(&[&[700.0], &[710.0], &[-700.0]]);
        let v = log_normalizer(array![1.0].view(), &q).unwrap();
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, 710.0 + (1.0 + (-10f64).exp()).ln() - 3f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn log_ratio_examples() {
        let q = fm(&[&[1.0], &[-1.0]]);
        let ln2 = 2f64.ln();
        let model = RatioModel::new(array![ln2], FeatureMap::Linear, &q).unwrap();
        assert_abs_diff_eq!(
            model.log_ratio(array![1.0].view()).unwrap(),
            0.4700036292,
            epsilon = 1e-10
        );
        let zero = RatioModel::new(array![0.0], FeatureMap::Linear, &q).unwrap();
        assert_eq!(zero.log_ratio(array![123.0].view()).unwrap(), 0.0);
        assert!(model.log_ratio(array![1.0, 2.0].view()).is_err());
        assert_abs_diff_eq!(
            model.log_ratio_at(array![1.0].view()).unwrap(),
            0.4700036292,
            epsilon = 1e-10
        );
    }

    #[test]
    fn set_delta_refreshes_normalizer() {
        let q = fm(&[&[1.0], &[-1.0]]);
        let mut model = RatioModel::new(array![0.0], FeatureMap::Linear, &q).unwrap();
        assert_eq!(model.log_normalizer(), 0.0);
        model.set_delta(array![2f64.ln()], &q).unwrap();
        assert_abs_diff_eq!(model.log_normalizer(), 0.2231435513, epsilon = 1e-10);
    }

    #[test]
    fn softmax_examples() {
        let q = fm(&[&[1.0], &[-1.0]]);
        let w = softmax_weights(array![2f64.ln()].view(), &q).unwrap();
        assert_abs_diff_eq!(w[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.2, epsilon = 1e-15);
        let uniform = softmax_weights(array![0.0].view(), &fm(&[&[1.0], &[2.0], &[3.0], &[4.0]])).unwrap();
        assert!(uniform.iter().all(|&v| v == 0.25));
        let one = softmax_weights(array![5.0].view(), &fm(&[&[3.0]])).unwrap();
        assert_eq!(one, Array1::from(vec![1.0]));
    }

    #[test]
    fn csv_output() {
        let x = SampleMatrix::from_rows(&[vec![1.0, 2.5]]).unwrap();
        let phi = featurize(&x, &FeatureMap::PairwiseQuadratic).unwrap();
        let mut buf = Vec::new();
        phi.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1*x1,x1*x2,x2*x2\n1,2.5,6.25\n");
        let mut buf = Vec::new();
        x.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,2.5\n");
    }

    #[test]
    fn works_in_single_precision() {
        let q = FeatureMatrix::from_array(array![[1.0f32], [-1.0]]).unwrap();
        let w = softmax_weights(array![2f32.ln()].view(), &q).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-6);
    }
}
