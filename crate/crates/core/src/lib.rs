//! Trimmed density ratio estimation.
//!
//! Estimates `p(x) / q(x)` with a log-linear model normalized over the
//! denominator sample, while discarding the `1 - nu` fraction of numerator
//! samples with the largest fitted log-ratios. The estimator is the max-min
//! problem over `(delta, w)` solved by alternating a sort-based weight
//! assignment with diminishing-step gradient ascent. `nu = 1` recovers
//! log-linear KLIEP.
//!
//! Core math is generic over [`Scalar`] (`f32` or `f64`); the `*64` aliases
//! below fix the double-precision instantiation used by the generators and the
//! command-line tool.

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod ratio_model;
pub mod scalar;
pub mod synthetic;
pub mod trimmed_estimator;

pub use baselines::{brute_force_maxmin_1d, enumerate_weight_vertices, Grid1d};
pub use error::{Error, Result};
pub use evaluation::{
    ratio_curve_error, support_curve, support_metrics, CurveNorm, MnChangeProtocol, MnMethod, Protocol1d, SupportCurve,
    SupportPoint,
};
pub use ratio_model::{
    featurize, log_normalizer, softmax_weights, FeatureMap, FeatureMatrix, RatioModel,
    SampleMatrix,
};
pub use scalar::Scalar;
pub use synthetic::GaussianMNPair;
pub use trimmed_estimator::{
    assign_weights, fit, fit_features, fit_kliep, gradient, kkt_check, objective,
    reg_value_and_subgradient, FitRecord, FitResult, KktReport, L1Step, Regularizer, TrimConfig,
    WeightVector,
};

pub type SampleMatrix64 = SampleMatrix<f64>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type FeatureMatrix64 = FeatureMatrix<f64>;
pub type RatioModel64 = RatioModel<f64>;
pub type WeightVector64 = WeightVector<f64>;
pub type TrimConfig64 = TrimConfig<f64>;
pub type FitResult64 = FitResult<f64>;
pub type KktReport64 = KktReport<f64>;
