//! Two-sample inference for principal components of high-dimensional
//! spiked covariance panels.
//!
//! The crate covers the full chain from a `T × N` panel to test decisions:
//!
//! * [`spectral`]: panels, sample covariance, eigen-summaries, factor counts;
//! * [`one_sample`]: `σ̂²_λ`, confidence intervals, `ω̂` weights;
//! * [`two_sample`]: the eigenvalue, ratio and eigenvector tests;
//! * [`gchi2`]: Monte Carlo for coupled generalized chi-square laws;
//! * [`simlab`]: simulation designs and size/power experiments;
//! * [`panel_io`]: CSV ingestion, period splitting and the reporting pipeline.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gchi2;
pub mod one_sample;
pub mod panel_io;
pub mod seed;
pub mod simlab;
pub mod spectral;
pub mod stats;
pub mod two_sample;

pub use faer;

pub use error::{Error, Result};
pub use gchi2::{corollary_diagonal_law, sample_quadform, QuadFormSample, QuadFormSpec};
pub use one_sample::{
    eigenvalue_ci, eigenvector_concentration_stat, omega_hat, omega_weights, ratio_ci,
    sigma2_all, sigma2_lambda_hat, sigma2_minus_k, ConfidenceInterval,
    EigenvalueVarianceEstimate, IntervalTarget, OmegaWeights,
};
pub use seed::{derive_seed, stream_rng};
pub use spectral::{
    align_sign, estimate_factor_count, sample_covariance, spectral_summary, summarize_panel,
    FactorCount, FactorSource, PanelData, SampleCovariance, SpectralSummary,
};
pub use two_sample::{
    eigenvector_null_spec, eigenvector_statistic, eigenvector_test_with_null, run_battery,
    test_eigenvalue, test_eigenvector, test_ratio, xi_matrix, BatteryEntry, FactorChoice,
    LevelDecision, NullLaw, Sample, TestKind, TestResult, TwoSampleInput,
};
