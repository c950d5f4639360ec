//! DP-SGD training and privacy accounting.

mod accountant;
mod sgd;

pub use accountant::{
    account_epsilon, account_epsilon_with_orders, calibrate_noise, default_orders, rdp_subsampled_gaussian,
    rdp_subsampled_gaussian_series, rdp_to_epsilon, AccountingReport, PrivacySpec, SIGMA_SEARCH_RANGE,
};
pub use sgd::{
    clip_per_sample, dp_sgd_step, poisson_sample, train_dp, train_dp_with_spec, DpSettings, NoiseSetting, StepStats,
};

use crate::model::ModelError;

/// Default δ.
pub const DEFAULT_DELTA: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum DpError {
    #[error("invalid privacy spec: {0}")]
    InvalidSpec(String),
    #[error("target ε = {epsilon_target} unreachable for noise multipliers in {sigma_range:?}")]
    Unreachable { epsilon_target: f64, sigma_range: (f64, f64) },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("DP-SGD diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, DpError>;
