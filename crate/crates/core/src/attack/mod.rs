//! Offline likelihood-ratio membership inference.
//!
//! Each shadow model is attacked in turn: every sample's logit confidence
//! `φ = ln(q/(1−q))` is compared with a Gaussian fitted to non-member
//! confidences, the score `Λ = Φ((φ − μ_out)/σ_out)` is thresholded, and the
//! decision is checked against the stored membership bit.

mod asr;
mod equivalence;
mod shadow;

pub use asr::{compute_asr, dataset_sensitivity, AsrReport, AsrSummary, NullMode};
pub use equivalence::{find_equivalent_epsilon, AsrStatistic, EquivalenceReport, EquivalenceSearch};
pub use shadow::{build_shadow_ensemble, ShadowEnsemble, ShadowTrainer};

use serde::{Deserialize, Serialize};

use crate::model::{confidence, Classifier, ModelError};
use crate::stats::{normal_cdf, sample_std};

/// Floor on fitted null standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-6;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("confidence {0} outside the open interval (0, 1)")]
    InvalidConfidence(f64),
    #[error("null fit needs at least 2 out samples, got {0}")]
    TooFewOutSamples(usize),
    #[error("shadow ensemble needs at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("cannot draw a membership row with both members and non-members for {0} samples")]
    DegenerateMembership(usize),
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error("no grid ε qualifies: reference ASR {reference:.4}, masked curve {curve:?}")]
    NoEquivalent { reference: f64, curve: Vec<(f64, f64)> },
    #[error("shadow model {index} failed: {source}")]
    Training { index: usize, source: Box<dyn std::error::Error + Send + Sync> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Dp(#[from] crate::dp::DpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, AttackError>;

/// `ln(q/(1−q))` for an already-clamped confidence.
pub fn logit_confidence(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(AttackError::InvalidConfidence(q));
    }
    Ok(q.ln() - (-q).ln_1p())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianNull {
    pub mu_out: f64,
    pub sigma_out: f64,
}

impl GaussianNull {
    /// Sample mean and unbiased std of `phis`, std floored at [`SIGMA_FLOOR`].
    pub fn fit(phis: &[f64]) -> Result<Self> {
        if phis.len() < 2 {
            return Err(AttackError::TooFewOutSamples(phis.len()));
        }
        let mu = phis.iter().sum::<f64>() / phis.len() as f64;
        Ok(Self { mu_out: mu, sigma_out: sample_std(phis).max(SIGMA_FLOOR) })
    }

    /// `Φ((φ − μ)/σ)`.
    pub fn score(&self, phi: f64) -> f64 {
        normal_cdf((phi - self.mu_out) / self.sigma_out)
    }
}

/// Null fitted on `model`'s confidences for the given out samples.
pub fn fit_null<C: Classifier + ?Sized>(model: &C, out: &crate::data::LabeledView<'_>) -> Result<GaussianNull> {
    let phis = logits(model, out)?;
    GaussianNull::fit(&phis)
}

pub(crate) fn logits<C: Classifier + ?Sized>(model: &C, view: &crate::data::LabeledView<'_>) -> Result<Vec<f64>> {
    if view.num_features != model.num_features() {
        return Err(ModelError::DimensionMismatch { expected: model.num_features(), got: view.num_features }.into());
    }
    (0..view.len()).map(|i| logit_confidence(confidence(model, view.row(i), view.labels[i]))).collect()
}

/// Likelihood score Λ of `(x, y)` against `null`.
pub fn lira_score<C: Classifier + ?Sized>(model: &C, null: &GaussianNull, x: &[f64], y: usize) -> Result<f64> {
    if x.len() != model.num_features() {
        return Err(ModelError::DimensionMismatch { expected: model.num_features(), got: x.len() }.into());
    }
    if y >= model.num_classes() {
        return Err(ModelError::BadLabel { label: y, classes: model.num_classes() }.into());
    }
    Ok(null.score(logit_confidence(confidence(model, x, y))?))
}

/// Member iff `Λ > threshold`; a tie is a non-member.
pub fn lira_decide(score: f64, threshold: f64) -> bool {
    score > threshold
}
