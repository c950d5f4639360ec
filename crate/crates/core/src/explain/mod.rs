//! Per-feature attributions for the identity task (privacy sensitivity)
//! and the utility task (utility sensitivity).
//!
//! The baseline for every explainer is the all-zeros vector, which is also
//! what masking writes into a dropped feature, and the explained quantity is
//! the model's probability for the sample's own label.

mod shapley;
mod surrogate;

pub use shapley::{shapley_exact, shapley_sampled, ShapleyEstimate, EXACT_SHAPLEY_MAX_FEATURES};
pub use surrogate::{default_kernel_width, kernel_weight, local_surrogate};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledView, Task};
use crate::model::Classifier;
use crate::seed::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error("exact Shapley enumeration supports at most {limit} features, got {k}")]
    TooManyFeatures { k: usize, limit: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("target class {target} out of range for {classes} classes")]
    BadTarget { target: usize, classes: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("surrogate regression system is singular")]
    SingularSystem,
    #[error("class {0} has no samples to aggregate")]
    EmptyClass(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ExplainError>;

pub(crate) fn check_inputs<C: Classifier + ?Sized>(
    model: &C,
    x: &[f64],
    baseline: &[f64],
    target: usize,
) -> Result<()> {
    let k = model.num_features();
    for v in [x, baseline] {
        if v.len() != k {
            return Err(ExplainError::DimensionMismatch { expected: k, got: v.len() });
        }
    }
    if target >= model.num_classes() {
        return Err(ExplainError::BadTarget { target, classes: model.num_classes() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExplainerKind {
    ShapleyExact,
    ShapleySampled { num_permutations: usize },
    LocalSurrogate { num_perturbations: usize, kernel_width: Option<f64>, ridge: f64 },
}

impl ExplainerKind {
    /// Exact Shapley when `K` allows enumeration, permutation sampling otherwise.
    pub fn shapley_for(num_features: usize, num_permutations: usize) -> Self {
        if num_features <= EXACT_SHAPLEY_MAX_FEATURES {
            Self::ShapleyExact
        } else {
            Self::ShapleySampled { num_permutations }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ShapleyExact => "shapley-exact",
            Self::ShapleySampled { .. } => "shapley-sampled",
            Self::LocalSurrogate { .. } => "local-surrogate",
        }
    }

    /// Signed attribution of `x` for `target`.
    pub fn explain<C: Classifier + ?Sized>(&self, model: &C, x: &[f64], target: usize, seed: u64) -> Result<Vec<f64>> {
        let baseline = vec![0.0; x.len()];
        match *self {
            Self::ShapleyExact => shapley_exact(model, x, &baseline, target),
            Self::ShapleySampled { num_permutations } => {
                Ok(shapley_sampled(model, x, &baseline, target, num_permutations, seed)?.values)
            }
            Self::LocalSurrogate { num_perturbations, kernel_width, ridge } => {
                let width = kernel_width.unwrap_or_else(|| default_kernel_width(x.len()));
                local_surrogate(model, x, target, num_perturbations, width, ridge, seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    PerSample,
    PerClass,
}

/// Non-negative per-feature sensitivities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityVector {
    pub values: Vec<f64>,
    pub task: Task,
    pub scope: Scope,
    pub class_id: Option<usize>,
    pub explainer: String,
}

/// `max(v, 0)` elementwise.
pub fn clip_positive(signed: &[f64], task: Task, explainer: &str) -> SensitivityVector {
    SensitivityVector {
        values: signed.iter().map(|v| v.max(0.0)).collect(),
        task,
        scope: Scope::PerSample,
        class_id: None,
        explainer: explainer.to_string(),
    }
}

/// Clipped attribution of every sample in `view` for its own label.
/// Sample `i` uses seed `derive_seed(seed, [i])`.
pub fn explain_samples<C: Classifier + ?Sized>(
    model: &C,
    view: &LabeledView<'_>,
    task: Task,
    kind: &ExplainerKind,
    seed: u64,
) -> Result<Vec<SensitivityVector>> {
    if view.num_features != model.num_features() {
        return Err(ExplainError::DimensionMismatch { expected: model.num_features(), got: view.num_features });
    }
    (0..view.len())
        .into_par_iter()
        .map(|i| {
            let phi = kind.explain(model, view.row(i), view.labels[i], derive_seed(seed, &[i as u64]))?;
            Ok(clip_positive(&phi, task, kind.name()))
        })
        .collect()
}

/// Mean vector per class; every class in `0..num_classes` must occur.
pub fn class_aggregate(
    per_sample: &[SensitivityVector],
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<SensitivityVector>> {
    if per_sample.len() != labels.len() {
        return Err(ExplainError::DimensionMismatch { expected: per_sample.len(), got: labels.len() });
    }
    let first = per_sample.first().ok_or(ExplainError::EmptyClass(0))?;
    let k = first.values.len();
    let mut sums = vec![vec![0.0; k]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (v, &c) in per_sample.iter().zip(labels) {
        if v.values.len() != k {
            return Err(ExplainError::DimensionMismatch { expected: k, got: v.values.len() });
        }
        if c >= num_classes {
            return Err(ExplainError::BadTarget { target: c, classes: num_classes });
        }
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(&v.values) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (sum, n))| {
            if n == 0 {
                return Err(ExplainError::EmptyClass(c));
            }
            Ok(SensitivityVector {
                values: sum.into_iter().map(|s| s / n as f64).collect(),
                task: first.task,
                scope: Scope::PerClass,
                class_id: Some(c),
                explainer: first.explainer.clone(),
            })
        })
        .collect()
}

/// CSV `class_id,feature_id,value,task,explainer`; per-sample vectors are
/// written with their position as `class_id`.
pub fn write_sensitivity_csv(vectors: &[SensitivityVector], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class_id", "feature_id", "value", "task", "explainer"])?;
    for (pos, v) in vectors.iter().enumerate() {
        let id = v.class_id.unwrap_or(pos);
        for (j, x) in v.values.iter().enumerate() {
            w.write_record([
                id.to_string(),
                j.to_string(),
                x.to_string(),
                v.task.as_str().to_string(),
                v.explainer.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(values: Vec<f64>) -> SensitivityVector {
        clip_positive(&values, Task::Identity, "shapley-exact")
    }

    #[test]
    fn clipping() {
        assert_eq!(sv(vec![-1.0, 0.0, 2.0]).values, vec![0.0, 0.0, 2.0]);
        assert_eq!(sv(vec![-1.0, -3.0]).values, vec![0.0, 0.0]);
        let once = sv(vec![0.5, -0.5]);
        assert_eq!(sv(once.values.clone()).values, once.values);
    }

    #[test]
    fn aggregation() {
        let v = vec![sv(vec![0.0, 2.0]), sv(vec![2.0, 0.0]), sv(vec![3.0, 1.0])];
        let agg = class_aggregate(&v, &[0, 0, 1], 2).unwrap();
        assert_eq!(agg[0].values, vec![1.0, 1.0]);
        assert_eq!(agg[1].values, vec![3.0, 1.0]);
        assert_eq!(agg[1].class_id, Some(1));
        assert!(matches!(class_aggregate(&v, &[0, 0, 0], 2), Err(ExplainError::EmptyClass(1))));
    }

    #[test]
    fn auto_choice() {
        assert_eq!(ExplainerKind::shapley_for(15, 10), ExplainerKind::ShapleyExact);
        assert_eq!(ExplainerKind::shapley_for(16, 10), ExplainerKind::ShapleySampled { num_permutations: 10 });
    }
}
