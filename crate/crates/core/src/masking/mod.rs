//! Class-wise binary feature masks: knapsack-optimised, top-k% and random,
//! plus the end-to-end explain → aggregate → optimise → mask pipeline.

mod knapsack;

pub use knapsack::{capacity, masked_sum, optimize_mask, MaskSolution, Solver, CAPACITY_SHAVE, EXACT_MAX_FEATURES};

use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{DualTaskDataset, Task};
use crate::explain::{class_aggregate, explain_samples, ExplainError, ExplainerKind, SensitivityVector};
use crate::model::Classifier;
use crate::seed::{derive_seed, rng_from_seed, tag};

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no mask for class {0}")]
    MissingClass(usize),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MaskError>;

/// Default top-k percentage used when the optimiser falls back.
pub const DEFAULT_FALLBACK_K: f64 = 30.0;

/// Masks (sets `false`) the `⌈K·k/100⌉` features with the largest `s`;
/// among equal values the lower index is masked first.
pub fn top_k_mask(s: &[f64], k_percent: f64) -> Result<Vec<bool>> {
    if !(0.0..=100.0).contains(&k_percent) {
        return Err(MaskError::InvalidParameter(format!("k_percent {k_percent} outside [0,100]")));
    }
    let k = s.len();
    let count = ((k as f64 * k_percent / 100.0 - 1e-9).ceil().max(0.0) as usize).min(k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut keep = vec![true; k];
    for &j in &order[..count] {
        keep[j] = false;
    }
    Ok(keep)
}

/// Masks exactly `⌊K·fraction⌋` uniformly chosen features.
pub fn random_mask(num_features: usize, fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(MaskError::InvalidParameter(format!("fraction {fraction} outside [0,1]")));
    }
    let count = ((num_features as f64 * fraction + 1e-9).floor() as usize).min(num_features);
    Ok(random_mask_count(num_features, count, seed))
}

fn random_mask_count(num_features: usize, count: usize, seed: u64) -> Vec<bool> {
    let mut keep = vec![true; num_features];
    for j in sample(&mut rng_from_seed(seed), num_features, count) {
        keep[j] = false;
    }
    keep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMethod {
    Optimized,
    TopK,
    Random,
}

impl MaskMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Optimized => "optimized",
            Self::TopK => "top-k",
            Self::Random => "random",
        }
    }
}

/// Why a class's optimised mask was replaced by a top-k mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    pub class_id: usize,
    pub reason: String,
}

/// One keep-mask per class of `class_source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMaskSet {
    /// `masks[z][j]`: keep feature `j` for class `z`.
    pub masks: Vec<Vec<bool>>,
    pub alpha: f64,
    pub method: MaskMethod,
    /// `m_zᵀS_z` per class (0 when no sensitivities are attached).
    pub budget_used: Vec<f64>,
    pub class_source: Task,
    pub fallbacks: Vec<Fallback>,
    pub explainer: Option<String>,
    pub seed: u64,
}

impl ClassMaskSet {
    /// The same mask for every class.
    pub fn uniform(mask: Vec<bool>, num_classes: usize, method: MaskMethod, class_source: Task, seed: u64) -> Self {
        Self {
            masks: vec![mask; num_classes],
            alpha: 0.0,
            method,
            budget_used: vec![0.0; num_classes],
            class_source,
            fallbacks: Vec::new(),
            explainer: None,
            seed,
        }
    }

    /// Top-k% mask per class from class sensitivities `s[z]`.
    pub fn top_k(s: &[SensitivityVector], k_percent: f64, class_source: Task) -> Result<Self> {
        let masks = s.iter().map(|v| top_k_mask(&v.values, k_percent)).collect::<Result<Vec<_>>>()?;
        let budget_used = masks.iter().zip(s).map(|(m, v)| masked_sum(m, &v.values)).collect();
        Ok(Self {
            masks,
            alpha: 0.0,
            method: MaskMethod::TopK,
            budget_used,
            class_source,
            fallbacks: Vec::new(),
            explainer: s.first().map(|v| v.explainer.clone()),
            seed: 0,
        })
    }

    /// Random masks dropping, per class, as many features as `reference`
    /// does for that class.
    pub fn random_matching(reference: &ClassMaskSet, seed: u64) -> Self {
        let masks = reference
            .masks
            .iter()
            .enumerate()
            .map(|(z, m)| {
                let dropped = m.iter().filter(|&&k| !k).count();
                random_mask_count(m.len(), dropped, derive_seed(seed, &[tag("random-mask"), z as u64]))
            })
            .collect::<Vec<_>>();
        Self {
            budget_used: vec![0.0; masks.len()],
            masks,
            alpha: reference.alpha,
            method: MaskMethod::Random,
            class_source: reference.class_source,
            fallbacks: Vec::new(),
            explainer: None,
            seed,
        }
    }

    pub fn num_masked(&self) -> Vec<usize> {
        self.masks.iter().map(|m| m.iter().filter(|&&k| !k).count()).collect()
    }

    /// Mean fraction of masked features over classes.
    pub fn masked_fraction(&self) -> f64 {
        let total: usize = self.masks.iter().map(Vec::len).sum();
        if total == 0 {
            return 0.0;
        }
        self.num_masked().iter().sum::<usize>() as f64 / total as f64
    }

    /// Writes `<stem>.csv` (`class_id,feature_id,keep`) and the `<stem>.json`
    /// sidecar.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(["class_id", "feature_id", "keep"])?;
        for (z, m) in self.masks.iter().enumerate() {
            for (j, &k) in m.iter().enumerate() {
                w.write_record([z.to_string(), j.to_string(), u8::from(k).to_string()])?;
            }
        }
        w.flush()?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Multiplies each sample's features by its class's mask.
pub fn apply_mask(dataset: &DualTaskDataset, masks: &ClassMaskSet) -> Result<DualTaskDataset> {
    let k = dataset.num_features();
    if let Some(m) = masks.masks.iter().find(|m| m.len() != k) {
        return Err(MaskError::DimensionMismatch { expected: k, got: m.len() });
    }
    let labels = dataset.labels(masks.class_source);
    let mut features = dataset.features().to_vec();
    for (i, row) in features.chunks_mut(k).enumerate() {
        let m = masks.masks.get(labels[i]).ok_or(MaskError::MissingClass(labels[i]))?;
        for (x, &keep) in row.iter_mut().zip(m) {
            if !keep {
                *x = 0.0;
            }
        }
    }
    Ok(dataset.with_features(features)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub explainer: ExplainerKind,
    pub alpha: f64,
    /// Pair every identity class with the dataset-wide mean utility
    /// sensitivity instead of its label-weighted utility mix.
    pub global_u: bool,
    pub fallback_k: f64,
}

impl PipelineConfig {
    pub fn new(explainer: ExplainerKind, alpha: f64) -> Self {
        Self { explainer, alpha, global_u: false, fallback_k: DEFAULT_FALLBACK_K }
    }
}

/// Class-level sensitivities feeding the optimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSensitivities {
    /// `S_z` per identity class.
    pub privacy: Vec<SensitivityVector>,
    /// `U_y` per utility class.
    pub utility: Vec<SensitivityVector>,
    /// Privacy sensitivity averaged over every training sample.
    pub privacy_overall: Vec<f64>,
    /// Utility vector paired with each identity class.
    pub paired_utility: Vec<Vec<f64>>,
    pub explainer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub masks: ClassMaskSet,
    pub sensitivities: ClassSensitivities,
    /// Optimiser output for every class that did not fall back.
    pub solutions: Vec<MaskSolution>,
}

/// Per-sample attributions of the identity model (for `z`) and the utility
/// model (for `y`) on `train`, clipped and averaged per class. Identity
/// class `z` is paired with `Σ_y p(y|z)·U_y`, or with the dataset-wide mean
/// utility vector when `global_u` is set.
pub fn class_sensitivities<I: Classifier + ?Sized, U: Classifier + ?Sized>(
    train: &DualTaskDataset,
    identity_model: &I,
    utility_model: &U,
    explainer: &ExplainerKind,
    global_u: bool,
    seed: u64,
) -> Result<ClassSensitivities> {
    let id_view = train.view(Task::Identity);
    let ut_view = train.view(Task::Utility);
    let s_samples =
        explain_samples(identity_model, &id_view, Task::Identity, explainer, derive_seed(seed, &[tag("privacy")]))?;
    let u_samples =
        explain_samples(utility_model, &ut_view, Task::Utility, explainer, derive_seed(seed, &[tag("utility")]))?;
    let nz = train.num_classes(Task::Identity);
    let ny = train.num_classes(Task::Utility);
    let privacy = class_aggregate(&s_samples, id_view.labels, nz)?;
    let utility = class_aggregate(&u_samples, ut_view.labels, ny)?;
    let k = train.num_features();
    let privacy_overall = sample_mean(&s_samples, k);

    let paired_utility: Vec<Vec<f64>> = if global_u {
        vec![sample_mean(&u_samples, k); nz]
    } else {
        let mut joint = vec![vec![0usize; ny]; nz];
        for (&z, &y) in id_view.labels.iter().zip(ut_view.labels) {
            joint[z][y] += 1;
        }
        joint
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                (0..k)
                    .map(|j| row.iter().zip(&utility).map(|(&c, u)| c as f64 / total as f64 * u.values[j]).sum())
                    .collect()
            })
            .collect()
    };
    Ok(ClassSensitivities {
        privacy,
        utility,
        privacy_overall,
        paired_utility,
        explainer: explainer.name().to_string(),
    })
}

fn sample_mean(samples: &[SensitivityVector], k: usize) -> Vec<f64> {
    let n = samples.len() as f64;
    (0..k).map(|j| samples.iter().map(|v| v.values[j]).sum::<f64>() / n).collect()
}

/// Why the optimiser's answer for one class should not be used, if it
/// should not.
fn fallback_reason(u: &[f64], s: &[f64], outcome: &Result<MaskSolution>) -> Option<String> {
    match outcome {
        Err(e) => Some(format!("optimizer error: {e}")),
        Ok(_) if s.iter().all(|&x| x == 0.0) && u.iter().all(|&x| x == 0.0) => {
            Some("privacy and utility sensitivities are both zero".to_string())
        }
        Ok(sol) => {
            let min_pos = s.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
            let utility_on_sensitive = u.iter().zip(s).all(|(&uj, &sj)| uj == 0.0 || sj > 0.0);
            (sol.capacity < min_pos && utility_on_sensitive && u.iter().any(|&x| x > 0.0))
                .then(|| "budget admits no utility-bearing feature".to_string())
        }
    }
}

/// One [`optimize_mask`] call per identity class; degenerate instances fall
/// back to a top-`fallback_k`% mask on `S_z`.
pub fn optimize_class_masks(
    sens: &ClassSensitivities,
    alpha: f64,
    fallback_k: f64,
    seed: u64,
) -> Result<(ClassMaskSet, Vec<MaskSolution>)> {
    let nz = sens.privacy.len();
    let mut masks = Vec::with_capacity(nz);
    let mut budget_used = Vec::with_capacity(nz);
    let mut fallbacks = Vec::new();
    let mut solutions = Vec::with_capacity(nz);
    for z in 0..nz {
        let s = &sens.privacy[z].values;
        let u = &sens.paired_utility[z];
        let outcome = optimize_mask(u, s, alpha);
        match (fallback_reason(u, s, &outcome), outcome) {
            (None, Ok(sol)) => {
                budget_used.push(sol.weight);
                masks.push(sol.keep.clone());
                solutions.push(sol);
            }
            (reason, _) => {
                let keep = top_k_mask(s, fallback_k)?;
                budget_used.push(masked_sum(&keep, s));
                masks.push(keep);
                fallbacks.push(Fallback { class_id: z, reason: reason.unwrap_or_default() });
            }
        }
    }
    let set = ClassMaskSet {
        masks,
        alpha,
        method: MaskMethod::Optimized,
        budget_used,
        class_source: Task::Identity,
        fallbacks,
        explainer: Some(sens.explainer.clone()),
        seed,
    };
    Ok((set, solutions))
}

/// Fits identity-class masks on `train`: [`class_sensitivities`] followed by
/// [`optimize_class_masks`]. Apply the result with [`apply_mask`] to every
/// split.
pub fn feature_masking_pipeline<I: Classifier + ?Sized, U: Classifier + ?Sized>(
    train: &DualTaskDataset,
    identity_model: &I,
    utility_model: &U,
    config: &PipelineConfig,
    seed: u64,
) -> Result<PipelineOutput> {
    let sensitivities =
        class_sensitivities(train, identity_model, utility_model, &config.explainer, config.global_u, seed)?;
    let (masks, solutions) = optimize_class_masks(&sensitivities, config.alpha, config.fallback_k, seed)?;
    Ok(PipelineOutput { masks, sensitivities, solutions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_dual_task, PlantedStructure};

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_mask(&[3.0, 1.0, 2.0], 0.0).unwrap(), vec![true; 3]);
        assert_eq!(top_k_mask(&[3.0, 1.0, 2.0], 100.0).unwrap(), vec![false; 3]);
        assert_eq!(top_k_mask(&[3.0, 1.0, 2.0], 34.0).unwrap(), vec![false, true, false]);
        assert_eq!(top_k_mask(&[1.0, 1.0, 1.0], 34.0).unwrap(), vec![false, false, true]);
        assert!(top_k_mask(&[1.0], 101.0).is_err());
    }

    #[test]
    fn random_examples() {
        let m = random_mask(20, 0.3, 4).unwrap();
        assert_eq!(m.iter().filter(|&&k| !k).count(), 6);
        assert_eq!(random_mask(20, 0.0, 4).unwrap(), vec![true; 20]);
        assert_eq!(random_mask(20, 0.3, 4).unwrap(), m);
        let differ = (0..20).any(|s| random_mask(20, 0.3, s).unwrap() != m);
        assert!(differ);
    }

    #[test]
    fn apply_mask_semantics() {
        let s = PlantedStructure::contiguous(2, 2, 0, 0.0);
        let ds = gen_synthetic_dual_task(10, 5, 2, 2, &s, 1).unwrap();
        let ones = ClassMaskSet::uniform(vec![true; 5], 2, MaskMethod::TopK, Task::Identity, 0);
        assert_eq!(apply_mask(&ds, &ones).unwrap(), ds);
        let mut m = ClassMaskSet::uniform(vec![true; 5], 2, MaskMethod::TopK, Task::Identity, 0);
        m.masks[1] = vec![false, true, false, true, true];
        let once = apply_mask(&ds, &m).unwrap();
        assert_eq!(apply_mask(&once, &m).unwrap(), once);
        for i in 0..ds.len() {
            let z = ds.labels(Task::Identity)[i];
            for j in 0..5 {
                let expect = if m.masks[z][j] { ds.row(i)[j] } else { 0.0 };
                assert_eq!(once.row(i)[j], expect);
            }
        }
        assert_eq!(once.labels(Task::Utility), ds.labels(Task::Utility));
        let short = ClassMaskSet::uniform(vec![true; 5], 1, MaskMethod::TopK, Task::Identity, 0);
        assert!(matches!(apply_mask(&ds, &short), Err(MaskError::MissingClass(1))));
    }

    #[test]
    fn mask_files_round_trip() {
        let m = ClassMaskSet::uniform(vec![true, false], 3, MaskMethod::Random, Task::Identity, 7);
        let dir = tempfile::tempdir().unwrap();
        m.write(dir.path(), "mask").unwrap();
        assert_eq!(ClassMaskSet::read_json(dir.path().join("mask.json")).unwrap(), m);
        let csv = std::fs::read_to_string(dir.path().join("mask.csv")).unwrap();
        assert_eq!(csv.lines().count(), 7);
    }
}
