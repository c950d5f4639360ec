use serde::{Deserialize, Serialize};

use super::{build_shadow_ensemble, compute_asr, AsrReport, AttackError, NullMode, Result, ShadowTrainer};
use crate::data::{DualTaskDataset, Task};
use crate::dp::{DpSettings, NoiseSetting};
use crate::model::{MlpSpec, TrainConfig};

/// Which ASR aggregate the equivalence search compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsrStatistic {
    Max,
    Mean,
}

impl AsrStatistic {
    pub fn of(self, report: &AsrReport) -> f64 {
        match self {
            Self::Max => report.asr_max,
            Self::Mean => report.asr_mean,
        }
    }
}

impl std::str::FromStr for AsrStatistic {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            other => Err(format!("unknown ASR statistic '{other}' (expected max|mean)")),
        }
    }
}

/// Shared settings for the original and masked ensembles. Both use the
/// same `seed`, hence the same membership matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceSearch {
    pub task: Task,
    pub n_models: usize,
    pub model: MlpSpec,
    pub config: TrainConfig,
    pub clip_norm: f64,
    pub delta: f64,
    pub threshold: f64,
    pub null_mode: NullMode,
    pub leakage_guard: bool,
    pub tolerance: f64,
    pub statistic: AsrStatistic,
    pub seed: u64,
}

impl EquivalenceSearch {
    /// ASR report of a DP shadow ensemble at target `epsilon` on `dataset`.
    pub fn asr_at(&self, dataset: &DualTaskDataset, epsilon: f64) -> Result<AsrReport> {
        let settings =
            DpSettings { clip_norm: self.clip_norm, delta: self.delta, noise: NoiseSetting::TargetEpsilon(epsilon) };
        let trainer = ShadowTrainer::dp_for_dataset(self.model.clone(), self.config.clone(), &settings, dataset.len())?;
        let view = dataset.view(self.task);
        let ensemble = build_shadow_ensemble(&view, self.n_models, &trainer, self.seed)?;
        compute_asr(&ensemble, &view, self.threshold, self.null_mode, self.leakage_guard)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub epsilon_original: f64,
    pub statistic: AsrStatistic,
    pub tolerance: f64,
    /// Original-data ASR at `epsilon_original`.
    pub reference_asr: f64,
    /// `(ε, ASR)` on the masked data for every grid point.
    pub masked_curve: Vec<(f64, f64)>,
    pub equivalent_epsilon: Option<f64>,
}

impl EquivalenceReport {
    /// The equivalent ε, or [`AttackError::NoEquivalent`] carrying the curves.
    pub fn require(&self) -> Result<f64> {
        self.equivalent_epsilon.ok_or_else(|| AttackError::NoEquivalent {
            reference: self.reference_asr,
            curve: self.masked_curve.clone(),
        })
    }
}

/// Largest grid ε′ whose masked-data ASR does not exceed the original-data
/// ASR at `epsilon_original` by more than the tolerance.
pub fn find_equivalent_epsilon(
    original: &DualTaskDataset,
    masked: &DualTaskDataset,
    epsilon_original: f64,
    grid: &[f64],
    search: &EquivalenceSearch,
) -> Result<EquivalenceReport> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AttackError::Inconsistent("ε grid must be non-empty and strictly ascending".into()));
    }
    if search.n_models < 2 {
        return Err(AttackError::TooFewModels(search.n_models));
    }
    if original.len() != masked.len() || original.num_features() != masked.num_features() {
        return Err(AttackError::Inconsistent("original and masked datasets differ in shape".into()));
    }
    let reference_asr = search.statistic.of(&search.asr_at(original, epsilon_original)?);
    let mut masked_curve = Vec::with_capacity(grid.len());
    for &eps in grid {
        masked_curve.push((eps, search.statistic.of(&search.asr_at(masked, eps)?)));
    }
    let equivalent_epsilon =
        masked_curve.iter().rev().find(|(_, a)| *a <= reference_asr + search.tolerance).map(|(e, _)| *e);
    Ok(EquivalenceReport {
        epsilon_original,
        statistic: search.statistic,
        tolerance: search.tolerance,
        reference_asr,
        masked_curve,
        equivalent_epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_dual_task, PlantedStructure};

    fn search() -> EquivalenceSearch {
        EquivalenceSearch {
            task: Task::Identity,
            n_models: 4,
            model: MlpSpec { hidden: vec![8], ..MlpSpec::default() },
            config: TrainConfig { epochs: 5, batch_size: 8, learning_rate: 0.2, ..TrainConfig::default() },
            clip_norm: 1.0,
            delta: 1e-5,
            threshold: 0.5,
            null_mode: NullMode::GlobalPerModel,
            leakage_guard: true,
            tolerance: 0.01,
            statistic: AsrStatistic::Mean,
            seed: 3,
        }
    }

    #[test]
    fn self_equivalence_reproduces_reference() {
        let s = PlantedStructure::contiguous(3, 3, 1, 0.2);
        let ds = gen_synthetic_dual_task(40, 6, 2, 2, &s, 1).unwrap();
        let r = find_equivalent_epsilon(&ds, &ds, 2.0, &[1.0, 2.0], &search()).unwrap();
        assert_eq!(r.masked_curve[1].1, r.reference_asr);
        assert!(r.equivalent_epsilon.unwrap() >= 2.0);
    }

    #[test]
    fn unreachable_reference_reports_curves() {
        let r = EquivalenceReport {
            epsilon_original: 1.0,
            statistic: AsrStatistic::Max,
            tolerance: 0.0,
            reference_asr: 0.4,
            masked_curve: vec![(1.0, 0.6)],
            equivalent_epsilon: None,
        };
        assert!(matches!(r.require(), Err(AttackError::NoEquivalent { .. })));
    }

    #[test]
    fn grid_must_ascend() {
        let s = PlantedStructure::contiguous(3, 3, 1, 0.2);
        let ds = gen_synthetic_dual_task(20, 6, 2, 2, &s, 1).unwrap();
        assert!(find_equivalent_epsilon(&ds, &ds, 1.0, &[2.0, 1.0], &search()).is_err());
    }
}
