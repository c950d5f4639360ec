use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lira_decide, logits, AttackError, GaussianNull, Result, ShadowEnsemble, ShadowTrainer};
use crate::data::LabeledView;

/// Which non-member confidences form the null for a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullMode {
    /// One Gaussian per shadow model over all of its out samples.
    GlobalPerModel,
    /// One Gaussian per sample over the models it was out of. Samples that
    /// are out of fewer than two models fall back to the global null.
    PerExample,
}

impl std::str::FromStr for NullMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "global-per-model" | "global" => Ok(Self::GlobalPerModel),
            "per-example" => Ok(Self::PerExample),
            other => Err(format!("unknown null mode '{other}' (expected global-per-model|per-example)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrReport {
    pub per_sample_asr: Vec<f64>,
    pub asr_mean: f64,
    pub asr_max: f64,
    pub n_models: usize,
    pub threshold: f64,
    pub null_mode: NullMode,
    pub leakage_guard: bool,
    pub trainer: ShadowTrainer,
    /// Per-example nulls that fell back to the global null.
    pub null_fallbacks: usize,
}

/// JSON summary written next to the per-sample CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrSummary {
    pub n: usize,
    pub threshold: f64,
    pub mode: NullMode,
    pub leakage_guard: bool,
    pub asr_mean: f64,
    pub asr_max: f64,
    pub trainer: ShadowTrainer,
    pub accountant_epsilon: Option<f64>,
}

impl AsrReport {
    pub fn summary(&self) -> Result<AsrSummary> {
        Ok(AsrSummary {
            n: self.n_models,
            threshold: self.threshold,
            mode: self.null_mode,
            leakage_guard: self.leakage_guard,
            asr_mean: self.asr_mean,
            asr_max: self.asr_max,
            trainer: self.trainer.clone(),
            accountant_epsilon: self.trainer.accountant_epsilon()?,
        })
    }

    /// Writes `<stem>.csv` (`sample_id,asr`) and `<stem>.json`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(["sample_id", "asr"])?;
        for (j, a) in self.per_sample_asr.iter().enumerate() {
            w.write_record([j.to_string(), a.to_string()])?;
        }
        w.flush()?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&self.summary()?)?)?;
        Ok(())
    }
}

/// Running moments that support removing one observation.
#[derive(Clone, Copy)]
struct Moments {
    n: usize,
    mean: f64,
    ss: f64,
}

impl Moments {
    fn of(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let (n, sum) = xs.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
        let mean = if n == 0 { 0.0 } else { sum / n as f64 };
        let ss = xs.map(|x| (x - mean) * (x - mean)).sum();
        Self { n, mean, ss }
    }

    fn without(self, x: f64) -> Self {
        let n = self.n - 1;
        let mean = (self.mean * self.n as f64 - x) / n as f64;
        let ss = (self.ss - (x - self.mean) * (x - mean)).max(0.0);
        Self { n, mean, ss }
    }

    fn null(self) -> Option<GaussianNull> {
        (self.n >= 2).then(|| GaussianNull {
            mu_out: self.mean,
            sigma_out: (self.ss / (self.n - 1) as f64).sqrt().max(super::SIGMA_FLOOR),
        })
    }
}

/// Per-sample attack success rates over the ensemble.
///
/// With `leakage_guard`, a sample never contributes to the null it is
/// scored against: in global mode it is left out of model `i`'s fit when it
/// is an out sample of `i`, and in per-example mode model `i` is left out of
/// the sample's fit.
pub fn compute_asr(
    ensemble: &ShadowEnsemble,
    view: &LabeledView<'_>,
    threshold: f64,
    null_mode: NullMode,
    leakage_guard: bool,
) -> Result<AsrReport> {
    let n = ensemble.len();
    let n_samples = view.len();
    if n < 2 {
        return Err(AttackError::TooFewModels(n));
    }
    if ensemble.membership.len() != n || ensemble.membership.iter().any(|r| r.len() != n_samples) {
        return Err(AttackError::Inconsistent(format!(
            "ensemble membership does not match {n} models × {n_samples} samples"
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(AttackError::Inconsistent(format!("threshold {threshold} outside [0,1]")));
    }

    let phi: Vec<Vec<f64>> = ensemble.models.par_iter().map(|m| logits(m, view)).collect::<Result<_>>()?;
    let member = &ensemble.membership;

    let global: Vec<Moments> =
        (0..n).map(|i| Moments::of((0..n_samples).filter(|&j| !member[i][j]).map(|j| phi[i][j]))).collect();
    let global_null = |i: usize, j: usize| -> Result<GaussianNull> {
        let mut m = global[i];
        if leakage_guard && !member[i][j] {
            m = m.without(phi[i][j]);
        }
        m.null().ok_or(AttackError::TooFewOutSamples(m.n))
    };

    let mut fallbacks = 0;
    let mut correct = vec![0usize; n_samples];
    match null_mode {
        NullMode::GlobalPerModel => {
            for (i, row) in member.iter().enumerate() {
                for j in 0..n_samples {
                    let null = global_null(i, j)?;
                    if lira_decide(null.score(phi[i][j]), threshold) == row[j] {
                        correct[j] += 1;
                    }
                }
            }
        }
        NullMode::PerExample => {
            for j in 0..n_samples {
                let per = Moments::of((0..n).filter(|&i| !member[i][j]).map(|i| phi[i][j]));
                for i in 0..n {
                    let m = if leakage_guard && !member[i][j] { per.without(phi[i][j]) } else { per };
                    let null = match m.null() {
                        Some(g) => g,
                        None => {
                            fallbacks += 1;
                            global_null(i, j)?
                        }
                    };
                    if lira_decide(null.score(phi[i][j]), threshold) == member[i][j] {
                        correct[j] += 1;
                    }
                }
            }
        }
    }

    let per_sample_asr: Vec<f64> = correct.iter().map(|&c| c as f64 / n as f64).collect();
    let asr_mean = per_sample_asr.iter().sum::<f64>() / n_samples as f64;
    let asr_max = per_sample_asr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(AsrReport {
        per_sample_asr,
        asr_mean,
        asr_max,
        n_models: n,
        threshold,
        null_mode,
        leakage_guard,
        trainer: ensemble.trainer.clone(),
        null_fallbacks: fallbacks,
    })
}

/// Dataset-level sensitivity: the largest per-sample ASR.
pub fn dataset_sensitivity(report: &AsrReport) -> f64 {
    report.asr_max
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::build_shadow_ensemble;
    use crate::data::{gen_synthetic_dual_task, PlantedStructure, Task};
    use crate::model::{MlpSpec, TrainConfig};

    #[test]
    fn leave_one_out_moments_match_refit() {
        let xs = [0.3, -1.2, 2.5, 0.0, 4.1];
        let all = Moments::of(xs.iter().copied());
        for k in 0..xs.len() {
            let rest: Vec<f64> = xs.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, &x)| x).collect();
            let direct = GaussianNull::fit(&rest).unwrap();
            let loo = all.without(xs[k]).null().unwrap();
            assert!((direct.mu_out - loo.mu_out).abs() < 1e-12);
            assert!((direct.sigma_out - loo.sigma_out).abs() < 1e-12);
        }
    }

    fn ensemble() -> (crate::DualTaskDataset, ShadowEnsemble) {
        let s = PlantedStructure::contiguous(3, 3, 1, 0.3);
        let ds = gen_synthetic_dual_task(40, 6, 2, 2, &s, 5).unwrap();
        let trainer = ShadowTrainer::Plain {
            model: MlpSpec { hidden: vec![8], ..MlpSpec::default() },
            config: TrainConfig { epochs: 30, ..TrainConfig::default() },
        };
        let e = build_shadow_ensemble(&ds.view(Task::Identity), 6, &trainer, 2).unwrap();
        (ds, e)
    }

    #[test]
    fn asr_granularity_and_aggregates() {
        let (ds, e) = ensemble();
        for mode in [NullMode::GlobalPerModel, NullMode::PerExample] {
            for guard in [true, false] {
                let r = compute_asr(&e, &ds.view(Task::Identity), 0.5, mode, guard).unwrap();
                for a in &r.per_sample_asr {
                    let k = a * 6.0;
                    assert!((k - k.round()).abs() < 1e-12 && (0.0..=1.0).contains(a));
                }
                let max = r.per_sample_asr.iter().copied().fold(0.0, f64::max);
                assert_eq!(dataset_sensitivity(&r), max);
                assert!((r.asr_mean - crate::stats::mean(&r.per_sample_asr)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn threshold_extremes_decide_uniformly() {
        let (ds, e) = ensemble();
        let view = ds.view(Task::Identity);
        // Λ ≤ 1 always, so threshold 1 declares everything a non-member.
        let r = compute_asr(&e, &view, 1.0, NullMode::GlobalPerModel, true).unwrap();
        for (j, a) in r.per_sample_asr.iter().enumerate() {
            let outs = e.membership.iter().filter(|row| !row[j]).count();
            assert_eq!(*a, outs as f64 / 6.0);
        }
    }

    #[test]
    fn mismatched_dataset_rejected() {
        let (ds, e) = ensemble();
        let sub = ds.subset(&[0, 1, 2]).unwrap();
        assert!(compute_asr(&e, &sub.view(Task::Identity), 0.5, NullMode::GlobalPerModel, true).is_err());
    }
}
