use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AttackError, Result};
use crate::data::LabeledView;
use crate::dp::{account_epsilon, train_dp_with_spec, DpSettings, PrivacySpec};
use crate::model::{gather, train_plain, MlpModel, MlpSpec, TrainConfig};
use crate::seed::{derive_seed, derived_rng, tag};

/// How each shadow model is trained. The `seed` field of `config` is
/// replaced per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShadowTrainer {
    Plain { model: MlpSpec, config: TrainConfig },
    Dp { model: MlpSpec, config: TrainConfig, privacy: PrivacySpec },
}

impl ShadowTrainer {
    /// DP trainer whose mechanism is resolved once for the expected shadow
    /// training-set size `⌈N/2⌉`, so every shadow model runs the same
    /// `(q, T, σ)` and shares one accounted ε.
    pub fn dp_for_dataset(
        model: MlpSpec,
        config: TrainConfig,
        settings: &DpSettings,
        dataset_size: usize,
    ) -> Result<Self> {
        let privacy = settings.resolve(dataset_size.div_ceil(2), &config)?;
        Ok(Self::Dp { model, config, privacy })
    }

    pub fn privacy(&self) -> Option<&PrivacySpec> {
        match self {
            Self::Plain { .. } => None,
            Self::Dp { privacy, .. } => Some(privacy),
        }
    }

    /// Accounted ε of the DP trainer, `None` for plain training.
    pub fn accountant_epsilon(&self) -> Result<Option<f64>> {
        match self.privacy() {
            None => Ok(None),
            Some(p) => Ok(Some(account_epsilon(p)?.epsilon)),
        }
    }

    pub fn train(&self, view: &LabeledView<'_>, seed: u64) -> Result<MlpModel> {
        match self {
            Self::Plain { model, config } => {
                let cfg = TrainConfig { seed, ..config.clone() };
                Ok(train_plain(view, model, &cfg)?)
            }
            Self::Dp { model, config, privacy } => {
                let cfg = TrainConfig { seed, ..config.clone() };
                Ok(train_dp_with_spec(view, model, &cfg, privacy)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowEnsemble {
    pub models: Vec<MlpModel>,
    /// `membership[i][j]` is true iff sample `j` was in model `i`'s training set.
    pub membership: Vec<Vec<bool>>,
    pub trainer: ShadowTrainer,
    pub seed: u64,
    /// Membership rows redrawn because they were all-in or all-out.
    pub redraws: usize,
}

impl ShadowEnsemble {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn num_samples(&self) -> usize {
        self.membership.first().map_or(0, Vec::len)
    }

    /// Snapshot directory: `ensemble.json` (trainer, seed, redraws),
    /// `membership.csv` (one 0/1 row per model) and `model_<i>.json`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = EnsembleMeta {
            n_models: self.len(),
            n_samples: self.num_samples(),
            trainer: self.trainer.clone(),
            seed: self.seed,
            redraws: self.redraws,
        };
        std::fs::write(dir.join("ensemble.json"), serde_json::to_string_pretty(&meta)?)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join("membership.csv"))?;
        for row in &self.membership {
            w.write_record(row.iter().map(|&b| if b { "1" } else { "0" }))?;
        }
        w.flush()?;
        for (i, m) in self.models.iter().enumerate() {
            m.save_json(dir.join(format!("model_{i}.json")))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: EnsembleMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("ensemble.json"))?)?;
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(dir.join("membership.csv"))?;
        let mut membership = Vec::new();
        for rec in r.records() {
            let row = rec?
                .iter()
                .map(|c| match c.trim() {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    other => Err(AttackError::Inconsistent(format!("membership cell '{other}'"))),
                })
                .collect::<Result<Vec<_>>>()?;
            membership.push(row);
        }
        if membership.len() != meta.n_models || membership.iter().any(|r| r.len() != meta.n_samples) {
            return Err(AttackError::Inconsistent("membership matrix shape disagrees with ensemble.json".into()));
        }
        let models = (0..meta.n_models)
            .map(|i| MlpModel::load_json(dir.join(format!("model_{i}.json"))).map_err(AttackError::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { models, membership, trainer: meta.trainer, seed: meta.seed, redraws: meta.redraws })
    }
}

#[derive(Serialize, Deserialize)]
struct EnsembleMeta {
    n_models: usize,
    n_samples: usize,
    trainer: ShadowTrainer,
    seed: u64,
    redraws: usize,
}

const MAX_REDRAWS: u64 = 1000;

/// Fair-coin membership row for model `i`, redrawn until it has both
/// members and non-members. Depends only on `(seed, i)`.
fn membership_row(seed: u64, i: usize, n: usize) -> Result<(Vec<bool>, usize)> {
    if n < 2 {
        return Err(AttackError::DegenerateMembership(n));
    }
    for attempt in 0..MAX_REDRAWS {
        let mut rng = derived_rng(seed, &[tag("membership"), i as u64, attempt]);
        let row: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let ins = row.iter().filter(|&&b| b).count();
        if ins > 0 && ins < n {
            return Ok((row, attempt as usize));
        }
    }
    Err(AttackError::DegenerateMembership(n))
}

/// Trains `n` shadow models, each on an independent fair-coin half of
/// `view`. Model `i`'s membership row and training seed depend only on
/// `(master_seed, i)`, so the same seed gives the same membership matrix for
/// any trainer and any thread count.
pub fn build_shadow_ensemble(
    view: &LabeledView<'_>,
    n: usize,
    trainer: &ShadowTrainer,
    master_seed: u64,
) -> Result<ShadowEnsemble> {
    if n < 2 {
        return Err(AttackError::TooFewModels(n));
    }
    let rows = (0..n).map(|i| membership_row(master_seed, i, view.len())).collect::<Result<Vec<_>>>()?;
    let models = rows
        .par_iter()
        .enumerate()
        .map(|(i, (row, _))| {
            let idx: Vec<usize> = row.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect();
            let (x, y) = gather(view, &idx);
            let sub = LabeledView {
                features: &x,
                num_features: view.num_features,
                labels: &y,
                num_classes: view.num_classes,
            };
            let seed = derive_seed(master_seed, &[tag("shadow-model"), i as u64]);
            trainer.train(&sub, seed).map_err(|e| AttackError::Training { index: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    let redraws = rows.iter().map(|(_, r)| r).sum();
    Ok(ShadowEnsemble {
        models,
        membership: rows.into_iter().map(|(r, _)| r).collect(),
        trainer: trainer.clone(),
        seed: master_seed,
        redraws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_random_dataset, Task};

    fn plain() -> ShadowTrainer {
        ShadowTrainer::Plain {
            model: MlpSpec { hidden: vec![4], ..MlpSpec::default() },
            config: TrainConfig { epochs: 2, ..TrainConfig::default() },
        }
    }

    #[test]
    fn membership_is_reproducible_and_balanced() {
        let ds = gen_random_dataset(4, 3, 2, 1).unwrap();
        let a = build_shadow_ensemble(&ds.view(Task::Utility), 2, &plain(), 9).unwrap();
        let b = build_shadow_ensemble(&ds.view(Task::Utility), 2, &plain(), 9).unwrap();
        assert_eq!(a.membership, b.membership);
        assert_eq!(a.models, b.models);

        let rows: Vec<Vec<bool>> = (0..100).map(|i| membership_row(3, i, 50).unwrap().0).collect();
        let frac = rows.iter().flatten().filter(|&&b| b).count() as f64 / 5000.0;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
    }

    #[test]
    fn rows_always_mixed() {
        for i in 0..200 {
            let (row, _) = membership_row(0, i, 2).unwrap();
            assert_ne!(row[0], row[1]);
        }
        assert!(membership_row(0, 0, 1).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let ds = gen_random_dataset(10, 3, 2, 1).unwrap();
        let e = build_shadow_ensemble(&ds.view(Task::Utility), 3, &plain(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        e.save_dir(dir.path()).unwrap();
        assert_eq!(ShadowEnsemble::load_dir(dir.path()).unwrap(), e);
    }

    #[test]
    fn rejects_single_model() {
        let ds = gen_random_dataset(10, 3, 2, 1).unwrap();
        assert!(matches!(
            build_shadow_ensemble(&ds.view(Task::Utility), 1, &plain(), 0),
            Err(AttackError::TooFewModels(1))
        ));
    }
}
