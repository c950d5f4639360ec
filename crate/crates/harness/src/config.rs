//! Experiment configuration (TOML or JSON).

use std::path::{Path, PathBuf};

use privmask::attack::{AsrStatistic, NullMode};
use privmask::data::{self, gen_random_dataset, gen_synthetic_dual_task, randomize_labels, PlantedStructure};
use privmask::explain::ExplainerKind;
use privmask::{DualTaskDataset, MlpSpec, Task, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Planted {
        n: usize,
        k: usize,
        identity_classes: usize,
        utility_classes: usize,
        identity_features: usize,
        utility_features: usize,
        overlap: usize,
        noise_std: f64,
        /// Fraction of utility labels redrawn uniformly after generation.
        #[serde(default)]
        utility_label_noise: f64,
    },
    Random {
        n: usize,
        k: usize,
        classes: usize,
    },
    /// CSV (`f0..,y,z`) or binary snapshot (`.bin`), fixed across replicates.
    File {
        path: PathBuf,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        max_samples: usize,
        /// Output side length; images are area-pooled to `downscale_to²` features.
        downscale_to: usize,
    },
}

impl DatasetSpec {
    /// Dataset for one replicate; generated kinds use `seed`.
    pub fn build(&self, seed: u64) -> Result<DualTaskDataset, data::DataError> {
        match self {
            Self::Planted {
                n,
                k,
                identity_classes,
                utility_classes,
                identity_features,
                utility_features,
                overlap,
                noise_std,
                utility_label_noise,
            } => {
                let s = PlantedStructure::contiguous(*identity_features, *utility_features, *overlap, *noise_std);
                let ds = gen_synthetic_dual_task(*n, *k, *identity_classes, *utility_classes, &s, seed)?;
                if *utility_label_noise > 0.0 {
                    let seed = privmask::seed::derive_seed(seed, &[privmask::seed::tag("label-noise")]);
                    randomize_labels(&ds, *utility_label_noise, Task::Utility, seed)
                } else {
                    Ok(ds)
                }
            }
            Self::Random { n, k, classes } => gen_random_dataset(*n, *k, *classes, seed),
            Self::File { path } => load_dataset(path),
            Self::Idx { images, labels, max_samples, downscale_to } => {
                data::load_idx_subset(images, labels, *max_samples, *downscale_to)
            }
        }
    }
}

/// Reads a dataset CSV, or a binary snapshot when the extension is `.bin`.
pub fn load_dataset(path: &Path) -> Result<DualTaskDataset, data::DataError> {
    if path.extension().is_some_and(|e| e == "bin") {
        data::read_snapshot(path)
    } else {
        data::read_csv(path, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Original,
    Random,
    TopK,
    Optimized,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Original => "original",
            Self::Random => "random",
            Self::TopK => "top-k",
            Self::Optimized => "optimized",
        }
    }
}

fn default_epsilons() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0, 8.0]
}
fn default_alphas() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3, 0.4]
}
fn default_fractions() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}
fn default_methods() -> Vec<Method> {
    vec![Method::Original, Method::Random, Method::Optimized]
}
fn default_n_shadow() -> usize {
    64
}
fn default_threshold() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_clip() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    privmask::dp::DEFAULT_DELTA
}
fn default_split() -> f64 {
    0.8
}
fn default_alpha() -> f64 {
    0.2
}
fn default_top_k() -> f64 {
    30.0
}
fn default_random_fraction() -> f64 {
    0.3
}
fn default_replicates() -> usize {
    5
}
fn default_tolerance() -> f64 {
    0.01
}
fn default_explainer() -> ExplainerKind {
    ExplainerKind::ShapleySampled { num_permutations: 64 }
}
fn default_surrogate_train() -> TrainConfig {
    TrainConfig { learning_rate: 0.1, epochs: 100, batch_size: 16, seed: 0, early_stop_patience: 0 }
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: MlpSpec,
    /// Training of shadow and utility models (plain or DP).
    #[serde(default)]
    pub train: TrainConfig,
    /// Training of the surrogate identity/utility models behind the masks.
    #[serde(default = "default_surrogate_train")]
    pub surrogate_train: TrainConfig,
    /// Fraction of samples in the training split.
    #[serde(default = "default_split")]
    pub split_ratio: f64,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Masked or label-randomised fractions for the fraction sweeps.
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// α used by the optimised method outside the α sweep.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_top_k")]
    pub top_k_percent: f64,
    /// Random-mask fraction when no optimised mask is available to match.
    #[serde(default = "default_random_fraction")]
    pub random_fraction: f64,
    #[serde(default = "default_explainer")]
    pub explainer: ExplainerKind,
    #[serde(default)]
    pub global_u: bool,
    #[serde(default = "default_n_shadow")]
    pub n_shadow: usize,
    #[serde(default)]
    pub null_mode: NullModeSetting,
    #[serde(default = "default_true")]
    pub leakage_guard: bool,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// DP target for the fraction and α sweeps; `None` trains without DP.
    #[serde(default)]
    pub sweep_epsilon: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub equivalence_tolerance: f64,
    #[serde(default)]
    pub equivalence_statistic: StatisticSetting,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Worker threads; `None` uses all cores.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Record wall-clock time per row (makes `results.csv` run-dependent).
    #[serde(default)]
    pub record_wall_time: bool,
}

/// Serde-friendly wrapper with a default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NullModeSetting(pub NullMode);

impl Default for NullModeSetting {
    fn default() -> Self {
        Self(NullMode::GlobalPerModel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatisticSetting(pub AsrStatistic);

impl Default for StatisticSetting {
    fn default() -> Self {
        Self(AsrStatistic::Mean)
    }
}

impl ExperimentConfig {
    /// A small planted-data configuration with every default filled in.
    pub fn planted_default(name: &str) -> Self {
        let toml = format!(
            "name = \"{name}\"\n[dataset]\nkind = \"planted\"\nn = 300\nk = 20\nidentity_classes = 4\nutility_classes = 2\nidentity_features = 6\nutility_features = 6\noverlap = 4\nnoise_std = 0.1\n"
        );
        Self::from_toml(&toml).expect("built-in config parses")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `.json` as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, grid) in [("epsilons", &self.epsilons), ("alphas", &self.alphas), ("fractions", &self.fractions)] {
            if grid.is_empty() {
                return bad(format!("{name} grid is empty"));
            }
        }
        if self.methods.is_empty() {
            return bad("methods list is empty".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad("every ε must be positive and finite".into());
        }
        if self.alphas.iter().chain([&self.alpha]).any(|a| !(0.0..1.0).contains(a)) {
            return bad("every α must lie in [0, 1)".into());
        }
        if self.fractions.iter().chain([&self.random_fraction]).any(|f| !(0.0..=1.0).contains(f)) {
            return bad("fractions must lie in [0, 1]".into());
        }
        if !(0.0..=100.0).contains(&self.top_k_percent) {
            return bad("top_k_percent must lie in [0, 100]".into());
        }
        if self.n_shadow < 2 {
            return bad("n_shadow must be at least 2".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let Some(e) = self.sweep_epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return bad("sweep_epsilon must be positive and finite".into());
            }
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.surrogate_train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let DatasetSpec::Planted { utility_label_noise, .. } = self.dataset {
            if !(0.0..=1.0).contains(&utility_label_noise) {
                return bad("utility_label_noise must lie in [0, 1]".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex(&Sha256::digest(json.as_bytes()))
    }

    /// Master seed of replicate `r`.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        privmask::seed::derive_seed(self.seed, &[privmask::seed::tag("replicate"), r as u64])
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::planted_default("t");
        assert_eq!(c.n_shadow, 64);
        assert_eq!(c.replicates, 5);
        assert_eq!(c.epsilons, vec![0.5, 1.0, 2.0, 4.0, 8.0]);
        assert_eq!(c.null_mode.0, NullMode::GlobalPerModel);
    }

    #[test]
    fn json_and_toml_agree() {
        let c = ExperimentConfig::planted_default("t");
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), c);
        let toml = toml::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&toml).unwrap(), c);
    }

    #[test]
    fn invalid_grids_rejected() {
        let mut c = ExperimentConfig::planted_default("t");
        c.epsilons.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::planted_default("t");
        c.replicates = 0;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("name = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::planted_default("t");
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
