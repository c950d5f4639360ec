//! Dual-task datasets: one feature matrix with a utility label and an
//! identity label per sample.
//!
//! Feature values live in `[0, 1]` so that masking a feature (setting it to
//! zero) coincides with the all-zeros baseline used by the explainers.

mod idx;
mod io;

pub use idx::{load_idx_subset, read_idx};
pub use io::{read_csv, read_snapshot, write_csv, write_snapshot};

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed::{derived_rng, rng_from_seed, tag};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed IDX file {path}: {reason}")]
    MalformedIdx { path: String, reason: String },
    #[error("malformed dataset file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, DataError>;

fn invalid(msg: impl Into<String>) -> DataError {
    DataError::InvalidParameter(msg.into())
}

/// Which label column a model is trained on or a mask is keyed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Utility,
    Identity,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Utility => "utility",
            Task::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "utility" | "y" => Ok(Task::Utility),
            "identity" | "z" => Ok(Task::Identity),
            other => Err(format!("unknown task '{other}' (expected utility|identity)")),
        }
    }
}

/// Borrowed (features, labels) pair handed to trainers and attacks.
#[derive(Debug, Clone, Copy)]
pub struct LabeledView<'a> {
    /// Row-major `len × num_features`.
    pub features: &'a [f64],
    pub num_features: usize,
    pub labels: &'a [usize],
    pub num_classes: usize,
}

impl<'a> LabeledView<'a> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTaskDataset {
    name: String,
    num_features: usize,
    features: Vec<f64>,
    utility_labels: Vec<usize>,
    identity_labels: Vec<usize>,
    num_utility_classes: usize,
    num_identity_classes: usize,
    seed: Option<u64>,
}

impl DualTaskDataset {
    /// Validates and assembles a dataset. `features` is row-major `N × K`.
    pub fn new(
        name: impl Into<String>,
        num_features: usize,
        features: Vec<f64>,
        utility_labels: Vec<usize>,
        identity_labels: Vec<usize>,
        num_utility_classes: usize,
        num_identity_classes: usize,
    ) -> Result<Self> {
        let n = utility_labels.len();
        if num_features == 0 {
            return Err(invalid("feature count must be at least 1"));
        }
        if n == 0 {
            return Err(invalid("dataset must contain at least one sample"));
        }
        if identity_labels.len() != n {
            return Err(invalid(format!("label length mismatch: {} utility vs {} identity", n, identity_labels.len())));
        }
        if features.len() != n * num_features {
            return Err(invalid(format!(
                "feature matrix has {} values, expected {}×{}",
                features.len(),
                n,
                num_features
            )));
        }
        if num_utility_classes < 2 || num_identity_classes < 2 {
            return Err(invalid("class counts must be at least 2"));
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(invalid(format!("feature value {bad} outside [0,1]")));
        }
        if let Some(&y) = utility_labels.iter().find(|&&y| y >= num_utility_classes) {
            return Err(invalid(format!("utility label {y} ≥ {num_utility_classes}")));
        }
        if let Some(&z) = identity_labels.iter().find(|&&z| z >= num_identity_classes) {
            return Err(invalid(format!("identity label {z} ≥ {num_identity_classes}")));
        }
        Ok(Self {
            name: name.into(),
            num_features,
            features,
            utility_labels,
            identity_labels,
            num_utility_classes,
            num_identity_classes,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.utility_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utility_labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn labels(&self, task: Task) -> &[usize] {
        match task {
            Task::Utility => &self.utility_labels,
            Task::Identity => &self.identity_labels,
        }
    }

    pub fn num_classes(&self, task: Task) -> usize {
        match task {
            Task::Utility => self.num_utility_classes,
            Task::Identity => self.num_identity_classes,
        }
    }

    pub fn view(&self, task: Task) -> LabeledView<'_> {
        LabeledView {
            features: &self.features,
            num_features: self.num_features,
            labels: self.labels(task),
            num_classes: self.num_classes(task),
        }
    }

    /// Copies the listed rows (in the given order) into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let k = self.num_features;
        let mut features = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            if i >= self.len() {
                return Err(invalid(format!("row index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
        }
        let ds = Self::new(
            self.name.clone(),
            k,
            features,
            indices.iter().map(|&i| self.utility_labels[i]).collect(),
            indices.iter().map(|&i| self.identity_labels[i]).collect(),
            self.num_utility_classes,
            self.num_identity_classes,
        )?;
        Ok(ds.with_seed(self.seed))
    }

    /// Returns a copy with the feature matrix replaced (labels unchanged).
    pub fn with_features(&self, features: Vec<f64>) -> Result<Self> {
        Ok(Self::new(
            self.name.clone(),
            self.num_features,
            features,
            self.utility_labels.clone(),
            self.identity_labels.clone(),
            self.num_utility_classes,
            self.num_identity_classes,
        )?
        .with_seed(self.seed))
    }

    /// Returns a copy with one label column replaced.
    pub fn with_labels(&self, task: Task, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (u, z, nu, nz) = match task {
            Task::Utility => (labels, self.identity_labels.clone(), num_classes, self.num_identity_classes),
            Task::Identity => (self.utility_labels.clone(), labels, self.num_utility_classes, num_classes),
        };
        Ok(Self::new(self.name.clone(), self.num_features, self.features.clone(), u, z, nu, nz)?.with_seed(self.seed))
    }
}

/// Planted ground truth for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedStructure {
    pub identity_features: Vec<usize>,
    pub utility_features: Vec<usize>,
    pub noise_std: f64,
}

impl PlantedStructure {
    pub fn new(identity_features: Vec<usize>, utility_features: Vec<usize>, noise_std: f64) -> Self {
        Self { identity_features, utility_features, noise_std }
    }

    /// Contiguous layout: identity block `0..n_identity`, utility block
    /// sharing its first `n_overlap` indices with the end of the identity block.
    pub fn contiguous(n_identity: usize, n_utility: usize, n_overlap: usize, noise_std: f64) -> Self {
        let overlap = n_overlap.min(n_identity).min(n_utility);
        let start = n_identity - overlap;
        Self {
            identity_features: (0..n_identity).collect(),
            utility_features: (start..start + n_utility).collect(),
            noise_std,
        }
    }

    /// `|I ∩ U| / |I ∪ U|`.
    pub fn overlap_fraction(&self) -> f64 {
        let inter = self.identity_features.iter().filter(|j| self.utility_features.contains(j)).count();
        let union = self.identity_features.len() + self.utility_features.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn validate(&self, num_features: usize) -> Result<()> {
        for (label, set) in [("identity", &self.identity_features), ("utility", &self.utility_features)] {
            if set.is_empty() {
                return Err(invalid(format!("{label} feature set is empty")));
            }
            if let Some(j) = set.iter().find(|&&j| j >= num_features) {
                return Err(invalid(format!("{label} feature {j} ≥ {num_features}")));
            }
            let mut sorted = set.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != set.len() {
                return Err(invalid(format!("{label} feature set has duplicates")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(invalid("noise_std must be finite and non-negative"));
        }
        Ok(())
    }
}

fn check_counts(num_samples: usize, num_features: usize, classes: &[usize]) -> Result<()> {
    if num_samples == 0 || num_features == 0 {
        return Err(invalid("sample and feature counts must be positive"));
    }
    if classes.iter().any(|&c| c < 2) {
        return Err(invalid("class counts must be at least 2"));
    }
    Ok(())
}

/// Class-balanced quantile binning: the `r`-th smallest score gets class
/// `r·C/N`. Ties are broken by sample index.
fn quantile_classes(scores: &[f64], num_classes: usize) -> Vec<usize> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut labels = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * num_classes / n;
    }
    labels
}

/// Synthetic dataset with planted identity and utility feature sets.
///
/// Features are i.i.d. uniform on `[0, 1]`. Each label column is the
/// quantile bin of a positive-weighted linear score over its planted feature
/// set plus `N(0, noise_std²)` noise. Features outside both sets are pure
/// noise.
pub fn gen_synthetic_dual_task(
    num_samples: usize,
    num_features: usize,
    num_identity_classes: usize,
    num_utility_classes: usize,
    structure: &PlantedStructure,
    seed: u64,
) -> Result<DualTaskDataset> {
    check_counts(num_samples, num_features, &[num_identity_classes, num_utility_classes])?;
    structure.validate(num_features)?;

    let mut rng = derived_rng(seed, &[tag("features")]);
    let features: Vec<f64> = (0..num_samples * num_features).map(|_| rng.random::<f64>()).collect();

    let label_column = |set: &[usize], name: &str, classes: usize| {
        let mut wrng = derived_rng(seed, &[tag(name), tag("weights")]);
        let weights: Vec<f64> = set.iter().map(|_| 0.5 + wrng.random::<f64>()).collect();
        let mut nrng = derived_rng(seed, &[tag(name), tag("noise")]);
        let scores: Vec<f64> = (0..num_samples)
            .map(|i| {
                let row = &features[i * num_features..(i + 1) * num_features];
                let s: f64 = set.iter().zip(&weights).map(|(&j, w)| w * row[j]).sum();
                let eps: f64 = StandardNormal.sample(&mut nrng);
                s + structure.noise_std * eps
            })
            .collect();
        quantile_classes(&scores, classes)
    };
    let identity = label_column(&structure.identity_features, "identity", num_identity_classes);
    let utility = label_column(&structure.utility_features, "utility", num_utility_classes);

    Ok(DualTaskDataset::new(
        format!("planted-n{num_samples}-k{num_features}"),
        num_features,
        features,
        utility,
        identity,
        num_utility_classes,
        num_identity_classes,
    )?
    .with_seed(Some(seed)))
}

/// Features i.i.d. uniform on `[0, 1]`, both label columns i.i.d. uniform and
/// independent of the features.
pub fn gen_random_dataset(
    num_samples: usize,
    num_features: usize,
    num_classes: usize,
    seed: u64,
) -> Result<DualTaskDataset> {
    check_counts(num_samples, num_features, &[num_classes])?;
    let mut rng = rng_from_seed(seed);
    let features: Vec<f64> = (0..num_samples * num_features).map(|_| rng.random::<f64>()).collect();
    let utility: Vec<usize> = (0..num_samples).map(|_| rng.random_range(0..num_classes)).collect();
    let identity: Vec<usize> = (0..num_samples).map(|_| rng.random_range(0..num_classes)).collect();
    Ok(DualTaskDataset::new(
        format!("random-n{num_samples}-k{num_features}"),
        num_features,
        features,
        utility,
        identity,
        num_classes,
        num_classes,
    )?
    .with_seed(Some(seed)))
}

/// Redraws the `task` label of exactly `⌊fraction·N⌋` samples, chosen
/// uniformly without replacement, from the uniform distribution over classes.
pub fn randomize_labels(
    dataset: &DualTaskDataset,
    fraction: f64,
    which_task: Task,
    seed: u64,
) -> Result<DualTaskDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(invalid(format!("fraction {fraction} outside [0,1]")));
    }
    let n = dataset.len();
    let count = ((n as f64) * fraction + 1e-9).floor() as usize;
    let classes = dataset.num_classes(which_task);
    let mut labels = dataset.labels(which_task).to_vec();
    let mut rng = rng_from_seed(seed);
    for i in sample_indices(&mut rng, n, count.min(n)) {
        labels[i] = rng.random_range(0..classes);
    }
    dataset.with_labels(which_task, labels, classes)
}

/// Seeded shuffle split into `⌈ratio·N⌉` train and the remaining test indices.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid(format!("split ratio {ratio} outside (0,1)")));
    }
    let n_train = ((n as f64) * ratio - 1e-9).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(invalid(format!("split of {n} samples at ratio {ratio} leaves a side empty")));
    }
    let mut rng = rng_from_seed(seed);
    let perm = sample_indices(&mut rng, n, n).into_vec();
    let (train, test) = perm.split_at(n_train);
    Ok((train.to_vec(), test.to_vec()))
}

pub fn split_train_test(
    dataset: &DualTaskDataset,
    ratio: f64,
    seed: u64,
) -> Result<(DualTaskDataset, DualTaskDataset)> {
    let (train, test) = split_indices(dataset.len(), ratio, seed)?;
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}
