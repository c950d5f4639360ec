//! Small feedforward classifiers with exact per-sample gradients.
//!
//! Parameters are stored as one flat vector (layer by layer: row-major
//! weights `out × in`, then biases) so that a per-sample gradient is a plain
//! `Vec<f64>` that can be clipped, summed and noised without reshaping.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::LabeledView;
use crate::seed::{derived_rng, tag};

/// Probabilities fed to logit transforms are clamped to this distance from
/// 0 and 1.
pub const CONFIDENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty evaluation set")]
    EmptyEvaluation,
    #[error("training diverged (non-finite loss) at {stage} {index}")]
    Diverged { stage: &'static str, index: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Anything that maps a feature vector to class probabilities.
pub trait Classifier: Sync {
    fn num_features(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Class probabilities; callers guarantee `x.len() == num_features()`.
    fn predict_proba(&self, x: &[f64]) -> Vec<f64>;

    fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `M(x)_y` clamped to `[CONFIDENCE_FLOOR, 1 - CONFIDENCE_FLOOR]`.
pub fn confidence<C: Classifier + ?Sized>(model: &C, x: &[f64], y: usize) -> f64 {
    model.predict_proba(x)[y].clamp(CONFIDENCE_FLOOR, 1.0 - CONFIDENCE_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Hidden-layer layout; input and output widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self { hidden: vec![32], activation: Activation::Relu }
    }
}

impl MlpSpec {
    pub fn layer_dims(&self, num_features: usize, num_classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(num_features);
        dims.extend_from_slice(&self.hidden);
        dims.push(num_classes);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping (and the validation hold-out).
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 60, batch_size: 16, seed: 0, early_stop_patience: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    seed: u64,
}

/// Reusable activation buffers for forward/backward passes.
#[derive(Debug, Default)]
pub struct Scratch {
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Seeded initialisation: weights uniform on `±1/√fan_in`, biases zero.
    pub fn init(spec: &MlpSpec, num_features: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let dims = spec.layer_dims(num_features, num_classes);
        if dims.contains(&0) {
            return Err(ModelError::InvalidConfig(format!("layer widths must be positive: {dims:?}")));
        }
        let mut rng = derived_rng(seed, &[tag("init")]);
        let mut params = Vec::with_capacity(Self::param_count_for(&dims));
        for l in 0..dims.len() - 1 {
            let bound = 1.0 / (dims[l] as f64).sqrt();
            for _ in 0..dims[l] * dims[l + 1] {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat_n(0.0, dims[l + 1]));
        }
        Ok(Self { layer_dims: dims, activation: spec.activation, params, seed })
    }

    /// Builds a model from explicit flat parameters.
    pub fn from_params(layer_dims: Vec<usize>, activation: Activation, params: Vec<f64>, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(ModelError::InvalidConfig(format!("bad layer dims {layer_dims:?}")));
        }
        let expected = Self::param_count_for(&layer_dims);
        if params.len() != expected {
            return Err(ModelError::DimensionMismatch { expected, got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::InvalidConfig("non-finite parameter".into()));
        }
        Ok(Self { layer_dims, activation, params, seed })
    }

    fn param_count_for(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Offsets of (weights, biases) for layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.layer_dims.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.layer_dims[l] * self.layer_dims[l + 1])
    }

    /// Validated forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.layer_dims[0] {
            return Err(ModelError::DimensionMismatch { expected: self.layer_dims[0], got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidConfig("non-finite input".into()));
        }
        let mut scratch = Scratch::default();
        self.forward_into(x, &mut scratch);
        Ok(scratch.activations.last().unwrap().clone())
    }

    /// Fills `scratch.activations[l]` for every layer; the last entry holds
    /// softmax probabilities.
    fn forward_into(&self, x: &[f64], scratch: &mut Scratch) {
        let layers = self.layer_dims.len() - 1;
        scratch.activations.resize_with(layers + 1, Vec::new);
        scratch.activations[0].clear();
        scratch.activations[0].extend_from_slice(x);
        for l in 0..layers {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let (prev, rest) = scratch.activations.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            out.clear();
            for o in 0..n_out {
                let row = &self.params[w_off + o * n_in..w_off + (o + 1) * n_in];
                let z: f64 = self.params[b_off + o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                out.push(z);
            }
            if l + 1 < layers {
                for v in out.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            } else {
                softmax_in_place(out);
            }
        }
    }

    /// Cross-entropy loss of one sample; writes its gradient into `grad`
    /// (overwriting). `grad.len()` must equal `num_params()`.
    pub fn sample_grad_into(&self, x: &[f64], y: usize, grad: &mut [f64], scratch: &mut Scratch) -> f64 {
        debug_assert_eq!(grad.len(), self.params.len());
        self.forward_into(x, scratch);
        let layers = self.layer_dims.len() - 1;
        scratch.deltas.resize_with(layers, Vec::new);
        let probs = &scratch.activations[layers];
        let loss = -probs[y].max(f64::MIN_POSITIVE).ln();

        let last = &mut scratch.deltas[layers - 1];
        last.clear();
        last.extend_from_slice(probs);
        last[y] -= 1.0;

        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let input = &scratch.activations[l];
            let delta = &scratch.deltas[l];
            for o in 0..n_out {
                let d = delta[o];
                let g_row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                for (g, a) in g_row.iter_mut().zip(input) {
                    *g = d * a;
                }
                grad[b_off + o] = d;
            }
            if l > 0 {
                let mut back = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &self.params[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
                for (b, a) in back.iter_mut().zip(&scratch.activations[l]) {
                    *b *= self.activation.derivative_from_output(*a);
                }
                scratch.deltas[l - 1] = back;
            }
        }
        loss
    }

    /// Mean cross-entropy over `view`.
    pub fn mean_loss(&self, view: &LabeledView<'_>) -> f64 {
        let mut scratch = Scratch::default();
        let mut total = 0.0;
        for i in 0..view.len() {
            self.forward_into(view.row(i), &mut scratch);
            total -= scratch.activations.last().unwrap()[view.labels[i]].max(f64::MIN_POSITIVE).ln();
        }
        total / view.len() as f64
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(&ModelSnapshot::from(self))?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let snap: ModelSnapshot = serde_json::from_slice(&std::fs::read(path)?)?;
        snap.into_model()
    }
}

impl Classifier for MlpModel {
    fn num_features(&self) -> usize {
        self.layer_dims[0]
    }

    fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = Scratch::default();
        self.forward_into(x, &mut scratch);
        scratch.activations.pop().unwrap()
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

/// Versioned JSON model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub training_seed: u64,
    pub params: Vec<f64>,
}

impl From<&MlpModel> for ModelSnapshot {
    fn from(m: &MlpModel) -> Self {
        Self {
            format_version: SNAPSHOT_FORMAT_VERSION,
            layer_dims: m.layer_dims.clone(),
            activation: m.activation,
            training_seed: m.seed,
            params: m.params.clone(),
        }
    }
}

impl ModelSnapshot {
    pub fn into_model(self) -> Result<MlpModel> {
        if self.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(ModelError::InvalidConfig(format!("unsupported model format version {}", self.format_version)));
        }
        MlpModel::from_params(self.layer_dims, self.activation, self.params, self.training_seed)
    }
}

/// Mean loss and one gradient vector per sample (not averaged).
#[derive(Debug, Clone)]
pub struct PerSampleGrads {
    pub mean_loss: f64,
    pub grads: Vec<Vec<f64>>,
}

pub fn loss_and_per_sample_grads(model: &MlpModel, batch: &LabeledView<'_>) -> Result<PerSampleGrads> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    check_view(model, batch)?;
    let mut scratch = Scratch::default();
    let mut total = 0.0;
    let grads = (0..batch.len())
        .map(|i| {
            let mut g = vec![0.0; model.num_params()];
            total += model.sample_grad_into(batch.row(i), batch.labels[i], &mut g, &mut scratch);
            g
        })
        .collect();
    Ok(PerSampleGrads { mean_loss: total / batch.len() as f64, grads })
}

pub(crate) fn check_view(model: &MlpModel, view: &LabeledView<'_>) -> Result<()> {
    if view.num_features != model.num_features() {
        return Err(ModelError::DimensionMismatch { expected: model.num_features(), got: view.num_features });
    }
    let classes = model.num_classes();
    if let Some(&label) = view.labels.iter().find(|&&l| l >= classes) {
        return Err(ModelError::BadLabel { label, classes });
    }
    Ok(())
}

/// Splits `0..n` into (train, validation) with a 10% validation hold-out
/// when early stopping is enabled.
pub(crate) fn holdout(n: usize, config: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if config.early_stop_patience == 0 || n < 10 {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut derived_rng(config.seed, &[tag("holdout")]));
    let n_val = n.div_ceil(10);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Tracks validation loss and keeps the best parameters seen.
pub(crate) struct EarlyStopper {
    patience: usize,
    best_loss: f64,
    best_params: Option<Vec<f64>>,
    bad_epochs: usize,
}

impl EarlyStopper {
    pub(crate) fn new(patience: usize) -> Self {
        Self { patience, best_loss: f64::INFINITY, best_params: None, bad_epochs: 0 }
    }

    /// Returns `true` when training should stop.
    pub(crate) fn observe(&mut self, val_loss: f64, params: &[f64]) -> bool {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_params = Some(params.to_vec());
            self.bad_epochs = 0;
            false
        } else {
            self.bad_epochs += 1;
            self.bad_epochs >= self.patience
        }
    }

    pub(crate) fn restore_best(self, model: &mut MlpModel) {
        if let Some(p) = self.best_params {
            model.params = p;
        }
    }
}

/// Non-private minibatch SGD on mean cross-entropy.
pub fn train_plain(view: &LabeledView<'_>, spec: &MlpSpec, config: &TrainConfig) -> Result<MlpModel> {
    config.validate()?;
    if view.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut model = MlpModel::init(spec, view.num_features, view.num_classes, config.seed)?;
    check_view(&model, view)?;
    let (mut train_idx, val_idx) = holdout(view.len(), config);
    let val_view = (!val_idx.is_empty()).then(|| gather(view, &val_idx));
    let mut stopper = EarlyStopper::new(config.early_stop_patience);
    let mut rng = derived_rng(config.seed, &[tag("minibatch")]);
    let mut scratch = Scratch::default();
    let p = model.num_params();
    let mut grad = vec![0.0; p];
    let mut acc = vec![0.0; p];

    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(config.batch_size) {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut loss = 0.0;
            for &i in batch {
                loss += model.sample_grad_into(view.row(i), view.labels[i], &mut grad, &mut scratch);
                for (a, g) in acc.iter_mut().zip(&grad) {
                    *a += g;
                }
            }
            if !loss.is_finite() {
                return Err(ModelError::Diverged { stage: "epoch", index: epoch });
            }
            let scale = config.learning_rate / batch.len() as f64;
            for (w, a) in model.params.iter_mut().zip(&acc) {
                *w -= scale * a;
            }
        }
        if model.params.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::Diverged { stage: "epoch", index: epoch });
        }
        if let Some((vx, vy)) = &val_view {
            let vv = LabeledView {
                features: vx,
                num_features: view.num_features,
                labels: vy,
                num_classes: view.num_classes,
            };
            if stopper.observe(model.mean_loss(&vv), &model.params) {
                break;
            }
        }
    }
    if val_view.is_some() {
        stopper.restore_best(&mut model);
    }
    Ok(model)
}

pub(crate) fn gather(view: &LabeledView<'_>, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut x = Vec::with_capacity(idx.len() * view.num_features);
    for &i in idx {
        x.extend_from_slice(view.row(i));
    }
    (x, idx.iter().map(|&i| view.labels[i]).collect())
}

/// Fraction of argmax-correct predictions (ties to the lowest class).
pub fn accuracy<C: Classifier + ?Sized>(model: &C, view: &LabeledView<'_>) -> Result<f64> {
    if view.is_empty() {
        return Err(ModelError::EmptyEvaluation);
    }
    if view.num_features != model.num_features() {
        return Err(ModelError::DimensionMismatch { expected: model.num_features(), got: view.num_features });
    }
    let correct = (0..view.len()).filter(|&i| model.predict(view.row(i)) == view.labels[i]).count();
    Ok(correct as f64 / view.len() as f64)
}
