//! DP-SGD: Poisson-subsampled batches, per-sample L2 clipping and Gaussian
//! noise on the summed clipped gradients.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::accountant::{account_epsilon, calibrate_noise, AccountingReport, PrivacySpec};
use super::{DpError, Result, DEFAULT_DELTA};
use crate::data::LabeledView;
use crate::model::{check_view, gather, MlpModel, MlpSpec, Scratch, TrainConfig};
use crate::seed::{derived_rng, tag, Rng};

/// Scales `grad` in place by `min(1, C/‖grad‖₂)` and returns the resulting norm.
pub fn clip_per_sample(grad: &mut [f64], clip_norm: f64) -> Result<f64> {
    if !(clip_norm > 0.0) {
        return Err(DpError::InvalidSpec("clip norm must be positive".into()));
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(DpError::NonFiniteGradient);
    }
    if norm <= clip_norm {
        return Ok(norm);
    }
    let scale = clip_norm / norm;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    // Rounding can leave the norm a few ulps above C; shrink until it is not.
    loop {
        let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if n <= clip_norm {
            return Ok(n);
        }
        for g in grad.iter_mut() {
            *g *= 1.0 - f64::EPSILON;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub batch_size: usize,
    /// Largest per-sample gradient norm after clipping (0 for an empty batch).
    pub max_clipped_norm: f64,
    pub mean_loss: f64,
}

/// One DP-SGD update on an already-sampled batch:
/// `θ ← θ − lr · (Σ clip(g_i) + N(0, σ²C²I)) / expected_batch_size`.
/// An empty batch yields a noise-only update.
pub fn dp_sgd_step(
    model: &mut MlpModel,
    batch: &LabeledView<'_>,
    spec: &PrivacySpec,
    learning_rate: f64,
    expected_batch_size: f64,
    rng: &mut Rng,
) -> Result<StepStats> {
    if !(expected_batch_size > 0.0) {
        return Err(DpError::InvalidSpec("expected batch size must be positive".into()));
    }
    if !batch.is_empty() {
        check_view(model, batch)?;
    }
    let p = model.num_params();
    let mut sum = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut scratch = Scratch::default();
    let mut max_norm: f64 = 0.0;
    let mut loss = 0.0;
    for i in 0..batch.len() {
        loss += model.sample_grad_into(batch.row(i), batch.labels[i], &mut grad, &mut scratch);
        let n = clip_per_sample(&mut grad, spec.clip_norm)?;
        max_norm = max_norm.max(n);
        for (s, g) in sum.iter_mut().zip(&grad) {
            *s += g;
        }
    }
    let noise_std = spec.noise_multiplier * spec.clip_norm;
    let scale = learning_rate / expected_batch_size;
    for (w, s) in model.params_mut().iter_mut().zip(&sum) {
        let z: f64 = StandardNormal.sample(rng);
        *w -= scale * (s + noise_std * z);
    }
    Ok(StepStats {
        batch_size: batch.len(),
        max_clipped_norm: max_norm,
        mean_loss: if batch.is_empty() { 0.0 } else { loss / batch.len() as f64 },
    })
}

/// Indices included independently with probability `rate`.
pub fn poisson_sample(n: usize, rate: f64, rng: &mut Rng) -> Vec<usize> {
    (0..n).filter(|_| rng.random::<f64>() < rate).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum NoiseSetting {
    Multiplier(f64),
    TargetEpsilon(f64),
}

/// User-facing DP knobs; sampling rate and step count come from the data
/// size and [`TrainConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSettings {
    pub clip_norm: f64,
    pub delta: f64,
    pub noise: NoiseSetting,
}

impl DpSettings {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { clip_norm: 1.0, delta: DEFAULT_DELTA, noise: NoiseSetting::TargetEpsilon(epsilon) }
    }

    /// `q = min(1, batch_size / n)`, `T = ⌈epochs / q⌉`, and σ either given
    /// or calibrated to the target ε.
    pub fn resolve(&self, n_train: usize, config: &TrainConfig) -> Result<PrivacySpec> {
        if n_train == 0 {
            return Err(DpError::InvalidSpec("empty training set".into()));
        }
        let q = (config.batch_size as f64 / n_train as f64).min(1.0);
        let steps = (config.epochs as f64 / q - 1e-9).ceil().max(0.0) as usize;
        let (sigma, target) = match self.noise {
            NoiseSetting::Multiplier(s) => (s, None),
            NoiseSetting::TargetEpsilon(e) => {
                let s = if steps == 0 { 0.0 } else { calibrate_noise(e, self.delta, q, steps)? };
                (s, Some(e))
            }
        };
        let spec = PrivacySpec {
            clip_norm: self.clip_norm,
            noise_multiplier: sigma,
            sampling_rate: q,
            steps,
            delta: self.delta,
            epsilon_target: target,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// DP-SGD training. Early stopping is not applied: selecting on held-out
/// loss would spend privacy outside the accountant.
pub fn train_dp(
    view: &LabeledView<'_>,
    model_spec: &MlpSpec,
    config: &TrainConfig,
    settings: &DpSettings,
) -> Result<(MlpModel, AccountingReport)> {
    config.validate()?;
    let spec = settings.resolve(view.len(), config)?;
    let model = train_dp_with_spec(view, model_spec, config, &spec)?;
    Ok((model, account_epsilon(&spec)?))
}

/// DP-SGD under an already-resolved mechanism. The sampling rate and step
/// count come from `privacy`; `config` supplies the learning rate and seed.
pub fn train_dp_with_spec(
    view: &LabeledView<'_>,
    model_spec: &MlpSpec,
    config: &TrainConfig,
    privacy: &PrivacySpec,
) -> Result<MlpModel> {
    config.validate()?;
    privacy.validate()?;
    if view.is_empty() {
        return Err(DpError::InvalidSpec("empty training set".into()));
    }
    let mut model = MlpModel::init(model_spec, view.num_features, view.num_classes, config.seed)?;
    check_view(&model, view)?;
    let mut rng = derived_rng(config.seed, &[tag("dp-sgd")]);
    let expected = privacy.sampling_rate * view.len() as f64;
    for step in 0..privacy.steps {
        let idx = poisson_sample(view.len(), privacy.sampling_rate, &mut rng);
        let (features, labels) = gather(view, &idx);
        let batch = LabeledView {
            features: &features,
            num_features: view.num_features,
            labels: &labels,
            num_classes: view.num_classes,
        };
        let stats = dp_sgd_step(&mut model, &batch, privacy, config.learning_rate, expected, &mut rng)?;
        if !stats.mean_loss.is_finite() || model.params().iter().any(|w| !w.is_finite()) {
            return Err(DpError::Diverged { step });
        }
    }
    Ok(model)
}
