//! Experiment sweeps. Every cell is a pure function of the config and the
//! replicate seed; cells run in parallel and rows come back in grid order.

use std::time::Instant;

use privmask::attack::{
    build_shadow_ensemble, compute_asr, find_equivalent_epsilon, AsrReport, EquivalenceReport, EquivalenceSearch,
    ShadowTrainer,
};
use privmask::data::{randomize_labels, split_indices};
use privmask::dp::{train_dp, DpSettings, NoiseSetting};
use privmask::explain::{shapley_exact, ExplainerKind};
use privmask::masking::{
    apply_mask, class_sensitivities, optimize_class_masks, ClassMaskSet, ClassSensitivities, MaskMethod,
};
use privmask::model::{accuracy, train_plain};
use privmask::seed::{derive_seed, tag};
use privmask::{DualTaskDataset, MlpModel, Task, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("cannot build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// One grid cell of one replicate. Failed cells carry NaN metrics and a
/// non-empty `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    /// Requested ε; NaN when trained without DP.
    pub epsilon: f64,
    pub alpha: f64,
    /// The swept value (ε, masked fraction, randomised fraction or α).
    pub level: f64,
    pub replicate: usize,
    pub asr_mean: f64,
    pub asr_max: f64,
    pub utility_accuracy: f64,
    pub wall_time_s: f64,
    /// Accounted ε of the shadow trainer; NaN without DP.
    pub accountant_epsilon: f64,
    pub error: String,
}

pub const SWEEP_FIELDS: [&str; 11] = [
    "method",
    "epsilon",
    "alpha",
    "level",
    "replicate",
    "asr_mean",
    "asr_max",
    "utility_accuracy",
    "wall_time_s",
    "accountant_epsilon",
    "error",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    AsrVsEpsilon,
    MaskedFraction,
    LabelRandomization,
    Alpha,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::AsrVsEpsilon => "asr-vs-epsilon",
            Self::MaskedFraction => "masked-fraction",
            Self::LabelRandomization => "label-randomization",
            Self::Alpha => "alpha",
        }
    }

    /// Label of the `level` axis in plot files.
    pub fn axis(self) -> &'static str {
        match self {
            Self::AsrVsEpsilon => "epsilon",
            Self::MaskedFraction => "masked_fraction",
            Self::LabelRandomization => "randomized_fraction",
            Self::Alpha => "alpha",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| !r.error.is_empty()).count()
    }
}

/// How shadow and utility models are trained in a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Training {
    Plain,
    Dp(f64),
}

impl Training {
    fn from_option(eps: Option<f64>) -> Self {
        eps.map_or(Self::Plain, Self::Dp)
    }

    fn epsilon(self) -> f64 {
        match self {
            Self::Plain => f64::NAN,
            Self::Dp(e) => e,
        }
    }
}

/// Dataset and split of one replicate.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub index: usize,
    pub seed: u64,
    pub dataset: DualTaskDataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl Replicate {
    pub fn new(config: &ExperimentConfig, index: usize) -> Result<Self, BoxError> {
        let seed = config.replicate_seed(index);
        let dataset = config.dataset.build(derive_seed(seed, &[tag("data")]))?;
        let (train_idx, test_idx) =
            split_indices(dataset.len(), config.split_ratio, derive_seed(seed, &[tag("split")]))?;
        Ok(Self { index, seed, dataset, train_idx, test_idx })
    }

    pub fn train_split(&self) -> Result<DualTaskDataset, BoxError> {
        Ok(self.dataset.subset(&self.train_idx)?)
    }

    /// Surrogate identity and utility models, fitted on the training split.
    pub fn surrogates(&self, config: &ExperimentConfig) -> Result<(MlpModel, MlpModel), BoxError> {
        let train = self.train_split()?;
        let fit = |task: Task| {
            let cfg = TrainConfig {
                seed: derive_seed(self.seed, &[tag("surrogate"), task as u64]),
                ..config.surrogate_train.clone()
            };
            train_plain(&train.view(task), &config.model, &cfg)
        };
        Ok((fit(Task::Identity)?, fit(Task::Utility)?))
    }

    /// Class sensitivities from the surrogate models on the training split.
    pub fn sensitivities(&self, config: &ExperimentConfig) -> Result<ClassSensitivities, BoxError> {
        let (id_model, ut_model) = self.surrogates(config)?;
        let train = self.train_split()?;
        Ok(class_sensitivities(
            &train,
            &id_model,
            &ut_model,
            &config.explainer,
            config.global_u,
            derive_seed(self.seed, &[tag("explain")]),
        )?)
    }

    /// Masks of `method` at privacy level `alpha`; `None` for the original data.
    /// Random masks drop as many features per class as the optimised ones.
    pub fn masks(
        &self,
        config: &ExperimentConfig,
        sens: &ClassSensitivities,
        method: Method,
        alpha: f64,
    ) -> Result<Option<ClassMaskSet>, BoxError> {
        let optimized = || optimize_class_masks(sens, alpha, config.top_k_percent, self.seed).map(|(m, _)| m);
        Ok(match method {
            Method::Original => None,
            Method::Optimized => Some(optimized()?),
            Method::TopK => Some(ClassMaskSet::top_k(&sens.privacy, config.top_k_percent, Task::Identity)?),
            Method::Random => {
                Some(ClassMaskSet::random_matching(&optimized()?, derive_seed(self.seed, &[tag("random-mask")])))
            }
        })
    }
}

/// Metrics of one trained cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellOutcome {
    pub asr_mean: f64,
    pub asr_max: f64,
    pub utility_accuracy: f64,
    pub accountant_epsilon: f64,
}

fn dp_settings(config: &ExperimentConfig, epsilon: f64) -> DpSettings {
    DpSettings { clip_norm: config.clip_norm, delta: config.delta, noise: NoiseSetting::TargetEpsilon(epsilon) }
}

/// ASR report of a shadow ensemble on the utility task of `variant`.
/// Memberships depend only on the replicate seed, so every variant and ε of
/// a replicate is attacked with the same membership matrix.
pub fn attack_variant(
    config: &ExperimentConfig,
    rep: &Replicate,
    variant: &DualTaskDataset,
    training: Training,
) -> Result<AsrReport, BoxError> {
    let trainer = match training {
        Training::Plain => ShadowTrainer::Plain { model: config.model.clone(), config: config.train.clone() },
        Training::Dp(e) => ShadowTrainer::dp_for_dataset(
            config.model.clone(),
            config.train.clone(),
            &dp_settings(config, e),
            variant.len(),
        )?,
    };
    let view = variant.view(Task::Utility);
    let ensemble = build_shadow_ensemble(&view, config.n_shadow, &trainer, derive_seed(rep.seed, &[tag("shadow")]))?;
    Ok(compute_asr(&ensemble, &view, config.threshold, config.null_mode.0, config.leakage_guard)?)
}

/// Test accuracy of one utility model trained on the training split of `variant`.
pub fn utility_accuracy(
    config: &ExperimentConfig,
    rep: &Replicate,
    variant: &DualTaskDataset,
    training: Training,
) -> Result<f64, BoxError> {
    let train = variant.subset(&rep.train_idx)?;
    let test = variant.subset(&rep.test_idx)?;
    let cfg = TrainConfig { seed: derive_seed(rep.seed, &[tag("utility-model")]), ..config.train.clone() };
    let model = match training {
        Training::Plain => train_plain(&train.view(Task::Utility), &config.model, &cfg)?,
        Training::Dp(e) => train_dp(&train.view(Task::Utility), &config.model, &cfg, &dp_settings(config, e))?.0,
    };
    Ok(accuracy(&model, &test.view(Task::Utility))?)
}

/// [`attack_variant`] plus [`utility_accuracy`].
pub fn evaluate_variant(
    config: &ExperimentConfig,
    rep: &Replicate,
    variant: &DualTaskDataset,
    training: Training,
) -> Result<CellOutcome, BoxError> {
    let report = attack_variant(config, rep, variant, training)?;
    Ok(CellOutcome {
        asr_mean: report.asr_mean,
        asr_max: report.asr_max,
        utility_accuracy: utility_accuracy(config, rep, variant, training)?,
        accountant_epsilon: report.trainer.accountant_epsilon()?.unwrap_or(f64::NAN),
    })
}

/// Runs `f` on a pool with `config.workers` threads (all cores when unset).
pub fn with_pool<T: Send>(config: &ExperimentConfig, f: impl FnOnce() -> T + Send) -> Result<T, SweepError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w);
    }
    Ok(builder.build()?.install(f))
}

/// A prepared replicate, or why it could not be prepared.
type Prepared = Result<(Replicate, Option<ClassSensitivities>), String>;

fn prepare(config: &ExperimentConfig, need_sensitivities: bool) -> Vec<Prepared> {
    (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let rep = Replicate::new(config, r).map_err(|e| e.to_string())?;
            let sens =
                if need_sensitivities { Some(rep.sensitivities(config).map_err(|e| e.to_string())?) } else { None };
            Ok((rep, sens))
        })
        .collect()
}

/// One cell to run: labels plus a closure producing the variant dataset.
struct Cell {
    method: String,
    training: Training,
    alpha: f64,
    level: f64,
    replicate: usize,
}

fn run_cells<F>(
    config: &ExperimentConfig,
    kind: SweepKind,
    prepared: &[Prepared],
    cells: Vec<Cell>,
    variant: F,
) -> SweepResult
where
    F: Fn(&Cell, &Replicate, Option<&ClassSensitivities>) -> Result<DualTaskDataset, BoxError> + Sync,
{
    let rows = cells
        .into_par_iter()
        .map(|cell| {
            let start = Instant::now();
            let outcome = match &prepared[cell.replicate] {
                Err(e) => Err(format!("replicate preparation failed: {e}")),
                Ok((rep, sens)) => variant(&cell, rep, sens.as_ref())
                    .and_then(|d| evaluate_variant(config, rep, &d, cell.training))
                    .map_err(|e| e.to_string()),
            };
            let wall = if config.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 };
            let (m, error) = match outcome {
                Ok(m) => (m, String::new()),
                Err(e) => {
                    log::warn!(
                        "{} cell {} level {} replicate {} failed: {e}",
                        kind.as_str(),
                        cell.method,
                        cell.level,
                        cell.replicate
                    );
                    let nan = f64::NAN;
                    (CellOutcome { asr_mean: nan, asr_max: nan, utility_accuracy: nan, accountant_epsilon: nan }, e)
                }
            };
            SweepRow {
                method: cell.method,
                epsilon: cell.training.epsilon(),
                alpha: cell.alpha,
                level: cell.level,
                replicate: cell.replicate,
                asr_mean: m.asr_mean,
                asr_max: m.asr_max,
                utility_accuracy: m.utility_accuracy,
                wall_time_s: wall,
                accountant_epsilon: m.accountant_epsilon,
                error,
            }
        })
        .collect();
    SweepResult { kind, config_hash: config.hash(), rows }
}

fn masked_variant(
    config: &ExperimentConfig,
    rep: &Replicate,
    sens: Option<&ClassSensitivities>,
    method: Method,
    alpha: f64,
) -> Result<DualTaskDataset, BoxError> {
    if method == Method::Original {
        return Ok(rep.dataset.clone());
    }
    let sens = sens.ok_or("sensitivities unavailable")?;
    let masks = rep.masks(config, sens, method, alpha)?.expect("masked method");
    Ok(apply_mask(&rep.dataset, &masks)?)
}

fn needs_sensitivities(methods: &[Method]) -> bool {
    methods.iter().any(|&m| m != Method::Original)
}

/// DP-trained ASR and utility accuracy for every method × ε × replicate.
pub fn run_asr_vs_epsilon(config: &ExperimentConfig) -> Result<SweepResult, SweepError> {
    with_pool(config, || {
        let prepared = prepare(config, needs_sensitivities(&config.methods));
        let mut cells = Vec::new();
        for &method in &config.methods {
            for &eps in &config.epsilons {
                for r in 0..config.replicates {
                    let alpha = if method == Method::Original { 0.0 } else { config.alpha };
                    cells.push(Cell {
                        method: method.as_str().into(),
                        training: Training::Dp(eps),
                        alpha,
                        level: eps,
                        replicate: r,
                    });
                }
            }
        }
        run_cells(config, SweepKind::AsrVsEpsilon, &prepared, cells, |cell, rep, sens| {
            let method = config.methods.iter().copied().find(|m| m.as_str() == cell.method).expect("known method");
            masked_variant(config, rep, sens, method, cell.alpha)
        })
    })
}

/// Top-k and random masks of increasing size, one mask for the whole
/// dataset. The top-k mask at fraction `f` drops the `⌈fK⌉` features with the
/// largest sample-averaged privacy sensitivity; the random mask drops `⌊fK⌋`
/// uniformly chosen features.
pub fn run_masked_fraction_sweep(config: &ExperimentConfig) -> Result<SweepResult, SweepError> {
    with_pool(config, || {
        let prepared = prepare(config, true);
        let training = Training::from_option(config.sweep_epsilon);
        let mut cells = Vec::new();
        for method in [Method::TopK, Method::Random] {
            for &f in &config.fractions {
                for r in 0..config.replicates {
                    cells.push(Cell { method: method.as_str().into(), training, alpha: 0.0, level: f, replicate: r });
                }
            }
        }
        run_cells(config, SweepKind::MaskedFraction, &prepared, cells, |cell, rep, sens| {
            let sens = sens.ok_or("sensitivities unavailable")?;
            let k = rep.dataset.num_features();
            let nz = rep.dataset.num_classes(Task::Identity);
            let masks = if cell.method == Method::TopK.as_str() {
                let m = privmask::masking::top_k_mask(&sens.privacy_overall, cell.level * 100.0)?;
                ClassMaskSet::uniform(m, nz, MaskMethod::TopK, Task::Identity, 0)
            } else {
                let seed = derive_seed(rep.seed, &[tag("fraction-mask"), cell.level.to_bits()]);
                let mask = privmask::masking::random_mask(k, cell.level, seed)?;
                ClassMaskSet::uniform(mask, nz, MaskMethod::Random, Task::Identity, seed)
            };
            Ok(apply_mask(&rep.dataset, &masks)?)
        })
    })
}

/// Utility labels of a growing fraction of samples redrawn uniformly.
pub fn run_label_randomization_sweep(config: &ExperimentConfig) -> Result<SweepResult, SweepError> {
    with_pool(config, || {
        let prepared = prepare(config, false);
        let training = Training::from_option(config.sweep_epsilon);
        let cells = config
            .fractions
            .iter()
            .flat_map(|&f| {
                (0..config.replicates).map(move |r| Cell {
                    method: "label-randomized".into(),
                    training,
                    alpha: 0.0,
                    level: f,
                    replicate: r,
                })
            })
            .collect();
        run_cells(config, SweepKind::LabelRandomization, &prepared, cells, |cell, rep, _| {
            let seed = derive_seed(rep.seed, &[tag("label-randomization"), cell.level.to_bits()]);
            Ok(randomize_labels(&rep.dataset, cell.level, Task::Utility, seed)?)
        })
    })
}

/// Every configured method at every α (trained without DP unless
/// `sweep_epsilon` is set). The original method repeats its baseline at each α.
pub fn run_alpha_sweep(config: &ExperimentConfig) -> Result<SweepResult, SweepError> {
    with_pool(config, || {
        let prepared = prepare(config, needs_sensitivities(&config.methods));
        let training = Training::from_option(config.sweep_epsilon);
        let mut cells = Vec::new();
        for &method in &config.methods {
            for &alpha in &config.alphas {
                for r in 0..config.replicates {
                    cells.push(Cell { method: method.as_str().into(), training, alpha, level: alpha, replicate: r });
                }
            }
        }
        run_cells(config, SweepKind::Alpha, &prepared, cells, |cell, rep, sens| {
            let method = config.methods.iter().copied().find(|m| m.as_str() == cell.method).expect("known method");
            masked_variant(config, rep, sens, method, cell.alpha)
        })
    })
}

/// Equivalence search on one replicate, with utility accuracy at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub replicate: usize,
    pub epsilon_original: f64,
    /// NaN when no grid ε qualifies.
    pub epsilon_equivalent: f64,
    pub reference_asr: f64,
    /// The search run with the original data on both sides: how far the
    /// tolerance alone moves ε′.
    pub self_equivalent_epsilon: f64,
    pub accuracy_original: f64,
    /// Utility accuracy on the masked data at `epsilon_equivalent`.
    pub accuracy_masked: f64,
    pub report: Option<EquivalenceReport>,
    pub error: String,
}

/// For each replicate: ASR of the original data at `epsilon_original`
/// against the ASR curve of the optimised-masked data over `config.epsilons`.
pub fn run_equivalence(config: &ExperimentConfig, epsilon_original: f64) -> Result<Vec<EquivalenceRow>, SweepError> {
    with_pool(config, || {
        let prepared = prepare(config, true);
        (0..config.replicates)
            .into_par_iter()
            .map(|r| {
                let run = || -> Result<EquivalenceRow, BoxError> {
                    let (rep, sens) = prepared[r].as_ref().map_err(|e| e.clone())?;
                    let masked = masked_variant(config, rep, sens.as_ref(), Method::Optimized, config.alpha)?;
                    let mut grid = config.epsilons.clone();
                    grid.sort_by(f64::total_cmp);
                    grid.dedup();
                    let search = EquivalenceSearch {
                        task: Task::Utility,
                        n_models: config.n_shadow,
                        model: config.model.clone(),
                        config: config.train.clone(),
                        clip_norm: config.clip_norm,
                        delta: config.delta,
                        threshold: config.threshold,
                        null_mode: config.null_mode.0,
                        leakage_guard: config.leakage_guard,
                        tolerance: config.equivalence_tolerance,
                        statistic: config.equivalence_statistic.0,
                        seed: derive_seed(rep.seed, &[tag("shadow")]),
                    };
                    let report = find_equivalent_epsilon(&rep.dataset, &masked, epsilon_original, &grid, &search)?;
                    let baseline =
                        find_equivalent_epsilon(&rep.dataset, &rep.dataset, epsilon_original, &grid, &search)?;
                    let accuracy_original =
                        utility_accuracy(config, rep, &rep.dataset, Training::Dp(epsilon_original))?;
                    let (epsilon_equivalent, accuracy_masked) = match report.equivalent_epsilon {
                        Some(e) => (e, utility_accuracy(config, rep, &masked, Training::Dp(e))?),
                        None => (f64::NAN, f64::NAN),
                    };
                    Ok(EquivalenceRow {
                        replicate: r,
                        epsilon_original,
                        epsilon_equivalent,
                        reference_asr: report.reference_asr,
                        self_equivalent_epsilon: baseline.equivalent_epsilon.unwrap_or(f64::NAN),
                        accuracy_original,
                        accuracy_masked,
                        report: Some(report),
                        error: String::new(),
                    })
                };
                run().unwrap_or_else(|e| EquivalenceRow {
                    replicate: r,
                    epsilon_original,
                    epsilon_equivalent: f64::NAN,
                    reference_asr: f64::NAN,
                    self_equivalent_epsilon: f64::NAN,
                    accuracy_original: f64::NAN,
                    accuracy_masked: f64::NAN,
                    report: None,
                    error: e.to_string(),
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    /// `explain-per-sample`, `optimize-per-class` or `shapley-exact`.
    pub stage: String,
    pub explainer: String,
    pub num_features: usize,
    pub replicate: usize,
    pub seconds: f64,
}

/// Feature sizes for the exact-Shapley scaling measurement.
pub const SHAPLEY_SCALING_K: [usize; 3] = [8, 10, 12];

/// Wall-clock cost of sensitivity generation and mask optimisation. Runs
/// sequentially so that timings are not distorted by sibling jobs.
pub fn run_timing(config: &ExperimentConfig) -> Result<Vec<TimingRow>, SweepError> {
    with_pool(config, || {
        let mut rows = Vec::new();
        for r in 0..config.replicates {
            let rep = match Replicate::new(config, r) {
                Ok(rep) => rep,
                Err(e) => {
                    log::warn!("timing replicate {r} skipped: {e}");
                    continue;
                }
            };
            let Ok(train) = rep.train_split() else { continue };
            let Ok((id_model, ut_model)) = rep.surrogates(config) else { continue };
            let k = train.num_features();
            let view = train.view(Task::Identity);
            let samples = view.len().min(16);
            for explainer in timing_explainers(config, k) {
                let start = Instant::now();
                for i in 0..samples {
                    if explainer
                        .explain(&id_model, view.row(i), view.labels[i], derive_seed(rep.seed, &[i as u64]))
                        .is_err()
                    {
                        break;
                    }
                }
                rows.push(TimingRow {
                    stage: "explain-per-sample".into(),
                    explainer: explainer.name().into(),
                    num_features: k,
                    replicate: r,
                    seconds: start.elapsed().as_secs_f64() / samples as f64,
                });
            }
            if let Ok(sens) =
                class_sensitivities(&train, &id_model, &ut_model, &config.explainer, config.global_u, rep.seed)
            {
                let start = Instant::now();
                let ok = optimize_class_masks(&sens, config.alpha, config.top_k_percent, rep.seed).is_ok();
                if ok {
                    rows.push(TimingRow {
                        stage: "optimize-per-class".into(),
                        explainer: sens.explainer.clone(),
                        num_features: k,
                        replicate: r,
                        seconds: start.elapsed().as_secs_f64() / sens.privacy.len() as f64,
                    });
                }
            }
            for kk in SHAPLEY_SCALING_K {
                if let Some(s) = time_exact_shapley(kk, derive_seed(rep.seed, &[tag("scaling"), kk as u64])) {
                    rows.push(TimingRow {
                        stage: "shapley-exact".into(),
                        explainer: "shapley-exact".into(),
                        num_features: kk,
                        replicate: r,
                        seconds: s,
                    });
                }
            }
        }
        rows
    })
}

fn timing_explainers(config: &ExperimentConfig, k: usize) -> Vec<ExplainerKind> {
    let mut kinds = vec![
        ExplainerKind::ShapleySampled { num_permutations: 64 },
        ExplainerKind::LocalSurrogate { num_perturbations: 256, kernel_width: None, ridge: 1e-3 },
    ];
    if k <= privmask::explain::EXACT_SHAPLEY_MAX_FEATURES {
        kinds.insert(0, ExplainerKind::ShapleyExact);
    }
    if !kinds.contains(&config.explainer) {
        kinds.push(config.explainer);
    }
    kinds
}

/// Seconds per exact-Shapley call on an untrained `k`-feature model.
fn time_exact_shapley(k: usize, seed: u64) -> Option<f64> {
    let model = MlpModel::init(&privmask::MlpSpec::default(), k, 2, seed).ok()?;
    let x: Vec<f64> = (0..k).map(|j| (j as f64 + 1.0) / k as f64).collect();
    let baseline = vec![0.0; k];
    let calls = 4;
    let start = Instant::now();
    for _ in 0..calls {
        shapley_exact(&model, &x, &baseline, 0).ok()?;
    }
    Some(start.elapsed().as_secs_f64() / calls as f64)
}

/// Least-squares slope of `log2(seconds)` against `K` over the exact-Shapley
/// rows (1.0 would be pure `2^K` growth).
pub fn shapley_scaling_exponent(rows: &[TimingRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.stage == "shapley-exact" && r.seconds > 0.0)
        .map(|r| (r.num_features as f64, r.seconds.log2()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
