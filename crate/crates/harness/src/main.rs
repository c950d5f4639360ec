use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use privmask::attack::{build_shadow_ensemble, compute_asr, NullMode, ShadowTrainer};
use privmask::data::{write_csv, write_snapshot};
use privmask::dp::{train_dp, DpSettings, NoiseSetting, DEFAULT_DELTA};
use privmask::explain::{class_aggregate, explain_samples, write_sensitivity_csv, ExplainerKind};
use privmask::masking::{apply_mask, feature_masking_pipeline, random_mask, ClassMaskSet, MaskMethod, PipelineConfig};
use privmask::model::{accuracy, train_plain};
use privmask::{DualTaskDataset, MlpModel, MlpSpec, Task, TrainConfig};
use privmask_harness::config::{load_dataset, ConfigError, ExperimentConfig};
use privmask_harness::output::{emit_equivalence, emit_outputs, emit_timing};
use privmask_harness::sweep::{
    run_alpha_sweep, run_asr_vs_epsilon, run_equivalence, run_label_randomization_sweep, run_masked_fraction_sweep,
    run_timing,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "privmask", version, about = "Membership-inference risk measurement and feature masking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset described by a config (one replicate).
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
        /// Output file; `.bin` writes a binary snapshot, anything else CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier with plain SGD.
    Train {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train a classifier with DP-SGD and print the privacy accounting.
    TrainDp {
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        dp: DpArgs,
    },
    /// Offline likelihood-ratio attack over a shadow ensemble.
    Attack {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "utility")]
        task: Task,
        #[arg(long, default_value_t = 64)]
        n_shadow: usize,
        /// Train shadows with DP-SGD at this ε (plain SGD when absent).
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        clip_norm: f64,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value = "global-per-model")]
        null_mode: NullMode,
        #[arg(long)]
        no_leakage_guard: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[command(flatten)]
        model: ModelArgs,
        /// Also save the trained ensemble here.
        #[arg(long)]
        save_ensemble: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-sample (or per-class) positive sensitivities of a trained model.
    Explain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "identity")]
        task: Task,
        #[command(flatten)]
        explainer: ExplainerArgs,
        #[arg(long)]
        per_class: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a mask file, or a random or top-k mask, to a dataset.
    Mask {
        #[arg(long)]
        data: PathBuf,
        /// Mask-set JSON written by `pipeline` or `mask`.
        #[arg(long, conflicts_with_all = ["random", "top_k"])]
        masks: Option<PathBuf>,
        /// Drop this fraction of features uniformly at random.
        #[arg(long, conflicts_with = "top_k")]
        random: Option<f64>,
        /// Drop the top-k% identity-sensitive features per identity class.
        #[arg(long, requires = "identity_model")]
        top_k: Option<f64>,
        #[arg(long)]
        identity_model: Option<PathBuf>,
        #[command(flatten)]
        explainer: ExplainerArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Masked dataset (`.bin` or CSV); the mask set goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train surrogates on a split, fit optimised class masks, mask the data.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file; defaults to the config's dataset (replicate 0).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment sweep and write results.csv, summary.json and plot data.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        kind: SweepArg,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Equivalent-ε search between original and optimised-masked data.
    Equivalence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epsilon_original: f64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Time sensitivity generation and mask optimisation.
    Timing {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    AsrVsEpsilon,
    MaskedFraction,
    LabelRandomization,
    Alpha,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_delimiter = ',', default_value = "32")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn spec(&self) -> MlpSpec {
        MlpSpec { hidden: self.hidden.clone(), ..MlpSpec::default() }
    }

    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            early_stop_patience: 0,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "utility")]
    task: Task,
    #[command(flatten)]
    model: ModelArgs,
    /// Train on this fraction and report accuracy on the rest.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DpArgs {
    #[arg(long, conflicts_with = "noise_multiplier", required_unless_present = "noise_multiplier")]
    epsilon: Option<f64>,
    #[arg(long)]
    noise_multiplier: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
}

#[derive(Args)]
struct ExplainerArgs {
    #[arg(long, default_value = "shapley-sampled")]
    explainer: String,
    #[arg(long, default_value_t = 64)]
    permutations: usize,
    #[arg(long, default_value_t = 256)]
    perturbations: usize,
    #[arg(long)]
    kernel_width: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    ridge: f64,
}

impl ExplainerArgs {
    fn kind(&self) -> anyhow::Result<ExplainerKind> {
        Ok(match self.explainer.as_str() {
            "shapley-exact" => ExplainerKind::ShapleyExact,
            "shapley-sampled" => ExplainerKind::ShapleySampled { num_permutations: self.permutations },
            "local-surrogate" => ExplainerKind::LocalSurrogate {
                num_perturbations: self.perturbations,
                kernel_width: self.kernel_width,
                ridge: self.ridge,
            },
            other => bail!("unknown explainer '{other}' (expected shapley-exact|shapley-sampled|local-surrogate)"),
        })
    }
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    n_shadow: Option<usize>,
}

fn load_config(path: &Path, o: Option<&Overrides>) -> Result<ExperimentConfig, ConfigError> {
    let mut c = ExperimentConfig::load(path)?;
    if let Some(o) = o {
        if let Some(v) = &o.out {
            c.output_dir = v.clone();
        }
        if let Some(v) = o.seed {
            c.seed = v;
        }
        if let Some(v) = o.replicates {
            c.replicates = v;
        }
        if o.workers.is_some() {
            c.workers = o.workers;
        }
        if let Some(v) = o.n_shadow {
            c.n_shadow = v;
        }
        c.validate()?;
    }
    Ok(c)
}

fn save_dataset(d: &DualTaskDataset, path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    if path.extension().is_some_and(|e| e == "bin") {
        write_snapshot(d, path)?;
    } else {
        write_csv(d, path)?;
    }
    Ok(())
}

fn train(args: &TrainArgs, dp: Option<&DpArgs>) -> anyhow::Result<()> {
    let data = load_dataset(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    let (train, test) = match args.split {
        Some(r) => {
            let (a, b) = privmask::data::split_train_test(&data, r, args.model.seed)?;
            (a, Some(b))
        }
        None => (data, None),
    };
    let view = train.view(args.task);
    let model = match dp {
        None => train_plain(&view, &args.model.spec(), &args.model.config())?,
        Some(dp) => {
            let noise = match (dp.epsilon, dp.noise_multiplier) {
                (Some(e), _) => NoiseSetting::TargetEpsilon(e),
                (None, Some(s)) => NoiseSetting::Multiplier(s),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let settings = DpSettings { clip_norm: dp.clip_norm, delta: dp.delta, noise };
            let (model, report) = train_dp(&view, &args.model.spec(), &args.model.config(), &settings)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            model
        }
    };
    println!("train accuracy {:.4}", accuracy(&model, &view)?);
    if let Some(test) = test {
        println!("test accuracy {:.4}", accuracy(&model, &test.view(args.task))?);
    }
    model.save_json(&args.out)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::GenData { config, replicate, out } => {
            let c = load_config(&config, None)?;
            let seed = privmask::seed::derive_seed(c.replicate_seed(replicate), &[privmask::seed::tag("data")]);
            save_dataset(&c.dataset.build(seed)?, &out)?;
        }
        Command::Train { train: args } => train(&args, None)?,
        Command::TrainDp { train: args, dp } => train(&args, Some(&dp))?,
        Command::Attack {
            data,
            task,
            n_shadow,
            epsilon,
            clip_norm,
            delta,
            null_mode,
            no_leakage_guard,
            threshold,
            model,
            save_ensemble,
            out,
        } => {
            let data = load_dataset(&data)?;
            let trainer = match epsilon {
                None => ShadowTrainer::Plain { model: model.spec(), config: model.config() },
                Some(e) => {
                    let settings = DpSettings { clip_norm, delta, noise: NoiseSetting::TargetEpsilon(e) };
                    ShadowTrainer::dp_for_dataset(model.spec(), model.config(), &settings, data.len())?
                }
            };
            let view = data.view(task);
            let ensemble = build_shadow_ensemble(&view, n_shadow, &trainer, model.seed)?;
            if let Some(dir) = save_ensemble {
                ensemble.save_dir(dir)?;
            }
            let report = compute_asr(&ensemble, &view, threshold, null_mode, !no_leakage_guard)?;
            report.write(&out, "asr")?;
            println!("asr_mean {:.4} asr_max {:.4}", report.asr_mean, report.asr_max);
        }
        Command::Explain { data, model, task, explainer, per_class, seed, out } => {
            let data = load_dataset(&data)?;
            let model = MlpModel::load_json(&model)?;
            let view = data.view(task);
            let mut vectors = explain_samples(&model, &view, task, &explainer.kind()?, seed)?;
            if per_class {
                vectors = class_aggregate(&vectors, view.labels, view.num_classes)?;
            }
            write_sensitivity_csv(&vectors, &out)?;
        }
        Command::Mask { data, masks, random, top_k, identity_model, explainer, seed, out } => {
            let data = load_dataset(&data)?;
            let nz = data.num_classes(Task::Identity);
            let set = if let Some(path) = masks {
                ClassMaskSet::read_json(path)?
            } else if let Some(f) = random {
                ClassMaskSet::uniform(
                    random_mask(data.num_features(), f, seed)?,
                    nz,
                    MaskMethod::Random,
                    Task::Identity,
                    seed,
                )
            } else if let (Some(k), Some(m)) = (top_k, identity_model) {
                let model = MlpModel::load_json(m)?;
                let view = data.view(Task::Identity);
                let per_sample = explain_samples(&model, &view, Task::Identity, &explainer.kind()?, seed)?;
                ClassMaskSet::top_k(&class_aggregate(&per_sample, view.labels, nz)?, k, Task::Identity)?
            } else {
                bail!("give one of --masks, --random or --top-k");
            };
            save_dataset(&apply_mask(&data, &set)?, &out)?;
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("masked");
            set.write(out.parent().unwrap_or(Path::new(".")), &format!("{stem}_masks"))?;
            println!("masked fraction {:.4}", set.masked_fraction());
        }
        Command::Pipeline { config, data, alpha, out } => {
            let mut c = load_config(&config, None)?;
            if let Some(a) = alpha {
                c.alpha = a;
                c.validate()?;
            }
            let data = match data {
                Some(p) => load_dataset(&p)?,
                None => {
                    c.dataset.build(privmask::seed::derive_seed(c.replicate_seed(0), &[privmask::seed::tag("data")]))?
                }
            };
            let (train, _) = privmask::data::split_train_test(&data, c.split_ratio, c.seed)?;
            let fit = |task: Task| {
                train_plain(&train.view(task), &c.model, &TrainConfig { seed: c.seed, ..c.surrogate_train.clone() })
            };
            let (id_model, ut_model) = (fit(Task::Identity)?, fit(Task::Utility)?);
            let mut pc = PipelineConfig::new(c.explainer, c.alpha);
            pc.global_u = c.global_u;
            pc.fallback_k = c.top_k_percent;
            let result = feature_masking_pipeline(&train, &id_model, &ut_model, &pc, c.seed)?;
            std::fs::create_dir_all(&out)?;
            result.masks.write(&out, "masks")?;
            write_sensitivity_csv(&result.sensitivities.privacy, out.join("privacy_sensitivity.csv"))?;
            write_sensitivity_csv(&result.sensitivities.utility, out.join("utility_sensitivity.csv"))?;
            save_dataset(&apply_mask(&data, &result.masks)?, &out.join("masked.csv"))?;
            for f in &result.masks.fallbacks {
                log::warn!("class {} fell back to top-k: {}", f.class_id, f.reason);
            }
            println!(
                "masked fraction {:.4}, {} fallbacks",
                result.masks.masked_fraction(),
                result.masks.fallbacks.len()
            );
        }
        Command::Sweep { config, kind, overrides } => {
            let c = load_config(&config, Some(&overrides))?;
            let result = match kind {
                SweepArg::AsrVsEpsilon => run_asr_vs_epsilon(&c)?,
                SweepArg::MaskedFraction => run_masked_fraction_sweep(&c)?,
                SweepArg::LabelRandomization => run_label_randomization_sweep(&c)?,
                SweepArg::Alpha => run_alpha_sweep(&c)?,
            };
            emit_outputs(&c, &result, &c.output_dir)?;
            let failed = result.failed_rows();
            println!("{} rows ({failed} failed) written to {}", result.rows.len(), c.output_dir.display());
            if failed > 0 {
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::Equivalence { config, epsilon_original, overrides } => {
            let c = load_config(&config, Some(&overrides))?;
            let rows = run_equivalence(&c, epsilon_original)?;
            emit_equivalence(&c, &rows, &c.output_dir)?;
            for r in &rows {
                println!(
                    "replicate {}: ε′ = {} (self {}), accuracy {:.3} -> {:.3}{}",
                    r.replicate,
                    r.epsilon_equivalent,
                    r.self_equivalent_epsilon,
                    r.accuracy_original,
                    r.accuracy_masked,
                    if r.error.is_empty() { String::new() } else { format!(" [{}]", r.error) }
                );
            }
            if rows.iter().any(|r| !r.error.is_empty()) {
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::Timing { config, overrides } => {
            let c = load_config(&config, Some(&overrides))?;
            let rows = run_timing(&c)?;
            emit_timing(&c, &rows, &c.output_dir)?;
            println!("{} timing rows written to {}", rows.len(), c.output_dir.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
