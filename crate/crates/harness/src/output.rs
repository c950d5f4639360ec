//! Result files: `results.csv`, `summary.json`, whitespace-separated plot
//! data and a content manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::sweep::{EquivalenceRow, SweepResult, SweepRow, TimingRow, SWEEP_FIELDS};

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, OutputError>;

/// Digest of `content` as git computes it for a blob, but with SHA-256.
pub fn git_blob_digest(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Over the finite entries of `xs`; sample std (0 for a single value).
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = xs.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN, n: 0 };
        }
        Self { mean: privmask::stats::mean(&v), std: privmask::stats::sample_std(&v), n: v.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub method: String,
    pub level: f64,
    pub asr_mean: MeanStd,
    pub asr_max: MeanStd,
    pub utility_accuracy: MeanStd,
    pub failed: usize,
}

/// Mean ± std over replicates for every (method, level), in first-seen order.
pub fn summarize(rows: &[SweepRow]) -> Vec<GroupSummary> {
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, u64), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.level.to_bits());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            GroupSummary {
                method: key.0,
                level: f64::from_bits(key.1),
                asr_mean: MeanStd::of(g.iter().map(|r| r.asr_mean)),
                asr_max: MeanStd::of(g.iter().map(|r| r.asr_max)),
                utility_accuracy: MeanStd::of(g.iter().map(|r| r.utility_accuracy)),
                failed: g.iter().filter(|r| !r.error.is_empty()).count(),
            }
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| OutputError::Io { path: path.into(), source })
}

fn csv_bytes<T: Serialize>(header: Option<&[&str]>, rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(header.is_none()).from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| OutputError::Io { path: "<buffer>".into(), source: e.into_error() })
}

/// Plot data `x y series`, one line per (method, level) mean.
fn plot_data(summary: &[GroupSummary], metric: impl Fn(&GroupSummary) -> f64) -> String {
    let mut s = String::from("# x y series\n");
    for g in summary {
        s.push_str(&format!("{} {} {}\n", g.level, metric(g), g.method));
    }
    s
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    name: &'a str,
    config_hash: String,
    files: BTreeMap<String, String>,
}

/// Writes the given `(file name, bytes)` pairs plus `manifest.json`.
fn write_with_manifest(
    config: &ExperimentConfig,
    outdir: &Path,
    files: Vec<(String, Vec<u8>)>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(outdir).map_err(|source| OutputError::Io { path: outdir.into(), source })?;
    let mut digests = BTreeMap::new();
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = outdir.join(&name);
        write_file(&path, &bytes)?;
        digests.insert(name, git_blob_digest(&bytes));
        written.push(path);
    }
    let manifest = Manifest { name: &config.name, config_hash: config.hash(), files: digests };
    let path = outdir.join("manifest.json");
    write_file(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    written.push(path);
    Ok(written)
}

/// `results.csv`, `summary.json`, `<kind>_{asr_mean,asr_max,accuracy}.dat`
/// and `manifest.json` in `outdir`, overwriting earlier files.
pub fn emit_outputs(config: &ExperimentConfig, result: &SweepResult, outdir: &Path) -> Result<Vec<PathBuf>> {
    let summary = summarize(&result.rows);
    let kind = result.kind.as_str();
    let json = serde_json::json!({
        "sweep": kind,
        "axis": result.kind.axis(),
        "config_hash": result.config_hash,
        "rows": result.rows.len(),
        "failed_rows": result.failed_rows(),
        "groups": summary,
    });
    let files = vec![
        ("results.csv".to_string(), csv_bytes(Some(&SWEEP_FIELDS), &result.rows)?),
        ("summary.json".to_string(), serde_json::to_string_pretty(&json)?.into_bytes()),
        (format!("{kind}_asr_mean.dat"), plot_data(&summary, |g| g.asr_mean.mean).into_bytes()),
        (format!("{kind}_asr_max.dat"), plot_data(&summary, |g| g.asr_max.mean).into_bytes()),
        (format!("{kind}_accuracy.dat"), plot_data(&summary, |g| g.utility_accuracy.mean).into_bytes()),
    ];
    write_with_manifest(config, outdir, files)
}

#[derive(Serialize)]
struct EquivalenceCsvRow<'a> {
    replicate: usize,
    epsilon_original: f64,
    epsilon_equivalent: f64,
    reference_asr: f64,
    self_equivalent_epsilon: f64,
    accuracy_original: f64,
    accuracy_masked: f64,
    error: &'a str,
}

/// `equivalence.csv`, `equivalence.json` (with the masked ASR curves),
/// `equivalence_curve.dat` and `manifest.json`.
pub fn emit_equivalence(config: &ExperimentConfig, rows: &[EquivalenceRow], outdir: &Path) -> Result<Vec<PathBuf>> {
    let flat: Vec<EquivalenceCsvRow> = rows
        .iter()
        .map(|r| EquivalenceCsvRow {
            replicate: r.replicate,
            epsilon_original: r.epsilon_original,
            epsilon_equivalent: r.epsilon_equivalent,
            reference_asr: r.reference_asr,
            self_equivalent_epsilon: r.self_equivalent_epsilon,
            accuracy_original: r.accuracy_original,
            accuracy_masked: r.accuracy_masked,
            error: &r.error,
        })
        .collect();
    let mut curve = String::from("# x y series\n");
    for r in rows {
        if let Some(rep) = &r.report {
            for (e, a) in &rep.masked_curve {
                curve.push_str(&format!("{e} {a} masked-r{}\n", r.replicate));
            }
            curve.push_str(&format!("{} {} original-r{}\n", rep.epsilon_original, rep.reference_asr, r.replicate));
        }
    }
    let files = vec![
        ("equivalence.csv".to_string(), csv_bytes(None, &flat)?),
        ("equivalence.json".to_string(), serde_json::to_string_pretty(rows)?.into_bytes()),
        ("equivalence_curve.dat".to_string(), curve.into_bytes()),
    ];
    write_with_manifest(config, outdir, files)
}

/// `timing.csv`, `timing.json` (mean ± std per stage and K) and `manifest.json`.
pub fn emit_timing(config: &ExperimentConfig, rows: &[TimingRow], outdir: &Path) -> Result<Vec<PathBuf>> {
    let mut groups: BTreeMap<(String, String, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.stage.clone(), r.explainer.clone(), r.num_features)).or_default().push(r.seconds);
    }
    let table: Vec<_> = groups
        .into_iter()
        .map(|((stage, explainer, k), v)| serde_json::json!({ "stage": stage, "explainer": explainer, "num_features": k, "seconds": MeanStd::of(v) }))
        .collect();
    let json = serde_json::json!({
        "groups": table,
        "shapley_exact_log2_slope": crate::sweep::shapley_scaling_exponent(rows),
    });
    let files = vec![
        ("timing.csv".to_string(), csv_bytes(None, rows)?),
        ("timing.json".to_string(), serde_json::to_string_pretty(&json)?.into_bytes()),
    ];
    write_with_manifest(config, outdir, files)
}
