use std::path::Path;
use std::process::Command;

use privmask_harness::config::{ConfigError, ExperimentConfig};
use privmask_harness::output::emit_outputs;
use privmask_harness::sweep::{run_asr_vs_epsilon, SWEEP_FIELDS};

const SMALL: &str = r#"
name = "small"
epsilons = [1e-6, 4.0]
methods = ["original", "optimized"]
n_shadow = 6
replicates = 2
[dataset]
kind = "planted"
n = 80
k = 6
identity_classes = 2
utility_classes = 2
identity_features = 2
utility_features = 2
overlap = 0
noise_std = 0.1
"#;

fn privmask() -> Command {
    Command::new(env!("CARGO_BIN_EXE_privmask"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn failing_cells_become_error_rows() {
    let c = ExperimentConfig::from_toml(SMALL).unwrap();
    let result = run_asr_vs_epsilon(&c).unwrap();
    assert_eq!(result.rows.len(), 2 * 2 * 2);
    for r in &result.rows {
        if r.epsilon < 1e-3 {
            assert!(!r.error.is_empty());
            assert!(r.asr_mean.is_nan() && r.utility_accuracy.is_nan());
        } else {
            assert!(r.error.is_empty(), "{}", r.error);
            assert!((0.0..=1.0).contains(&r.asr_mean));
        }
    }
    assert_eq!(result.failed_rows(), 4);
}

#[test]
fn outputs_are_complete_and_idempotent() {
    let c = ExperimentConfig::from_toml(SMALL).unwrap();
    let result = run_asr_vs_epsilon(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_outputs(&c, &result, dir.path()).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for expected in ["results.csv", "summary.json", "asr-vs-epsilon_asr_mean.dat", "manifest.json"] {
        assert!(names.iter().any(|n| n == expected), "{names:?}");
    }
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), SWEEP_FIELDS.join(","));
    assert_eq!(lines.count(), result.rows.len());

    let snapshot: Vec<Vec<u8>> = files.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let again = emit_outputs(&c, &result, dir.path()).unwrap();
    assert_eq!(again, files);
    for (p, before) in files.iter().zip(&snapshot) {
        assert_eq!(&std::fs::read(p).unwrap(), before, "{}", p.display());
    }

    let manifest: serde_json::Value = serde_json::from_slice(&snapshot[files.len() - 1]).unwrap();
    assert_eq!(manifest["config_hash"], c.hash());
    assert_eq!(manifest["files"]["results.csv"], privmask_harness::output::git_blob_digest(csv.as_bytes()));
}

#[test]
fn config_hash_tracks_content() {
    let a = ExperimentConfig::from_toml(SMALL).unwrap();
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    b.alpha = 0.3;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn config_errors_are_typed() {
    assert!(matches!(ExperimentConfig::from_toml("name = 1"), Err(ConfigError::Parse(_))));
    let bad = SMALL.replace("replicates = 2", "replicates = 0");
    assert!(matches!(ExperimentConfig::from_toml(&bad), Err(ConfigError::Invalid(_))));
    let unknown = SMALL.replace("replicates = 2", "replicates = 2\nbogus = 1");
    assert!(ExperimentConfig::from_toml(&unknown).is_err());
    assert!(matches!(ExperimentConfig::load(Path::new("/nonexistent/x.toml")), Err(ConfigError::Read { .. })));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let status =
        privmask().args(["sweep", "--kind", "asr-vs-epsilon", "--config", "/nonexistent.toml"]).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let bad = write_config(dir.path(), &SMALL.replace("replicates = 2", "replicates = 0"));
    let status = privmask().args(["sweep", "--kind", "asr-vs-epsilon", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let partial = write_config(dir.path(), SMALL);
    let status = privmask()
        .args(["sweep", "--kind", "asr-vs-epsilon", "--replicates", "1", "--config"])
        .arg(&partial)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);

    let ok = write_config(dir.path(), &SMALL.replace("[1e-6, 4.0]", "[4.0]"));
    let status = privmask()
        .args(["sweep", "--kind", "asr-vs-epsilon", "--replicates", "1", "--config"])
        .arg(&ok)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
}
