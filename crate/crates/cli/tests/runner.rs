use std::path::Path;
use std::process::Command;

use lwek::moments::snapshot::read_snapshot;
use lwek_cli::summary::Summary;
use lwek_cli::{Experiment, Overrides, RunConfig, RunManifest};

fn custom_config(dir: &Path) -> RunConfig {
    let text = format!(
        r#"{{
            "experiment": "custom",
            "method": "eki",
            "forward_map": "himmelblau",
            "prior": {{ "kind": "gaussian", "mean": [0.0, 0.0], "std": 1.5 }},
            "data": [11.0, 7.0],
            "ensemble_size": 20,
            "t_end": 0.05,
            "step": 0.001,
            "snapshot_every": 25,
            "output_dir": {:?}
        }}"#,
        dir.to_str().unwrap()
    );
    serde_json::from_str(&text).unwrap()
}

#[test]
fn custom_run_writes_snapshots_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let settings = custom_config(tmp.path()).resolve().unwrap();
    let manifest = lwek_cli::run(&settings).unwrap();
    assert_eq!(manifest.status, "ok");
    assert_eq!(RunManifest::read(tmp.path()).unwrap(), manifest);

    let traj = &manifest.trajectories[0];
    assert_eq!(traj.steps_taken, 50);
    assert_eq!(traj.snapshot_times.len(), 3);
    assert_eq!(traj.files[2], "eki_step0000050.csv");
    let snap = read_snapshot(std::fs::File::open(tmp.path().join(&traj.files[2])).unwrap()).unwrap();
    assert_eq!(snap.ensemble.size(), 20);
    assert!(matches!(manifest.summary, Some(Summary::Custom(ref c)) if c.steps_taken == 50));
}

#[test]
fn config_rejects_unknown_fields() {
    let err = serde_json::from_str::<RunConfig>(r#"{"experiment": "custom", "bandwith": 1.0}"#).unwrap_err();
    assert!(err.to_string().contains("bandwith"));
}

#[test]
fn invalid_settings_are_rejected_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = custom_config(tmp.path());
    cfg.apply(&Overrides { step: Some(-1.0), ..Overrides::default() });
    assert!(cfg.resolve().is_err());

    let mut cfg = RunConfig::for_experiment(Experiment::ApproxSine);
    cfg.anchor = Some(vec![0.0, 1.0]);
    assert!(cfg.resolve().is_err());
}

#[test]
fn divergent_run_still_leaves_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = custom_config(tmp.path());
    let mut settings = cfg.resolve().unwrap();
    settings.step = 10.0;
    settings.t_end = 1000.0;
    settings.data = vec![1e8, 1e8];
    assert!(lwek_cli::run(&settings).is_err());

    let manifest = RunManifest::read(tmp.path()).unwrap();
    assert_eq!(manifest.status, "failed");
    let abort = manifest.flags.nonfinite_abort.expect("abort recorded");
    assert!(abort.step.is_some());
    assert!(manifest.summary.is_none());
}

#[test]
fn unwritable_output_directory_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let settings = custom_config(&blocker.join("out")).resolve().unwrap();
    assert!(lwek_cli::run(&settings).is_err());
}

#[test]
fn binary_runs_from_config_file_with_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let cfg_path = tmp.path().join("run.json");
    let cfg = custom_config(&tmp.path().join("ignored"));
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();

    let out = Command::new(env!("CARGO_BIN_EXE_lwek"))
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--ensemble-size", "12", "--seed", "3", "--output-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest = RunManifest::read(&dir).unwrap();
    assert_eq!(manifest.config.ensemble_size, 12);
    assert_eq!(manifest.config.seed, 3);
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn binary_writes_oracle_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("post.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_lwek"))
        .args(["oracle", "posterior1d", "--points", "201", "--output"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("grid,value\n"));
    assert_eq!(text.lines().count(), 202);
}

#[test]
fn binary_rejects_bad_arguments() {
    let out = Command::new(env!("CARGO_BIN_EXE_lwek")).args(["run", "--experiment", "nope"]).output().unwrap();
    assert!(!out.status.success());
}
