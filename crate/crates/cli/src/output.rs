//! Artifact writing: CSV tables, trajectory snapshots and the run manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use lwek::dynamics::{IntegrationFailure, Trajectory};
use lwek::moments::snapshot::write_snapshot;
use serde::{Deserialize, Serialize};

use crate::config::Settings;
use crate::summary::Summary;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonFiniteAbort {
    pub label: String,
    pub step: Option<usize>,
    pub last_finite_time: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    pub underflow_events: usize,
    pub rank_deficient: usize,
    pub nonfinite_abort: Option<NonFiniteAbort>,
}

/// Per-trajectory metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub label: String,
    pub method: String,
    pub kernel: Option<String>,
    pub bandwidth: Option<f64>,
    pub step: f64,
    pub t_end: f64,
    pub seed: u64,
    pub steps_taken: usize,
    pub snapshot_times: Vec<f64>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub figure: String,
    pub status: String,
    pub failure: Option<String>,
    pub config: Settings,
    pub phases: Vec<Phase>,
    pub files: Vec<String>,
    pub trajectories: Vec<TrajectoryRecord>,
    pub flags: Flags,
    pub summary: Option<Summary>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Collects files, timings and flags while an experiment runs.
pub struct RunContext {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub phases: Vec<Phase>,
    pub trajectories: Vec<TrajectoryRecord>,
    pub flags: Flags,
}

impl RunContext {
    /// Creates the output directory and checks that it is writable.
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        let probe = dir.join(".write-probe");
        std::fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", dir.display()))?;
        std::fs::remove_file(&probe)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), phases: Vec::new(), trajectories: Vec::new(), flags: Flags::default() })
    }

    pub fn timed<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        self.phases.push(Phase { name: name.to_string(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    fn register(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    /// Writes a table with a header row; numbers use the shortest round-trip formatting.
    pub fn write_table(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> anyhow::Result<()> {
        let path = self.register(name);
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_curve(&mut self, name: &str, curve: &lwek::oracles::DensityCurve) -> anyhow::Result<()> {
        let path = self.register(name);
        curve.write_csv(BufWriter::new(File::create(path)?))?;
        Ok(())
    }

    /// One CSV per snapshot, named `{label}_step{NNNNNNN}.csv`.
    pub fn record_trajectory(&mut self, label: &str, settings: &Settings, traj: &Trajectory) -> anyhow::Result<()> {
        let mut files = Vec::new();
        for snap in &traj.snapshots {
            let name = format!("{label}_step{:07}.csv", snap.step);
            let path = self.register(&name);
            write_snapshot(&snap.ensemble, BufWriter::new(File::create(path)?))?;
            files.push(name);
        }
        self.flags.underflow_events += traj.underflow_events;
        let weighted = traj.method.is_weighted();
        self.trajectories.push(TrajectoryRecord {
            label: label.to_string(),
            method: traj.method.name().to_string(),
            kernel: weighted.then(|| format!("{:?}", settings.kernel.kind).to_lowercase()),
            bandwidth: weighted.then_some(settings.kernel.bandwidth),
            step: traj.step_size,
            t_end: settings.t_end,
            seed: settings.seed,
            steps_taken: traj.steps_taken,
            snapshot_times: traj.times(),
            files,
        });
        Ok(())
    }

    /// Records a non-finite abort, writes the partial trajectory, and converts to an error.
    pub fn record_failure(&mut self, label: &str, settings: &Settings, failure: &IntegrationFailure) -> anyhow::Error {
        let last = failure.partial.snapshots.last().map(|s| s.time).unwrap_or(0.0);
        self.flags.nonfinite_abort = Some(NonFiniteAbort {
            label: label.to_string(),
            step: failure.step(),
            last_finite_time: last,
            reason: failure.source.to_string(),
        });
        if let Err(e) = self.record_trajectory(label, settings, &failure.partial) {
            log::warn!("could not write partial trajectory: {e}");
        }
        anyhow::anyhow!("{label} integration failed: {}", failure.source)
    }

    pub fn finish(self, settings: &Settings, outcome: &anyhow::Result<Summary>) -> anyhow::Result<RunManifest> {
        let manifest = RunManifest {
            experiment: format!("{:?}", settings.experiment),
            figure: settings.experiment.figure().to_string(),
            status: if outcome.is_ok() { "ok" } else { "failed" }.to_string(),
            failure: outcome.as_ref().err().map(|e| format!("{e:#}")),
            config: settings.clone(),
            phases: self.phases,
            files: self.files,
            trajectories: self.trajectories,
            flags: self.flags,
            summary: outcome.as_ref().ok().cloned(),
        };
        let path = self.dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
