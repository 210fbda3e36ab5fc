//! Configuration-driven experiment runner for locally weighted ensemble Kalman methods.
//!
//! [`run`] resolves nothing itself: it takes finished [`Settings`], writes all
//! artifacts into the configured output directory and always leaves a
//! `manifest.json` behind, also when the experiment fails.

pub mod config;
pub mod experiments;
pub mod output;
pub mod roots;
pub mod summary;

use anyhow::Context;

pub use config::{Experiment, Overrides, RunConfig, Settings};
pub use output::RunManifest;
pub use summary::Summary;

/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "LWEK_THREADS";

pub fn run(settings: &Settings) -> anyhow::Result<RunManifest> {
    let mut ctx = output::RunContext::create(&settings.output_dir)?;
    log::info!("running {:?} into {}", settings.experiment, settings.output_dir.display());
    let outcome = experiments::dispatch(&mut ctx, settings);
    let manifest = ctx.finish(settings, &outcome)?;
    outcome.map(|_| manifest)
}

/// Sizes the global worker pool from `LWEK_THREADS` when it is set.
pub fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v.trim().parse().with_context(|| format!("{THREADS_VAR} must be a positive integer, got {v:?}"))?;
        anyhow::ensure!(n > 0, "{THREADS_VAR} must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the worker pool")?;
    }
    Ok(())
}
