//! Typed per-experiment results, stored in the manifest.

use serde::{Deserialize, Serialize};

use crate::roots::RootAssignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Summary {
    Approx(ApproxSummary),
    Inversion(InversionSummary),
    Filter(FilterSummary),
    Shell(ShellSummary),
    Custom(CustomSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxRecord {
    pub bandwidth: f64,
    /// `mu^kappa(x)`.
    pub center: Vec<f64>,
    pub effective_sample_size: f64,
    pub underflow: bool,
    /// `D_kappa A(x)`, row-major.
    pub jacobian: Vec<f64>,
    pub window_radius: f64,
    /// Largest deviation from the true function within `window_radius` of the anchor.
    pub max_error_first_order: f64,
    pub max_error_anchored: f64,
    pub max_error_second_order: f64,
    /// Largest deviation of the second-order model from the exact second-order
    /// Taylor polynomial at `mu^kappa(x)` within the window, where available.
    pub max_gap_to_taylor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxSummary {
    pub anchor: Vec<f64>,
    pub records: Vec<ApproxRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionSummary {
    pub roots: Vec<Vec<f64>>,
    pub radius: f64,
    pub weighted: RootAssignment,
    pub unweighted: Option<RootAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSnapshot {
    pub time: f64,
    pub modes: Vec<f64>,
    pub l1_to_posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRun {
    pub method: String,
    pub snapshots: Vec<FilterSnapshot>,
    /// Snapshot with the smallest L1 distance to the posterior.
    pub best: FilterSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub posterior_modes: Vec<f64>,
    pub weighted: FilterRun,
    pub unweighted: Option<FilterRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellRun {
    pub method: String,
    pub steps: usize,
    pub initial_mean_norm: f64,
    pub final_mean_norm: f64,
    pub displacement: f64,
    /// Fraction of final particles with norm in `[6, 7.5]`.
    pub fraction_in_band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellSummary {
    pub posterior_mode: Option<f64>,
    pub weighted: ShellRun,
    pub unweighted: Option<ShellRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomSummary {
    pub steps_taken: usize,
    pub final_mean: Vec<f64>,
    pub mean_misfit: f64,
}
