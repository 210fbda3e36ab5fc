//! Run configuration: the JSON file format, command-line overrides and
//! per-experiment defaults.

use std::f64::consts::FRAC_PI_4;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context};
use clap::ValueEnum;
use lwek::dynamics::{Method, MethodSpec, TimeGrid};
use lwek::maps::{ForwardMap, HimmelblauMap, Quadratic1d, Sine, SquaredNorm};
use lwek::{Ensemble, KernelKind, KernelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ApproxSine,
    ApproxHimmelblau,
    InvertHimmelblau,
    Ensrf1d,
    Shell10d,
    Custom,
}

impl Experiment {
    /// Name of the figure whose data the experiment produces.
    pub fn figure(self) -> &'static str {
        match self {
            Experiment::ApproxSine => "approx_sin",
            Experiment::ApproxHimmelblau => "approx_himmelblau",
            Experiment::InvertHimmelblau => "himmelblau_inversion",
            Experiment::Ensrf1d => "ensrf_1d_bimodal",
            Experiment::Shell10d => "shell_10d",
            Experiment::Custom => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Eki,
    Lweki,
    Ensrf,
    Lwensrf,
    StochasticEnkf,
}

impl From<MethodName> for Method {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::Eki => Method::Eki,
            MethodName::Lweki => Method::LwEki,
            MethodName::Ensrf => Method::EnSrf,
            MethodName::Lwensrf => Method::LwEnSrf,
            MethodName::StochasticEnkf => Method::StochasticEnkf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelName {
    Flat,
    Gaussian,
    TruncatedGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelName,
    pub bandwidth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_radius: Option<f64>,
}

impl KernelConfig {
    pub fn gaussian(bandwidth: f64) -> Self {
        Self { kind: KernelName::Gaussian, bandwidth, truncation_radius: None }
    }

    pub fn spec(&self) -> KernelSpec {
        match self.kind {
            KernelName::Flat => KernelSpec::flat(),
            KernelName::Gaussian => KernelSpec::gaussian(self.bandwidth),
            KernelName::TruncatedGaussian => KernelSpec::truncated_gaussian(self.bandwidth, self.truncation_radius),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Prior {
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: f64 },
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::UniformBox { lower, .. } => lower.len(),
            Prior::Gaussian { mean, .. } => mean.len(),
        }
    }

    fn validate(&self) -> anyhow::Result<()> {
        match self {
            Prior::UniformBox { lower, upper } => {
                ensure!(!lower.is_empty() && lower.len() == upper.len(), "uniform box bounds must have equal nonzero length");
                ensure!(lower.iter().zip(upper).all(|(a, b)| a.is_finite() && b.is_finite() && a < b), "uniform box needs lower < upper");
            }
            Prior::Gaussian { mean, std } => {
                ensure!(!mean.is_empty() && mean.iter().all(|m| m.is_finite()), "gaussian prior mean must be finite and nonempty");
                ensure!(std.is_finite() && *std > 0.0, "gaussian prior std must be positive");
            }
        }
        Ok(())
    }

    /// `j` draws, particle by particle, from a ChaCha stream seeded with `seed`.
    pub fn sample(&self, j: usize, seed: u64) -> lwek::Result<Ensemble> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = self.dim();
        let mut flat = Vec::with_capacity(j * p);
        for _ in 0..j {
            for k in 0..p {
                flat.push(match self {
                    Prior::UniformBox { lower, upper } => rng.random_range(lower[k]..upper[k]),
                    Prior::Gaussian { mean, std } => {
                        let z: f64 = rng.sample(StandardNormal);
                        mean[k] + std * z
                    }
                });
            }
        }
        Ensemble::from_flat(p, flat)
    }
}

/// Forward maps available to the custom experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapName {
    Sine,
    Quadratic1d,
    Himmelblau,
    SquaredNorm,
}

/// Early stop once the mean particle norm changes by less than `rel_tol`
/// (relative) over `window` steps, but not before `min_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stabilization {
    pub window: usize,
    pub rel_tol: f64,
    pub min_steps: usize,
}

/// The configuration file. Every field except `experiment` may be omitted and
/// then takes the experiment's default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub method: Option<MethodName>,
    pub kernel: Option<KernelConfig>,
    /// Bandwidths swept by the approximation experiments.
    pub bandwidths: Option<Vec<f64>>,
    pub ensemble_size: Option<usize>,
    pub t_end: Option<f64>,
    pub step: Option<f64>,
    pub seed: Option<u64>,
    pub prior: Option<Prior>,
    pub output_dir: Option<PathBuf>,
    pub snapshot_every: Option<usize>,
    pub noise_std: Option<f64>,
    pub data: Option<Vec<f64>>,
    pub anchor: Option<Vec<f64>>,
    pub compare_unweighted: Option<bool>,
    pub forward_map: Option<MapName>,
    pub dim: Option<usize>,
    pub stabilization: Option<Stabilization>,
    pub root_radius: Option<f64>,
}

/// Command-line values that replace the corresponding file values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub bandwidth: Option<f64>,
    pub ensemble_size: Option<usize>,
    pub seed: Option<u64>,
    pub t_end: Option<f64>,
    pub step: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn for_experiment(experiment: Experiment) -> Self {
        Self { experiment: Some(experiment), ..Self::default() }
    }

    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(e) = o.experiment {
            self.experiment = Some(e);
        }
        if let Some(b) = o.bandwidth {
            let kind = self.kernel.map(|k| k.kind).filter(|k| *k != KernelName::Flat).unwrap_or(KernelName::Gaussian);
            let truncation_radius = self.kernel.and_then(|k| k.truncation_radius);
            self.kernel = Some(KernelConfig { kind, bandwidth: b, truncation_radius });
            self.bandwidths = Some(vec![b]);
        }
        if o.ensemble_size.is_some() {
            self.ensemble_size = o.ensemble_size;
        }
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.t_end.is_some() {
            self.t_end = o.t_end;
        }
        if o.step.is_some() {
            self.step = o.step;
        }
        if o.output_dir.is_some() {
            self.output_dir = o.output_dir.clone();
        }
    }

    /// Fills in experiment defaults and validates the result.
    pub fn resolve(&self) -> anyhow::Result<Settings> {
        let experiment = self.experiment.context("no experiment given")?;
        let d = Defaults::of(experiment);
        let kernel = self.kernel.unwrap_or(KernelConfig::gaussian(d.bandwidth));
        let s = Settings {
            experiment,
            method: self.method.unwrap_or(d.method),
            kernel,
            bandwidths: self.bandwidths.clone().unwrap_or_else(|| {
                if self.kernel.is_some() {
                    vec![kernel.bandwidth]
                } else {
                    d.bandwidths.clone()
                }
            }),
            ensemble_size: self.ensemble_size.unwrap_or(d.ensemble_size),
            t_end: self.t_end.unwrap_or(d.t_end),
            step: self.step.unwrap_or(d.step),
            seed: self.seed.unwrap_or(0),
            prior: self.prior.clone().unwrap_or(d.prior.clone()),
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(format!("{experiment:?}").to_lowercase())),
            snapshot_every: self.snapshot_every.unwrap_or(d.snapshot_every),
            noise_std: self.noise_std.unwrap_or(d.noise_std),
            data: self.data.clone().unwrap_or(d.data.clone()),
            anchor: self.anchor.clone().unwrap_or(d.anchor.clone()),
            compare_unweighted: self.compare_unweighted.unwrap_or(d.compare_unweighted),
            forward_map: self.forward_map.or(d.forward_map),
            stabilization: self.stabilization.or(d.stabilization),
            root_radius: self.root_radius.unwrap_or(0.5),
        };
        if experiment == Experiment::Custom {
            ensure!(s.forward_map.is_some(), "custom experiment needs forward_map");
            if let (Some(MapName::SquaredNorm), Some(dim)) = (s.forward_map, self.dim) {
                ensure!(dim == s.prior.dim(), "dim {dim} disagrees with prior dimension {}", s.prior.dim());
            }
        }
        s.validate()?;
        Ok(s)
    }
}

struct Defaults {
    method: MethodName,
    bandwidth: f64,
    bandwidths: Vec<f64>,
    ensemble_size: usize,
    t_end: f64,
    step: f64,
    prior: Prior,
    snapshot_every: usize,
    noise_std: f64,
    data: Vec<f64>,
    anchor: Vec<f64>,
    compare_unweighted: bool,
    forward_map: Option<MapName>,
    stabilization: Option<Stabilization>,
}

impl Defaults {
    fn of(e: Experiment) -> Self {
        let base = Defaults {
            method: MethodName::Lweki,
            bandwidth: 1.0,
            bandwidths: vec![1.0],
            ensemble_size: 100,
            t_end: 1.0,
            step: 1e-3,
            prior: Prior::Gaussian { mean: vec![0.0], std: 1.0 },
            snapshot_every: 100,
            noise_std: 1.0,
            data: vec![0.0],
            anchor: vec![0.0],
            compare_unweighted: false,
            forward_map: None,
            stabilization: None,
        };
        match e {
            Experiment::ApproxSine => Defaults {
                bandwidth: 0.2,
                bandwidths: vec![5.0, 1.0, 0.2],
                prior: Prior::UniformBox { lower: vec![-3.0], upper: vec![3.0] },
                anchor: vec![FRAC_PI_4],
                ..base
            },
            Experiment::ApproxHimmelblau => Defaults {
                bandwidths: vec![1.0, 5.0],
                prior: Prior::Gaussian { mean: vec![0.0, 0.0], std: 2.0 },
                anchor: vec![1.0, 1.0],
                ..base
            },
            Experiment::InvertHimmelblau => Defaults {
                t_end: 10.0,
                prior: Prior::Gaussian { mean: vec![0.0, 0.0], std: 1.5 },
                snapshot_every: 1000,
                data: vec![11.0, 7.0],
                anchor: vec![0.0, 0.0],
                compare_unweighted: true,
                ..base
            },
            Experiment::Ensrf1d => Defaults {
                method: MethodName::Lwensrf,
                bandwidth: 0.1f64.sqrt(),
                bandwidths: vec![0.1f64.sqrt()],
                ensemble_size: 1000,
                t_end: 3.0,
                snapshot_every: 500,
                noise_std: 0.5,
                data: vec![1.0],
                compare_unweighted: true,
                ..base
            },
            Experiment::Shell10d => Defaults {
                bandwidth: 2.0,
                bandwidths: vec![2.0],
                ensemble_size: 500,
                t_end: 10.0,
                prior: Prior::Gaussian { mean: vec![0.0; 10], std: 2.0 },
                data: vec![45.0],
                anchor: vec![0.0; 10],
                compare_unweighted: true,
                stabilization: Some(Stabilization { window: 100, rel_tol: 1e-3, min_steps: 500 }),
                ..base
            },
            Experiment::Custom => base,
        }
    }
}

/// A fully resolved configuration; echoed verbatim into the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub experiment: Experiment,
    pub method: MethodName,
    pub kernel: KernelConfig,
    pub bandwidths: Vec<f64>,
    pub ensemble_size: usize,
    pub t_end: f64,
    pub step: f64,
    pub seed: u64,
    pub prior: Prior,
    pub output_dir: PathBuf,
    pub snapshot_every: usize,
    pub noise_std: f64,
    pub data: Vec<f64>,
    pub anchor: Vec<f64>,
    pub compare_unweighted: bool,
    pub forward_map: Option<MapName>,
    pub stabilization: Option<Stabilization>,
    pub root_radius: f64,
}

impl Settings {
    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(self.ensemble_size >= 2, "ensemble size must be at least 2");
        ensure!(self.snapshot_every >= 1, "snapshot_every must be positive");
        ensure!(self.noise_std.is_finite() && self.noise_std > 0.0, "noise_std must be positive");
        ensure!(self.root_radius.is_finite() && self.root_radius > 0.0, "root_radius must be positive");
        ensure!(!self.bandwidths.is_empty(), "at least one bandwidth is needed");
        for &b in &self.bandwidths {
            KernelConfig { bandwidth: b, ..self.kernel }.spec().validate()?;
        }
        if self.kernel.kind != KernelName::Flat {
            self.kernel.spec().validate()?;
        }
        self.grid()?;
        self.prior.validate()?;
        ensure!(self.data.iter().chain(&self.anchor).all(|v| v.is_finite()), "data and anchor must be finite");
        if let Some(s) = self.stabilization {
            ensure!(s.window >= 1 && s.rel_tol.is_finite() && s.rel_tol > 0.0, "invalid stabilization rule");
        }
        let p = self.prior.dim();
        match self.experiment {
            Experiment::ApproxSine | Experiment::Ensrf1d => ensure!(p == 1, "{:?} is one-dimensional", self.experiment),
            Experiment::ApproxHimmelblau | Experiment::InvertHimmelblau => {
                ensure!(p == 2, "{:?} is two-dimensional", self.experiment)
            }
            Experiment::Shell10d | Experiment::Custom => {}
        }
        if matches!(self.experiment, Experiment::ApproxSine | Experiment::ApproxHimmelblau) {
            ensure!(self.anchor.len() == p, "anchor has dimension {} but the prior has {p}", self.anchor.len());
        } else {
            let map = self.forward_map()?;
            ensure!(map.input_dim() == p, "forward map takes dimension {} but the prior has {p}", map.input_dim());
            ensure!(map.output_dim() == self.data.len(), "data has length {} but the map outputs {}", self.data.len(), map.output_dim());
        }
        Ok(())
    }

    pub fn grid(&self) -> anyhow::Result<TimeGrid> {
        Ok(TimeGrid::new(self.t_end, self.step)?)
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        self.kernel.spec()
    }

    pub fn method_spec(&self) -> MethodSpec {
        let method: Method = self.method.into();
        let kernel = if method.is_weighted() { Some(self.kernel_spec()) } else { None };
        MethodSpec { method, kernel, noise_seed: self.seed }
    }

    /// Forward map of the inversion and filtering experiments.
    pub fn forward_map(&self) -> anyhow::Result<Arc<dyn ForwardMap>> {
        let map: Arc<dyn ForwardMap> = match self.experiment {
            Experiment::InvertHimmelblau => Arc::new(HimmelblauMap),
            Experiment::Ensrf1d => Arc::new(Quadratic1d { curvature: lwek::oracles::BIMODAL_CURVATURE }),
            Experiment::Shell10d => Arc::new(SquaredNorm { dim: self.prior.dim() }),
            Experiment::Custom => match self.forward_map {
                Some(MapName::Sine) => Arc::new(Sine),
                Some(MapName::Quadratic1d) => Arc::new(Quadratic1d { curvature: lwek::oracles::BIMODAL_CURVATURE }),
                Some(MapName::Himmelblau) => Arc::new(HimmelblauMap),
                Some(MapName::SquaredNorm) => Arc::new(SquaredNorm { dim: self.prior.dim() }),
                None => bail!("custom experiment needs forward_map"),
            },
            Experiment::ApproxSine => Arc::new(Sine),
            Experiment::ApproxHimmelblau => Arc::new(lwek::maps::HimmelblauScalar),
        };
        Ok(map)
    }

    pub fn is_flat(&self) -> bool {
        self.kernel.spec().kind == KernelKind::Flat
    }
}
