//! Particle dynamics: right-hand sides and fixed-step time integration.
//!
//! Every drift takes an ensemble whose features are already cached and returns
//! one row per particle. The observation noise covariance is `gamma^2 I`, so all
//! drifts carry a factor `1/gamma^2`; `gamma = 1` gives the textbook forms.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::kernels::{KernelKind, KernelSpec};
use crate::maps::ForwardMap;
use crate::moments::{global_moments, local_cross_covariance, Ensemble};

/// Forward map, data and observation noise level.
#[derive(Clone)]
pub struct ForwardProblem {
    pub map: Arc<dyn ForwardMap>,
    pub data: DVector<f64>,
    pub noise_std: f64,
}

impl std::fmt::Debug for ForwardProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardProblem")
            .field("input_dim", &self.map.input_dim())
            .field("output_dim", &self.map.output_dim())
            .field("data", &self.data.as_slice())
            .field("noise_std", &self.noise_std)
            .finish()
    }
}

impl ForwardProblem {
    pub fn new(map: Arc<dyn ForwardMap>, data: Vec<f64>) -> Result<Self> {
        check_dim(map.output_dim(), data.len())?;
        Ok(Self { map, data: DVector::from_vec(data), noise_std: 1.0 })
    }

    pub fn with_noise_std(mut self, noise_std: f64) -> Result<Self> {
        if !(noise_std.is_finite() && noise_std > 0.0) {
            return Err(Error::InvalidInput(format!("noise std must be positive, got {noise_std}")));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    fn precision(&self) -> f64 {
        1.0 / (self.noise_std * self.noise_std)
    }

    /// `Phi(u) = |y - A(u)|^2 / (2 gamma^2)`.
    pub fn misfit(&self, u: &[f64]) -> f64 {
        let a = self.map.eval(u);
        0.5 * self.precision() * (&self.data - a).norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Eki,
    LwEki,
    EnSrf,
    LwEnSrf,
    StochasticEnkf,
}

impl Method {
    pub fn is_weighted(self) -> bool {
        matches!(self, Method::LwEki | Method::LwEnSrf)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Eki => "eki",
            Method::LwEki => "lweki",
            Method::EnSrf => "ensrf",
            Method::LwEnSrf => "lwensrf",
            Method::StochasticEnkf => "stochastic-enkf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub method: Method,
    pub kernel: Option<KernelSpec>,
    pub noise_seed: u64,
}

impl MethodSpec {
    pub fn unweighted(method: Method) -> Self {
        Self { method, kernel: None, noise_seed: 0 }
    }

    pub fn weighted(method: Method, kernel: KernelSpec) -> Self {
        Self { method, kernel: Some(kernel), noise_seed: 0 }
    }

    pub fn with_noise_seed(mut self, seed: u64) -> Self {
        self.noise_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.method.is_weighted(), &self.kernel) {
            (true, None) => Err(Error::InvalidInput(format!("{} requires a kernel", self.method.name()))),
            (true, Some(k)) => k.validate(),
            _ => Ok(()),
        }
    }
}

/// Fixed step size `h` up to `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_end: f64,
    pub step: f64,
}

impl TimeGrid {
    pub fn new(t_end: f64, step: f64) -> Result<Self> {
        let g = Self { t_end, step };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.t_end.is_finite() && self.step > 0.0 && self.step <= self.t_end) {
            return Err(Error::InvalidInput(format!("need 0 < h <= t_end, got h={} t_end={}", self.step, self.t_end)));
        }
        Ok(())
    }

    /// `ceil(t_end / h)`, treating ratios within `1e-9` of an integer as that integer.
    pub fn steps(&self) -> usize {
        let ratio = self.t_end / self.step;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as usize
        } else {
            ratio.ceil() as usize
        }
    }

    /// Number of steps after which time `t` has been reached.
    pub fn step_at(&self, t: f64) -> usize {
        TimeGrid { t_end: t, step: self.step }.steps()
    }
}

/// Drift rows (`J x p`) and the per-particle weight-underflow flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    pub values: DMatrix<f64>,
    pub underflow: Vec<bool>,
}

impl Drift {
    fn unflagged(values: DMatrix<f64>) -> Self {
        let n = values.nrows();
        Self { values, underflow: vec![false; n] }
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }
}

fn residual(problem: &ForwardProblem, a: &[f64]) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().zip(problem.data.iter()).map(|(ai, yi)| ai - yi))
}

fn check_problem(problem: &ForwardProblem, ensemble: &Ensemble) -> Result<usize> {
    check_dim(problem.map.input_dim(), ensemble.dim())?;
    let d = ensemble.feature_dim().ok_or(Error::MissingFeatures)?;
    check_dim(problem.data.len(), d)?;
    Ok(d)
}

fn rows_from(drifts: Vec<DVector<f64>>, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(drifts.len(), p, |i, k| drifts[i][k])
}

/// Unweighted drift `-C_uA Gamma^{-1} (target_i - y)` for caller-supplied targets.
fn global_drift(problem: &ForwardProblem, ensemble: &Ensemble, target: impl Fn(usize) -> DVector<f64>) -> Result<Drift> {
    check_problem(problem, ensemble)?;
    let g = global_moments(ensemble)?;
    let scale = -problem.precision();
    let rows = (0..ensemble.size()).map(|i| &g.c_ua * (target(i) - &problem.data) * scale).collect();
    Ok(Drift::unflagged(rows_from(rows, ensemble.dim())))
}

/// `du_i/dt = -C_uA (A(u_i) - y)`.
pub fn rhs_eki(problem: &ForwardProblem, ensemble: &Ensemble) -> Result<Drift> {
    global_drift(problem, ensemble, |i| DVector::from_column_slice(ensemble.feature(i).expect("checked")))
}

type LocalCross = (DMatrix<f64>, DVector<f64>, bool);

/// `C^kappa_uA(u_i)` and `mu_A^kappa(u_i)` for every particle, in particle order.
/// The flat kernel gives the same weights everywhere, so it is computed once.
fn local_cross_all(kernel: &KernelSpec, ensemble: &Ensemble) -> Result<Vec<LocalCross>> {
    if kernel.kind == KernelKind::Flat {
        let (c, m, w) = local_cross_covariance(kernel, ensemble, ensemble.particle(0))?;
        return Ok(vec![(c, m, w.underflow); ensemble.size()]);
    }
    (0..ensemble.size())
        .into_par_iter()
        .map(|i| local_cross_covariance(kernel, ensemble, ensemble.particle(i)).map(|(c, m, w)| (c, m, w.underflow)))
        .collect()
}

/// `du_i/dt = -C^kappa_uA(u_i) (A(u_i) - y)`.
pub fn rhs_lweki(problem: &ForwardProblem, kernel: &KernelSpec, ensemble: &Ensemble) -> Result<Drift> {
    check_problem(problem, ensemble)?;
    let scale = -problem.precision();
    let mut rows = Vec::with_capacity(ensemble.size());
    let mut underflow = Vec::with_capacity(ensemble.size());
    for (i, (c_ua, _, flag)) in local_cross_all(kernel, ensemble)?.into_iter().enumerate() {
        let r = residual(problem, ensemble.feature(i)?);
        rows.push(c_ua * r * scale);
        underflow.push(flag);
    }
    Ok(Drift { values: rows_from(rows, ensemble.dim()), underflow })
}

/// The lwEKI drift written as a sum over particles:
/// `-sum_j kappa_j(u_i) (u_j - mu^kappa) <A(u_j) - mu_A^kappa, A(u_i) - y>`.
pub fn rhs_lweki_expanded(problem: &ForwardProblem, kernel: &KernelSpec, ensemble: &Ensemble) -> Result<Drift> {
    check_problem(problem, ensemble)?;
    let p = ensemble.dim();
    let scale = -problem.precision();
    let mut rows = Vec::with_capacity(ensemble.size());
    let mut underflow = Vec::with_capacity(ensemble.size());
    for i in 0..ensemble.size() {
        let m = crate::moments::local_moments(kernel, ensemble, ensemble.particle(i))?;
        let r = residual(problem, ensemble.feature(i)?);
        let mut acc = DVector::zeros(p);
        for (j, &w) in m.weights.weights.iter().enumerate() {
            let da = DVector::from_column_slice(ensemble.feature(j)?) - &m.mu_a;
            let du = DVector::from_column_slice(ensemble.particle(j)) - &m.mu;
            acc += du * (w * da.dot(&r));
        }
        rows.push(acc * scale);
        underflow.push(m.underflow());
    }
    Ok(Drift { values: rows_from(rows, p), underflow })
}

/// `du_i/dt = -C_uA ((A(u_i) + A(m)) / 2 - y)` with `m` the ensemble mean.
pub fn rhs_ensrf(problem: &ForwardProblem, ensemble: &Ensemble) -> Result<Drift> {
    check_problem(problem, ensemble)?;
    let a_mean = problem.map.eval(&ensemble.mean());
    global_drift(problem, ensemble, |i| {
        (DVector::from_column_slice(ensemble.feature(i).expect("checked")) + &a_mean) * 0.5
    })
}

/// `du_i/dt = -C^kappa_uA(u_i) ((A(u_i) + mu_A^kappa(u_i)) / 2 - y)`.
pub fn rhs_lwensrf(problem: &ForwardProblem, kernel: &KernelSpec, ensemble: &Ensemble) -> Result<Drift> {
    check_problem(problem, ensemble)?;
    let scale = -problem.precision();
    let mut rows = Vec::with_capacity(ensemble.size());
    let mut underflow = Vec::with_capacity(ensemble.size());
    for (i, (c_ua, mu_a, flag)) in local_cross_all(kernel, ensemble)?.into_iter().enumerate() {
        let a = DVector::from_column_slice(ensemble.feature(i)?);
        let target = (a + mu_a) * 0.5 - &problem.data;
        rows.push(c_ua * target * scale);
        underflow.push(flag);
    }
    Ok(Drift { values: rows_from(rows, ensemble.dim()), underflow })
}

/// `du_i/dt = -C_uA Gamma^{-1} (A(u_i) - y + dW_i / h)` where `noise_increment`
/// holds the already scaled increments `dW_i` (`J x d`).
pub fn rhs_stochastic_enkf(
    problem: &ForwardProblem,
    ensemble: &Ensemble,
    noise_increment: &DMatrix<f64>,
    h: f64,
) -> Result<Drift> {
    let d = check_problem(problem, ensemble)?;
    check_dim(ensemble.size(), noise_increment.nrows())?;
    check_dim(d, noise_increment.ncols())?;
    global_drift(problem, ensemble, |i| {
        DVector::from_column_slice(ensemble.feature(i).expect("checked")) + noise_increment.row(i).transpose() / h
    })
}

/// Observation-space Brownian increments `gamma sqrt(h) xi`, one independent
/// stream per `(seed, particle, step)`.
pub fn noise_increments(seed: u64, step: usize, particles: usize, d: usize, h: f64, noise_std: f64) -> DMatrix<f64> {
    let scale = noise_std * h.sqrt();
    let mut out = DMatrix::zeros(particles, d);
    for i in 0..particles {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((i as u64) << 32) | (step as u64 & 0xffff_ffff));
        for k in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            out[(i, k)] = scale * z;
        }
    }
    out
}

/// One drift evaluation for the given method at the given step.
pub fn drift(problem: &ForwardProblem, method: &MethodSpec, ensemble: &Ensemble, step: usize, h: f64) -> Result<Drift> {
    let kernel = || method.kernel.as_ref().ok_or(Error::InvalidInput(format!("{} requires a kernel", method.method.name())));
    match method.method {
        Method::Eki => rhs_eki(problem, ensemble),
        Method::LwEki => rhs_lweki(problem, kernel()?, ensemble),
        Method::EnSrf => rhs_ensrf(problem, ensemble),
        Method::LwEnSrf => rhs_lwensrf(problem, kernel()?, ensemble),
        Method::StochasticEnkf => {
            let d = problem.data.len();
            let noise = noise_increments(method.noise_seed, step, ensemble.size(), d, h, problem.noise_std);
            rhs_stochastic_enkf(problem, ensemble, &noise, h)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySnapshot {
    pub step: usize,
    pub time: f64,
    /// State at `time`, with features cached.
    pub ensemble: Ensemble,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub method: Method,
    pub step_size: f64,
    pub snapshots: Vec<TrajectorySnapshot>,
    /// Steps actually taken (fewer than planned when a stop rule fired).
    pub steps_taken: usize,
    /// Total count of particle drifts computed under weight underflow.
    pub underflow_events: usize,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectorySnapshot {
        self.snapshots.last().expect("trajectory always holds the initial state")
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }
}

/// Integration stopped on a non-finite state; `partial` ends at the last finite snapshot.
#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct IntegrationFailure {
    pub source: Error,
    pub partial: Trajectory,
}

impl IntegrationFailure {
    pub fn step(&self) -> Option<usize> {
        match self.source {
            Error::NonFinite { step } => Some(step),
            _ => None,
        }
    }
}

pub type IntegrationResult = std::result::Result<Trajectory, Box<IntegrationFailure>>;

/// Forward Euler (Euler-Maruyama for the stochastic filter) from `initial` to `grid.t_end`.
///
/// Snapshots are kept at step 0, every `snapshot_every` steps, and at the final step.
pub fn integrate(
    problem: &ForwardProblem,
    method: &MethodSpec,
    grid: &TimeGrid,
    initial: Ensemble,
    snapshot_every: usize,
) -> IntegrationResult {
    integrate_until(problem, method, grid, initial, snapshot_every, |_, _| false)
}

/// As [`integrate`], but stops early once `stop(step, state)` returns true after a step.
pub fn integrate_until(
    problem: &ForwardProblem,
    method: &MethodSpec,
    grid: &TimeGrid,
    initial: Ensemble,
    snapshot_every: usize,
    mut stop: impl FnMut(usize, &Ensemble) -> bool,
) -> IntegrationResult {
    let h = grid.step;
    let mut traj = Trajectory { method: method.method, step_size: h, snapshots: Vec::new(), steps_taken: 0, underflow_events: 0 };
    let fail = |source: Error, partial: Trajectory| Box::new(IntegrationFailure { source, partial });
    if let Err(e) = method.validate().and_then(|_| grid.validate()).and_then(|_| check_dim(problem.map.input_dim(), initial.dim())) {
        return Err(fail(e, traj));
    }
    if snapshot_every == 0 {
        return Err(fail(Error::InvalidInput("snapshot cadence must be positive".into()), traj));
    }
    if !initial.is_finite() {
        return Err(fail(Error::NonFinite { step: 0 }, traj));
    }
    let mut state = match initial.without_features().evaluate(problem.map.as_ref()) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, traj)),
    };
    traj.snapshots.push(TrajectorySnapshot { step: 0, time: 0.0, ensemble: state.clone() });
    let total = grid.steps();
    let p = state.dim();
    for k in 0..total {
        let dr = match drift(problem, method, &state, k, h) {
            Ok(d) => d,
            Err(e) => return Err(fail(e, traj)),
        };
        traj.underflow_events += dr.underflow.iter().filter(|&&f| f).count();
        let mut next: Vec<f64> = state.as_flat().to_vec();
        for (i, row) in next.chunks_exact_mut(p).enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v += h * dr.values[(i, c)];
            }
        }
        let step = k + 1;
        if next.iter().any(|v| !v.is_finite()) {
            log::warn!("non-finite state after step {step}");
            return Err(fail(Error::NonFinite { step }, traj));
        }
        let candidate = Ensemble::from_flat(p, next).and_then(|e| e.evaluate(problem.map.as_ref()));
        state = match candidate {
            Ok(s) if s.is_finite() => s,
            Ok(_) => return Err(fail(Error::NonFinite { step }, traj)),
            Err(e) => return Err(fail(e, traj)),
        };
        traj.steps_taken = step;
        let halt = stop(step, &state);
        if step % snapshot_every == 0 || step == total || halt {
            traj.snapshots.push(TrajectorySnapshot { step, time: step as f64 * h, ensemble: state.clone() });
        }
        if halt {
            break;
        }
    }
    Ok(traj)
}
