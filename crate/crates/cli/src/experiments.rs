//! The experiment runners. Each writes its CSV bundle through a [`RunContext`]
//! and returns a typed [`Summary`].

use anyhow::{ensure, Context};
use lwek::dynamics::{integrate, integrate_until, ForwardProblem, Method, MethodSpec, TimeGrid, Trajectory};
use lwek::local_approx::{build_model, model_eval, ModelVariant};
use lwek::maps::{ForwardMap, HimmelblauScalar, Sine};
use lwek::oracles::{himmelblau_roots, kde, linspace, posterior_1d_quadratic, posterior_shell_pushforward, DensityCurve};
use lwek::{compute_weights, Ensemble};
use nalgebra::DVector;

use crate::config::{Experiment, Prior, Settings};
use crate::output::RunContext;
use crate::roots::root_assignment;
use crate::summary::*;

/// Norm band counted by the shell experiment.
pub const SHELL_BAND: (f64, f64) = (6.0, 7.5);

/// Grid used for the 1d filtering densities.
pub fn filter_grid() -> Vec<f64> {
    linspace(-6.0, 4.0, 1001)
}

pub fn dispatch(ctx: &mut RunContext, s: &Settings) -> anyhow::Result<Summary> {
    match s.experiment {
        Experiment::ApproxSine => approx_sine(ctx, s),
        Experiment::ApproxHimmelblau => approx_himmelblau(ctx, s),
        Experiment::InvertHimmelblau => invert_himmelblau(ctx, s),
        Experiment::Ensrf1d => ensrf_1d(ctx, s),
        Experiment::Shell10d => shell_10d(ctx, s),
        Experiment::Custom => custom(ctx, s),
    }
}

fn problem(s: &Settings) -> anyhow::Result<ForwardProblem> {
    Ok(ForwardProblem::new(s.forward_map()?, s.data.clone())?.with_noise_std(s.noise_std)?)
}

/// The unweighted method a weighted one is compared against.
fn counterpart(method: Method) -> Option<Method> {
    match method {
        Method::LwEki => Some(Method::Eki),
        Method::LwEnSrf => Some(Method::EnSrf),
        _ => None,
    }
}

fn run_dynamics(
    ctx: &mut RunContext,
    s: &Settings,
    prob: &ForwardProblem,
    spec: &MethodSpec,
    grid: &TimeGrid,
    initial: &Ensemble,
) -> anyhow::Result<Trajectory> {
    let label = spec.method.name();
    let result = ctx.timed(label, |_| integrate(prob, spec, grid, initial.clone(), s.snapshot_every));
    match result {
        Ok(t) => {
            ctx.record_trajectory(label, s, &t)?;
            Ok(t)
        }
        Err(f) => Err(ctx.record_failure(label, s, &f)),
    }
}

fn sample_initial(ctx: &mut RunContext, s: &Settings) -> anyhow::Result<Ensemble> {
    ctx.timed("sample", |_| s.prior.sample(s.ensemble_size, s.seed)).context("sampling the prior")
}

fn approx_sine(ctx: &mut RunContext, s: &Settings) -> anyhow::Result<Summary> {
    let ensemble = sample_initial(ctx, s)?.evaluate(&Sine)?;
    let x = s.anchor.clone();
    let (lo, hi) = match &s.prior {
        Prior::UniformBox { lower, upper } => (lower[0], upper[0]),
        Prior::Gaussian { mean, std } => (mean[0] - 3.0 * std, mean[0] + 3.0 * std),
    };
    let window = 0.2;
    let mut records = Vec::new();
    for &r in &s.bandwidths {
        let spec = crate::config::KernelConfig { bandwidth: r, ..s.kernel }.spec();
        let w = compute_weights(&spec, &ensemble, &x)?;
        ctx.write_table(
            &format!("sine_particles_r{r}.csv"),
            &["x", "a", "weight"],
            (0..ensemble.size()).map(|i| vec![ensemble.particle(i)[0], ensemble.feature(i).unwrap()[0], w.weights[i]]),
        )?;
        let m1 = build_model(&spec, &ensemble, &Sine, &x, 1, ModelVariant::LeastSquares)?;
        let m1a = m1.with_variant(ModelVariant::Anchored, &Sine);
        let m2 = build_model(&spec, &ensemble, &Sine, &x, 2, ModelVariant::LeastSquares)?;
        let m2a = m2.with_variant(ModelVariant::Anchored, &Sine);
        let eval = |m: &lwek::local_approx::LocalModel, xi: f64| model_eval(m, &[xi]).map(|v| v[0]);
        let mut rows = Vec::new();
        for xi in linspace(lo, hi, 601) {
            rows.push(vec![xi, xi.sin(), eval(&m1, xi)?, eval(&m1a, xi)?, eval(&m2, xi)?, eval(&m2a, xi)?]);
        }
        ctx.write_table(&format!("sine_models_r{r}.csv"), &["xi", "a", "a_x", "a_x_anchored", "a_x2", "a_x2_anchored"], rows)?;
        let win = linspace(x[0] - window, x[0] + window, 401);
        let err = |m: &lwek::local_approx::LocalModel| -> anyhow::Result<f64> {
            let mut e = 0.0f64;
            for &xi in &win {
                e = e.max((eval(m, xi)? - xi.sin()).abs());
            }
            Ok(e)
        };
        records.push(ApproxRecord {
            bandwidth: r,
            center: m1.center.as_slice().to_vec(),
            effective_sample_size: w.effective_sample_size(),
            underflow: w.underflow,
            jacobian: m1.jacobian.matrix.as_slice().to_vec(),
            window_radius: window,
            max_error_first_order: err(&m1)?,
            max_error_anchored: err(&m1a)?,
            max_error_second_order: err(&m2)?,
            max_gap_to_taylor: None,
        });
        if w.underflow {
            ctx.flags.underflow_events += 1;
        }
        if m1.jacobian.rank_deficient {
            ctx.flags.rank_deficient += 1;
        }
    }
    Ok(Summary::Approx(ApproxSummary { anchor: x, records }))
}

fn approx_himmelblau(ctx: &mut RunContext, s: &Settings) -> anyhow::Result<Summary> {
    let map = HimmelblauScalar;
    let ensemble = sample_initial(ctx, s)?.evaluate(&map)?;
    let x = s.anchor.clone();
    let window = 0.5;
    let axis = linspace(-5.0, 5.0, 101);
    let mut records = Vec::new();
    for &r in &s.bandwidths {
        let spec = crate::config::KernelConfig { bandwidth: r, ..s.kernel }.spec();
        let w = compute_weights(&spec, &ensemble, &x)?;
        ctx.write_table(
            &format!("himmelblau_particles_r{r}.csv"),
            &["x1", "x2", "a", "weight"],
            (0..ensemble.size()).map(|i| {
                let u = ensemble.particle(i);
                vec![u[0], u[1], ensemble.feature(i).unwrap()[0], w.weights[i]]
            }),
        )?;
        let m1 = build_model(&spec, &ensemble, &map, &x, 1, ModelVariant::LeastSquares)?;
        let m2 = build_model(&spec, &ensemble, &map, &x, 2, ModelVariant::LeastSquares)?;
        let m1a = m1.with_variant(ModelVariant::Anchored, &map);
        let mu = m1.center.clone();
        let f0 = map.eval(mu.as_slice())[0];
        let g = map.jacobian(mu.as_slice()).expect("analytic gradient").transpose();
        let h = HimmelblauScalar::hessian(mu.as_slice());
        let taylor = |xi: &[f64]| {
            let d = DVector::from_column_slice(xi) - &mu;
            f0 + g.dot(&d) + 0.5 * d.dot(&(&h * &d))
        };
        let mut rows = Vec::with_capacity(axis.len() * axis.len());
        for &a in &axis {
            for &b in &axis {
                let xi = [a, b];
                rows.push(vec![a, b, map.eval(&xi)[0], taylor(&xi), model_eval(&m1, &xi)?[0], model_eval(&m2, &xi)?[0]]);
            }
        }
        ctx.write_table(&format!("himmelblau_grid_r{r}.csv"), &["x1", "x2", "a", "taylor2", "a_x", "a_x2"], rows)?;
        let mut win = Vec::new();
        for a in linspace(-window, window, 41) {
            for b in linspace(-window, window, 41) {
                if a * a + b * b <= window * window {
                    win.push([x[0] + a, x[1] + b]);
                }
            }
        }
        let err = |m: &lwek::local_approx::LocalModel| -> anyhow::Result<f64> {
            let mut e = 0.0f64;
            for xi in &win {
                e = e.max((model_eval(m, xi)?[0] - map.eval(xi)[0]).abs());
            }
            Ok(e)
        };
        let mut gap = 0.0f64;
        for xi in &win {
            gap = gap.max((model_eval(&m2, xi)?[0] - taylor(xi)).abs());
        }
        records.push(ApproxRecord {
            bandwidth: r,
            center: mu.as_slice().to_vec(),
            effective_sample_size: w.effective_sample_size(),
            underflow: w.underflow,
            jacobian: m1.jacobian.matrix.as_slice().to_vec(),
            window_radius: window,
            max_error_first_order: err(&m1)?,
            max_error_anchored: err(&m1a)?,
            max_error_second_order: err(&m2)?,
            max_gap_to_taylor: Some(gap),
        });
        if w.underflow {
            ctx.flags.underflow_events += 1;
        }
        if m1.jacobian.rank_deficient {
            ctx.flags.rank_deficient += 1;
        }
    }
    Ok(Summary::Approx(ApproxSummary { anchor: x, records }))
}

fn invert_himmelblau(ctx: &mut RunContext, s: &Settings) -> anyhow::Result<Summary> {
    let prob = problem(s)?;
    let grid = s.grid()?;
    let initial = sample_initial(ctx, s)?;
    let spec = s.method_spec();
    let roots: Vec<Vec<f64>> = himmelblau_roots().iter().map(|r| r.to_vec()).collect();
    let traj = run_dynamics(ctx, s, &prob, &spec, &grid, &initial)?;
    let weighted = root_assignment(&traj.last().ensemble, &roots, s.root_radius)?;
    let unweighted = match (s.compare_unweighted, counterpart(spec.method)) {
        (true, Some(m)) => {
            let t = run_dynamics(ctx, s, &prob, &MethodSpec::unweighted(m).with_noise_seed(s.seed), &grid, &initial)?;
            Some(root_assignment(&t.last().ensemble, &roots, s.root_radius)?)
        }
        _ => None,
    };
    ctx.write_table(
        "roots.csv",
        &["x1", "x2", "count", "count_unweighted"],
        roots.iter().enumerate().map(|(k, r)| {
            let other = unweighted.as_ref().map(|u| u.counts[k] as f64).unwrap_or(-1.0);
            vec![r[0], r[1], weighted.counts[k] as f64, other]
        }),
    )?;
    Ok(Summary::Inversion(InversionSummary { roots, radius: s.root_radius, weighted, unweighted }))
}

fn filter_run(ctx: &mut RunContext, traj: &Trajectory, posterior: &DensityCurve) -> anyhow::Result<FilterRun> {
    let grid = posterior.grid.clone();
    let label = traj.method.name();
    let mut snapshots = Vec::new();
    for snap in traj.snapshots.iter().filter(|s| s.step > 0) {
        let curve = kde(snap.ensemble.as_flat(), None, &grid)?;
        ctx.write_curve(&format!("kde_{label}_step{:07}.csv", snap.step), &curve)?;
        snapshots.push(FilterSnapshot { time: snap.time, modes: curve.modes(), l1_to_posterior: curve.l1_distance(posterior)? });
    }
    ensure!(!snapshots.is_empty(), "no snapshots after the initial state");
    let best = snapshots
        .iter()
        .min_by(|a, b| a.l1_to_posterior.total_cmp(&b.l1_to_posterior))
        .cloned()
        .expect("nonempty");
    Ok(FilterRun { method: label.to_string(), snapshots, best })
}

fn ensrf_1d(ctx: &mut RunContext, s: &Settings) -> anyhow::Result<Summary> {
    let prob = problem(s)?;
    let grid = s.grid()?;
    let initial = sample_initial(ctx, s)?;
    let posterior = posterior_1d_quadratic(&filter_grid(), s.data[0], s.noise_std)?;
    ctx.write_curve("posterior.csv", &posterior)?;
    let spec = s.method_spec();
    let traj = run_dynamics(ctx, s, &prob, &spec, &grid, &initial)?;
    let weighted = ctx.timed("kde", |c| filter_run(c, &traj, &posterior))?;
    let unweighted = match (s.compare_unweighted, counterpart(spec.method)) {
        (true, Some(m)) => {
            let t = run_dynamics(ctx, s, &prob, &MethodSpec::unweighted(m).with_noise_seed(s.seed), &grid, &initial)?;
            Some(ctx.timed("kde", |c| filter_run(c, &t, &posterior))?)
        }
        _ => None,
    };
    Ok(Summary::Filter(FilterSummary { posterior_modes: posterior.modes(), weighted, unweighted }))
}

fn mean_norm(e: &Ensemble) -> f64 {
    e.particles().map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / e.size() as f64
}

fn norms(e: &Ensemble) -> Vec<f64> {
    e.particles().map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

fn shell_run(method: Method, initial: &Ensemble, traj: &Trajectory) -> ShellRun {
    let n = norms(&traj.last().ensemble);
    let inside = n.iter().filter(|z| (SHELL_BAND.0..=SHELL_BAND.1).contains(*z)).count();
    let start = mean_norm(initial);
    let end = mean_norm(&traj.last().ensemble);
    ShellRun {
        method: method.name().to_string(),
        steps: traj.steps_taken,
        initial_mean_norm: start,
        final_mean_norm: end,
        displacement: end - start,
        fraction_in_band: inside as f64 / n.len() as f64,
    }
}

fn shell_10d(ctx: &mut RunContext, s: &Settings) -> anyhow::Result<Summary> {
    let prob = problem(s)?;
    let grid = s.grid()?;
    let initial = sample_initial(ctx, s)?;
    let spec = s.method_spec();
    let rule = s.stabilization;
    let mut history = vec![mean_norm(&initial)];
    let label = spec.method.name();
    let result = ctx.timed(label, |_| {
        integrate_until(&prob, &spec, &grid, initial.clone(), s.snapshot_every, |step, state| {
            history.push(mean_norm(state));
            match rule {
                Some(r) if step >= r.min_steps.max(r.window) => {
                    let then = history[step - r.window];
                    ((history[step] - then) / then).abs() < r.rel_tol
                }
                _ => false,
            }
        })
    });
    let traj = match result {
        Ok(t) => t,
        Err(f) => return Err(ctx.record_failure(label, s, &f)),
    };
    ctx.record_trajectory(label, s, &traj)?;
    log::info!("{label} stopped after {} steps", traj.steps_taken);
    ctx.write_table(
        &format!("mean_norm_{label}.csv"),
        &["step", "time", "mean_norm"],
        history.iter().enumerate().map(|(k, m)| vec![k as f64, k as f64 * s.step, *m]),
    )?;
    let weighted = shell_run(spec.method, &initial, &traj);
    let mut final_norms = vec![norms(&traj.last().ensemble)];
    let unweighted = match (s.compare_unweighted, counterpart(spec.method)) {
        (true, Some(m)) => {
            let same_length = TimeGrid::new(traj.steps_taken as f64 * s.step, s.step)?;
            let t = run_dynamics(ctx, s, &prob, &MethodSpec::unweighted(m).with_noise_seed(s.seed), &same_length, &initial)?;
            final_norms.push(norms(&t.last().ensemble));
            Some(shell_run(m, &initial, &t))
        }
        _ => None,
    };
    let edges = linspace(0.0, 12.0, 49);
    let rows = edges.windows(2).map(|e| {
        let mut row = vec![e[0], e[1]];
        for n in &final_norms {
            row.push(n.iter().filter(|z| **z >= e[0] && **z < e[1]).count() as f64);
        }
        row
    });
    let header: &[&str] = if final_norms.len() == 2 { &["left", "right", "count", "count_unweighted"] } else { &["left", "right", "count"] };
    ctx.write_table("norm_histogram.csv", header, rows)?;
    let posterior_mode = match &s.prior {
        Prior::Gaussian { mean, std } if mean.iter().all(|m| *m == 0.0) => {
            let curve = posterior_shell_pushforward(&linspace(1e-3, 12.0, 12_000), *std, mean.len(), s.data[0])?;
            ctx.write_curve("shell_posterior.csv", &curve)?;
            Some(curve.argmax())
        }
        _ => None,
    };
    Ok(Summary::Shell(ShellSummary { posterior_mode, weighted, unweighted }))
}

fn custom(ctx: &mut RunContext, s: &Settings) -> anyhow::Result<Summary> {
    let prob = problem(s)?;
    let initial = sample_initial(ctx, s)?;
    let traj = run_dynamics(ctx, s, &prob, &s.method_spec(), &s.grid()?, &initial)?;
    let last = &traj.last().ensemble;
    let mean_misfit = last.particles().map(|u| prob.misfit(u)).sum::<f64>() / last.size() as f64;
    Ok(Summary::Custom(CustomSummary { steps_taken: traj.steps_taken, final_mean: last.mean(), mean_misfit }))
}
