use std::sync::Arc;

use lwek::dynamics::{integrate, ForwardProblem, Method, MethodSpec, TimeGrid};
use lwek::maps::LinearMap;
use lwek::{Ensemble, KernelSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_prior(seed: u64, j: usize) -> Ensemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ensemble::from_flat(1, (0..j).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
}

fn mean_var(e: &Ensemble) -> (f64, f64) {
    let v = e.as_flat();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn identity_problem(y: f64) -> ForwardProblem {
    ForwardProblem::new(Arc::new(LinearMap::new(DMatrix::identity(1, 1))), vec![y]).unwrap()
}

#[test]
fn eki_stays_in_initial_affine_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = DMatrix::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
    let prob = ForwardProblem::new(Arc::new(LinearMap::new(a)), vec![1.0, -1.0, 0.5, 2.0]).unwrap();
    let init = Ensemble::from_flat(5, (0..15).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let traj = integrate(&prob, &MethodSpec::unweighted(Method::Eki), &TimeGrid::new(2.0, 1e-2).unwrap(), init.clone(), 20).unwrap();
    let base = DVector::from_column_slice(init.particle(0));
    let span = DMatrix::from_fn(5, 2, |r, c| init.particle(c + 1)[r] - base[r]);
    let qr = span.clone().qr();
    let q = qr.q();
    for snap in &traj.snapshots {
        for u in snap.ensemble.particles() {
            let d = DVector::from_column_slice(u) - &base;
            let resid = &d - &q * (q.transpose() * &d);
            assert!(resid.norm() <= 1e-8 * d.norm().max(1.0));
        }
    }
}

#[test]
fn eki_misfit_decreases_for_linear_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
    let prob = ForwardProblem::new(Arc::new(LinearMap::new(a)), vec![0.5, 1.5, -1.0]).unwrap();
    let init = Ensemble::from_flat(3, (0..18).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let traj = integrate(&prob, &MethodSpec::unweighted(Method::Eki), &TimeGrid::new(1.0, 1e-3).unwrap(), init, 1).unwrap();
    let total = |e: &Ensemble| e.particles().map(|u| prob.misfit(u)).sum::<f64>();
    let values: Vec<f64> = traj.snapshots.iter().map(|s| total(&s.ensemble)).collect();
    let tol = 1e-10 * values[0];
    assert!(values.windows(2).all(|w| w[1] <= w[0] + tol));
    assert!(values.last().unwrap() < &values[0]);
}

#[test]
fn square_root_filter_reaches_kalman_posterior() {
    let y = 1.0;
    let prob = identity_problem(y);
    let grid = TimeGrid::new(1.0, 1e-3).unwrap();
    for spec in [MethodSpec::unweighted(Method::EnSrf), MethodSpec::weighted(Method::LwEnSrf, KernelSpec::flat())] {
        let traj = integrate(&prob, &spec, &grid, gaussian_prior(11, 2000), 1000).unwrap();
        let (m, v) = mean_var(&traj.last().ensemble);
        assert!((m - y / 2.0).abs() <= 5e-2, "{:?} mean {m}", spec.method);
        assert!((v - 0.5).abs() <= 5e-2, "{:?} var {v}", spec.method);
    }
}

#[test]
fn stochastic_filter_reaches_kalman_posterior() {
    let y = 1.0;
    let prob = identity_problem(y);
    let spec = MethodSpec::unweighted(Method::StochasticEnkf).with_noise_seed(3);
    let traj = integrate(&prob, &spec, &TimeGrid::new(1.0, 1e-3).unwrap(), gaussian_prior(12, 5000), 1000).unwrap();
    let (m, v) = mean_var(&traj.last().ensemble);
    assert!((m - 0.5).abs() <= 1e-1, "mean {m}");
    assert!((v - 0.5).abs() <= 1e-1, "var {v}");
}

#[test]
fn integration_is_deterministic() {
    let prob = ForwardProblem::new(Arc::new(lwek::maps::HimmelblauMap), vec![11.0, 7.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let init = Ensemble::from_flat(2, (0..40).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let grid = TimeGrid::new(0.2, 1e-3).unwrap();
    for spec in [
        MethodSpec::weighted(Method::LwEki, KernelSpec::gaussian(1.0)),
        MethodSpec::unweighted(Method::StochasticEnkf).with_noise_seed(4),
    ] {
        let a = integrate(&prob, &spec, &grid, init.clone(), 50).unwrap();
        let b = integrate(&prob, &spec, &grid, init.clone(), 50).unwrap();
        assert_eq!(a, b);
    }
}
