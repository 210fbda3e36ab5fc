//! Ensemble storage and empirical moments.
//!
//! Global moments use the `1/(J-1)` normalization. Locally weighted moments
//! use the kernel weights directly (they already sum to one), so the flat
//! kernel reproduces the global covariances scaled by `(J-1)/J`. Any product
//! `C_Au C_uu^{-1}` is unaffected by the difference.

mod ensemble;
pub mod frame;
mod linalg;
pub mod snapshot;

use nalgebra::{DMatrix, DVector};

pub use ensemble::Ensemble;
pub use frame::{FrameField, ReconstructionVariant};
pub use linalg::{numerical_rank, regularized_inverse, regularized_inverse_sqrt, DEFAULT_REL_TOL};

use crate::error::{check_dim, Result};
use crate::kernels::{weights_unchecked, KernelSpec, WeightVector};

/// Ensemble mean, feature mean, and the `1/(J-1)` covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMoments {
    pub mean: DVector<f64>,
    pub feature_mean: DVector<f64>,
    pub c_uu: DMatrix<f64>,
    pub c_ua: DMatrix<f64>,
}

impl GlobalMoments {
    /// Statistical linearization `C_Au C_uu^{-1}`.
    pub fn linearization(&self, rel_tol: f64) -> Result<DMatrix<f64>> {
        Ok(self.c_ua.transpose() * regularized_inverse(&self.c_uu, rel_tol)?)
    }
}

pub fn global_moments(ensemble: &Ensemble) -> Result<GlobalMoments> {
    let (d, feats) = ensemble.features_flat()?;
    let n = ensemble.size();
    let w = vec![1.0 / n as f64; n];
    let (mean, feature_mean, mut c_uu, mut c_ua) = weighted_moments(ensemble.as_flat(), ensemble.dim(), feats, d, &w);
    // kappa-weighted sums carry 1/J; rescale to 1/(J-1)
    let bessel = n as f64 / (n as f64 - 1.0);
    c_uu *= bessel;
    c_ua *= bessel;
    Ok(GlobalMoments { mean, feature_mean, c_uu, c_ua })
}

/// Locally weighted moments anchored at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMoments {
    pub anchor: DVector<f64>,
    pub mu: DVector<f64>,
    pub mu_a: DVector<f64>,
    pub c_uu: DMatrix<f64>,
    pub c_ua: DMatrix<f64>,
    pub weights: WeightVector,
}

impl LocalMoments {
    pub fn underflow(&self) -> bool {
        self.weights.underflow
    }

    /// `C_Au = C_uA^T`.
    pub fn c_au(&self) -> DMatrix<f64> {
        self.c_ua.transpose()
    }

    /// `|| sum_j kappa_j (u_j - mu) ||`, which vanishes identically.
    pub fn fundamental_residual(&self, ensemble: &Ensemble) -> f64 {
        let mut acc = DVector::<f64>::zeros(ensemble.dim());
        for (w, u) in self.weights.weights.iter().zip(ensemble.particles()) {
            for k in 0..u.len() {
                acc[k] += w * (u[k] - self.mu[k]);
            }
        }
        acc.norm()
    }
}

pub fn local_moments(spec: &KernelSpec, ensemble: &Ensemble, x: &[f64]) -> Result<LocalMoments> {
    check_dim(ensemble.dim(), x.len())?;
    let (d, feats) = ensemble.features_flat()?;
    let weights = weights_unchecked(spec, ensemble, x);
    let (mu, mu_a, c_uu, c_ua) = weighted_moments(ensemble.as_flat(), ensemble.dim(), feats, d, &weights.weights);
    Ok(LocalMoments { anchor: DVector::from_column_slice(x), mu, mu_a, c_uu, c_ua, weights })
}

/// Weighted cross-covariance `C_uA` at `x` together with `mu_A` and the weights.
///
/// Skips the `p x p` block, which the particle dynamics never need.
pub fn local_cross_covariance(
    spec: &KernelSpec,
    ensemble: &Ensemble,
    x: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>, WeightVector)> {
    check_dim(ensemble.dim(), x.len())?;
    let (d, feats) = ensemble.features_flat()?;
    let weights = weights_unchecked(spec, ensemble, x);
    let (c_ua, mu_a) = weighted_cross(ensemble.as_flat(), ensemble.dim(), feats, d, &weights.weights);
    Ok((c_ua, mu_a, weights))
}

/// Weighted means accumulated as offsets from the first particle, so that a
/// collapsed ensemble reproduces its common point exactly.
fn weighted_means(particles: &[f64], p: usize, feats: &[f64], d: usize, w: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let mut mu = DVector::zeros(p);
    let mut mu_a = DVector::zeros(d);
    for (j, &wj) in w.iter().enumerate() {
        if wj == 0.0 {
            continue;
        }
        for k in 0..p {
            mu[k] += wj * (particles[j * p + k] - particles[k]);
        }
        for k in 0..d {
            mu_a[k] += wj * (feats[j * d + k] - feats[k]);
        }
    }
    for k in 0..p {
        mu[k] += particles[k];
    }
    for k in 0..d {
        mu_a[k] += feats[k];
    }
    (mu, mu_a)
}

pub(crate) fn weighted_cross(
    particles: &[f64],
    p: usize,
    feats: &[f64],
    d: usize,
    w: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let (mu, mu_a) = weighted_means(particles, p, feats, d, w);
    let mut c_ua = DMatrix::zeros(p, d);
    for (j, &wj) in w.iter().enumerate() {
        if wj == 0.0 {
            continue;
        }
        for c in 0..d {
            let da = wj * (feats[j * d + c] - mu_a[c]);
            for r in 0..p {
                c_ua[(r, c)] += da * (particles[j * p + r] - mu[r]);
            }
        }
    }
    (c_ua, mu_a)
}

/// Weighted means and covariances over row-major buffers, summed in particle order.
pub(crate) fn weighted_moments(
    particles: &[f64],
    p: usize,
    feats: &[f64],
    d: usize,
    w: &[f64],
) -> (DVector<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (mu, mu_a) = weighted_means(particles, p, feats, d, w);
    let mut c_uu = DMatrix::zeros(p, p);
    let mut c_ua = DMatrix::zeros(p, d);
    let mut du = vec![0.0; p];
    let mut da = vec![0.0; d];
    for (j, &wj) in w.iter().enumerate() {
        if wj == 0.0 {
            continue;
        }
        let u = &particles[j * p..(j + 1) * p];
        let a = &feats[j * d..(j + 1) * d];
        for k in 0..p {
            du[k] = u[k] - mu[k];
        }
        for k in 0..d {
            da[k] = a[k] - mu_a[k];
        }
        for r in 0..p {
            let s = wj * du[r];
            for c in r..p {
                c_uu[(r, c)] += s * du[c];
            }
            for c in 0..d {
                c_ua[(r, c)] += s * da[c];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            c_uu[(r, c)] = c_uu[(c, r)];
        }
    }
    (mu, mu_a, c_uu, c_ua)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{FnMap, LinearMap};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ensemble(rng: &mut ChaCha8Rng, j: usize, p: usize) -> Ensemble {
        Ensemble::from_flat(p, (0..j * p).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn needs_two_particles() {
        assert!(Ensemble::from_rows(vec![vec![1.0]]).is_err());
    }

    #[test]
    fn features_required() {
        let e = Ensemble::from_rows(vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(global_moments(&e).is_err());
    }

    #[test]
    fn identical_particles_have_zero_spread() {
        let e = Ensemble::from_rows(vec![vec![1.5, -2.0]; 5])
            .unwrap()
            .evaluate(&FnMap::new(2, 1, |u, out| out[0] = u[0] * u[1]))
            .unwrap();
        let g = global_moments(&e).unwrap();
        assert_eq!(g.mean.as_slice(), &[1.5, -2.0]);
        assert_eq!(g.c_uu, DMatrix::zeros(2, 2));
        for spec in [KernelSpec::gaussian(0.3), KernelSpec::flat()] {
            let l = local_moments(&spec, &e, &[4.0, 4.0]).unwrap();
            assert_eq!(l.mu.as_slice(), &[1.5, -2.0]);
            assert_eq!(l.c_uu, DMatrix::zeros(2, 2));
        }
    }

    #[test]
    fn two_point_covariance() {
        let e = Ensemble::from_rows(vec![vec![-1.0], vec![1.0]])
            .unwrap()
            .evaluate(&LinearMap::new(DMatrix::from_element(1, 1, 3.0)))
            .unwrap();
        let g = global_moments(&e).unwrap();
        assert_eq!(g.mean[0], 0.0);
        assert_eq!(g.c_uu[(0, 0)], 2.0);
        assert_eq!(g.c_ua[(0, 0)], 6.0);
    }

    #[test]
    fn linear_features_give_cuu_mt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let e = random_ensemble(&mut rng, 9, 2).evaluate(&LinearMap::new(m.clone())).unwrap();
        let g = global_moments(&e).unwrap();
        assert!((&g.c_ua - &g.c_uu * m.transpose()).amax() < 1e-12);
        for spec in [KernelSpec::gaussian(0.7), KernelSpec::flat()] {
            let l = local_moments(&spec, &e, &[0.2, -0.4]).unwrap();
            let expect = &l.c_uu * m.transpose();
            assert!((&l.c_ua - &expect).amax() <= 1e-10 * expect.amax().max(1e-300));
        }
    }

    #[test]
    fn flat_kernel_matches_global_up_to_bessel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = random_ensemble(&mut rng, 12, 3).evaluate(&FnMap::new(3, 2, |u, o| {
            o[0] = u[0].sin() + u[1];
            o[1] = u[2] * u[2];
        }))
        .unwrap();
        let g = global_moments(&e).unwrap();
        let l = local_moments(&KernelSpec::flat(), &e, &[9.0, 9.0, 9.0]).unwrap();
        let f = 11.0 / 12.0;
        assert!((&l.mu - &g.mean).amax() < 1e-15);
        assert!((&l.c_uu - &g.c_uu * f).amax() < 1e-14);
        assert!((&l.c_ua - &g.c_ua * f).amax() < 1e-14);
    }

    #[test]
    fn gaussian_two_point_mean() {
        let e = Ensemble::from_rows(vec![vec![0.0], vec![1.0]])
            .unwrap()
            .evaluate(&LinearMap::new(DMatrix::identity(1, 1)))
            .unwrap();
        let l = local_moments(&KernelSpec::gaussian(1.0), &e, &[0.0]).unwrap();
        let h = (-0.5f64).exp();
        assert!((l.mu[0] - h / (1.0 + h)).abs() < 1e-15);
        assert!((l.mu[0] - 0.37754).abs() < 1e-5);
    }

    #[test]
    fn local_covariance_is_psd_and_fundamental_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let e = random_ensemble(&mut rng, 15, 3).evaluate(&FnMap::new(3, 1, |u, o| o[0] = u.iter().sum())).unwrap();
            let scale = 1.0 + e.particles().map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
            for _ in 0..100 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                let l = local_moments(&KernelSpec::gaussian(0.8), &e, &x).unwrap();
                assert!(l.fundamental_residual(&e) <= 1e-10 * scale);
                assert_eq!(l.c_uu, l.c_uu.transpose());
                let ev = l.c_uu.clone().symmetric_eigenvalues();
                let tr = l.c_uu.trace();
                assert!(ev.iter().all(|&v| v >= -1e-10 * tr));
            }
        }
    }
}
