//! Radial kernels and the weight field they induce on an ensemble.
//!
//! A kernel `k(u, v) = K(|u - v|)` turns an ensemble into a field of
//! probability vectors on the particles: for every anchor `x` the weights
//! `k(x, u_i) / sum_j k(x, u_j)` lie on the simplex. The Gaussian profile is
//! stored without its normalizing constant since only ratios are used.

use crate::error::{check_dim, Error, Result};
use crate::moments::Ensemble;

/// Weight-denominator threshold below which the nearest-particle fallback kicks in.
pub const UNDERFLOW_GUARD: f64 = 1e-290;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Flat,
    Gaussian,
    TruncatedGaussian,
}

/// A radial kernel with bandwidth `r`.
///
/// Gaussian profile: `K(s) = exp(-s^2 / (2 r^2))`. The truncated variant is
/// zero beyond `truncation_radius` (default `3 r`). The flat kernel ignores `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
    pub truncation_radius: Option<f64>,
}

impl KernelSpec {
    pub fn flat() -> Self {
        Self { kind: KernelKind::Flat, bandwidth: 1.0, truncation_radius: None }
    }

    pub fn gaussian(bandwidth: f64) -> Self {
        Self { kind: KernelKind::Gaussian, bandwidth, truncation_radius: None }
    }

    pub fn truncated_gaussian(bandwidth: f64, truncation_radius: Option<f64>) -> Self {
        Self { kind: KernelKind::TruncatedGaussian, bandwidth, truncation_radius }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != KernelKind::Flat && !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kernel bandwidth must be positive and finite, got {}",
                self.bandwidth
            )));
        }
        if let Some(t) = self.truncation_radius {
            if !(t > 0.0) {
                return Err(Error::InvalidInput(format!("truncation radius must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn cutoff(&self) -> f64 {
        self.truncation_radius.unwrap_or(3.0 * self.bandwidth)
    }

    /// Radial profile `K(s)` with `s` the squared distance.
    #[inline]
    pub fn profile_sq(&self, dist_sq: f64) -> f64 {
        match self.kind {
            KernelKind::Flat => 1.0,
            KernelKind::Gaussian => (-dist_sq / (2.0 * self.bandwidth * self.bandwidth)).exp(),
            KernelKind::TruncatedGaussian => {
                let c = self.cutoff();
                if dist_sq <= c * c {
                    (-dist_sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Radial profile `K(s)` at distance `s`.
    pub fn profile(&self, dist: f64) -> f64 {
        self.profile_sq(dist * dist)
    }
}

#[inline]
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `k(u, v)`.
pub fn kernel_eval(spec: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    check_dim(u.len(), v.len())?;
    Ok(spec.profile_sq(dist_sq(u, v)))
}

/// Normalized kernel weights of every particle as seen from an anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub anchor: Vec<f64>,
    /// Set when the kernel sum underflowed and all mass went to the nearest particle.
    pub underflow: bool,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `1 / sum(w_i^2)`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// `kappa_i(x) = k(x, u_i) / sum_j k(x, u_j)`.
pub fn compute_weights(spec: &KernelSpec, ensemble: &Ensemble, x: &[f64]) -> Result<WeightVector> {
    check_dim(ensemble.dim(), x.len())?;
    Ok(weights_unchecked(spec, ensemble, x))
}

pub(crate) fn weights_unchecked(spec: &KernelSpec, ensemble: &Ensemble, x: &[f64]) -> WeightVector {
    let n = ensemble.size();
    if spec.kind == KernelKind::Flat {
        return WeightVector { weights: vec![1.0 / n as f64; n], anchor: x.to_vec(), underflow: false };
    }
    let mut weights: Vec<f64> = ensemble.particles().map(|u| spec.profile_sq(dist_sq(x, u))).collect();
    let total: f64 = weights.iter().sum();
    if total < UNDERFLOW_GUARD {
        let mut nearest = 0;
        let mut best = f64::INFINITY;
        for (i, u) in ensemble.particles().enumerate() {
            let d = dist_sq(x, u);
            if d < best {
                best = d;
                nearest = i;
            }
        }
        weights.iter_mut().for_each(|w| *w = 0.0);
        weights[nearest] = 1.0;
        return WeightVector { weights, anchor: x.to_vec(), underflow: true };
    }
    weights.iter_mut().for_each(|w| *w /= total);
    WeightVector { weights, anchor: x.to_vec(), underflow: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ens(rows: &[&[f64]]) -> Ensemble {
        Ensemble::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn flat_kernel_is_one() {
        let k = KernelSpec::flat();
        assert_eq!(kernel_eval(&k, &[1.0, 2.0], &[-5.0, 7.0]).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_values() {
        let k = KernelSpec::gaussian(1.0);
        assert_eq!(kernel_eval(&k, &[0.3], &[0.3]).unwrap(), 1.0);
        let v = kernel_eval(&k, &[0.0, 0.0], &[0.6, 0.8]).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn truncated_gaussian_cuts_off() {
        let k = KernelSpec::truncated_gaussian(1.0, None);
        assert!(kernel_eval(&k, &[0.0], &[2.9]).unwrap() > 0.0);
        assert_eq!(kernel_eval(&k, &[0.0], &[3.1]).unwrap(), 0.0);
        let k = KernelSpec::truncated_gaussian(1.0, Some(1.0));
        assert_eq!(kernel_eval(&k, &[0.0], &[1.5]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let k = KernelSpec::gaussian(1.0);
        assert!(matches!(kernel_eval(&k, &[0.0], &[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn flat_weights_are_uniform() {
        let e = ens(&[&[0.0], &[1.0], &[5.0], &[-3.0]]);
        let w = compute_weights(&KernelSpec::flat(), &e, &[100.0]).unwrap();
        assert_eq!(w.weights, vec![0.25; 4]);
    }

    #[test]
    fn symmetric_pair_gets_half() {
        let e = ens(&[&[-1.0], &[1.0]]);
        let w = compute_weights(&KernelSpec::gaussian(1.0), &e, &[0.0]).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn distant_particle_is_negligible() {
        let e = ens(&[&[0.0], &[10.0]]);
        let w = compute_weights(&KernelSpec::gaussian(1.0), &e, &[0.0]).unwrap();
        let expected = 1.0 / (1.0 + (-50.0f64).exp());
        assert!((w.weights[0] - expected).abs() < 1e-15);
        assert!(w.weights[0] >= 1.0 - 1e-21);
        assert!(!w.underflow);
    }

    #[test]
    fn underflow_falls_back_to_nearest() {
        let e = ens(&[&[100.0], &[90.0], &[90.0]]);
        let w = compute_weights(&KernelSpec::gaussian(0.1), &e, &[0.0]).unwrap();
        assert!(w.underflow);
        assert_eq!(w.weights, vec![0.0, 1.0, 0.0]);

        let e = ens(&[&[2.0], &[5.0]]);
        let w = compute_weights(&KernelSpec::truncated_gaussian(0.1, None), &e, &[0.0]).unwrap();
        assert!(w.underflow);
        assert_eq!(w.weights, vec![1.0, 0.0]);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64)> {
        (1usize..4, 2usize..12).prop_flat_map(|(p, j)| {
            (
                prop::collection::vec(prop::collection::vec(-3.0..3.0f64, p), j),
                prop::collection::vec(-3.0..3.0f64, p),
                prop::collection::vec(-2.0..2.0f64, p),
                0.2..5.0f64,
            )
        })
    }

    proptest! {
        #[test]
        fn weights_lie_on_simplex((rows, x, _c, r) in arb_case()) {
            let e = Ensemble::from_rows(rows).unwrap();
            for spec in [KernelSpec::gaussian(r), KernelSpec::truncated_gaussian(r, None), KernelSpec::flat()] {
                let w = compute_weights(&spec, &e, &x).unwrap();
                prop_assert!(w.weights.iter().all(|&v| v >= 0.0));
                prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn weights_are_translation_invariant((rows, x, c, r) in arb_case()) {
            let spec = KernelSpec::gaussian(r);
            let shifted: Vec<Vec<f64>> = rows.iter().map(|u| u.iter().zip(&c).map(|(a, b)| a + b).collect()).collect();
            let xs: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a + b).collect();
            let w0 = compute_weights(&spec, &Ensemble::from_rows(rows).unwrap(), &x).unwrap();
            let w1 = compute_weights(&spec, &Ensemble::from_rows(shifted).unwrap(), &xs).unwrap();
            for (a, b) in w0.weights.iter().zip(&w1.weights) {
                prop_assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
            }
        }
    }
}
