//! Finite frames generated by an ensemble.
//!
//! The centered particles, scaled either globally by `(J-1)^{-1/2}` or locally
//! by `sqrt(kappa_i(x))`, form a redundant spanning set of `R^p`. Their frame
//! operator is exactly the matching covariance, which is what lets the
//! covariance-based derivatives reproduce linear maps.

use nalgebra::{DMatrix, DVector};

use super::linalg::{numerical_rank, regularized_inverse, regularized_inverse_sqrt, DEFAULT_REL_TOL};
use super::Ensemble;
use crate::error::{check_dim, Error, Result};
use crate::kernels::{weights_unchecked, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionVariant {
    /// `sum <u, phi_i> S^{-1} phi_i`
    InverseOnSynthesis,
    /// `sum <u, S^{-1} phi_i> phi_i`
    InverseOnAnalysis,
    /// `sum <S^{-1} u, phi_i> phi_i`
    InverseOnPoint,
    /// `sum <u, S^{-1/2} phi_i> S^{-1/2} phi_i`
    SquareRoot,
}

impl ReconstructionVariant {
    pub const ALL: [ReconstructionVariant; 4] = [
        Self::InverseOnSynthesis,
        Self::InverseOnAnalysis,
        Self::InverseOnPoint,
        Self::SquareRoot,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameField {
    vectors: Vec<DVector<f64>>,
    anchor: Option<DVector<f64>>,
    dim: usize,
}

impl FrameField {
    pub fn from_vectors(vectors: Vec<DVector<f64>>) -> Result<Self> {
        let dim = vectors.first().map(|v| v.len()).ok_or_else(|| Error::InvalidInput("empty frame".into()))?;
        for v in &vectors {
            check_dim(dim, v.len())?;
        }
        Ok(Self { vectors, anchor: None, dim })
    }

    /// `phi_i = (J-1)^{-1/2} (u_i - mu)`.
    pub fn global(ensemble: &Ensemble) -> Self {
        let mean = DVector::from_vec(ensemble.mean());
        let s = 1.0 / ((ensemble.size() - 1) as f64).sqrt();
        let vectors = ensemble.particles().map(|u| (DVector::from_column_slice(u) - &mean) * s).collect();
        Self { vectors, anchor: None, dim: ensemble.dim() }
    }

    /// `phi_i(x) = sqrt(kappa_i(x)) (u_i - mu^kappa(x))`.
    pub fn local(spec: &KernelSpec, ensemble: &Ensemble, x: &[f64]) -> Result<Self> {
        check_dim(ensemble.dim(), x.len())?;
        let w = weights_unchecked(spec, ensemble, x);
        let mut mu = DVector::zeros(ensemble.dim());
        for (wi, u) in w.weights.iter().zip(ensemble.particles()) {
            mu.axpy(*wi, &DVector::from_column_slice(u), 1.0);
        }
        let vectors = w
            .weights
            .iter()
            .zip(ensemble.particles())
            .map(|(wi, u)| (DVector::from_column_slice(u) - &mu) * wi.sqrt())
            .collect();
        Ok(Self { vectors, anchor: Some(DVector::from_column_slice(x)), dim: ensemble.dim() })
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    pub fn anchor(&self) -> Option<&DVector<f64>> {
        self.anchor.as_ref()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `T(u) = (<u, phi_i>)_i`.
    pub fn analysis(&self, u: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim, u.len())?;
        let u = DVector::from_column_slice(u);
        Ok(DVector::from_iterator(self.len(), self.vectors.iter().map(|phi| phi.dot(&u))))
    }

    /// `T*(alpha) = sum alpha_i phi_i`.
    pub fn synthesis(&self, alpha: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.len(), alpha.len())?;
        let mut out = DVector::zeros(self.dim);
        for (a, phi) in alpha.iter().zip(&self.vectors) {
            out.axpy(*a, phi, 1.0);
        }
        Ok(out)
    }

    /// `S = T* T = sum phi_i phi_i^T`.
    pub fn frame_operator(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.dim, self.dim);
        for phi in &self.vectors {
            for r in 0..self.dim {
                for c in r..self.dim {
                    s[(r, c)] += phi[r] * phi[c];
                }
            }
        }
        for r in 0..self.dim {
            for c in 0..r {
                s[(r, c)] = s[(c, r)];
            }
        }
        s
    }

    /// `G_ij = <phi_i, phi_j>`.
    pub fn grammian(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.vectors[i].dot(&self.vectors[j]))
    }

    pub fn rank(&self) -> usize {
        numerical_rank(&self.frame_operator(), DEFAULT_REL_TOL).unwrap_or(0)
    }

    /// True when the frame vectors fail to span `R^p`; reconstruction is then not guaranteed.
    pub fn rank_deficient(&self) -> bool {
        self.rank() < self.dim
    }

    /// Reconstructs `u` from its frame coefficients using one of the four equivalent formulas.
    pub fn reconstruct(&self, u: &[f64], variant: ReconstructionVariant) -> Result<DVector<f64>> {
        check_dim(self.dim, u.len())?;
        let s = self.frame_operator();
        let uv = DVector::from_column_slice(u);
        let mut out = DVector::zeros(self.dim);
        match variant {
            ReconstructionVariant::InverseOnSynthesis => {
                let s_inv = regularized_inverse(&s, DEFAULT_REL_TOL)?;
                for phi in &self.vectors {
                    out.axpy(uv.dot(phi), &(&s_inv * phi), 1.0);
                }
            }
            ReconstructionVariant::InverseOnAnalysis => {
                let s_inv = regularized_inverse(&s, DEFAULT_REL_TOL)?;
                for phi in &self.vectors {
                    out.axpy(uv.dot(&(&s_inv * phi)), phi, 1.0);
                }
            }
            ReconstructionVariant::InverseOnPoint => {
                let s_inv = regularized_inverse(&s, DEFAULT_REL_TOL)?;
                let su = &s_inv * &uv;
                for phi in &self.vectors {
                    out.axpy(su.dot(phi), phi, 1.0);
                }
            }
            ReconstructionVariant::SquareRoot => {
                let s_half = regularized_inverse_sqrt(&s, DEFAULT_REL_TOL)?;
                for phi in &self.vectors {
                    let psi = &s_half * phi;
                    out.axpy(uv.dot(&psi), &psi, 1.0);
                }
            }
        }
        let rank = numerical_rank(&s, DEFAULT_REL_TOL)?;
        if rank < self.dim {
            return Err(Error::RankDeficient { rank, dim: self.dim, residual: (&out - &uv).norm() });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::FnMap;
    use crate::moments::{global_moments, local_moments};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(p: usize, k: usize) -> DVector<f64> {
        let mut v = DVector::zeros(p);
        v[k] = 1.0;
        v
    }

    #[test]
    fn orthonormal_frame_is_tight() {
        let f = FrameField::from_vectors((0..3).map(|k| unit(3, k)).collect()).unwrap();
        assert_eq!(f.frame_operator(), DMatrix::identity(3, 3));
        assert_eq!(f.grammian(), DMatrix::identity(3, 3));
        let u = [0.5, -1.0, 2.0];
        for v in ReconstructionVariant::ALL {
            assert_eq!(f.reconstruct(&u, v).unwrap().as_slice(), &u);
        }
        assert_eq!(f.analysis(&u).unwrap().as_slice(), &u);
    }

    #[test]
    fn global_frame_operator_of_triangle() {
        let e = Ensemble::from_rows(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap()
            .evaluate(&FnMap::new(2, 1, |u, o| o[0] = u[0]))
            .unwrap();
        // mean (1/3, 1/3); C_uu = 1/2 * sum (u - m)(u - m)^T = [[1/3, -1/6], [-1/6, 1/3]]
        let s = FrameField::global(&e).frame_operator();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, -1.0 / 6.0, -1.0 / 6.0, 1.0 / 3.0]);
        assert!((&s - &expect).amax() < 1e-15);
        assert!((&s - global_moments(&e).unwrap().c_uu).amax() <= 1e-12);
    }

    #[test]
    fn grammian_rank_at_most_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Ensemble::from_flat(2, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let g = FrameField::global(&e).grammian();
        assert!(numerical_rank(&g, 1e-10).unwrap() <= 2);
    }

    #[test]
    fn zero_reconstructs_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = Ensemble::from_flat(3, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let f = FrameField::global(&e);
        for v in ReconstructionVariant::ALL {
            assert_eq!(f.reconstruct(&[0.0; 3], v).unwrap().norm(), 0.0);
        }
    }

    #[test]
    fn degenerate_frame_reports_residual() {
        // all particles on a line in R^2
        let e = Ensemble::from_rows(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let f = FrameField::global(&e);
        assert!(f.rank_deficient());
        match f.reconstruct(&[1.0, -1.0], ReconstructionVariant::InverseOnPoint) {
            Err(Error::RankDeficient { rank: 1, dim: 2, residual }) => assert!((residual - 2f64.sqrt()).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn local_frame_operator_equals_local_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let e = Ensemble::from_flat(3, (0..30).map(|_| rng.random_range(-2.0..2.0)).collect())
                .unwrap()
                .evaluate(&FnMap::new(3, 1, |u, o| o[0] = u[0]))
                .unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let spec = KernelSpec::gaussian(1.0);
            let s = FrameField::local(&spec, &e, &x).unwrap().frame_operator();
            let c = local_moments(&spec, &e, &x).unwrap().c_uu;
            assert!((&s - &c).amax() <= 1e-12);
        }
    }
}
