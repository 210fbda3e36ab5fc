//! Ensemble-based derivatives and local function models.
//!
//! `D_kappa A(x) = C_Au(x) C_uu(x)^{-1}` is the slope of the kernel-weighted
//! linear regression of the cached features on the particles. The second
//! derivative differentiates that slope field once more through the same
//! regression, which costs one `D_kappa A` per particle (`O(J^2)` overall).

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;
use crate::maps::ForwardMap;
use crate::moments::{local_moments, numerical_rank, regularized_inverse, Ensemble, LocalMoments, DEFAULT_REL_TOL};

/// `D_kappa A(x)` as a `d x p` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalJacobian {
    pub anchor: DVector<f64>,
    pub matrix: DMatrix<f64>,
    /// Local covariance had rank below `p`; the jacobian is restricted to the local span.
    pub rank_deficient: bool,
    pub underflow: bool,
}

fn jacobian_from_moments(m: &LocalMoments) -> Result<LocalJacobian> {
    let p = m.c_uu.nrows();
    let inv = regularized_inverse(&m.c_uu, DEFAULT_REL_TOL)?;
    Ok(LocalJacobian {
        anchor: m.anchor.clone(),
        matrix: m.c_au() * inv,
        rank_deficient: numerical_rank(&m.c_uu, DEFAULT_REL_TOL)? < p,
        underflow: m.underflow(),
    })
}

pub fn d_kappa(spec: &KernelSpec, ensemble: &Ensemble, x: &[f64]) -> Result<LocalJacobian> {
    jacobian_from_moments(&local_moments(spec, ensemble, x)?)
}

/// `D_kappa A(x)` computed with `A(mu^kappa(x))` in place of `mu_A^kappa(x)`.
///
/// Agrees with [`d_kappa`] because the kappa-weighted centered particles sum to zero.
pub fn d_kappa_anchored_form(
    spec: &KernelSpec,
    ensemble: &Ensemble,
    map: &dyn ForwardMap,
    x: &[f64],
) -> Result<LocalJacobian> {
    let m = local_moments(spec, ensemble, x)?;
    let (d, _) = ensemble.features_flat()?;
    check_dim(map.output_dim(), d)?;
    let a_mu = map.eval(m.mu.as_slice());
    let p = ensemble.dim();
    let mut c_au = DMatrix::<f64>::zeros(d, p);
    for (i, &w) in m.weights.weights.iter().enumerate() {
        let u = ensemble.particle(i);
        let a = ensemble.feature(i)?;
        for r in 0..d {
            let da = w * (a[r] - a_mu[r]);
            for c in 0..p {
                c_au[(r, c)] += da * (u[c] - m.mu[c]);
            }
        }
    }
    let inv = regularized_inverse(&m.c_uu, DEFAULT_REL_TOL)?;
    Ok(LocalJacobian {
        anchor: m.anchor.clone(),
        matrix: c_au * inv,
        rank_deficient: numerical_rank(&m.c_uu, DEFAULT_REL_TOL)? < p,
        underflow: m.underflow(),
    })
}

/// Which of the three equivalent-in-the-limit second derivative forms to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SecondOrderVariant {
    /// Average of `M1` and `M2`; symmetric in `(f, g)`.
    #[default]
    M0,
    /// `sum_ij k_i k_j <phi_i, C^-1 f> <phi_j, C^-1 g> (D(u_i) - D(mu))[phi_j]`
    M1,
    /// `sum_ij k_i k_j <phi_i, C^-1 f> <phi_j, C^-1 g> (D(u_j) - D(mu))[phi_i]`
    M2,
}

/// `D^2_kappa A(x)` stored as `d` slices of `p x p` matrices: `slices[k][(a, b)]`
/// is output component `k` applied to basis directions `e_a`, `e_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBilinear {
    pub anchor: DVector<f64>,
    pub slices: Vec<DMatrix<f64>>,
    pub variant: SecondOrderVariant,
}

impl LocalBilinear {
    pub fn apply(&self, f: &[f64], g: &[f64]) -> DVector<f64> {
        let f = DVector::from_column_slice(f);
        let g = DVector::from_column_slice(g);
        DVector::from_iterator(self.slices.len(), self.slices.iter().map(|s| f.dot(&(s * &g))))
    }

    /// Largest entry across all slices.
    pub fn amax(&self) -> f64 {
        self.slices.iter().map(|s| s.amax()).fold(0.0, f64::max)
    }

    /// Largest entrywise difference to another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &LocalBilinear) -> f64 {
        self.slices.iter().zip(&other.slices).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max)
    }
}

pub fn d2_kappa(
    spec: &KernelSpec,
    ensemble: &Ensemble,
    x: &[f64],
    variant: SecondOrderVariant,
) -> Result<LocalBilinear> {
    let m = local_moments(spec, ensemble, x)?;
    let (d, _) = ensemble.features_flat()?;
    let p = ensemble.dim();
    let n = ensemble.size();
    let c_inv = regularized_inverse(&m.c_uu, DEFAULT_REL_TOL)?;
    let d_mu = d_kappa(spec, ensemble, m.mu.as_slice())?.matrix;

    // Jacobians anchored at every particle; collected in index order.
    let deltas: Vec<DMatrix<f64>> = (0..n)
        .into_par_iter()
        .map(|i| d_kappa(spec, ensemble, ensemble.particle(i)).map(|j| j.matrix - &d_mu))
        .collect::<Result<_>>()?;

    let kappa = &m.weights.weights;
    let phi: Vec<DVector<f64>> = ensemble.particles().map(|u| DVector::from_column_slice(u) - &m.mu).collect();
    let a: Vec<DVector<f64>> = phi.iter().map(|v| &c_inv * v).collect();

    let double_sum = |swap: bool| -> Vec<DMatrix<f64>> {
        let mut slices = vec![DMatrix::<f64>::zeros(p, p); d];
        for i in 0..n {
            if kappa[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let w = kappa[i] * kappa[j];
                if w == 0.0 {
                    continue;
                }
                // M1 uses D(u_i)[phi_j]; M2 uses D(u_j)[phi_i]
                let v = if swap { &deltas[j] * &phi[i] } else { &deltas[i] * &phi[j] };
                let outer = &a[i] * a[j].transpose();
                for k in 0..d {
                    slices[k] += &outer * (w * v[k]);
                }
            }
        }
        slices
    };

    let slices = match variant {
        SecondOrderVariant::M1 => double_sum(false),
        SecondOrderVariant::M2 => double_sum(true),
        SecondOrderVariant::M0 => {
            let m1 = double_sum(false);
            let m2 = double_sum(true);
            m1.into_iter()
                .zip(m2)
                .map(|(a, b)| {
                    let avg = (a + b) * 0.5;
                    let mut s = avg.clone();
                    for r in 0..p {
                        for c in r + 1..p {
                            let v = 0.5 * (avg[(r, c)] + avg[(c, r)]);
                            s[(r, c)] = v;
                            s[(c, r)] = v;
                        }
                    }
                    s
                })
                .collect()
        }
    };
    Ok(LocalBilinear { anchor: m.anchor.clone(), slices, variant })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    /// Offset `mu_A^kappa(x)`: the weighted least-squares affine fit.
    LeastSquares,
    /// Offset `A(mu^kappa(x))`: interpolates `A` at the weighted mean.
    Anchored,
}

/// `L(xi) = M (xi - center) + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub center: DVector<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn eval(&self, xi: &[f64]) -> DVector<f64> {
        &self.offset + &self.matrix * (DVector::from_column_slice(xi) - &self.center)
    }
}

/// A first- or second-order local approximation of the forward map around `x`.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub anchor: DVector<f64>,
    pub order: u8,
    pub variant: ModelVariant,
    /// `mu^kappa(x)`, the expansion point.
    pub center: DVector<f64>,
    /// `mu_A^kappa(x)`.
    pub feature_mean: DVector<f64>,
    pub jacobian: LocalJacobian,
    pub bilinear: Option<LocalBilinear>,
    anchored_value: OnceLock<DVector<f64>>,
}

impl LocalModel {
    /// `A(mu^kappa(x))`, evaluated once and cached.
    pub fn anchored_value(&self, map: &dyn ForwardMap) -> &DVector<f64> {
        self.anchored_value.get_or_init(|| map.eval(self.center.as_slice()))
    }

    /// Same model with the other offset convention, reusing the cached evaluation.
    pub fn with_variant(&self, variant: ModelVariant, map: &dyn ForwardMap) -> LocalModel {
        if variant == ModelVariant::Anchored {
            self.anchored_value(map);
        }
        LocalModel { variant, ..self.clone() }
    }

    pub fn offset(&self) -> &DVector<f64> {
        match self.variant {
            ModelVariant::LeastSquares => &self.feature_mean,
            ModelVariant::Anchored => {
                self.anchored_value.get().expect("anchored model built without forward evaluation")
            }
        }
    }

    /// The affine part of the model.
    pub fn affine(&self) -> AffineMap {
        AffineMap { matrix: self.jacobian.matrix.clone(), center: self.center.clone(), offset: self.offset().clone() }
    }
}

pub fn build_model(
    spec: &KernelSpec,
    ensemble: &Ensemble,
    map: &dyn ForwardMap,
    x: &[f64],
    order: u8,
    variant: ModelVariant,
) -> Result<LocalModel> {
    if order != 1 && order != 2 {
        return Err(Error::InvalidInput(format!("model order must be 1 or 2, got {order}")));
    }
    let m = local_moments(spec, ensemble, x)?;
    let jacobian = jacobian_from_moments(&m)?;
    let bilinear = if order == 2 { Some(d2_kappa(spec, ensemble, x, SecondOrderVariant::M0)?) } else { None };
    let model = LocalModel {
        anchor: m.anchor.clone(),
        order,
        variant,
        center: m.mu.clone(),
        feature_mean: m.mu_a.clone(),
        jacobian,
        bilinear,
        anchored_value: OnceLock::new(),
    };
    if variant == ModelVariant::Anchored {
        model.anchored_value(map);
    }
    Ok(model)
}

pub fn model_eval(model: &LocalModel, xi: &[f64]) -> Result<DVector<f64>> {
    check_dim(model.center.len(), xi.len())?;
    let h = DVector::from_column_slice(xi) - &model.center;
    let mut out = model.offset() + &model.jacobian.matrix * &h;
    if let Some(b) = &model.bilinear {
        out += b.apply(h.as_slice(), h.as_slice()) * 0.5;
    }
    Ok(out)
}

/// `V(L) = 1/2 sum_i kappa_i(x) |A(u_i) - L(u_i)|^2`.
pub fn weighted_lsq_cost(spec: &KernelSpec, ensemble: &Ensemble, x: &[f64], candidate: &AffineMap) -> Result<f64> {
    check_dim(ensemble.dim(), x.len())?;
    check_dim(ensemble.dim(), candidate.center.len())?;
    let (d, _) = ensemble.features_flat()?;
    check_dim(d, candidate.offset.len())?;
    let w = crate::kernels::compute_weights(spec, ensemble, x)?;
    let mut total = 0.0;
    for (i, &wi) in w.weights.iter().enumerate() {
        let pred = candidate.eval(ensemble.particle(i));
        let a = ensemble.feature(i)?;
        let r2: f64 = (0..d).map(|k| (a[k] - pred[k]).powi(2)).sum();
        total += wi * r2;
    }
    Ok(0.5 * total)
}
