//! Reference computations used to check the ensemble machinery.
//!
//! Mean-field moments replace the ensemble by a quadrature rule for a density
//! on a 1d interval or 2d box. The remaining helpers are finite differences,
//! kernel density estimates and closed-form posterior densities for the
//! experiments.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{dist_sq, KernelKind, KernelSpec, WeightVector};
use crate::local_approx::{LocalBilinear, LocalJacobian, SecondOrderVariant};
use crate::maps::ForwardMap;
use crate::moments::{numerical_rank, regularized_inverse, weighted_moments, LocalMoments, DEFAULT_REL_TOL};

pub const DEFAULT_NODES_1D: usize = 2001;
pub const DEFAULT_NODES_2D: usize = 301;

/// Minimum ratio of kernel bandwidth to grid spacing.
pub const RESOLUTION_FACTOR: f64 = 5.0;

/// Local maxima lower than this fraction of the global maximum are ignored by [`DensityCurve::modes`].
pub const MODE_HEIGHT_THRESHOLD: f64 = 0.05;

/// Tensor-product trapezoidal rule for a normalized density on an interval or a box.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureMeasure {
    dim: usize,
    /// Row-major node coordinates.
    nodes: Vec<f64>,
    /// Trapezoid weight times density, summing to one.
    weights: Vec<f64>,
    spacing: f64,
    bounds: Vec<(f64, f64)>,
}

fn trapezoid_axis(lo: f64, hi: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if n < 2 || !(lo < hi) {
        return Err(Error::InvalidInput(format!("need n >= 2 nodes on a proper interval, got n={n} on [{lo}, {hi}]")));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let x = (0..n).map(|i| if i == n - 1 { hi } else { lo + i as f64 * h }).collect();
    let w = (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect();
    Ok((x, w, h))
}

impl QuadratureMeasure {
    pub fn interval(lo: f64, hi: f64, n: usize, density: impl Fn(f64) -> f64) -> Result<Self> {
        let (x, tw, h) = trapezoid_axis(lo, hi, n)?;
        let raw: Vec<f64> = x.iter().zip(&tw).map(|(&xi, &wi)| wi * density(xi)).collect();
        Self::normalized(1, x, raw, h, vec![(lo, hi)])
    }

    pub fn uniform_interval(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::interval(lo, hi, n, |_| 1.0)
    }

    pub fn rectangle(bx: [(f64, f64); 2], n: usize, density: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (x0, w0, h0) = trapezoid_axis(bx[0].0, bx[0].1, n)?;
        let (x1, w1, h1) = trapezoid_axis(bx[1].0, bx[1].1, n)?;
        let mut nodes = Vec::with_capacity(2 * n * n);
        let mut raw = Vec::with_capacity(n * n);
        for (a, wa) in x0.iter().zip(&w0) {
            for (b, wb) in x1.iter().zip(&w1) {
                nodes.push(*a);
                nodes.push(*b);
                raw.push(wa * wb * density(*a, *b));
            }
        }
        Self::normalized(2, nodes, raw, h0.max(h1), bx.to_vec())
    }

    pub fn uniform_rectangle(bx: [(f64, f64); 2], n: usize) -> Result<Self> {
        Self::rectangle(bx, n, |_, _| 1.0)
    }

    fn normalized(dim: usize, nodes: Vec<f64>, raw: Vec<f64>, spacing: f64, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("density must be finite and nonnegative".into()));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("density has zero mass on the grid".into()));
        }
        let weights = raw.into_iter().map(|w| w / total).collect();
        Ok(Self { dim, nodes, weights, spacing, bounds })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn check_resolution(&self, kernel: &KernelSpec) -> Result<()> {
        if kernel.kind != KernelKind::Flat && kernel.bandwidth < RESOLUTION_FACTOR * self.spacing {
            return Err(Error::Resolution { bandwidth: kernel.bandwidth, spacing: self.spacing });
        }
        Ok(())
    }
}

/// A quadrature measure with the forward map evaluated at every node.
pub struct MeanField {
    measure: QuadratureMeasure,
    features: Vec<f64>,
    feature_dim: usize,
}

impl MeanField {
    pub fn new(measure: QuadratureMeasure, map: &dyn ForwardMap) -> Result<Self> {
        check_dim(map.input_dim(), measure.dim)?;
        let d = map.output_dim();
        let mut features = vec![0.0; measure.len() * d];
        for (k, out) in features.chunks_exact_mut(d).enumerate() {
            map.eval_into(measure.node(k), out);
        }
        Ok(Self { measure, features, feature_dim: d })
    }

    pub fn measure(&self) -> &QuadratureMeasure {
        &self.measure
    }

    fn local_weights(&self, kernel: &KernelSpec, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.measure.dim, x.len())?;
        self.measure.check_resolution(kernel)?;
        let mut w: Vec<f64> = (0..self.measure.len())
            .map(|k| self.measure.weights[k] * kernel.profile_sq(dist_sq(x, self.measure.node(k))))
            .collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput(format!("kernel at {x:?} has no mass on the quadrature grid")));
        }
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }

    pub fn local_moments(&self, kernel: &KernelSpec, x: &[f64]) -> Result<LocalMoments> {
        let w = self.local_weights(kernel, x)?;
        let (mu, mu_a, c_uu, c_ua) = weighted_moments(&self.measure.nodes, self.measure.dim, &self.features, self.feature_dim, &w);
        Ok(LocalMoments {
            anchor: DVector::from_column_slice(x),
            mu,
            mu_a,
            c_uu,
            c_ua,
            weights: WeightVector { weights: w, anchor: x.to_vec(), underflow: false },
        })
    }

    pub fn d_kappa(&self, kernel: &KernelSpec, x: &[f64]) -> Result<LocalJacobian> {
        let m = self.local_moments(kernel, x)?;
        let inv = regularized_inverse(&m.c_uu, DEFAULT_REL_TOL)?;
        Ok(LocalJacobian {
            anchor: m.anchor.clone(),
            matrix: m.c_au() * inv,
            rank_deficient: numerical_rank(&m.c_uu, DEFAULT_REL_TOL)? < self.measure.dim,
            underflow: false,
        })
    }

    /// Mean-field second derivative, obtained by differentiating `z -> D_kappa A(z)[f]`
    /// once more at `x` and symmetrizing. Nodes whose weight at `x` is below
    /// `1e-16` of the largest are dropped from the outer integral.
    pub fn d2_kappa(&self, kernel: &KernelSpec, x: &[f64]) -> Result<LocalBilinear> {
        let p = self.measure.dim;
        let d = self.feature_dim;
        let w = self.local_weights(kernel, x)?;
        let wmax = w.iter().cloned().fold(0.0, f64::max);
        let active: Vec<usize> = (0..w.len()).filter(|&k| w[k] >= 1e-16 * wmax).collect();
        let mass: f64 = active.iter().map(|&k| w[k]).sum();
        let mut mu = DVector::zeros(p);
        for &k in &active {
            mu += DVector::from_column_slice(self.measure.node(k)) * (w[k] / mass);
        }
        let mut c_uu = DMatrix::zeros(p, p);
        // outer regression of the jacobian field: sum_k w_k vec(D(z_k)) (z_k - mu)^T
        let mut c_du = vec![DMatrix::<f64>::zeros(p, p); d];
        let mut d_mean = DMatrix::<f64>::zeros(d, p);
        let jac: Vec<DMatrix<f64>> = active
            .iter()
            .map(|&k| self.d_kappa(kernel, self.measure.node(k)).map(|j| j.matrix))
            .collect::<Result<_>>()?;
        for (idx, &k) in active.iter().enumerate() {
            d_mean += &jac[idx] * (w[k] / mass);
        }
        for (idx, &k) in active.iter().enumerate() {
            let wk = w[k] / mass;
            let dz = DVector::from_column_slice(self.measure.node(k)) - &mu;
            c_uu += &dz * dz.transpose() * wk;
            let dj = &jac[idx] - &d_mean;
            for (out, slot) in c_du.iter_mut().enumerate() {
                // row `out` of the jacobian deviation, as a column over f
                *slot += dj.row(out).transpose() * dz.transpose() * wk;
            }
        }
        let inv = regularized_inverse(&c_uu, DEFAULT_REL_TOL)?;
        let slices = c_du
            .into_iter()
            .map(|s| {
                let m = s * &inv;
                (&m + m.transpose()) * 0.5
            })
            .collect();
        Ok(LocalBilinear { anchor: DVector::from_column_slice(x), slices, variant: SecondOrderVariant::M0 })
    }
}

pub fn mf_local_moments(kernel: &KernelSpec, measure: &QuadratureMeasure, map: &dyn ForwardMap, x: &[f64]) -> Result<LocalMoments> {
    MeanField::new(measure.clone(), map)?.local_moments(kernel, x)
}

pub fn mf_d_kappa(kernel: &KernelSpec, measure: &QuadratureMeasure, map: &dyn ForwardMap, x: &[f64]) -> Result<LocalJacobian> {
    MeanField::new(measure.clone(), map)?.d_kappa(kernel, x)
}

/// Statistical linearization `C_Au C_uu^{-1}` of the whole measure.
pub fn mf_linearization(measure: &QuadratureMeasure, map: &dyn ForwardMap) -> Result<DMatrix<f64>> {
    mf_d_kappa(&KernelSpec::flat(), measure, map, &vec![0.0; measure.dim]).map(|j| j.matrix)
}

fn checked_step(step: f64) -> Result<()> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {step}")));
    }
    Ok(())
}

/// Central-difference jacobian, `d x p`.
pub fn fd_jacobian(map: &dyn ForwardMap, x: &[f64], step: f64) -> Result<DMatrix<f64>> {
    checked_step(step)?;
    check_dim(map.input_dim(), x.len())?;
    let mut out = DMatrix::zeros(map.output_dim(), x.len());
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    for c in 0..x.len() {
        xp[c] = x[c] + step;
        xm[c] = x[c] - step;
        let diff = (map.eval(&xp) - map.eval(&xm)) / (2.0 * step);
        out.set_column(c, &diff);
        xp[c] = x[c];
        xm[c] = x[c];
    }
    Ok(out)
}

/// Central-difference hessian, one `p x p` slice per output component.
pub fn fd_hessian(map: &dyn ForwardMap, x: &[f64], step: f64) -> Result<Vec<DMatrix<f64>>> {
    checked_step(step)?;
    check_dim(map.input_dim(), x.len())?;
    let p = x.len();
    let d = map.output_dim();
    let eval_shift = |a: usize, sa: f64, b: usize, sb: f64| {
        let mut z = x.to_vec();
        z[a] += sa;
        z[b] += sb;
        map.eval(&z)
    };
    let mut out = vec![DMatrix::zeros(p, p); d];
    for a in 0..p {
        for b in 0..p {
            let v = (eval_shift(a, step, b, step) - eval_shift(a, step, b, -step) - eval_shift(a, -step, b, step)
                + eval_shift(a, -step, b, -step))
                / (4.0 * step * step);
            for (k, slice) in out.iter_mut().enumerate() {
                slice[(a, b)] = v[k];
            }
        }
    }
    Ok(out)
}

/// Nonnegative values on an increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl DensityCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_dim(grid.len(), values.len())?;
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("grid must be strictly increasing with at least two points".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("density values must be finite and nonnegative".into()));
        }
        Ok(Self { grid, values, normalized: false })
    }

    /// Builds a curve from log-density values, shifting by the maximum before exponentiating.
    pub fn from_log(grid: Vec<f64>, log_values: &[f64]) -> Result<Self> {
        let top = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self::new(grid, log_values.iter().map(|l| (l - top).exp()).collect())?.normalize()
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    pub fn normalize(mut self) -> Result<Self> {
        let total = self.integral();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("cannot normalize a curve with zero mass".into()));
        }
        self.values.iter_mut().for_each(|v| *v /= total);
        self.normalized = true;
        Ok(self)
    }

    /// Strict interior local maxima at least `min_rel_height` times the global maximum.
    pub fn local_maxima(&self, min_rel_height: f64) -> Vec<usize> {
        let top = self.values.iter().cloned().fold(0.0, f64::max);
        let v = &self.values;
        (1..v.len().saturating_sub(1))
            .filter(|&i| v[i] > v[i - 1] && v[i] > v[i + 1] && v[i] >= min_rel_height * top)
            .collect()
    }

    /// Grid locations of the maxima returned by [`Self::local_maxima`] with the default threshold.
    pub fn modes(&self) -> Vec<f64> {
        self.local_maxima(MODE_HEIGHT_THRESHOLD).into_iter().map(|i| self.grid[i]).collect()
    }

    pub fn argmax(&self) -> f64 {
        let (i, _) = self.values.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        self.grid[i]
    }

    /// Trapezoid integral of the curve over `[grid[0], t]`, with `t` snapped to the grid.
    pub fn mass_below(&self, t: f64) -> f64 {
        let end = self.grid.partition_point(|&g| g <= t).max(1);
        trapezoid(&self.grid[..end], &self.values[..end])
    }

    /// `int |f - g|` over the shared grid.
    pub fn l1_distance(&self, other: &DensityCurve) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidInput("curves live on different grids".into()));
        }
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).collect();
        Ok(trapezoid(&self.grid, &diff))
    }

    pub fn sup_distance(&self, other: &DensityCurve) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidInput("curves live on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Writes `grid,value` rows with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["grid", "value"])?;
        for (g, v) in self.grid.iter().zip(&self.values) {
            w.write_record([g.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// `n` equispaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { hi } else { lo + i as f64 * h }).collect()
}

/// `1.06 sigma_hat J^{-1/5}` with the sample standard deviation.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    1.06 * var.sqrt() * n.powf(-0.2)
}

/// Gaussian kernel density estimate on `grid`, normalized there.
///
/// Without an explicit bandwidth the Silverman rule is used. Samples without
/// spread fall back to the grid spacing, with a warning.
pub fn kde(samples: &[f64], bandwidth: Option<f64>, grid: &[f64]) -> Result<DensityCurve> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!("kde needs at least two samples, got {}", samples.len())));
    }
    let mut bw = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    if !(bw > 0.0) {
        bw = grid.get(1).zip(grid.first()).map(|(b, a)| b - a).unwrap_or(1.0);
        log::warn!("kde samples have no spread; using bandwidth {bw}");
    }
    let norm = 1.0 / (samples.len() as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
    let values = grid
        .iter()
        .map(|&g| norm * samples.iter().map(|&s| (-0.5 * ((g - s) / bw).powi(2)).exp()).sum::<f64>())
        .collect();
    DensityCurve::new(grid.to_vec(), values)?.normalize()
}

/// Data and curvature of the scalar test problem `A(x) = x + 0.75 x^2`, `y = 1`.
pub const BIMODAL_DATA: f64 = 1.0;
pub const BIMODAL_CURVATURE: f64 = 0.75;

pub fn bimodal_forward(x: f64) -> f64 {
    x + BIMODAL_CURVATURE * x * x
}

/// Posterior of `x ~ N(0, 1)` given `y = A(x) + gamma xi` with `y = 1`, normalized on `grid`.
///
/// Two separated modes appear only for small enough noise; at `gamma = 1` the
/// density has a single maximum.
pub fn posterior_1d_bimodal(grid: &[f64], noise_std: f64) -> Result<DensityCurve> {
    posterior_1d_quadratic(grid, BIMODAL_DATA, noise_std)
}

/// As [`posterior_1d_bimodal`] for arbitrary data `y`.
pub fn posterior_1d_quadratic(grid: &[f64], data: f64, noise_std: f64) -> Result<DensityCurve> {
    if !(noise_std > 0.0) {
        return Err(Error::InvalidInput(format!("noise std must be positive, got {noise_std}")));
    }
    let g2 = noise_std * noise_std;
    let logs: Vec<f64> = grid.iter().map(|&x| -0.5 * x * x - (data - bimodal_forward(x)).powi(2) / (2.0 * g2)).collect();
    DensityCurve::from_log(grid.to_vec(), &logs)
}

/// Density of `|u|` when `u ~ N(0, sigma^2 I_n)` is conditioned on `y = |u|^2 + xi`.
pub fn posterior_shell_pushforward(grid: &[f64], sigma: f64, n: usize, y: f64) -> Result<DensityCurve> {
    if n == 0 || !(sigma > 0.0) || grid.iter().any(|&z| !(z > 0.0)) {
        return Err(Error::InvalidInput("need n >= 1, sigma > 0 and a grid in (0, inf)".into()));
    }
    let logs: Vec<f64> = grid
        .iter()
        .map(|&z| (n as f64 - 1.0) * z.ln() - z * z / (2.0 * sigma * sigma) - (y - z * z).powi(2) / 2.0)
        .collect();
    DensityCurve::from_log(grid.to_vec(), &logs)
}

/// Solutions of `(x1^2 + x2, x1 + x2^2) = (11, 7)`, refined by Newton's method
/// from the classical approximate locations.
pub fn himmelblau_roots() -> [[f64; 2]; 4] {
    let starts = [[3.0, 2.0], [-2.8, 3.1], [-3.8, -3.3], [3.6, -1.8]];
    starts.map(|mut v| {
        for _ in 0..50 {
            let f = [v[0] * v[0] + v[1] - 11.0, v[0] + v[1] * v[1] - 7.0];
            let j = [[2.0 * v[0], 1.0], [1.0, 2.0 * v[1]]];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let dx: [f64; 2] = [(j[1][1] * f[0] - j[0][1] * f[1]) / det, (j[0][0] * f[1] - j[1][0] * f[0]) / det];
            v = [v[0] - dx[0], v[1] - dx[1]];
            if dx[0].abs().max(dx[1].abs()) < 1e-15 {
                break;
            }
        }
        v
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{FnMap, HimmelblauMap, LinearMap, QuadraticForm, Sine};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn kernel_second_moment_shrinks_with_bandwidth() {
        let m = QuadratureMeasure::interval(-3.0, 3.0, DEFAULT_NODES_1D, |x| (-x * x / 2.0).exp()).unwrap();
        let x = 0.5;
        // int |x - z|^2 kappa_r(x, z) dnu(z) = C^kappa_uu + (mu^kappa - x)^2
        let vals: Vec<f64> = [1.0, 0.5, 0.25, 0.125]
            .iter()
            .map(|&r| {
                let mom = mf_local_moments(&KernelSpec::gaussian(r), &m, &Sine, &[x]).unwrap();
                mom.c_uu[(0, 0)] + (mom.mu[0] - x).powi(2)
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
        assert!(vals[3] < 0.02, "{vals:?}");
    }

    #[test]
    fn measure_is_normalized() {
        let m = QuadratureMeasure::interval(-3.0, 3.0, DEFAULT_NODES_1D, |x| (-x * x).exp()).unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        let m2 = QuadratureMeasure::uniform_rectangle([(-1.0, 1.0), (0.0, 2.0)], 31).unwrap();
        assert!((m2.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(m2.node(31), &[-1.0 + 2.0 / 30.0, 0.0]);
    }

    #[test]
    fn mean_field_slope_of_linear_map_is_exact() {
        let m = QuadratureMeasure::uniform_interval(-1.0, 1.0, DEFAULT_NODES_1D).unwrap();
        let lin = LinearMap::with_offset(DMatrix::from_element(1, 1, -2.5), DVector::from_element(1, 0.3));
        for (x, r) in [(0.0, 0.1), (0.9, 0.5), (-0.4, 3.0)] {
            let j = mf_d_kappa(&KernelSpec::gaussian(r), &m, &lin, &[x]).unwrap();
            assert!((j.matrix[(0, 0)] + 2.5).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_field_sine_slope() {
        let m = QuadratureMeasure::uniform_interval(-3.0, 3.0, DEFAULT_NODES_1D).unwrap();
        let j = mf_d_kappa(&KernelSpec::gaussian(0.05), &m, &Sine, &[FRAC_PI_4]).unwrap();
        assert!((j.matrix[(0, 0)] - FRAC_PI_4.cos()).abs() < 1e-2);
    }

    #[test]
    fn wide_kernel_recovers_statistical_linearization() {
        let m = QuadratureMeasure::uniform_interval(-3.0, 3.0, DEFAULT_NODES_1D).unwrap();
        let wide = mf_d_kappa(&KernelSpec::gaussian(1e3), &m, &Sine, &[FRAC_PI_4]).unwrap().matrix[(0, 0)];
        let flat = mf_linearization(&m, &Sine).unwrap()[(0, 0)];
        assert!((wide - flat).abs() < 1e-4);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let m = QuadratureMeasure::uniform_interval(-3.0, 3.0, 101).unwrap();
        let err = mf_d_kappa(&KernelSpec::gaussian(0.05), &m, &Sine, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::Resolution { .. }));
    }

    #[test]
    fn mean_field_second_derivative_of_quadratic_form() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, -0.5]);
        let m = QuadratureMeasure::uniform_rectangle([(-1.0, 1.0), (-1.0, 1.0)], 121).unwrap();
        let mf = MeanField::new(m, &QuadraticForm { q: q.clone() }).unwrap();
        let t = mf.d2_kappa(&KernelSpec::gaussian(0.15), &[0.0, 0.0]).unwrap();
        let expected = &q * 2.0;
        assert!((&t.slices[0] - &expected).amax() <= 5e-2 * expected.amax(), "{}", t.slices[0]);
    }

    #[test]
    fn finite_differences() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let j = fd_jacobian(&LinearMap::new(m.clone()), &[0.3, 0.2, -1.0], 1e-3).unwrap();
        assert!((j - m).amax() < 1e-9);
        assert!((fd_jacobian(&Sine, &[0.0], 1e-5).unwrap()[(0, 0)] - 1.0).abs() < 1e-8);
        let h = fd_jacobian(&HimmelblauMap, &[3.0, 2.0], 1e-5).unwrap();
        assert!((h - DMatrix::from_row_slice(2, 2, &[6.0, 1.0, 1.0, 4.0])).amax() < 1e-6);
    }

    #[test]
    fn fd_hessian_is_symmetric_and_accurate() {
        let cubic = FnMap::new(2, 1, |u: &[f64], o: &mut [f64]| o[0] = u[0].powi(3) * u[1] + u[1].sin());
        let step = 1e-4;
        let h = &fd_hessian(&cubic, &[0.7, -0.4], step).unwrap()[0];
        assert!((h[(0, 1)] - h[(1, 0)]).abs() <= step);
        let exact = DMatrix::from_row_slice(2, 2, &[6.0 * 0.7 * -0.4, 3.0 * 0.49, 3.0 * 0.49, -(-0.4f64).sin()]);
        assert!((h - exact).amax() < 1e-5);
    }

    #[test]
    fn kde_of_normal_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..100_000).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let grid = linspace(-5.0, 5.0, 401);
        let est = kde(&samples, None, &grid).unwrap();
        let truth: Vec<f64> = grid.iter().map(|x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()).collect();
        let truth = DensityCurve::new(grid, truth).unwrap();
        assert!(est.sup_distance(&truth).unwrap() <= 2e-2);
    }

    #[test]
    fn kde_of_mixture_is_bimodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let left = Normal::new(-2.0, 0.1).unwrap();
        let right = Normal::new(2.0, 0.1).unwrap();
        let samples: Vec<f64> = (0..2000).map(|i| if i % 2 == 0 { left.sample(&mut rng) } else { right.sample(&mut rng) }).collect();
        let est = kde(&samples, None, &linspace(-4.0, 4.0, 801)).unwrap();
        let modes = est.modes();
        assert_eq!(modes.len(), 2, "{modes:?}");
        assert!((modes[0] + 2.0).abs() < 0.1 && (modes[1] - 2.0).abs() < 0.1);
    }

    #[test]
    fn kde_of_repeated_value_peaks_there() {
        let samples = vec![1.25; 10];
        let est = kde(&samples, None, &linspace(0.0, 2.0, 201)).unwrap();
        assert!((est.argmax() - 1.25).abs() < 1e-12);
        let spread: Vec<f64> = (0..10).map(|i| 1.25 + 1e-3 * (i as f64 - 4.5)).collect();
        assert!((kde(&spread, None, &linspace(0.0, 2.0, 201)).unwrap().argmax() - 1.25).abs() <= 0.01);
    }

    #[test]
    fn bimodal_posterior_regression_values() {
        let grid = linspace(-6.0, 4.0, 100_001);
        let post = posterior_1d_bimodal(&grid, 0.5).unwrap();
        assert!((post.integral() - 1.0).abs() < 1e-6);
        // the far tails underflow in f64 at this noise level
        assert!(post.grid.iter().zip(&post.values).all(|(&x, &v)| v > 0.0 || !(-4.0..=3.0).contains(&x)));
        let modes = post.modes();
        assert_eq!(modes.len(), 2, "{modes:?}");
        assert!((modes[0] + 1.863_221).abs() < 2e-4);
        assert!((modes[1] - 0.625_691).abs() < 2e-4);
        assert_eq!(post.local_maxima(0.0).len(), 2);
        assert!((post.mass_below(-0.762_47) - 0.180_96).abs() < 1e-4);
    }

    #[test]
    fn unit_noise_posterior_is_unimodal() {
        let grid = linspace(-6.0, 4.0, 100_001);
        let post = posterior_1d_bimodal(&grid, 1.0).unwrap();
        assert_eq!(post.local_maxima(0.0).len(), 1);
        assert!(post.values.iter().all(|&v| v > 0.0));
        assert!((post.argmax() - 0.512_862).abs() < 2e-4);
    }

    #[test]
    fn shell_posterior_mode() {
        let grid = linspace(1e-3, 12.0, 120_001);
        for sigma in [1.0, 2.0, 3.0, 5.0] {
            let c = posterior_shell_pushforward(&grid, sigma, 10, 45.0).unwrap();
            assert!((c.integral() - 1.0).abs() < 1e-6);
            let mode = c.argmax();
            assert!((6.5..=6.9).contains(&mode), "sigma {sigma}: {mode}");
        }
        let c = posterior_shell_pushforward(&linspace(1e-3, 3.0, 3001), 1.0, 1, 0.0).unwrap();
        assert_eq!(c.local_maxima(0.0).len(), 0);
        assert!(c.values.iter().all(|&v| v > 0.0));
        assert_eq!(c.argmax(), 1e-3);
    }

    #[test]
    fn himmelblau_roots_match_reference() {
        let expected = [[3.0, 2.0], [-2.805118, 3.131312], [-3.779310, -3.283186], [3.584428, -1.848126]];
        for (r, e) in himmelblau_roots().iter().zip(expected) {
            assert!((r[0] - e[0]).abs() < 1e-6 && (r[1] - e[1]).abs() < 1e-6, "{r:?}");
            let a = HimmelblauMap.eval(r);
            assert!((a[0] - 11.0).abs() < 1e-12 && (a[1] - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn density_curve_csv() {
        let c = DensityCurve::new(vec![0.0, 0.5], vec![1.0, 0.25]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "grid,value\n0,1\n0.5,0.25\n");
    }
}
