//! Forward maps `A: R^p -> R^d` and the concrete maps used by the experiments.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

/// A deterministic forward map. Implementations must be pure: evaluating
/// twice at the same point yields identical output.
pub trait ForwardMap: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval_into(&self, u: &[f64], out: &mut [f64]);

    fn eval(&self, u: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.output_dim());
        self.eval_into(u, out.as_mut_slice());
        out
    }

    /// Analytic Jacobian (`d x p`), when known. Used by tests and oracles only.
    fn jacobian(&self, _u: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

impl<M: ForwardMap + ?Sized> ForwardMap for Arc<M> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        (**self).eval_into(u, out)
    }
    fn jacobian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        (**self).jacobian(u)
    }
}

/// Wraps a closure writing `A(u)` into an output slice.
pub struct FnMap<F> {
    input_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> FnMap<F> {
    pub fn new(input_dim: usize, output_dim: usize, f: F) -> Self {
        Self { input_dim, output_dim, f }
    }
}

impl<F> fmt::Debug for FnMap<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnMap({} -> {})", self.input_dim, self.output_dim)
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> ForwardMap for FnMap<F> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        (self.f)(u, out)
    }
}

/// `A(u) = M u + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let offset = DVector::zeros(matrix.nrows());
        Self { matrix, offset }
    }

    pub fn with_offset(matrix: DMatrix<f64>, offset: DVector<f64>) -> Self {
        Self { matrix, offset }
    }
}

impl ForwardMap for LinearMap {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.offset[r] + (0..u.len()).map(|c| self.matrix[(r, c)] * u[c]).sum::<f64>();
        }
    }
    fn jacobian(&self, _u: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }
}

/// `A(x) = sin(x)` on the real line.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sine;

impl ForwardMap for Sine {
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u[0].sin();
    }
    fn jacobian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, u[0].cos()))
    }
}

/// `A(x) = x + c x^2` on the real line.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic1d {
    pub curvature: f64,
}

impl ForwardMap for Quadratic1d {
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u[0] + self.curvature * u[0] * u[0];
    }
    fn jacobian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, 1.0 + 2.0 * self.curvature * u[0]))
    }
}

/// `A(x1, x2) = (x1^2 + x2, x1 + x2^2)`; solving `A(x) = (11, 7)` gives the Himmelblau minima.
#[derive(Debug, Clone, Copy, Default)]
pub struct HimmelblauMap;

impl ForwardMap for HimmelblauMap {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u[0] * u[0] + u[1];
        out[1] = u[0] + u[1] * u[1];
    }
    fn jacobian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 2, &[2.0 * u[0], 1.0, 1.0, 2.0 * u[1]]))
    }
}

/// The scalar Himmelblau function `(x1^2 + x2 - 11)^2 + (x1 + x2^2 - 7)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HimmelblauScalar;

impl HimmelblauScalar {
    pub fn hessian(u: &[f64]) -> DMatrix<f64> {
        let (x, y) = (u[0], u[1]);
        let hxx = 12.0 * x * x + 4.0 * y - 42.0;
        let hxy = 4.0 * (x + y);
        let hyy = 12.0 * y * y + 4.0 * x - 26.0;
        DMatrix::from_row_slice(2, 2, &[hxx, hxy, hxy, hyy])
    }
}

impl ForwardMap for HimmelblauScalar {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        let a = u[0] * u[0] + u[1] - 11.0;
        let b = u[0] + u[1] * u[1] - 7.0;
        out[0] = a * a + b * b;
    }
    fn jacobian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        let a = u[0] * u[0] + u[1] - 11.0;
        let b = u[0] + u[1] * u[1] - 7.0;
        Some(DMatrix::from_row_slice(1, 2, &[4.0 * a * u[0] + 2.0 * b, 2.0 * a + 4.0 * b * u[1]]))
    }
}

/// `A(u) = |u|^2` on `R^n`.
#[derive(Debug, Clone, Copy)]
pub struct SquaredNorm {
    pub dim: usize,
}

impl ForwardMap for SquaredNorm {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u.iter().map(|v| v * v).sum();
    }
    fn jacobian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_iterator(1, u.len(), u.iter().map(|v| 2.0 * v)))
    }
}

/// `A(u) = u^T Q u` (scalar output).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub q: DMatrix<f64>,
}

impl ForwardMap for QuadraticForm {
    fn input_dim(&self) -> usize {
        self.q.ncols()
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        let v = DVector::from_column_slice(u);
        out[0] = v.dot(&(&self.q * &v));
    }
    fn jacobian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        let v = DVector::from_column_slice(u);
        let g = (&self.q + self.q.transpose()) * v;
        Some(DMatrix::from_row_slice(1, g.len(), g.as_slice()))
    }
}
