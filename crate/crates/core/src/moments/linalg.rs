use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Default relative eigenvalue cutoff for covariance inversion.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Largest entry of `|C - C^T|`, and whether it is acceptable.
fn asymmetry(c: &DMatrix<f64>) -> f64 {
    let n = c.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((c[(i, j)] - c[(j, i)]).abs());
        }
    }
    worst
}

fn symmetric_eigen(c: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    check_dim(c.nrows(), c.ncols())?;
    let scale = c.amax().max(1.0);
    let asym = asymmetry(c);
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (c + c.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym))
}

/// Spectral pseudo-inverse of a symmetric PSD matrix.
///
/// Eigenvalues below `rel_tol * lambda_max` are treated as zero; the result is
/// the zero matrix when every eigenvalue falls below the cutoff.
pub fn regularized_inverse(c: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    Ok(spectral_apply(c, rel_tol, |l| 1.0 / l)?.0)
}

/// `C^{-1/2}` on the retained spectrum, zero elsewhere.
pub fn regularized_inverse_sqrt(c: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    Ok(spectral_apply(c, rel_tol, |l| 1.0 / l.sqrt())?.0)
}

/// Number of eigenvalues above `rel_tol * lambda_max`.
pub fn numerical_rank(c: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    Ok(spectral_apply(c, rel_tol, |l| l)?.1)
}

fn spectral_apply(c: &DMatrix<f64>, rel_tol: f64, f: impl Fn(f64) -> f64) -> Result<(DMatrix<f64>, usize)> {
    let n = c.nrows();
    let eig = symmetric_eigen(c)?;
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut out = DMatrix::zeros(n, n);
    if !(lmax > 0.0) {
        return Ok((out, 0));
    }
    let cutoff = rel_tol * lmax;
    let mut rank = 0;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) * f(l);
        }
    }
    let sym = (&out + out.transpose()) * 0.5;
    Ok((sym, rank))
}
