use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::maps::ForwardMap;

/// `J` particles in `R^p`, optionally with their forward evaluations in `R^d`.
///
/// Rows are stored contiguously. The feature cache can only be filled through
/// [`Ensemble::evaluate`], so it always matches the forward map rowwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    dim: usize,
    size: usize,
    particles: Vec<f64>,
    features: Option<Features>,
}

#[derive(Debug, Clone, PartialEq)]
struct Features {
    dim: usize,
    values: Vec<f64>,
}

impl Ensemble {
    /// Builds an ensemble from a row-major buffer of `size * dim` values.
    pub fn from_flat(dim: usize, particles: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("particle dimension must be positive".into()));
        }
        if !particles.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "buffer of length {} is not a multiple of dimension {dim}",
                particles.len()
            )));
        }
        let size = particles.len() / dim;
        if size < 2 {
            return Err(Error::InvalidInput(format!("ensemble needs at least 2 particles, got {size}")));
        }
        Ok(Self { dim, size, particles, features: None })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            check_dim(dim, r.len())?;
            flat.extend_from_slice(r);
        }
        Self::from_flat(dim, flat)
    }

    /// Rows of `m` are particles.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let mut flat = Vec::with_capacity(m.len());
        for row in m.row_iter() {
            flat.extend(row.iter().copied());
        }
        Self::from_flat(m.ncols(), flat)
    }

    /// Number of particles `J`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Parameter dimension `p`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Feature dimension `d`, if features are cached.
    pub fn feature_dim(&self) -> Option<usize> {
        self.features.as_ref().map(|f| f.dim)
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.particles.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.particles
    }

    pub fn has_features(&self) -> bool {
        self.features.is_some()
    }

    pub fn feature(&self, i: usize) -> Result<&[f64]> {
        let f = self.features.as_ref().ok_or(Error::MissingFeatures)?;
        Ok(&f.values[i * f.dim..(i + 1) * f.dim])
    }

    pub(crate) fn features_flat(&self) -> Result<(usize, &[f64])> {
        let f = self.features.as_ref().ok_or(Error::MissingFeatures)?;
        Ok((f.dim, &f.values))
    }

    /// Particles as a `J x p` matrix.
    pub fn particle_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.size, self.dim, &self.particles)
    }

    /// Cached features as a `J x d` matrix.
    pub fn feature_matrix(&self) -> Result<DMatrix<f64>> {
        let (d, v) = self.features_flat()?;
        Ok(DMatrix::from_row_slice(self.size, d, v))
    }

    /// Evaluates the forward map at every particle and caches the result.
    pub fn evaluate(mut self, map: &dyn ForwardMap) -> Result<Self> {
        check_dim(map.input_dim(), self.dim)?;
        let d = map.output_dim();
        let mut values = vec![0.0; self.size * d];
        for (u, out) in self.particles.chunks_exact(self.dim).zip(values.chunks_exact_mut(d)) {
            map.eval_into(u, out);
        }
        self.features = Some(Features { dim: d, values });
        Ok(self)
    }

    /// Returns the particles with the feature cache dropped.
    pub fn without_features(mut self) -> Self {
        self.features = None;
        self
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for u in self.particles() {
            m.iter_mut().zip(u).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= self.size as f64);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.particles.iter().all(|v| v.is_finite())
    }

    /// Largest pairwise distance between particles.
    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.size {
            for j in i + 1..self.size {
                best = best.max(crate::kernels::dist_sq(self.particle(i), self.particle(j)));
            }
        }
        best.sqrt()
    }
}
