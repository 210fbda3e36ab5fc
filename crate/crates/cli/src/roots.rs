//! Assignment of final particles to known solutions.

use anyhow::ensure;
use lwek::Ensemble;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootAssignment {
    /// Particles per root, in the order the roots were given.
    pub counts: Vec<usize>,
    pub unassigned: usize,
}

impl RootAssignment {
    /// Number of roots holding at least `min_count` particles.
    pub fn covered(&self, min_count: usize) -> usize {
        self.counts.iter().filter(|&&c| c >= min_count).count()
    }
}

/// Assigns each particle to its nearest root when that root is within `radius`.
pub fn root_assignment(ensemble: &Ensemble, roots: &[Vec<f64>], radius: f64) -> anyhow::Result<RootAssignment> {
    ensure!(radius > 0.0, "radius must be positive");
    ensure!(roots.iter().all(|r| r.len() == ensemble.dim()), "roots must match the ensemble dimension");
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    for (i, a) in roots.iter().enumerate() {
        for b in &roots[i + 1..] {
            ensure!(dist(a, b) > 0.0, "roots must be distinct");
        }
    }
    let mut counts = vec![0; roots.len()];
    let mut unassigned = 0;
    for u in ensemble.particles() {
        let nearest = roots
            .iter()
            .enumerate()
            .map(|(k, r)| (k, dist(u, r)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((k, d)) if d <= radius => counts[k] += 1,
            _ => unassigned += 1,
        }
    }
    Ok(RootAssignment { counts, unassigned })
}
