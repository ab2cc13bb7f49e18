//! PCA reconstruction-error detector.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{check_uniform_dim, DetectorError};
use crate::embedding::EmbeddingVector;

pub const DEFAULT_TARGET_RATIO: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// k rows of length d, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Variance along each retained component.
    pub explained_variance: Vec<f64>,
    /// Cumulative fraction of total variance captured by the k components.
    pub explained_variance_ratio: f64,
    pub target_ratio: f64,
    pub k: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn centered(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).map(|(a, m)| a - m).collect()
    }

    fn project(&self, c: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|row| row.iter().zip(c).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Maps reduced coordinates back to the input space.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (row, &coef) in self.components.iter().zip(z) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += coef * r;
            }
        }
        out
    }

    fn check_dim(&self, x: &EmbeddingVector) -> Result<(), DetectorError> {
        if x.dim() != self.dim() {
            return Err(DetectorError::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }
}

/// Fits PCA and keeps the fewest leading components whose cumulative
/// variance reaches `target_ratio`.
pub fn pca_fit(x: &[EmbeddingVector], target_ratio: f64) -> Result<PcaModel, DetectorError> {
    let rows: Vec<&[f64]> = x.iter().map(|v| v.values.as_slice()).collect();
    pca_fit_rows(&rows, target_ratio)
}

pub fn pca_fit_rows(rows: &[&[f64]], target_ratio: f64) -> Result<PcaModel, DetectorError> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(DetectorError::InvalidParameter(format!(
            "target ratio {target_ratio} not in (0, 1]"
        )));
    }
    let n = rows.len();
    if n < 2 {
        return Err(DetectorError::InsufficientData { needed: 2, got: n });
    }
    let d = check_uniform_dim(rows)?;

    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let denom = (n - 1) as f64;

    // Eigendecompose whichever of the covariance (d x d) or Gram (n x n)
    // matrix is smaller; both share the non-zero spectrum.
    let (mut eigvals, directions): (Vec<f64>, Vec<Vec<f64>>) = if d <= n {
        let cov = (centered.transpose() * &centered) / denom;
        let eig = SymmetricEigen::new(cov);
        let dirs = (0..d).map(|c| eig.eigenvectors.column(c).iter().copied().collect()).collect();
        (eig.eigenvalues.iter().copied().collect(), dirs)
    } else {
        let gram = (&centered * centered.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let dirs = (0..n)
            .map(|c| {
                let u = eig.eigenvectors.column(c);
                let v = centered.transpose() * u;
                v.iter().copied().collect()
            })
            .collect();
        (vals, dirs)
    };
    eigvals.iter_mut().for_each(|v| *v = v.max(0.0));

    let mut order: Vec<usize> = (0..eigvals.len()).collect();
    order.sort_by(|&a, &b| eigvals[b].total_cmp(&eigvals[a]).then(a.cmp(&b)));

    let total: f64 = eigvals.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(DetectorError::DegenerateData("total variance is zero".into()));
    }

    let mut k = 0;
    let mut cum = 0.0;
    for &idx in &order {
        cum += eigvals[idx];
        k += 1;
        if cum / total >= target_ratio {
            break;
        }
    }

    let mut components: Vec<Vec<f64>> = order[..k].iter().map(|&i| directions[i].clone()).collect();
    // Modified Gram-Schmidt: normalizes Gram-path directions and removes
    // round-off drift on the covariance path.
    for i in 0..k {
        for j in 0..i {
            let dot: f64 = components[i].iter().zip(&components[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = components.split_at_mut(i);
            for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                *a -= dot * b;
            }
        }
        let norm = components[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(DetectorError::DegenerateData("null principal direction".into()));
        }
        components[i].iter_mut().for_each(|a| *a /= norm);
        orient(&mut components[i]);
    }

    let explained_variance: Vec<f64> = order[..k].iter().map(|&i| eigvals[i]).collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: (cum / total).min(1.0),
        explained_variance,
        target_ratio,
        k,
    })
}

/// Sign convention: the largest-magnitude entry of each direction is positive.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, a) in v.iter().enumerate() {
        if a.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
}

/// Squared norm of the part of `x - mean` outside the component subspace.
pub fn pca_score(m: &PcaModel, x: &EmbeddingVector) -> f64 {
    debug_assert!(m.check_dim(x).is_ok());
    pca_score_slice(m, &x.values)
}

pub fn pca_score_slice(m: &PcaModel, x: &[f64]) -> f64 {
    let c = m.centered(x);
    let z = m.project(&c);
    let mut residual = c;
    for (row, &coef) in m.components.iter().zip(&z) {
        for (r, a) in residual.iter_mut().zip(row) {
            *r -= coef * a;
        }
    }
    residual.iter().map(|r| r * r).sum()
}

pub fn pca_reduce(m: &PcaModel, x: &EmbeddingVector) -> Vec<f64> {
    debug_assert!(m.check_dim(x).is_ok());
    pca_reduce_slice(m, &x.values)
}

pub fn pca_reduce_slice(m: &PcaModel, x: &[f64]) -> Vec<f64> {
    m.project(&m.centered(x))
}
