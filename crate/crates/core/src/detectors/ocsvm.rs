//! One-class SVM with an RBF kernel, trained by an SMO-style pairwise solver.
//!
//! Dual problem solved here:
//!
//! ```text
//! min_a  1/2 a^T K a
//! s.t.   0 <= a_i <= 1 / (nu * n),   sum_i a_i = 1
//! ```
//!
//! Working-set selection follows the second-order rule of Fan, Chen & Lin
//! (the one used by LIBSVM), specialised to all labels equal to +1.

use serde::{Deserialize, Serialize};

use super::DetectorError;

pub const DEFAULT_NU: f64 = 0.05;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 100_000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Rbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub kernel: Kernel,
    pub gamma: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcsvmParams {
    pub nu: f64,
    /// `None` selects 1 / (k * variance of all input components).
    pub gamma: Option<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for OcsvmParams {
    fn default() -> Self {
        Self {
            nu: DEFAULT_NU,
            gamma: None,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    pub kkt_violation: f64,
    /// Full alpha vector over the training set (zeros included).
    pub alphas: Vec<f64>,
    pub dual_objective: f64,
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// 1 / (k * variance of all components); 1 / k when the data has no spread.
pub fn auto_gamma(z: &[Vec<f64>]) -> f64 {
    let k = z.first().map_or(1, Vec::len).max(1);
    let count = (z.len() * k) as f64;
    let mean = z.iter().flatten().sum::<f64>() / count;
    let var = z.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    if var > 0.0 && var.is_finite() {
        1.0 / (k as f64 * var)
    } else {
        1.0 / k as f64
    }
}

/// 1/2 a^T K a.
pub fn dual_objective(z: &[Vec<f64>], alphas: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    for (i, zi) in z.iter().enumerate() {
        for (j, zj) in z.iter().enumerate() {
            total += alphas[i] * alphas[j] * rbf(zi, zj, gamma);
        }
    }
    0.5 * total
}

pub fn ocsvm_fit(z: &[Vec<f64>], nu: f64, gamma: Option<f64>) -> Result<OcsvmModel, DetectorError> {
    ocsvm_fit_with_report(
        z,
        &OcsvmParams {
            nu,
            gamma,
            ..Default::default()
        },
    )
    .map(|(m, _)| m)
}

pub fn ocsvm_fit_with_report(z: &[Vec<f64>], params: &OcsvmParams) -> Result<(OcsvmModel, SolverReport), DetectorError> {
    let n = z.len();
    if n < 2 {
        return Err(DetectorError::InsufficientData { needed: 2, got: n });
    }
    if !(params.nu > 0.0 && params.nu < 1.0) {
        return Err(DetectorError::InvalidParameter(format!("nu {} not in (0, 1)", params.nu)));
    }
    let rows: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
    let k = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != k) {
        return Err(DetectorError::DimensionMismatch {
            expected: k,
            got: bad.len(),
        });
    }
    let gamma = params.gamma.unwrap_or_else(|| auto_gamma(z));
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(DetectorError::InvalidParameter(format!("gamma {gamma} must be positive")));
    }

    let kmat: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| rbf(&z[i], &z[j], gamma)).collect()).collect();
    let ub = 1.0 / (params.nu * n as f64);

    // Feasible start: fill alphas at the upper bound until the mass is used up.
    let mut alpha = vec![0.0; n];
    let mut remaining = 1.0;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        let take = ub.min(remaining);
        *a = take;
        remaining -= take;
    }

    let mut grad: Vec<f64> = (0..n).map(|t| (0..n).map(|s| kmat[t][s] * alpha[s]).sum()).collect();

    let mut iterations = 0;
    let mut violation;
    loop {
        // i: most violating index that can still grow.
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if alpha[t] < ub && -grad[t] >= g_max {
                g_max = -grad[t];
                i_sel = Some(t);
            }
        }
        // j: second-order choice among indices that can shrink.
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                if alpha[t] > 0.0 {
                    g_max2 = g_max2.max(grad[t]);
                    let grad_diff = g_max + grad[t];
                    if grad_diff > 0.0 {
                        let quad = kmat[i][i] + kmat[t][t] - 2.0 * kmat[i][t];
                        let quad = if quad > 0.0 { quad } else { TAU };
                        let obj = -(grad_diff * grad_diff) / quad;
                        if obj <= obj_min {
                            obj_min = obj;
                            j_sel = Some(t);
                        }
                    }
                }
            }
        }
        violation = g_max + g_max2;
        let (Some(i), Some(j)) = (i_sel, j_sel) else { break };
        if violation < params.tolerance {
            break;
        }
        if iterations >= params.max_iter {
            return Err(DetectorError::NoConvergence { iterations, violation });
        }
        iterations += 1;

        let quad = kmat[i][i] + kmat[j][j] - 2.0 * kmat[i][j];
        let quad = if quad > 0.0 { quad } else { TAU };
        let room_i = ub - alpha[i];
        let room_j = alpha[j];
        let delta = ((grad[j] - grad[i]) / quad).min(room_i).min(room_j);
        let clip_i = delta == room_i;
        let clip_j = delta == room_j;
        if delta <= 0.0 {
            break;
        }
        alpha[i] = if clip_i { ub } else { alpha[i] + delta };
        alpha[j] = if clip_j { 0.0 } else { alpha[j] - delta };
        for t in 0..n {
            grad[t] += delta * (kmat[t][i] - kmat[t][j]);
        }
    }

    // Fresh gradient so rho and training-point scores agree bit-for-bit.
    let grad: Vec<f64> = (0..n).map(|t| (0..n).map(|s| kmat[t][s] * alpha[s]).sum()).collect();
    let rho = compute_rho(&alpha, &grad, ub);

    let dual = dual_objective(z, &alpha, gamma);
    let mut support_vectors = Vec::new();
    let mut sv_alphas = Vec::new();
    for (t, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(z[t].clone());
            sv_alphas.push(a);
        }
    }
    let model = OcsvmModel {
        support_vectors,
        alphas: sv_alphas,
        rho,
        kernel: Kernel::Rbf,
        gamma,
        nu: params.nu,
    };
    let report = SolverReport {
        iterations,
        kkt_violation: violation.max(0.0),
        alphas: alpha,
        dual_objective: dual,
    };
    Ok((model, report))
}

/// rho is the gradient value shared by free support vectors. Solver tolerance
/// spreads those values slightly; the smallest one keeps every free vector at
/// decision >= 0. Without free vectors, the midpoint of the feasible interval.
fn compute_rho(alpha: &[f64], grad: &[f64], ub: f64) -> f64 {
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    let mut free = Vec::new();
    for (&a, &g) in alpha.iter().zip(grad) {
        if a >= ub {
            lower = lower.max(g);
        } else if a <= 0.0 {
            upper = upper.min(g);
        } else {
            free.push(g);
        }
    }
    if free.is_empty() {
        if lower.is_finite() && upper.is_finite() {
            (lower + upper) / 2.0
        } else if lower.is_finite() {
            lower
        } else {
            upper
        }
    } else {
        free.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Standard decision function: positive inside the learned region.
pub fn ocsvm_decision(m: &OcsvmModel, z: &[f64]) -> f64 {
    kernel_sum(m, z) - m.rho
}

fn kernel_sum(m: &OcsvmModel, z: &[f64]) -> f64 {
    m.support_vectors
        .iter()
        .zip(&m.alphas)
        .map(|(sv, a)| a * rbf(sv, z, m.gamma))
        .sum()
}

/// Anomaly score `rho - sum_i a_i K(sv_i, z)`; higher is more anomalous.
pub fn ocsvm_score(m: &OcsvmModel, z: &[f64]) -> f64 {
    m.rho - kernel_sum(m, z)
}
