//! Independent reference computations used by both the focused tests and the
//! acceptance suite. Each `*_case` returns `Err(description)` on a mismatch.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sqlsentinel::detectors::autoencoder::AutoencoderModel;
use sqlsentinel::detectors::ocsvm::{dual_objective, ocsvm_fit_with_report, rbf, OcsvmParams};
use sqlsentinel::detectors::pca::{pca_fit_rows, pca_reduce_slice, pca_score_slice};

const SVD_EPS: f64 = 1e-14;

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scales: &[f64]) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|j| scales[j] * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// Dense-SVD PCA: eigenvalues s^2 / (n - 1) in descending order and the
/// matching right singular vectors.
pub fn svd_pca(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    // At the default eps nalgebra's SVD can stop early next to an exact zero
    // singular value (any n < d case); 1e-14 converges cleanly.
    let (values, dirs): (Vec<f64>, Vec<Vec<f64>>) = if n >= d {
        let svd = centered.clone().try_svd(false, true, SVD_EPS, 0).expect("svd converges");
        let v_t = svd.v_t.expect("v_t requested");
        let dirs = (0..v_t.nrows()).map(|i| v_t.row(i).iter().copied().collect()).collect();
        (svd.singular_values.iter().copied().collect(), dirs)
    } else {
        let svd = centered.transpose().try_svd(true, false, SVD_EPS, 0).expect("svd converges");
        let u = svd.u.expect("u requested");
        let dirs = (0..u.ncols()).map(|i| u.column(i).iter().copied().collect()).collect();
        (svd.singular_values.iter().copied().collect(), dirs)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let eig: Vec<f64> = order.iter().map(|&i| values[i].powi(2) / (n - 1) as f64).collect();
    let dirs: Vec<Vec<f64>> = order.iter().map(|&i| dirs[i].clone()).collect();
    (mean, eig, dirs)
}

pub fn minimal_k(eig: &[f64], ratio: f64) -> usize {
    let total: f64 = eig.iter().sum();
    let mut cum = 0.0;
    for (i, e) in eig.iter().enumerate() {
        cum += e;
        if cum / total >= ratio {
            return i + 1;
        }
    }
    eig.len()
}

/// One random dataset (n <= 100, d <= 32): chosen k, training-point
/// reconstruction errors and reduced vectors against the SVD oracle.
pub fn pca_case(seed: u64, tol: f64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=100);
    let d = rng.random_range(2..=32);
    let scales: Vec<f64> = (0..d).map(|j| 1.0 + 1.5 * j as f64 + rng.random_range(0.0..0.5)).collect();
    let rows = gaussian_rows(&mut rng, n, d, &scales);
    let ratio = [0.9, 0.98, 0.98, 0.999][rng.random_range(0..4)];

    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let m = pca_fit_rows(&refs, ratio).map_err(|e| e.to_string())?;
    let (mean, eig, dirs) = svd_pca(&rows);
    let k = minimal_k(&eig, ratio);
    if m.k != k {
        return Err(format!("seed {seed} (n={n}, d={d}): k {} vs oracle {k}", m.k));
    }
    for (i, row) in m.components.iter().enumerate() {
        for (j, other) in m.components.iter().enumerate() {
            let dot: f64 = row.iter().zip(other).map(|(a, b)| a * b).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (dot - want).abs() > tol {
                return Err(format!("seed {seed}: components not orthonormal ({i},{j}) = {dot}"));
            }
        }
    }
    // Singular vectors are unique up to sign; align each oracle direction.
    let signs: Vec<f64> = (0..k)
        .map(|c| {
            let dot: f64 = m.components[c].iter().zip(&dirs[c]).map(|(a, b)| a * b).sum();
            dot.signum()
        })
        .collect();
    for x in &rows {
        let c: Vec<f64> = x.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let z_oracle: Vec<f64> = (0..k)
            .map(|i| signs[i] * dirs[i].iter().zip(&c).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let z = pca_reduce_slice(&m, x);
        for (a, b) in z.iter().zip(&z_oracle) {
            if (a - b).abs() > tol {
                return Err(format!("seed {seed} (n={n}, d={d}, k={k}): reduced {a} vs {b}"));
            }
        }
        let mut residual = c.clone();
        for i in 0..k {
            let coef = signs[i] * z_oracle[i];
            for (r, v) in residual.iter_mut().zip(&dirs[i]) {
                *r -= coef * v;
            }
        }
        let err_oracle: f64 = residual.iter().map(|r| r * r).sum();
        let err = pca_score_slice(&m, x);
        if (err - err_oracle).abs() > tol {
            return Err(format!("seed {seed} (n={n}, d={d}): reconstruction error {err} vs {err_oracle}"));
        }
    }
    Ok(())
}

fn kernel(z: &[Vec<f64>], gamma: f64) -> DMatrix<f64> {
    let n = z.len();
    DMatrix::from_fn(n, n, |i, j| rbf(&z[i], &z[j], gamma))
}

/// Exact optimum of the one-class dual by active-set enumeration: every
/// variable is fixed at 0, fixed at the upper bound, or free; the free block
/// solves the equality-constrained stationarity system. The best feasible
/// candidate over all 3^n patterns is the global minimum (convex problem).
pub fn ocsvm_enumerated_optimum(z: &[Vec<f64>], nu: f64, gamma: f64) -> (f64, Vec<f64>) {
    let n = z.len();
    let ub = 1.0 / (nu * n as f64);
    let k = kernel(z, gamma);
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let patterns = 3usize.pow(n as u32);
    for code in 0..patterns {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { ub } else { 0.0 }).collect();
        let fixed_mass: f64 = alpha.iter().sum();
        if free.is_empty() {
            if (fixed_mass - 1.0).abs() > 1e-12 {
                continue;
            }
        } else {
            // [K_FF  -1] [a_F   ]   [-K_FB a_B      ]
            // [1^T    0] [lambda] = [1 - sum(a_B)   ]
            let m = free.len();
            let mut a = DMatrix::zeros(m + 1, m + 1);
            let mut b = DVector::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    a[(r, c)] = k[(i, j)];
                }
                a[(r, m)] = -1.0;
                a[(m, r)] = 1.0;
                b[r] = -(0..n).filter(|&j| state[j] == 1).map(|j| k[(i, j)] * ub).sum::<f64>();
            }
            b[m] = 1.0 - fixed_mass;
            let Some(sol) = a.lu().solve(&b) else { continue };
            let mut ok = true;
            for (r, &i) in free.iter().enumerate() {
                let v = sol[r];
                if !(v >= -1e-12 && v <= ub + 1e-12) || !v.is_finite() {
                    ok = false;
                    break;
                }
                alpha[i] = v.clamp(0.0, ub);
            }
            if !ok {
                continue;
            }
        }
        let obj = dual_objective(z, &alpha, gamma);
        if obj < best.0 {
            best = (obj, alpha);
        }
    }
    best
}

fn quad(a: &[f64], k: &DMatrix<f64>) -> f64 {
    let n = a.len();
    let mut obj = 0.0;
    for i in 0..n {
        if a[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            obj += a[i] * a[j] * k[(i, j)];
        }
    }
    0.5 * obj
}

/// Grid search over the feasible simplex: exhaustive at step `1 / steps`,
/// then refined around the best grid point by pairwise mass transfers on
/// successively halved grids down to a step of 1e-4.
pub fn ocsvm_grid_optimum(z: &[Vec<f64>], nu: f64, gamma: f64, steps: usize) -> f64 {
    let n = z.len();
    let ub = 1.0 / (nu * n as f64);
    let cap = ((ub * steps as f64) + 1e-9).floor() as usize;
    let k = kernel(z, gamma);

    let mut best = (f64::INFINITY, vec![0.0; n]);
    let mut counts = vec![0usize; n];
    // Enumerates compositions of `steps` into n parts bounded by `cap`.
    fn walk(pos: usize, left: usize, cap: usize, steps: usize, counts: &mut Vec<usize>, k: &DMatrix<f64>, best: &mut (f64, Vec<f64>)) {
        let n = counts.len();
        if pos == n - 1 {
            if left > cap {
                return;
            }
            counts[pos] = left;
            let a: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
            let obj = quad(&a, k);
            if obj < best.0 {
                *best = (obj, a);
            }
            return;
        }
        for c in 0..=left.min(cap) {
            counts[pos] = c;
            walk(pos + 1, left - c, cap, steps, counts, k, best);
        }
    }
    walk(0, steps, cap, steps, &mut counts, &k, &mut best);

    let (mut obj, mut a) = best;
    let mut step = 1.0 / steps as f64;
    while step >= 1e-4 {
        let mut improved = true;
        while improved {
            improved = false;
            for i in 0..n {
                for j in 0..n {
                    if i == j || a[j] < step - 1e-15 || a[i] + step > ub + 1e-12 {
                        continue;
                    }
                    let mut cand = a.clone();
                    cand[i] += step;
                    cand[j] -= step;
                    let c = quad(&cand, &k);
                    if c < obj - 1e-15 {
                        obj = c;
                        a = cand;
                        improved = true;
                    }
                }
            }
        }
        step /= 2.0;
    }
    obj
}

pub struct OcsvmCaseReport {
    pub n: usize,
    pub solver: f64,
    pub enumerated: f64,
    pub grid: f64,
    pub max_alpha_gap: f64,
}

/// One tiny instance (2 <= n <= 6): solver dual objective against the
/// enumeration and grid oracles.
pub fn ocsvm_case(seed: u64) -> OcsvmCaseReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=6);
    let k = rng.random_range(1..=3);
    let z: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let nu = [0.2, 0.3, 0.5, 0.7, 0.9][rng.random_range(0..5)];
    ocsvm_instance(&z, nu)
}

pub fn ocsvm_instance(z: &[Vec<f64>], nu: f64) -> OcsvmCaseReport {
    let params = OcsvmParams {
        nu,
        gamma: Some(0.5),
        ..OcsvmParams::default()
    };
    let (_, report) = ocsvm_fit_with_report(z, &params).expect("solver converges");
    let (enumerated, alphas) = ocsvm_enumerated_optimum(z, nu, 0.5);
    let steps = if z.len() <= 4 { 100 } else { 40 };
    let grid = ocsvm_grid_optimum(z, nu, 0.5, steps);
    let max_alpha_gap = report
        .alphas
        .iter()
        .zip(&alphas)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    OcsvmCaseReport {
        n: z.len(),
        solver: report.dual_objective,
        enumerated,
        grid,
        max_alpha_gap,
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Largest relative error between analytic and central-difference
/// gradients, over components whose magnitude exceeds `floor`, plus the
/// whole-vector relative error.
pub fn gradient_gap(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, f64) {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        if a.abs().max(n.abs()) > floor {
            worst = worst.max(rel_gap(*a, *n));
        }
    }
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    (worst, diff / na.max(nn).max(1e-300))
}

/// Autoencoder gradient check on one random (weights, 5-row batch) draw.
pub fn ae_gradcheck_case(seed: u64, step: f64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(3..=12);
    let h = rng.random_range(2..=8);
    let mut m = AutoencoderModel::init(d, h, seed);
    for b in m.encoder_bias.iter_mut().chain(m.decoder_bias.iter_mut()) {
        *b = rng.random_range(-0.5..0.5);
    }
    let batch: Vec<Vec<f64>> = (0..5).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let refs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
    let (_, g) = m.loss_and_gradients(&refs);
    let analytic: Vec<f64> = [&g.encoder_weights, &g.encoder_bias, &g.decoder_weights, &g.decoder_bias]
        .into_iter()
        .flatten()
        .copied()
        .collect();

    let mut numeric = Vec::with_capacity(analytic.len());
    for block in 0..4 {
        let len = match block {
            0 => m.encoder_weights.len(),
            1 => m.encoder_bias.len(),
            2 => m.decoder_weights.len(),
            _ => m.decoder_bias.len(),
        };
        for i in 0..len {
            let eval = |delta: f64| {
                let mut p = m.clone();
                let slot = match block {
                    0 => &mut p.encoder_weights[i],
                    1 => &mut p.encoder_bias[i],
                    2 => &mut p.decoder_weights[i],
                    _ => &mut p.decoder_bias[i],
                };
                *slot += delta;
                p.loss_and_gradients(&refs).0
            };
            numeric.push((eval(step) - eval(-step)) / (2.0 * step));
        }
    }
    gradient_gap(&analytic, &numeric, 1e-7)
}
