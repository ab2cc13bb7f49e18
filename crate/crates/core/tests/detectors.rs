mod common;

use common::oracles;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqlsentinel::detectors::autoencoder::{ae_fit_with_history, ae_score_slice};
use sqlsentinel::detectors::ocsvm::{ocsvm_decision, rbf};
use sqlsentinel::detectors::pca::{pca_fit_rows, pca_reduce_slice, pca_score_slice};
use sqlsentinel::detectors::{
    ae_fit, ae_score, ocsvm_fit, ocsvm_fit_with_report, ocsvm_score, pca_fit, pca_reduce, pca_score,
    AutoencoderModel, DetectorDocument, DetectorError, DetectorModel, OcsvmModel, OcsvmParams,
};
use sqlsentinel::embedding::EmbeddingVector;
use sqlsentinel::optim::TrainConfig;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn as_rows(xs: &[EmbeddingVector]) -> Vec<Vec<f64>> {
    xs.iter().map(|x| x.values.clone()).collect()
}

// ---- PCA ----

#[test]
fn pca_matches_svd_oracle_on_random_spectra() {
    for seed in 0..50 {
        if let Err(e) = oracles::pca_case(seed, 1e-8) {
            panic!("seed {seed}: {e}");
        }
    }
}

#[test]
fn pca_corpus_k_matches_svd_rule() {
    let xs = common::corpus_embeddings(0);
    let m = pca_fit(&xs, 0.98).unwrap();
    let (_, eig, _) = oracles::svd_pca(&as_rows(&xs));
    assert_eq!(m.k, oracles::minimal_k(&eig, 0.98));
    assert!(m.explained_variance_ratio >= 0.98);
}

#[test]
fn pca_plane_in_768_dims() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u: Vec<f64> = (0..768).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..768).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            u.iter().zip(&v).map(|(x, y)| a * x + b * y + 0.25).collect()
        })
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let m = pca_fit_rows(&refs, 0.98).unwrap();
    assert_eq!(m.k, 2);
    for r in &rows {
        assert!(pca_score_slice(&m, r) < 1e-18 * 768.0 + 1e-10);
    }
}

#[test]
fn pca_isotropic_cloud_keeps_every_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows = oracles::gaussian_rows(&mut rng, 2000, 10, &[1.0; 10]);
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let m = pca_fit_rows(&refs, 0.98).unwrap();
    let (_, eig, _) = oracles::svd_pca(&rows);
    assert_eq!(oracles::minimal_k(&eig, 0.98), 10);
    assert_eq!(m.k, 10);
}

#[test]
fn pca_rejects_degenerate_input() {
    let same = vec![vec![1.0, 2.0, 3.0]; 5];
    let refs: Vec<&[f64]> = same.iter().map(Vec::as_slice).collect();
    assert!(matches!(pca_fit_rows(&refs, 0.98), Err(DetectorError::DegenerateData(_))));
    assert!(matches!(
        pca_fit_rows(&refs[..1], 0.98),
        Err(DetectorError::InsufficientData { .. })
    ));
}

#[test]
fn pca_score_and_reduce_identities() {
    let xs = common::corpus_embeddings(1);
    let m = pca_fit(&xs, 0.98).unwrap();
    let d = m.dim();

    assert_eq!(pca_score_slice(&m, &m.mean), 0.0);
    assert!(pca_reduce_slice(&m, &m.mean).iter().all(|v| *v == 0.0));

    // Orthonormal rows.
    for i in 0..m.k {
        for j in 0..m.k {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((dot(&m.components[i], &m.components[j]) - want).abs() < 1e-8);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        // Span member round-trips through reduce/reconstruct with zero residual.
        let coef: Vec<f64> = (0..m.k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = m.reconstruct(&coef);
        assert!(pca_score_slice(&m, &x) < 1e-10);
        let back = m.reconstruct(&pca_reduce_slice(&m, &x));
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-8));

        // Dense oracle: ||(I - V^T V)(x - mu)||^2.
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-0.2..0.2)).collect();
        let c: Vec<f64> = x.iter().zip(&m.mean).map(|(a, b)| a - b).collect();
        let mut resid = c.clone();
        for row in &m.components {
            let p = dot(row, &c);
            for (r, v) in resid.iter_mut().zip(row) {
                *r -= p * v;
            }
        }
        let oracle: f64 = resid.iter().map(|v| v * v).sum();
        let got = pca_score(&m, &EmbeddingVector::new(x.clone()));
        assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
        assert!(got >= 0.0);

        let z = pca_reduce(&m, &EmbeddingVector::new(x));
        assert_eq!(z.len(), m.k);
        assert!(dot(&z, &z) <= dot(&c, &c) + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pca_reduce_is_a_contraction(seed in any::<u64>(), scale in 0.01f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=12);
        let rows = oracles::gaussian_rows(&mut rng, 30, d, &vec![1.0; d]);
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let m = pca_fit_rows(&refs, 0.9).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-scale..scale)).collect();
        let c: Vec<f64> = x.iter().zip(&m.mean).map(|(a, b)| a - b).collect();
        let z = pca_reduce_slice(&m, &x);
        prop_assert!(dot(&z, &z) <= dot(&c, &c) * (1.0 + 1e-12) + 1e-15);
        prop_assert!(pca_score_slice(&m, &x) >= 0.0);
    }
}

// ---- OCSVM ----

#[test]
fn ocsvm_dual_matches_brute_force_oracles() {
    for seed in 0..20 {
        let r = oracles::ocsvm_case(seed);
        assert!(
            (r.solver - r.enumerated).abs() <= 1e-3,
            "seed {seed} n={}: solver {} vs enumeration {}",
            r.n,
            r.solver,
            r.enumerated
        );
        assert!(
            r.solver <= r.grid + 1e-3 && (r.solver - r.grid).abs() <= 1e-3,
            "seed {seed} n={}: solver {} vs grid {}",
            r.n,
            r.solver,
            r.grid
        );
    }
}

#[test]
fn ocsvm_four_points_alphas_match_oracle() {
    let z = vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![-0.4, 1.1], vec![2.5, -1.0]];
    let r = oracles::ocsvm_instance(&z, 0.5);
    assert!(r.max_alpha_gap <= 1e-2, "alpha gap {}", r.max_alpha_gap);
    assert!((r.solver - r.grid).abs() <= 1e-3);
}

#[test]
fn ocsvm_alpha_constraints_and_nu_property() {
    let xs = common::corpus_embeddings(2);
    let pca = pca_fit(&xs, 0.98).unwrap();
    let z: Vec<Vec<f64>> = xs.iter().map(|x| pca_reduce(&pca, x)).collect();
    for nu in [0.05, 0.1, 0.3] {
        let (m, report) = ocsvm_fit_with_report(&z, &OcsvmParams { nu, ..OcsvmParams::default() }).unwrap();
        let ub = 1.0 / (nu * z.len() as f64);
        assert!((report.alphas.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((m.alphas.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(report.alphas.iter().all(|a| *a >= 0.0 && *a <= ub + 1e-9));
        assert!(m.alphas.iter().all(|a| *a > 0.0 && *a <= ub + 1e-9));
        assert!(report.kkt_violation <= 1e-4);
        let outside = z.iter().filter(|p| ocsvm_decision(&m, p) < 0.0).count();
        let frac = outside as f64 / z.len() as f64;
        assert!(frac <= nu + 0.05, "nu {nu}: outlier fraction {frac}");
    }
}

#[test]
fn ocsvm_identical_points_are_inliers() {
    let z = vec![vec![0.3, -1.2, 4.0]; 12];
    let m = ocsvm_fit(&z, 0.2, Some(0.5)).unwrap();
    for p in &z {
        assert!(ocsvm_decision(&m, p) >= 0.0);
        assert!(ocsvm_score(&m, p) <= 0.0);
    }
}

#[test]
fn ocsvm_score_closed_forms_and_kernel_sum_oracle() {
    let one = OcsvmModel {
        support_vectors: vec![vec![1.0, 2.0]],
        alphas: vec![1.0],
        rho: 0.4,
        kernel: sqlsentinel::detectors::ocsvm::Kernel::Rbf,
        gamma: 0.7,
        nu: 0.5,
    };
    assert!((ocsvm_score(&one, &[1.0, 2.0]) - (0.4 - 1.0)).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let m = ocsvm_fit(&z, 0.1, None).unwrap();
    assert!((ocsvm_score(&m, &[1e6, -1e6, 1e6]) - m.rho).abs() < 1e-12);
    for _ in 0..50 {
        let p: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut sum = 0.0;
        for (sv, a) in m.support_vectors.iter().zip(&m.alphas) {
            let d2: f64 = sv.iter().zip(&p).map(|(x, y)| (x - y) * (x - y)).sum();
            sum += a * (-m.gamma * d2).exp();
        }
        let got = ocsvm_score(&m, &p);
        assert!((got - (m.rho - sum)).abs() < 1e-10);
        assert!(got.is_finite());
        assert_eq!(got, ocsvm_score(&m, &p));
    }
    assert_eq!(rbf(&[0.0], &[0.0], 2.0), 1.0);
}

#[test]
fn ocsvm_rejects_bad_parameters() {
    let z = vec![vec![0.0], vec![1.0]];
    assert!(ocsvm_fit(&z, 0.0, None).is_err());
    assert!(ocsvm_fit(&z, 1.5, None).is_err());
    assert!(ocsvm_fit(&z[..1], 0.5, None).is_err());
    let capped = OcsvmParams {
        nu: 0.05,
        gamma: Some(50.0),
        tolerance: 1e-12,
        max_iter: 1,
    };
    let z: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()]).collect();
    assert!(matches!(
        ocsvm_fit_with_report(&z, &capped),
        Err(DetectorError::NoConvergence { .. })
    ));
}

// ---- Autoencoder ----

#[test]
fn ae_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let (worst, vector) = oracles::ae_gradcheck_case(seed, 1e-5);
        assert!(vector <= 1e-4, "seed {seed}: vector relative error {vector}");
        assert!(worst <= 1e-4, "seed {seed}: worst component relative error {worst}");
    }
}

#[test]
fn ae_forward_pass_matches_hand_rolled_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut m = AutoencoderModel::init(7, 4, 21);
    for b in m.encoder_bias.iter_mut().chain(m.decoder_bias.iter_mut()) {
        *b = rng.random_range(-0.3..0.3);
    }
    for _ in 0..20 {
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut hidden = [0.0; 4];
        for (j, hj) in hidden.iter_mut().enumerate() {
            let mut a = m.encoder_bias[j];
            for i in 0..7 {
                a += m.encoder_weights[j * 7 + i] * x[i];
            }
            *hj = a.tanh();
        }
        let mut err = 0.0;
        for i in 0..7 {
            let mut y = m.decoder_bias[i];
            for (j, hj) in hidden.iter().enumerate() {
                y += m.decoder_weights[i * 4 + j] * hj;
            }
            err += (y - x[i]).powi(2);
        }
        err /= 7.0;
        let got = ae_score_slice(&m, &x);
        assert!((got - err).abs() < 1e-10);
        assert!(got >= 0.0);
    }
}

#[test]
fn ae_training_on_corpus() {
    let xs = common::corpus_embeddings(0);
    let cfg = TrainConfig::autoencoder(4);
    let (m, history) = ae_fit_with_history(&xs, &cfg, None).unwrap();
    assert_eq!(history.len(), cfg.epochs);
    assert!(history.last() <= history.first(), "{history:?}");
    assert_eq!(m.hidden_dim, 768 / 8);

    let again = ae_fit(&xs, &cfg).unwrap();
    assert_eq!(again, m);

    // Points with amplified noise reconstruct worse than the clean points.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut clean, mut noisy) = (0.0, 0.0);
    for x in &xs {
        let noise: Vec<f64> = (0..x.dim()).map(|_| rng.random_range(-0.01..0.01)).collect();
        let y: Vec<f64> = x.values.iter().zip(&noise).map(|(v, n)| v + 10.0 * n).collect();
        clean += ae_score(&m, x);
        noisy += ae_score_slice(&m, &y);
    }
    assert!(clean < noisy, "clean {clean} noisy {noisy}");
}

#[test]
fn ae_learns_near_identity_with_full_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let d = 6;
    let xs: Vec<EmbeddingVector> = (0..256)
        .map(|_| EmbeddingVector::new((0..d).map(|_| rng.random_range(-0.5..0.5)).collect()))
        .collect();
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::autoencoder(2)
    };
    let rows: Vec<&[f64]> = xs.iter().map(|x| x.values.as_slice()).collect();
    let initial = AutoencoderModel::init(d, d, cfg.seed).mean_loss(&rows);
    let (m, history) = ae_fit_with_history(&xs, &cfg, Some(d)).unwrap();
    let last = *history.last().unwrap();
    assert!(last < 0.1 * initial, "initial {initial} final {last}");
    assert_eq!(m.mean_loss(&rows), last);
}

#[test]
fn ae_rejects_small_or_diverging_input() {
    let xs = vec![EmbeddingVector::new(vec![0.0, 1.0]); 4];
    assert!(matches!(
        ae_fit(&xs, &TrainConfig::autoencoder(0)),
        Err(DetectorError::InsufficientData { .. })
    ));
    let big: Vec<EmbeddingVector> = (0..32).map(|i| EmbeddingVector::new(vec![1e300 * (i as f64 + 1.0), -1e300])).collect();
    assert!(matches!(
        ae_fit(&big, &TrainConfig::autoencoder(0)),
        Err(DetectorError::NonFiniteLoss { .. })
    ));
}

// ---- Serialization ----

#[test]
fn detector_documents_round_trip_bit_identically() {
    let xs = common::corpus_embeddings(3);
    let pca = pca_fit(&xs, 0.98).unwrap();
    let ae = ae_fit(&xs, &TrainConfig::autoencoder(3)).unwrap();
    let z: Vec<Vec<f64>> = xs.iter().map(|x| pca_reduce(&pca, x)).collect();
    let svm = ocsvm_fit(&z, 0.05, None).unwrap();

    let docs = [
        DetectorDocument::new(DetectorModel::Pca(pca.clone())),
        DetectorDocument::new(DetectorModel::Autoencoder(ae.clone())),
        DetectorDocument::new(DetectorModel::Ocsvm(svm.clone())),
    ];
    for (doc, kind) in docs.iter().zip(["pca", "autoencoder", "ocsvm"]) {
        let json = doc.to_json();
        assert!(json.contains(&format!("\"kind\":\"{kind}\"")));
        let back = DetectorDocument::from_json(&json).unwrap();
        assert_eq!(&back, doc);
        for x in xs.iter().take(25) {
            match (&back.model, &doc.model) {
                (DetectorModel::Pca(a), DetectorModel::Pca(b)) => {
                    assert_eq!(pca_score(a, x).to_bits(), pca_score(b, x).to_bits())
                }
                (DetectorModel::Autoencoder(a), DetectorModel::Autoencoder(b)) => {
                    assert_eq!(ae_score(a, x).to_bits(), ae_score(b, x).to_bits())
                }
                (DetectorModel::Ocsvm(a), DetectorModel::Ocsvm(b)) => {
                    let r = pca_reduce(&pca, x);
                    assert_eq!(ocsvm_score(a, &r).to_bits(), ocsvm_score(b, &r).to_bits())
                }
                _ => unreachable!(),
            }
        }
    }
}
