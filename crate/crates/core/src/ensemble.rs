//! Unsupervised tier: PCA, autoencoder and one-class SVM scores are min-max
//! normalized against the learning period, averaged, and compared with the
//! learning-period maximum (scaled by a slack factor).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{
    ae_fit, ae_score, ocsvm_fit_with_report, ocsvm_score, pca_fit, pca_reduce, pca_score, AutoencoderModel,
    DetectorDocument, DetectorError, DetectorModel, OcsvmModel, OcsvmParams, PcaModel,
};
use crate::embedding::EmbeddingVector;
use crate::normalize::fingerprint_hex;
use crate::optim::TrainConfig;

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SLACK: f64 = 0.05;
pub const MIN_LEARNING_SIZE: usize = 10;
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("learning set has {got} vectors, need at least {needed}")]
    InsufficientData { needed: usize, got: usize },
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("{0} detector produced a constant learning-period score")]
    DegenerateDetector(&'static str),
    #[error("invalid slack {0}")]
    InvalidSlack(f64),
    #[error("bundle format: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub pca: f64,
    pub ae: f64,
    pub ocsvm: f64,
}

impl ScoreTriple {
    pub fn mean(&self) -> f64 {
        (self.pca + self.ae + self.ocsvm) / 3.0
    }

    fn is_finite(&self) -> bool {
        self.pca.is_finite() && self.ae.is_finite() && self.ocsvm.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        values.fold(
            MinMax {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |acc, v| MinMax {
                min: acc.min.min(v),
                max: acc.max.max(v),
            },
        )
    }

    /// Unclipped min-max scaling.
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub pca: MinMax,
    pub ae: MinMax,
    pub ocsvm: MinMax,
}

impl NormalizationParams {
    pub fn normalize(&self, raw: &ScoreTriple) -> ScoreTriple {
        ScoreTriple {
            pca: self.pca.apply(raw.pca),
            ae: self.ae.apply(raw.ae),
            ocsvm: self.ocsvm.apply(raw.ocsvm),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub pca: PcaModel,
    pub ae: AutoencoderModel,
    pub ocsvm: OcsvmModel,
    pub norm: NormalizationParams,
    /// Maximum averaged normalized score over the learning set.
    pub threshold: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub fingerprint: String,
    pub raw_scores: ScoreTriple,
    pub normalized_scores: ScoreTriple,
    pub average: f64,
    pub flagged: bool,
    /// `average - cutoff`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleParams {
    pub train: TrainConfig,
    pub ocsvm: OcsvmParams,
    pub pca_target_ratio: f64,
    pub slack: f64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            train: TrainConfig::autoencoder(0),
            ocsvm: OcsvmParams::default(),
            pca_target_ratio: crate::detectors::pca::DEFAULT_TARGET_RATIO,
            slack: DEFAULT_SLACK,
        }
    }
}

impl EnsembleModel {
    pub fn cutoff(&self) -> f64 {
        self.threshold * (1.0 + self.slack)
    }

    pub fn with_slack(&self, slack: f64) -> Self {
        Self { slack, ..self.clone() }
    }

    pub fn raw_scores(&self, x: &EmbeddingVector) -> ScoreTriple {
        ScoreTriple {
            pca: pca_score(&self.pca, x),
            ae: ae_score(&self.ae, x),
            ocsvm: ocsvm_score(&self.ocsvm, &pca_reduce(&self.pca, x)),
        }
    }
}

pub fn fit_ensemble(learning: &[EmbeddingVector], params: &EnsembleParams) -> Result<EnsembleModel, EnsembleError> {
    if learning.len() < MIN_LEARNING_SIZE {
        return Err(EnsembleError::InsufficientData {
            needed: MIN_LEARNING_SIZE,
            got: learning.len(),
        });
    }
    if !(params.slack >= 0.0 && params.slack.is_finite()) {
        return Err(EnsembleError::InvalidSlack(params.slack));
    }
    let pca = pca_fit(learning, params.pca_target_ratio)?;
    let ae = ae_fit(learning, &params.train)?;
    let reduced: Vec<Vec<f64>> = learning.iter().map(|x| pca_reduce(&pca, x)).collect();
    let (ocsvm, report) = ocsvm_fit_with_report(&reduced, &params.ocsvm)?;
    log::info!(
        "ensemble fit: pca k={} ({:.4} variance), ocsvm {} support vectors after {} updates",
        pca.k,
        pca.explained_variance_ratio,
        ocsvm.alphas.len(),
        report.iterations
    );

    let raw: Vec<ScoreTriple> = learning
        .iter()
        .zip(&reduced)
        .map(|(x, z)| ScoreTriple {
            pca: pca_score(&pca, x),
            ae: ae_score(&ae, x),
            ocsvm: ocsvm_score(&ocsvm, z),
        })
        .collect();
    let norm = NormalizationParams {
        pca: MinMax::of(raw.iter().map(|s| s.pca)),
        ae: MinMax::of(raw.iter().map(|s| s.ae)),
        ocsvm: MinMax::of(raw.iter().map(|s| s.ocsvm)),
    };
    for (name, mm) in [("pca", norm.pca), ("ae", norm.ae), ("ocsvm", norm.ocsvm)] {
        if !(mm.max > mm.min) {
            return Err(EnsembleError::DegenerateDetector(name));
        }
    }
    let threshold = raw
        .iter()
        .map(|s| norm.normalize(s).mean())
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(EnsembleModel {
        pca,
        ae,
        ocsvm,
        norm,
        threshold,
        slack: params.slack,
    })
}

pub fn score_query(m: &EnsembleModel, x: &EmbeddingVector) -> AnomalyVerdict {
    let raw_scores = m.raw_scores(x);
    debug_assert!(raw_scores.is_finite());
    let normalized_scores = m.norm.normalize(&raw_scores);
    let average = normalized_scores.mean();
    let cutoff = m.cutoff();
    AnomalyVerdict {
        fingerprint: fingerprint_hex(x.query_fingerprint),
        raw_scores,
        normalized_scores,
        average,
        flagged: average > cutoff,
        margin: average - cutoff,
    }
}

/// Per-query verdicts computed in parallel; output order matches input.
pub fn score_batch(m: &EnsembleModel, xs: &[EmbeddingVector]) -> Vec<AnomalyVerdict> {
    use rayon::prelude::*;
    xs.par_iter().map(|x| score_query(m, x)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsembleBundle {
    format: String,
    version: u32,
    pca: DetectorDocument,
    autoencoder: DetectorDocument,
    ocsvm: DetectorDocument,
    normalization: NormalizationParams,
    threshold: f64,
    slack: f64,
}

impl EnsembleModel {
    pub fn to_json(&self) -> String {
        let bundle = EnsembleBundle {
            format: "sqlsentinel-ensemble".into(),
            version: ENSEMBLE_FORMAT_VERSION,
            pca: DetectorDocument::new(DetectorModel::Pca(self.pca.clone())),
            autoencoder: DetectorDocument::new(DetectorModel::Autoencoder(self.ae.clone())),
            ocsvm: DetectorDocument::new(DetectorModel::Ocsvm(self.ocsvm.clone())),
            normalization: self.norm,
            threshold: self.threshold,
            slack: self.slack,
        };
        serde_json::to_string(&bundle).expect("ensemble serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EnsembleError> {
        let b: EnsembleBundle = serde_json::from_str(s).map_err(|e| EnsembleError::Format(e.to_string()))?;
        if b.version != ENSEMBLE_FORMAT_VERSION {
            return Err(EnsembleError::Format(format!("unsupported version {}", b.version)));
        }
        let DetectorModel::Pca(pca) = b.pca.model else {
            return Err(EnsembleError::Format("pca slot holds another detector".into()));
        };
        let DetectorModel::Autoencoder(ae) = b.autoencoder.model else {
            return Err(EnsembleError::Format("autoencoder slot holds another detector".into()));
        };
        let DetectorModel::Ocsvm(ocsvm) = b.ocsvm.model else {
            return Err(EnsembleError::Format("ocsvm slot holds another detector".into()));
        };
        Ok(Self {
            pca,
            ae,
            ocsvm,
            norm: b.normalization,
            threshold: b.threshold,
            slack: b.slack,
        })
    }
}

/// Score rows sorted by ascending average (stable for ties).
pub fn score_report_csv(verdicts: &[AnomalyVerdict]) -> String {
    let mut sorted: Vec<&AnomalyVerdict> = verdicts.iter().collect();
    sorted.sort_by(|a, b| a.average.total_cmp(&b.average));
    let mut out = String::from("fingerprint,pca_norm,ae_norm,ocsvm_norm,average,flagged\n");
    for v in sorted {
        let n = &v.normalized_scores;
        let _ = writeln!(out, "{},{},{},{},{},{}", v.fingerprint, n.pca, n.ae, n.ocsvm, v.average, v.flagged);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Uniform bins over `[min, max]` of the values; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            left: lo + width * i as f64,
            right: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count,
        })
        .collect()
}

pub fn histogram_csv(verdicts: &[AnomalyVerdict]) -> String {
    let averages: Vec<f64> = verdicts.iter().map(|v| v.average).collect();
    let mut out = String::from("bin_left,bin_right,count\n");
    for b in histogram(&averages, HISTOGRAM_BINS) {
        let _ = writeln!(out, "{},{},{}", b.left, b.right, b.count);
    }
    out
}

/// Writes `<stem>.csv` (sorted scores) and `<stem>_histogram.csv` into `dir`.
pub fn emit_score_report(verdicts: &[AnomalyVerdict], dir: &Path, stem: &str) -> Result<(), EnsembleError> {
    let write = |name: String, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| EnsembleError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    write(format!("{stem}.csv"), score_report_csv(verdicts))?;
    write(format!("{stem}_histogram.csv"), histogram_csv(verdicts))
}
