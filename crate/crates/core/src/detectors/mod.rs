//! Outlier detectors fitted on learning-period embeddings.
//!
//! All scorers return "higher = more anomalous".

pub mod autoencoder;
pub mod ocsvm;
pub mod pca;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use autoencoder::{ae_fit, ae_fit_with_history, ae_score, AutoencoderModel};
pub use ocsvm::{ocsvm_fit, ocsvm_fit_with_report, ocsvm_score, OcsvmModel, OcsvmParams, SolverReport};
pub use pca::{pca_fit, pca_reduce, pca_score, PcaModel};

pub const DETECTOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("solver did not converge after {iterations} pair updates (KKT violation {violation:.3e})")]
    NoConvergence { iterations: usize, violation: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Serialized form of a single fitted detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorModel {
    Pca(PcaModel),
    Autoencoder(AutoencoderModel),
    Ocsvm(OcsvmModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorDocument {
    pub version: u32,
    #[serde(flatten)]
    pub model: DetectorModel,
}

impl DetectorDocument {
    pub fn new(model: DetectorModel) -> Self {
        Self {
            version: DETECTOR_FORMAT_VERSION,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("detector document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

pub(crate) fn check_uniform_dim(rows: &[&[f64]]) -> Result<usize, DetectorError> {
    let d = rows.first().map_or(0, |r| r.len());
    for r in rows {
        if r.len() != d {
            return Err(DetectorError::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
    }
    if d == 0 {
        return Err(DetectorError::DegenerateData("zero-dimensional input".into()));
    }
    Ok(d)
}
