//! Two-tier SQL query anomaly detection.
//!
//! Tier 1 ([`ensemble`]) learns what normal queries look like from embeddings
//! alone and flags outsider attacks. Tier 2 ([`classifier`]) learns which role
//! issues which queries and flags insiders posing as someone else.

pub mod classifier;
pub mod corpus;
pub mod detectors;
pub mod embedding;
pub mod ensemble;
pub mod generator;
pub mod normalize;
pub mod optim;
pub mod pipeline;

pub use classifier::{ClassifierError, ClassifierModel, LabeledQuery, ProbabilityMatrix, UserThresholds};
pub use embedding::{EmbeddingError, EmbeddingVector, EncoderConfig};
pub use ensemble::{AnomalyVerdict, EnsembleError, EnsembleModel, EnsembleParams};
pub use normalize::{NormalizeError, NormalizedQuery, RawQuery};
