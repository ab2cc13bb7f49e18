//! Query embeddings.
//!
//! The built-in encoder is signed feature hashing over token n-grams. Token
//! sequences longer than the encoder capacity are split into consecutive
//! chunks, each chunk is embedded on its own, and the chunk vectors are
//! averaged. Embeddings produced elsewhere (e.g. by a transformer encoder)
//! are ingested through [`read_external_embeddings`].

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::{fingerprint_hex, fnv1a64, parse_fingerprint_hex, NormalizedQuery};

pub const EXTERNAL_FORMAT_NAME: &str = "sqlsentinel-emb";
pub const EXTERNAL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("encode() requires the hashing encoder; external embeddings are read from a file")]
    ExternalEncoder,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dimension mismatch (expected {expected}): {offenders:?}")]
    DimensionMismatch { expected: usize, offenders: Vec<String> },
    #[error("embeddings for fingerprints not in the corpus: {0:?}")]
    UnknownFingerprint(Vec<String>),
    #[error("corpus queries without an embedding: {0:?}")]
    MissingEmbedding(Vec<String>),
    #[error("non-finite component in embedding for {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Hashing,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dimension: usize,
    pub capacity: usize,
    pub kind: EncoderKind,
    pub ngram_orders: Vec<usize>,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dimension: 768,
            capacity: 512,
            kind: EncoderKind::Hashing,
            ngram_orders: vec![1, 2, 3],
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dimension == 0 {
            return Err(EmbeddingError::InvalidConfig("dimension must be positive".into()));
        }
        if self.capacity == 0 {
            return Err(EmbeddingError::InvalidConfig("capacity must be positive".into()));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(EmbeddingError::InvalidConfig(
                "ngram_orders must be non-empty and every order >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub query_fingerprint: u64,
    pub user_label: Option<String>,
    /// Set when the input had no tokens and the zero vector was returned.
    #[serde(default)]
    pub empty_input: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            query_fingerprint: 0,
            user_label: None,
            empty_input: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// splitmix64 finalizer; spreads FNV output over all 64 bits.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_ngram(seed: u64, gram: &[String]) -> u64 {
    let mut buf = Vec::with_capacity(8 + gram.iter().map(|t| t.len() + 1).sum::<usize>());
    buf.extend_from_slice(&seed.to_le_bytes());
    for tok in gram {
        buf.extend_from_slice(tok.as_bytes());
        buf.push(0x1f);
    }
    mix64(fnv1a64(&buf))
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Unit-norm hashed n-gram vector for one chunk (not renormalized when the
/// chunk hashes to all zeros, which only happens for empty input).
pub fn embed_chunk(tokens: &[String], cfg: &EncoderConfig) -> Vec<f64> {
    let mut v = vec![0.0; cfg.dimension];
    for &order in &cfg.ngram_orders {
        if order > tokens.len() {
            continue;
        }
        for gram in tokens.windows(order) {
            let h = hash_ngram(cfg.seed, gram);
            let idx = (h % cfg.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
    }
    l2_normalize(&mut v);
    v
}

/// Splits `tokens` into consecutive, non-overlapping chunks of at most
/// `capacity` tokens.
pub fn chunk_tokens(tokens: &[String], capacity: usize) -> Vec<&[String]> {
    tokens.chunks(capacity).collect()
}

pub fn encode(tokens: &[String], cfg: &EncoderConfig) -> Result<EmbeddingVector, EmbeddingError> {
    cfg.validate()?;
    if cfg.kind != EncoderKind::Hashing {
        return Err(EmbeddingError::ExternalEncoder);
    }
    if tokens.is_empty() {
        log::warn!("empty token list; returning the zero embedding");
        return Ok(EmbeddingVector {
            values: vec![0.0; cfg.dimension],
            query_fingerprint: 0,
            user_label: None,
            empty_input: true,
        });
    }
    let values = if tokens.len() <= cfg.capacity {
        embed_chunk(tokens, cfg)
    } else {
        let chunks = chunk_tokens(tokens, cfg.capacity);
        let mut mean = vec![0.0; cfg.dimension];
        for chunk in &chunks {
            for (m, x) in mean.iter_mut().zip(embed_chunk(chunk, cfg)) {
                *m += x;
            }
        }
        let count = chunks.len() as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        l2_normalize(&mut mean);
        mean
    };
    Ok(EmbeddingVector {
        values,
        query_fingerprint: 0,
        user_label: None,
        empty_input: false,
    })
}

pub fn encode_query(q: &NormalizedQuery, cfg: &EncoderConfig) -> Result<EmbeddingVector, EmbeddingError> {
    let mut v = encode(&crate::normalize::tokenize_for_encoder(q), cfg)?;
    v.query_fingerprint = q.fingerprint;
    v.user_label = q.user_label.clone();
    Ok(v)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalRecord {
    pub fp: String,
    pub dim: usize,
    pub v: Vec<f64>,
}

/// Writes embeddings in the external JSON-lines format (header + one record
/// per vector).
pub fn write_external_embeddings(path: &Path, vectors: &[EmbeddingVector]) -> Result<(), EmbeddingError> {
    let io_err = |source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    };
    let dim = vectors.first().map_or(0, EmbeddingVector::dim);
    let mut out = String::new();
    let header = ExternalHeader {
        format: EXTERNAL_FORMAT_NAME.into(),
        version: EXTERNAL_FORMAT_VERSION,
        dim,
        count: vectors.len(),
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for v in vectors {
        let rec = ExternalRecord {
            fp: fingerprint_hex(v.query_fingerprint),
            dim: v.dim(),
            v: v.values.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    let mut f = File::create(path).map_err(io_err)?;
    f.write_all(out.as_bytes()).map_err(io_err)
}

/// Loads an external embedding file and aligns it with `corpus` (output order
/// follows the corpus). Vectors are taken as-is, without renormalization.
pub fn read_external_embeddings(
    path: &Path,
    expected_dim: usize,
    corpus: &[NormalizedQuery],
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    let file = File::open(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header_line) = lines.next().ok_or(EmbeddingError::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let header_line = header_line.map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let header: ExternalHeader = serde_json::from_str(&header_line).map_err(|e| EmbeddingError::Parse {
        line: 1,
        msg: format!("bad header: {e}"),
    })?;
    if header.format != EXTERNAL_FORMAT_NAME || header.version != EXTERNAL_FORMAT_VERSION {
        return Err(EmbeddingError::Parse {
            line: 1,
            msg: format!("unsupported format {}/{}", header.format, header.version),
        });
    }

    let mut by_fp: HashMap<u64, Vec<f64>> = HashMap::new();
    let mut bad_dim = Vec::new();
    let mut record_count = 0usize;
    for (idx, line) in lines {
        let line = line.map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let rec: ExternalRecord = serde_json::from_str(&line).map_err(|e| EmbeddingError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let fp = parse_fingerprint_hex(&rec.fp).ok_or_else(|| EmbeddingError::Parse {
            line: lineno,
            msg: format!("bad fingerprint {:?}", rec.fp),
        })?;
        record_count += 1;
        if rec.dim != expected_dim || rec.v.len() != expected_dim {
            bad_dim.push(format!("{} (dim {})", rec.fp, rec.v.len()));
            continue;
        }
        if rec.v.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite(rec.fp));
        }
        if by_fp.insert(fp, rec.v).is_some() {
            return Err(EmbeddingError::Parse {
                line: lineno,
                msg: format!("duplicate fingerprint {}", rec.fp),
            });
        }
    }
    if header.dim != expected_dim {
        bad_dim.insert(0, format!("header (dim {})", header.dim));
    }
    if !bad_dim.is_empty() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: expected_dim,
            offenders: bad_dim,
        });
    }
    if header.count != record_count {
        return Err(EmbeddingError::Parse {
            line: 1,
            msg: format!("header count {} but {} records", header.count, record_count),
        });
    }

    let corpus_fps: BTreeSet<u64> = corpus.iter().map(|q| q.fingerprint).collect();
    let unknown: BTreeSet<u64> = by_fp.keys().filter(|fp| !corpus_fps.contains(fp)).copied().collect();
    if !unknown.is_empty() {
        return Err(EmbeddingError::UnknownFingerprint(
            unknown.into_iter().map(fingerprint_hex).collect(),
        ));
    }
    let missing: BTreeSet<u64> = corpus_fps.iter().filter(|fp| !by_fp.contains_key(fp)).copied().collect();
    if !missing.is_empty() {
        return Err(EmbeddingError::MissingEmbedding(
            missing.into_iter().map(fingerprint_hex).collect(),
        ));
    }

    Ok(corpus
        .iter()
        .map(|q| EmbeddingVector {
            values: by_fp[&q.fingerprint].clone(),
            query_fingerprint: q.fingerprint,
            user_label: q.user_label.clone(),
            empty_input: false,
        })
        .collect())
}
