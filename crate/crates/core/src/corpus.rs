//! JSON-lines query corpus: one record per line,
//! `{"query": .., "user": ..|null, "seq": ..}`, optionally carrying the
//! normalizer output (`normalized`, `fingerprint`) and a ground-truth label
//! (`truth`) from the workload generator.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::{self, NormalizeError, NormalizedQuery, RawQuery};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Normalize {
        line: usize,
        #[source]
        source: NormalizeError,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    DataLeak,
    Sabotage,
    Sqli,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::DataLeak, AttackKind::Sabotage, AttackKind::Sqli];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Normal,
    ExternalAttack { attack: AttackKind },
    InternalMasquerade { source_user: String },
}

impl GroundTruth {
    pub fn is_attack(&self) -> bool {
        !matches!(self, GroundTruth::Normal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub query: String,
    pub user: Option<String>,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruth>,
}

impl CorpusRecord {
    pub fn new(query: impl Into<String>, user: Option<&str>, seq: u64) -> Self {
        Self {
            query: query.into(),
            user: user.map(str::to_owned),
            seq,
            normalized: None,
            fingerprint: None,
            truth: None,
        }
    }

    pub fn with_truth(mut self, truth: GroundTruth) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn raw(&self) -> RawQuery {
        RawQuery::new(self.query.clone(), self.user.as_deref(), self.seq)
    }

    /// Normalizes `query`; already-normalized records are re-derived so a
    /// stale `normalized` field cannot leak through.
    pub fn to_normalized(&self) -> Result<NormalizedQuery, NormalizeError> {
        normalize::normalize(&self.raw())
    }

    pub fn is_truth_normal(&self) -> bool {
        matches!(self.truth, None | Some(GroundTruth::Normal))
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_corpus(&text)
}

pub fn to_jsonl(records: &[CorpusRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("corpus record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<(), CorpusError> {
    fs::write(path, to_jsonl(records)).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Normalizes every record (errors carry 1-based record positions) and
/// fills `normalized` and `fingerprint`.
pub fn normalize_records(records: &[CorpusRecord]) -> Result<Vec<(CorpusRecord, NormalizedQuery)>, CorpusError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let nq = r.to_normalized().map_err(|source| CorpusError::Normalize { line: i + 1, source })?;
            let mut rec = r.clone();
            rec.normalized = Some(nq.text.clone());
            rec.fingerprint = Some(nq.fingerprint_hex());
            Ok((rec, nq))
        })
        .collect()
}

/// [`normalize_records`] followed by dropping duplicate
/// `(user, normalized)` pairs.
pub fn normalize_corpus(records: &[CorpusRecord]) -> Result<Vec<(CorpusRecord, NormalizedQuery)>, CorpusError> {
    let all = normalize_records(records)?;
    let nqs: Vec<NormalizedQuery> = all.iter().map(|(_, nq)| nq.clone()).collect();
    let keep = normalize::dedup_indices(&nqs);
    let mut all: Vec<Option<(CorpusRecord, NormalizedQuery)>> = all.into_iter().map(Some).collect();
    Ok(keep.into_iter().filter_map(|i| all[i].take()).collect())
}
