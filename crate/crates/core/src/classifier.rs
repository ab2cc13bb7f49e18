//! Supervised tier: per-role softmax classifier, validation probability
//! matrix, per-user thresholds, and the two masquerade detection rules.
//!
//! Learning period:
//! 1. fit the classifier on labeled training queries;
//! 2. score a stratified validation set into a probability matrix;
//! 3. each row's maximum is its *significant probability*, attributed to the
//!    argmax user;
//! 4. a user's threshold is the lowest significant probability attributed to
//!    that user.
//!
//! Detection period: a query claimed by user `u` is abnormal if its argmax
//! user differs from `u` ([`Reason::WrongUser`]), or if the top probability
//! falls below `threshold(u) * (1 - slack)` ([`Reason::BelowThreshold`]).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingVector;
use crate::optim::{Adam, TrainConfig};

pub const DEFAULT_SUPERVISED_SLACK: f64 = 0.0;
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("training data has {0} distinct user(s); need at least 2")]
    SingleClass(usize),
    #[error("empty {0} set")]
    Empty(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("no threshold for user {0:?}: validation set had no query attributed to it")]
    UndefinedThreshold(String),
    #[error("probability matrix row {row} sums to {sum}")]
    RowNotNormalized { row: usize, sum: f64 },
    #[error("probability matrix row {row} has {got} entries, expected {expected}")]
    RowWidth { row: usize, expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("malformed input: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQuery {
    pub embedding: EmbeddingVector,
    pub claimed_user: String,
    pub fingerprint: u64,
}

impl LabeledQuery {
    pub fn new(embedding: EmbeddingVector, claimed_user: impl Into<String>) -> Self {
        let fingerprint = embedding.query_fingerprint;
        Self {
            embedding,
            claimed_user: claimed_user.into(),
            fingerprint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub users: Vec<String>,
    pub input_dim: usize,
    /// users.len() x input_dim, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub train_config: TrainConfig,
}

impl ClassifierModel {
    pub fn zeros(users: Vec<String>, input_dim: usize, train_config: TrainConfig) -> Self {
        let u = users.len();
        Self {
            users,
            input_dim,
            weights: vec![0.0; u * input_dim],
            biases: vec![0.0; u],
            train_config,
        }
    }

    pub fn user_index(&self, user: &str) -> Option<usize> {
        self.users.iter().position(|u| u == user)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        self.biases
            .iter()
            .enumerate()
            .map(|(c, b)| self.weights[c * d..(c + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Mean cross-entropy over `batch` and its gradient (weights, biases).
    pub fn loss_and_gradients(&self, batch: &[(&[f64], usize)]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.input_dim;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.biases.len()];
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (x, label) in batch {
            let logits = self.logits(x);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            loss -= (logits[*label] - log_z) * scale;
            for (c, l) in logits.iter().enumerate() {
                let p = (l - log_z).exp();
                let delta = (p - if c == *label { 1.0 } else { 0.0 }) * scale;
                gb[c] += delta;
                for (g, v) in gw[c * d..(c + 1) * d].iter_mut().zip(x.iter()) {
                    *g += delta * v;
                }
            }
        }
        (loss, gw, gb)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub const CLASSIFIER_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ClassifierBundle {
    format: String,
    version: u32,
    model: ClassifierModel,
}

impl ClassifierModel {
    pub fn to_json(&self) -> String {
        let bundle = ClassifierBundle {
            format: "sqlsentinel-classifier".into(),
            version: CLASSIFIER_FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&bundle).expect("classifier serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ClassifierError> {
        let b: ClassifierBundle = serde_json::from_str(s).map_err(|e| ClassifierError::Format(e.to_string()))?;
        if b.format != "sqlsentinel-classifier" || b.version != CLASSIFIER_FORMAT_VERSION {
            return Err(ClassifierError::Format(format!("unsupported format {}/{}", b.format, b.version)));
        }
        let m = b.model;
        let u = m.users.len();
        if m.weights.len() != u * m.input_dim || m.biases.len() != u {
            return Err(ClassifierError::Format("parameter shapes disagree with users/input_dim".into()));
        }
        Ok(m)
    }
}

pub fn predict_proba(m: &ClassifierModel, x: &EmbeddingVector) -> Vec<f64> {
    softmax(&m.logits(&x.values))
}

fn users_of<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    items.collect::<BTreeSet<_>>().into_iter().map(str::to_owned).collect()
}

pub fn fit_classifier(train: &[LabeledQuery], cfg: &TrainConfig) -> Result<ClassifierModel, ClassifierError> {
    fit_classifier_with_history(train, cfg).map(|(m, _)| m)
}

/// Trains the softmax model; also returns the full-data loss after each epoch.
pub fn fit_classifier_with_history(
    train: &[LabeledQuery],
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, Vec<f64>), ClassifierError> {
    if !cfg.is_valid() {
        return Err(ClassifierError::InvalidConfig(format!("{cfg:?}")));
    }
    if train.is_empty() {
        return Err(ClassifierError::Empty("training"));
    }
    let users = users_of(train.iter().map(|q| q.claimed_user.as_str()));
    if users.len() < 2 {
        return Err(ClassifierError::SingleClass(users.len()));
    }
    let d = train[0].embedding.dim();
    if let Some(bad) = train.iter().find(|q| q.embedding.dim() != d) {
        return Err(ClassifierError::DimensionMismatch {
            expected: d,
            got: bad.embedding.dim(),
        });
    }
    let index: HashMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let data: Vec<(&[f64], usize)> = train
        .iter()
        .map(|q| (q.embedding.values.as_slice(), index[q.claimed_user.as_str()]))
        .collect();

    let mut model = ClassifierModel::zeros(users, d, cfg.clone());
    let mut opt_w = Adam::new(model.weights.len(), cfg.learning_rate);
    let mut opt_b = Adam::new(model.biases.len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&[f64], usize)> = idx.iter().map(|&i| data[i]).collect();
            let (loss, gw, gb) = model.loss_and_gradients(&batch);
            if !loss.is_finite() {
                return Err(ClassifierError::NonFiniteLoss { epoch, batch: b });
            }
            opt_w.step(&mut model.weights, &gw);
            opt_b.step(&mut model.biases, &gb);
        }
        let (loss, _, _) = model.loss_and_gradients(&data);
        if !loss.is_finite() {
            return Err(ClassifierError::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        log::debug!("classifier epoch {epoch}: loss {loss:.6}");
        history.push(loss);
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRow {
    pub fingerprint: String,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    pub users: Vec<String>,
    pub rows: Vec<ProbabilityRow>,
}

impl ProbabilityMatrix {
    /// Builds a matrix from externally produced rows without checking that
    /// each row sums to one. Width is still checked.
    pub fn from_raw_rows(users: Vec<String>, rows: Vec<ProbabilityRow>) -> Result<Self, ClassifierError> {
        for (i, r) in rows.iter().enumerate() {
            if r.probabilities.len() != users.len() {
                return Err(ClassifierError::RowWidth {
                    row: i,
                    expected: users.len(),
                    got: r.probabilities.len(),
                });
            }
        }
        Ok(Self { users, rows })
    }

    /// Checks the row-normalization invariant.
    pub fn validate(&self) -> Result<(), ClassifierError> {
        for (i, r) in self.rows.iter().enumerate() {
            let sum: f64 = r.probabilities.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(ClassifierError::RowNotNormalized { row: i, sum });
            }
        }
        Ok(())
    }

    /// Header is `fingerprint,<user labels...>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fingerprint");
        for u in &self.users {
            out.push(',');
            out.push_str(u);
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.fingerprint);
            for p in &r.probabilities {
                let _ = write!(out, ",{p}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ClassifierError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| ClassifierError::Format("empty matrix".into()))?;
        let mut cols = header.split(',');
        cols.next();
        let users: Vec<String> = cols.map(|c| c.trim().to_owned()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let fingerprint = cells.next().unwrap_or_default().trim().to_owned();
            let probabilities = cells
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| ClassifierError::Format(format!("row {}: {e}", i + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(ProbabilityRow { fingerprint, probabilities });
        }
        Self::from_raw_rows(users, rows)
    }
}

/// One row per validation query, in input order.
pub fn build_probability_matrix(
    m: &ClassifierModel,
    validation: &[LabeledQuery],
) -> Result<ProbabilityMatrix, ClassifierError> {
    if validation.is_empty() {
        return Err(ClassifierError::Empty("validation"));
    }
    if let Some(bad) = validation.iter().find(|q| q.embedding.dim() != m.input_dim) {
        return Err(ClassifierError::DimensionMismatch {
            expected: m.input_dim,
            got: bad.embedding.dim(),
        });
    }
    let present: BTreeSet<&str> = validation.iter().map(|q| q.claimed_user.as_str()).collect();
    for u in &m.users {
        if !present.contains(u.as_str()) {
            log::warn!("validation set has no query labeled {u:?}; its threshold may be undefined");
        }
    }
    let rows = validation
        .iter()
        .map(|q| ProbabilityRow {
            fingerprint: crate::normalize::fingerprint_hex(q.fingerprint),
            probabilities: predict_proba(m, &q.embedding),
        })
        .collect();
    Ok(ProbabilityMatrix {
        users: m.users.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserThreshold {
    /// `None` when no validation row was attributed to the user.
    pub threshold: Option<f64>,
    pub support_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserThresholds {
    pub per_user: BTreeMap<String, UserThreshold>,
    pub slack: f64,
}

impl UserThresholds {
    pub fn get(&self, user: &str) -> Option<&UserThreshold> {
        self.per_user.get(user)
    }

    pub fn threshold(&self, user: &str) -> Option<f64> {
        self.per_user.get(user).and_then(|t| t.threshold)
    }

    pub fn with_slack(mut self, slack: f64) -> Self {
        self.slack = slack;
        self
    }

    /// JSON object `user -> {threshold, support_count}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.per_user).expect("thresholds serialize")
    }

    pub fn from_json(s: &str, slack: f64) -> Result<Self, ClassifierError> {
        let per_user = serde_json::from_str(s).map_err(|e| ClassifierError::Format(e.to_string()))?;
        Ok(Self { per_user, slack })
    }
}

/// Lowest significant probability per argmax user.
pub fn derive_thresholds(pm: &ProbabilityMatrix) -> UserThresholds {
    let mut lowest: Vec<Option<f64>> = vec![None; pm.users.len()];
    let mut support = vec![0usize; pm.users.len()];
    for row in &pm.rows {
        let best = argmax(&row.probabilities);
        let p = row.probabilities[best];
        support[best] += 1;
        lowest[best] = Some(lowest[best].map_or(p, |cur: f64| cur.min(p)));
    }
    let per_user = pm
        .users
        .iter()
        .enumerate()
        .map(|(i, u)| {
            if support[i] == 0 {
                log::warn!("user {u:?} has no attributed validation rows; threshold undefined");
            }
            (
                u.clone(),
                UserThreshold {
                    threshold: lowest[i],
                    support_count: support[i],
                },
            )
        })
        .collect();
    UserThresholds {
        per_user,
        slack: DEFAULT_SUPERVISED_SLACK,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    None,
    WrongUser,
    BelowThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedVerdict {
    pub fingerprint: String,
    pub claimed_user: String,
    pub predicted_user: String,
    pub top_probability: f64,
    pub verdict: Verdict,
    pub reason: Reason,
}

/// Applies both rules to a probability vector already computed for `claimed`.
pub fn apply_rules(
    users: &[String],
    probabilities: &[f64],
    claimed: &str,
    th: &UserThresholds,
) -> Result<(usize, Reason), ClassifierError> {
    if !users.iter().any(|u| u == claimed) {
        return Err(ClassifierError::UnknownUser(claimed.to_owned()));
    }
    let threshold = th
        .threshold(claimed)
        .ok_or_else(|| ClassifierError::UndefinedThreshold(claimed.to_owned()))?;
    let best = argmax(probabilities);
    let reason = if users[best] != claimed {
        Reason::WrongUser
    } else if probabilities[best] < threshold * (1.0 - th.slack) {
        Reason::BelowThreshold
    } else {
        Reason::None
    };
    Ok((best, reason))
}

pub fn detect(m: &ClassifierModel, th: &UserThresholds, q: &LabeledQuery) -> Result<SupervisedVerdict, ClassifierError> {
    if q.embedding.dim() != m.input_dim {
        return Err(ClassifierError::DimensionMismatch {
            expected: m.input_dim,
            got: q.embedding.dim(),
        });
    }
    let p = predict_proba(m, &q.embedding);
    let (best, reason) = apply_rules(&m.users, &p, &q.claimed_user, th)?;
    Ok(SupervisedVerdict {
        fingerprint: crate::normalize::fingerprint_hex(q.fingerprint),
        claimed_user: q.claimed_user.clone(),
        predicted_user: m.users[best].clone(),
        top_probability: p[best],
        verdict: if reason == Reason::None { Verdict::Normal } else { Verdict::Abnormal },
        reason,
    })
}

/// Confusion counts and derived scores over the Abnormal (positive) class.
/// A score is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let denom = precision + recall;
    (denom > 0.0).then(|| 2.0 * precision * recall / denom)
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) => f1_score(p, r),
            _ => None,
        };
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
            precision,
            recall,
            f1,
        }
    }

    /// `(predicted, truth)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Verdict, Verdict)>) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (pred, truth) in pairs {
            match (pred, truth) {
                (Verdict::Abnormal, Verdict::Abnormal) => tp += 1,
                (Verdict::Abnormal, Verdict::Normal) => fp += 1,
                (Verdict::Normal, Verdict::Abnormal) => fn_ += 1,
                (Verdict::Normal, Verdict::Normal) => tn += 1,
            }
        }
        Self::from_counts(tp, fp, fn_, tn)
    }
}

pub fn evaluate(
    m: &ClassifierModel,
    th: &UserThresholds,
    test: &[(LabeledQuery, Verdict)],
) -> Result<Metrics, ClassifierError> {
    if test.is_empty() {
        return Err(ClassifierError::Empty("test"));
    }
    let mut pairs = Vec::with_capacity(test.len());
    for (q, truth) in test {
        pairs.push((detect(m, th, q)?.verdict, *truth));
    }
    Ok(Metrics::from_pairs(pairs))
}

/// Per-user stratified split with a seeded shuffle. Each user contributes
/// `round(ratio * n)` items (at least one) to the first part; both parts keep
/// the input order.
pub fn split_stratified<T, F>(items: &[T], ratio: f64, seed: u64, user_of: F) -> (Vec<T>, Vec<T>)
where
    T: Clone,
    F: Fn(&T) -> &str,
{
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        groups.entry(user_of(it)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_first = vec![false; items.len()];
    for idx in groups.values_mut() {
        idx.shuffle(&mut rng);
        let take = ((idx.len() as f64 * ratio).round() as usize).clamp(1, idx.len());
        for &i in &idx[..take] {
            in_first[i] = true;
        }
    }
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (it, f) in items.iter().zip(in_first) {
        if f {
            first.push(it.clone());
        } else {
            second.push(it.clone());
        }
    }
    (first, second)
}

/// Equal number of items per user (`per_user`, capped by the smallest
/// group), drawn with a seeded shuffle; input order preserved.
pub fn balanced_subsample<T, F>(items: &[T], per_user: Option<usize>, seed: u64, user_of: F) -> Vec<T>
where
    T: Clone,
    F: Fn(&T) -> &str,
{
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        groups.entry(user_of(it)).or_default().push(i);
    }
    let smallest = groups.values().map(Vec::len).min().unwrap_or(0);
    let take = per_user.map_or(smallest, |p| p.min(smallest));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; items.len()];
    for idx in groups.values_mut() {
        idx.shuffle(&mut rng);
        for &i in &idx[..take] {
            keep[i] = true;
        }
    }
    items.iter().zip(keep).filter_map(|(it, k)| k.then(|| it.clone())).collect()
}

/// Settings for the repeated split/fit/evaluate protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalProtocol {
    /// Learning share of the genuine queries; the rest is the test set.
    pub split_ratio: f64,
    /// Share of the learning slice used for fitting; the rest is validation.
    pub fit_ratio: f64,
    pub repeats: usize,
    /// Few-shot training: equal number of queries per user.
    pub shots_per_user: Option<usize>,
    pub train: TrainConfig,
    pub slack: f64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            split_ratio: 0.85,
            fit_ratio: 0.85,
            repeats: 5,
            shots_per_user: None,
            train: TrainConfig::classifier(0),
            slack: DEFAULT_SUPERVISED_SLACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub metrics: Metrics,
    /// Fraction of masquerade queries flagged (any reason).
    pub detection_rate: f64,
    /// Fraction of genuine held-out queries flagged.
    pub false_abnormal_rate: f64,
    /// `false_abnormal_rate` restricted to each user's held-out queries.
    pub false_abnormal_by_user: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub runs: Vec<RunOutcome>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

impl EvalReport {
    pub fn mean_precision(&self) -> Option<f64> {
        mean_defined(self.runs.iter().map(|r| r.metrics.precision))
    }
    pub fn mean_recall(&self) -> Option<f64> {
        mean_defined(self.runs.iter().map(|r| r.metrics.recall))
    }
    pub fn mean_f1(&self) -> Option<f64> {
        mean_defined(self.runs.iter().map(|r| r.metrics.f1))
    }
    pub fn mean_detection_rate(&self) -> f64 {
        self.runs.iter().map(|r| r.detection_rate).sum::<f64>() / self.runs.len() as f64
    }
    pub fn mean_false_abnormal_rate(&self) -> f64 {
        self.runs.iter().map(|r| r.false_abnormal_rate).sum::<f64>() / self.runs.len() as f64
    }
    pub fn mean_false_abnormal_rate_for(&self, user: &str) -> Option<f64> {
        mean_defined(self.runs.iter().map(|r| r.false_abnormal_by_user.get(user).copied()))
    }

    /// `run,seed,precision,recall,f1` rows plus a final `mean` row; undefined
    /// values are written as empty cells.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("run,seed,precision,recall,f1\n");
        for (i, r) in self.runs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                i,
                r.seed,
                cell(r.metrics.precision),
                cell(r.metrics.recall),
                cell(r.metrics.f1)
            );
        }
        let _ = writeln!(
            out,
            "mean,,{},{},{}",
            cell(self.mean_precision()),
            cell(self.mean_recall()),
            cell(self.mean_f1())
        );
        out
    }
}

/// Fitted supervised tier from one learning slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedFit {
    pub model: ClassifierModel,
    pub matrix: ProbabilityMatrix,
    pub thresholds: UserThresholds,
}

/// Splits `learning` into fit/validation, trains, and derives thresholds.
pub fn learn_supervised(
    learning: &[LabeledQuery],
    fit_ratio: f64,
    shots_per_user: Option<usize>,
    train: &TrainConfig,
    slack: f64,
) -> Result<SupervisedFit, ClassifierError> {
    let (fit, validation) = split_stratified(learning, fit_ratio, train.seed, |q| q.claimed_user.as_str());
    let fit = match shots_per_user {
        Some(_) => balanced_subsample(&fit, shots_per_user, train.seed ^ 0x5eed, |q| q.claimed_user.as_str()),
        None => fit,
    };
    let model = fit_classifier(&fit, train)?;
    let matrix = build_probability_matrix(&model, &validation)?;
    let thresholds = derive_thresholds(&matrix).with_slack(slack);
    Ok(SupervisedFit {
        model,
        matrix,
        thresholds,
    })
}

/// Repeated protocol: per repeat `r` (seed `train.seed + r`), split genuine
/// queries into learning/test, fit on learning, and evaluate on held-out
/// genuine queries (truth Normal) plus every masquerade query (truth
/// Abnormal).
pub fn evaluate_repeats(
    genuine: &[LabeledQuery],
    masquerade: &[LabeledQuery],
    protocol: &EvalProtocol,
) -> Result<EvalReport, ClassifierError> {
    let mut runs = Vec::with_capacity(protocol.repeats);
    for r in 0..protocol.repeats {
        let seed = protocol.train.seed.wrapping_add(r as u64);
        let (learning, held_out) = split_stratified(genuine, protocol.split_ratio, seed, |q| q.claimed_user.as_str());
        let train = TrainConfig {
            seed,
            ..protocol.train.clone()
        };
        let fit = learn_supervised(&learning, protocol.fit_ratio, protocol.shots_per_user, &train, protocol.slack)?;
        let mut test: Vec<(LabeledQuery, Verdict)> = held_out.into_iter().map(|q| (q, Verdict::Normal)).collect();
        test.extend(masquerade.iter().cloned().map(|q| (q, Verdict::Abnormal)));

        let mut pairs = Vec::with_capacity(test.len());
        let mut per_user: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for (q, truth) in &test {
            let verdict = detect(&fit.model, &fit.thresholds, q)?.verdict;
            if *truth == Verdict::Normal {
                let e = per_user.entry(q.claimed_user.clone()).or_default();
                e.0 += usize::from(verdict == Verdict::Abnormal);
                e.1 += 1;
            }
            pairs.push((verdict, *truth));
        }
        let rate = |want: Verdict| {
            let (hit, total) = pairs
                .iter()
                .filter(|(_, t)| *t == want)
                .fold((0usize, 0usize), |(h, n), (p, _)| (h + usize::from(*p == Verdict::Abnormal), n + 1));
            if total == 0 {
                0.0
            } else {
                hit as f64 / total as f64
            }
        };
        let detection_rate = rate(Verdict::Abnormal);
        let false_abnormal_rate = rate(Verdict::Normal);
        runs.push(RunOutcome {
            seed,
            metrics: Metrics::from_pairs(pairs),
            detection_rate,
            false_abnormal_rate,
            false_abnormal_by_user: per_user
                .into_iter()
                .map(|(u, (hit, total))| (u, hit as f64 / total as f64))
                .collect(),
        });
    }
    Ok(EvalReport { runs })
}
