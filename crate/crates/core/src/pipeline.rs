//! Batch commands behind the `sqlsentinel` binary: normalize, gen, learn,
//! detect, eval. Each command reads its inputs, writes its outputs and a
//! [`RunManifest`] next to them, and returns a small summary for the caller
//! to print.
//!
//! Bundle layout written by [`cmd_learn`] and read by [`cmd_detect`]:
//!
//! ```text
//! encoder.json              encoder settings used for the learning corpus
//! ensemble.json             tier-1 detectors, normalization, threshold
//! classifier.json           tier-2 softmax model
//! thresholds.json           per-user thresholds (slack comes from the config)
//! probability_matrix.csv    validation probabilities behind the thresholds
//! learn_manifest.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{
    self, detect, evaluate_repeats, learn_supervised, ClassifierError, ClassifierModel, EvalProtocol, EvalReport,
    LabeledQuery, Reason, SupervisedVerdict, UserThresholds,
};
use crate::corpus::{self, CorpusError, CorpusRecord, GroundTruth};
use crate::detectors::ocsvm::OcsvmParams;
use crate::detectors::pca::DEFAULT_TARGET_RATIO;
use crate::embedding::{encode_query, read_external_embeddings, EmbeddingError, EmbeddingVector, EncoderConfig, EncoderKind};
use crate::ensemble::{self, fit_ensemble, score_batch, AnomalyVerdict, EnsembleError, EnsembleModel, EnsembleParams};
use crate::generator::{self, GeneratorError, ScenarioParams, SchemaSpec};
use crate::normalize::NormalizedQuery;
use crate::optim::TrainConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const ENCODER_FILE: &str = "encoder.json";
pub const ENSEMBLE_FILE: &str = "ensemble.json";
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const MATRIX_FILE: &str = "probability_matrix.csv";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

/// Settings shared by all commands. Loaded from TOML; every field has a
/// default, and the top-level `seed` replaces the seeds of both training
/// configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    /// Autoencoder training.
    pub train: TrainConfig,
    /// Role classifier training.
    pub classifier_train: TrainConfig,
    pub nu: f64,
    pub gamma: Option<f64>,
    pub pca_target_ratio: f64,
    pub slack_unsup: f64,
    pub slack_sup: f64,
    /// Learning share for the classifier: fit vs. validation inside
    /// `learn`, and learning vs. test inside `eval`.
    pub split_ratio: f64,
    pub repeats: usize,
    pub shots_per_user: Option<usize>,
    /// External embedding file for the input corpus (required when
    /// `encoder.kind = "external"`).
    pub embeddings: Option<PathBuf>,
    /// Schema for `gen`; the built-in schema when unset.
    pub schema: Option<PathBuf>,
    pub scenario: ScenarioParams,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub input: Option<PathBuf>,
    pub bundle_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            encoder: EncoderConfig::default(),
            train: TrainConfig::autoencoder(0),
            classifier_train: TrainConfig::classifier(0),
            nu: OcsvmParams::default().nu,
            gamma: None,
            pca_target_ratio: DEFAULT_TARGET_RATIO,
            slack_unsup: ensemble::DEFAULT_SLACK,
            slack_sup: classifier::DEFAULT_SUPERVISED_SLACK,
            split_ratio: 0.85,
            repeats: 5,
            shots_per_user: None,
            embeddings: None,
            schema: None,
            scenario: ScenarioParams::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml_str(&read_text(path)?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.split_ratio > 0.5 && self.split_ratio < 0.95) {
            return bad(format!("split_ratio must lie in (0.5, 0.95), got {}", self.split_ratio));
        }
        if self.repeats < 1 {
            return bad("repeats must be at least 1".into());
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad(format!("nu must lie in (0, 1], got {}", self.nu));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if !(self.pca_target_ratio > 0.0 && self.pca_target_ratio <= 1.0) {
            return bad(format!("pca_target_ratio must lie in (0, 1], got {}", self.pca_target_ratio));
        }
        for (name, v) in [("slack_unsup", self.slack_unsup), ("slack_sup", self.slack_sup)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if self.slack_sup >= 1.0 {
            return bad(format!("slack_sup must be below 1, got {}", self.slack_sup));
        }
        if self.shots_per_user == Some(0) {
            return bad("shots_per_user must be positive".into());
        }
        for (name, t) in [("train", &self.train), ("classifier_train", &self.classifier_train)] {
            if !t.is_valid() {
                return bad(format!("{name}: epochs, batch_size and learning_rate must be positive"));
            }
        }
        self.encoder.validate()?;
        Ok(())
    }

    /// Applies the top-level seed to both training configs.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.classifier_train.seed = seed;
        self
    }

    pub fn ensemble_params(&self) -> EnsembleParams {
        EnsembleParams {
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
            ocsvm: OcsvmParams {
                nu: self.nu,
                gamma: self.gamma,
                ..OcsvmParams::default()
            },
            pca_target_ratio: self.pca_target_ratio,
            slack: self.slack_unsup,
        }
    }

    pub fn classifier_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.classifier_train.clone()
        }
    }

    fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("run".to_owned(), self.seed),
            ("autoencoder".to_owned(), self.seed),
            ("classifier".to_owned(), self.seed),
            ("encoder_hash".to_owned(), self.encoder.seed),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance record written by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 over the newline-joined fingerprints of the processed queries.
    pub corpus_digest: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` pins both.
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    fn start(command: &str, cfg: &PipelineConfig) -> Self {
        let now = now_unix();
        Self {
            command: command.to_owned(),
            tool_version: TOOL_VERSION.to_owned(),
            config: cfg.clone(),
            seeds: cfg.seeds(),
            corpus_digest: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: now,
            finished_unix: now,
        }
    }

    fn input(&mut self, path: &Path) -> Result<(), PipelineError> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<(), PipelineError> {
        self.outputs.push(digest_file(path)?);
        Ok(())
    }

    fn finish(mut self, path: &Path) -> Result<(), PipelineError> {
        self.finished_unix = now_unix();
        write_text(path, &(serde_json::to_string_pretty(&self).expect("manifest serializes") + "\n"))
    }

    pub fn from_json(s: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(s).map_err(|e| PipelineError::Config(format!("manifest: {e}")))
    }
}

fn now_unix() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return v;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_file(path: &Path) -> Result<FileDigest, PipelineError> {
    let bytes = fs::read(path).map_err(|source| io_error(path, source))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

pub fn corpus_digest(queries: &[NormalizedQuery]) -> String {
    let joined: Vec<String> = queries.iter().map(NormalizedQuery::fingerprint_hex).collect();
    sha256_hex(joined.join("\n").as_bytes())
}

fn io_error(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| io_error(path, source))
}

fn write_text(path: &Path, body: &str) -> Result<(), PipelineError> {
    fs::write(path, body).map_err(|source| io_error(path, source))
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|source| io_error(dir, source))
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Embeds normalized queries with the hashing encoder, or aligns them with
/// an external embedding file.
pub fn embed_queries(
    encoder: &EncoderConfig,
    embeddings: Option<&Path>,
    queries: &[NormalizedQuery],
) -> Result<Vec<EmbeddingVector>, PipelineError> {
    match encoder.kind {
        EncoderKind::Hashing => Ok(queries
            .iter()
            .map(|q| encode_query(q, encoder))
            .collect::<Result<_, _>>()?),
        EncoderKind::External => {
            let path = embeddings.ok_or_else(|| {
                PipelineError::Config("encoder.kind = \"external\" requires an embeddings file".into())
            })?;
            Ok(read_external_embeddings(path, encoder.dimension, queries)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalizeSummary {
    pub read: usize,
    pub written: usize,
}

/// Normalizes and deduplicates a corpus; writes `out` and
/// `<out>.manifest.json`.
pub fn cmd_normalize(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<NormalizeSummary, PipelineError> {
    let mut manifest = RunManifest::start("normalize", cfg);
    let records = corpus::read_corpus(input)?;
    let kept = corpus::normalize_corpus(&records)?;
    let (recs, queries): (Vec<CorpusRecord>, Vec<NormalizedQuery>) = kept.into_iter().unzip();
    corpus::write_corpus(out, &recs)?;
    manifest.corpus_digest = Some(corpus_digest(&queries));
    manifest.input(input)?;
    manifest.output(out)?;
    manifest.finish(&manifest_path_for(out))?;
    log::info!("normalize: {} records read, {} written", records.len(), recs.len());
    Ok(NormalizeSummary {
        read: records.len(),
        written: recs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenSummary {
    pub learning: usize,
    pub detection: usize,
}

/// Generates a learning corpus and a labeled detection corpus into `out_dir`.
pub fn cmd_gen(cfg: &PipelineConfig, out_dir: &Path) -> Result<GenSummary, PipelineError> {
    let mut manifest = RunManifest::start("gen", cfg);
    let schema = match &cfg.schema {
        Some(path) => {
            manifest.input(path)?;
            SchemaSpec::from_json(&read_text(path)?)?
        }
        None => SchemaSpec::builtin(),
    };
    let scenario = generator::generate_scenario(&schema, &cfg.scenario, cfg.seed)?;
    ensure_dir(out_dir)?;
    let learning = out_dir.join("learning.jsonl");
    let detection = out_dir.join("detection.jsonl");
    write_text(&learning, &scenario.learning.to_jsonl())?;
    write_text(&detection, &scenario.detection.to_jsonl())?;
    manifest.output(&learning)?;
    manifest.output(&detection)?;
    manifest.finish(&out_dir.join("gen_manifest.json"))?;
    Ok(GenSummary {
        learning: scenario.learning.records.len(),
        detection: scenario.detection.records.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnSummary {
    pub queries: usize,
    pub users: Vec<String>,
    pub pca_components: usize,
    pub ensemble_threshold: f64,
    /// Users left without a threshold (no validation support).
    pub undefined_thresholds: Vec<String>,
}

/// Fits both tiers on the normal queries of `input` and writes the bundle.
pub fn cmd_learn(cfg: &PipelineConfig, input: &Path, bundle_dir: &Path) -> Result<LearnSummary, PipelineError> {
    let mut manifest = RunManifest::start("learn", cfg);
    let records = corpus::read_corpus(input)?;
    let learning: Vec<CorpusRecord> = records.into_iter().filter(CorpusRecord::is_truth_normal).collect();
    let (recs, queries): (Vec<CorpusRecord>, Vec<NormalizedQuery>) =
        corpus::normalize_corpus(&learning)?.into_iter().unzip();
    let vectors = embed_queries(&cfg.encoder, cfg.embeddings.as_deref(), &queries)?;

    let ensemble = fit_ensemble(&vectors, &cfg.ensemble_params())?;

    let mut labeled = Vec::new();
    for (rec, v) in recs.iter().zip(&vectors) {
        match &rec.user {
            Some(u) => labeled.push(LabeledQuery::new(v.clone(), u.clone())),
            None => log::warn!("learn: seq {} has no user and is left out of the classifier", rec.seq),
        }
    }
    let fit = learn_supervised(
        &labeled,
        cfg.split_ratio,
        cfg.shots_per_user,
        &cfg.classifier_config(),
        cfg.slack_sup,
    )?;
    let undefined: Vec<String> = fit
        .thresholds
        .per_user
        .iter()
        .filter(|(_, t)| t.threshold.is_none())
        .map(|(u, _)| u.clone())
        .collect();

    ensure_dir(bundle_dir)?;
    let files = [
        (ENCODER_FILE, serde_json::to_string(&cfg.encoder).expect("encoder serializes")),
        (ENSEMBLE_FILE, ensemble.to_json()),
        (CLASSIFIER_FILE, fit.model.to_json()),
        (THRESHOLDS_FILE, fit.thresholds.to_json()),
        (MATRIX_FILE, fit.matrix.to_csv()),
    ];
    manifest.input(input)?;
    if let Some(e) = &cfg.embeddings {
        manifest.input(e)?;
    }
    for (name, body) in files {
        let path = bundle_dir.join(name);
        write_text(&path, &body)?;
        manifest.output(&path)?;
    }
    manifest.corpus_digest = Some(corpus_digest(&queries));
    manifest.finish(&bundle_dir.join("learn_manifest.json"))?;
    Ok(LearnSummary {
        queries: queries.len(),
        users: fit.model.users.clone(),
        pca_components: ensemble.pca.k,
        ensemble_threshold: ensemble.threshold,
        undefined_thresholds: undefined,
    })
}

/// Loaded, read-only detection bundle.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub encoder: EncoderConfig,
    pub ensemble: EnsembleModel,
    pub classifier: ClassifierModel,
    pub thresholds: UserThresholds,
}

impl Bundle {
    /// Reads a bundle, replacing the stored slacks with the given ones.
    pub fn load(dir: &Path, slack_unsup: f64, slack_sup: f64) -> Result<Self, PipelineError> {
        let encoder: EncoderConfig = serde_json::from_str(&read_text(&dir.join(ENCODER_FILE))?)
            .map_err(|e| PipelineError::Config(format!("{ENCODER_FILE}: {e}")))?;
        let ensemble = EnsembleModel::from_json(&read_text(&dir.join(ENSEMBLE_FILE))?)?.with_slack(slack_unsup);
        let classifier = ClassifierModel::from_json(&read_text(&dir.join(CLASSIFIER_FILE))?)?;
        let thresholds = UserThresholds::from_json(&read_text(&dir.join(THRESHOLDS_FILE))?, slack_sup)?;
        if classifier.input_dim != encoder.dimension || ensemble.pca.mean.len() != encoder.dimension {
            return Err(PipelineError::Config(format!(
                "bundle models disagree with the encoder dimension {}",
                encoder.dimension
            )));
        }
        Ok(Self {
            encoder,
            ensemble,
            classifier,
            thresholds,
        })
    }
}

/// One line of `verdicts.jsonl`. `tier2` is absent when the supervised tier
/// could not judge the query; `tier2_error` then says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedVerdict {
    pub seq: u64,
    pub fingerprint: String,
    pub claimed_user: Option<String>,
    pub tier1: AnomalyVerdict,
    pub tier2: Option<SupervisedVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier2_error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DetectSummary {
    pub queries: usize,
    pub tier1_flagged: usize,
    pub tier2_normal: usize,
    pub tier2_wrong_user: usize,
    pub tier2_below_threshold: usize,
    pub tier2_errors: usize,
}

impl DetectSummary {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("queries: {}", self.queries),
            format!("tier1 flagged: {}", self.tier1_flagged),
            format!("tier2 normal: {}", self.tier2_normal),
            format!("tier2 wrong_user: {}", self.tier2_wrong_user),
            format!("tier2 below_threshold: {}", self.tier2_below_threshold),
            format!("tier2 unjudged: {}", self.tier2_errors),
        ]
    }
}

/// Scores every query of `input` against the bundle (read-only) and writes
/// `verdicts.jsonl`, `scores.csv`, `scores_histogram.csv` and
/// `detect_manifest.json` into `out_dir`.
pub fn cmd_detect(
    cfg: &PipelineConfig,
    input: &Path,
    bundle_dir: &Path,
    out_dir: &Path,
) -> Result<DetectSummary, PipelineError> {
    let mut manifest = RunManifest::start("detect", cfg);
    let bundle = Bundle::load(bundle_dir, cfg.slack_unsup, cfg.slack_sup)?;
    let records = corpus::read_corpus(input)?;
    let (recs, queries): (Vec<CorpusRecord>, Vec<NormalizedQuery>) =
        corpus::normalize_records(&records)?.into_iter().unzip();
    let vectors = embed_queries(&bundle.encoder, cfg.embeddings.as_deref(), &queries)?;
    let tier1 = score_batch(&bundle.ensemble, &vectors);

    let mut summary = DetectSummary {
        queries: recs.len(),
        ..Default::default()
    };
    let mut lines = String::new();
    for ((rec, v), t1) in recs.iter().zip(&vectors).zip(tier1.iter()) {
        summary.tier1_flagged += usize::from(t1.flagged);
        let judged = match &rec.user {
            None => Err("no claimed user".to_owned()),
            Some(u) => detect(&bundle.classifier, &bundle.thresholds, &LabeledQuery::new(v.clone(), u.clone()))
                .map_err(|e| e.to_string()),
        };
        let (tier2, tier2_error) = match judged {
            Ok(sv) => {
                match sv.reason {
                    Reason::None => summary.tier2_normal += 1,
                    Reason::WrongUser => summary.tier2_wrong_user += 1,
                    Reason::BelowThreshold => summary.tier2_below_threshold += 1,
                }
                (Some(sv), None)
            }
            Err(e) => {
                log::warn!("detect: seq {}: {e}", rec.seq);
                summary.tier2_errors += 1;
                (None, Some(e))
            }
        };
        let line = CombinedVerdict {
            seq: rec.seq,
            fingerprint: t1.fingerprint.clone(),
            claimed_user: rec.user.clone(),
            tier1: t1.clone(),
            tier2,
            tier2_error,
        };
        lines.push_str(&serde_json::to_string(&line).expect("verdict serializes"));
        lines.push('\n');
    }

    ensure_dir(out_dir)?;
    let verdicts = out_dir.join(VERDICTS_FILE);
    write_text(&verdicts, &lines)?;
    ensemble::emit_score_report(&tier1, out_dir, "scores")?;
    manifest.input(input)?;
    for name in [ENCODER_FILE, ENSEMBLE_FILE, CLASSIFIER_FILE, THRESHOLDS_FILE] {
        manifest.input(&bundle_dir.join(name))?;
    }
    if let Some(e) = &cfg.embeddings {
        manifest.input(e)?;
    }
    for name in [VERDICTS_FILE, "scores.csv", "scores_histogram.csv"] {
        manifest.output(&out_dir.join(name))?;
    }
    manifest.corpus_digest = Some(corpus_digest(&queries));
    manifest.finish(&out_dir.join("detect_manifest.json"))?;
    Ok(summary)
}

/// Runs the repeated masquerade evaluation over the concatenated `inputs`:
/// genuine queries are those labeled normal (or unlabeled) with a user,
/// masquerades those labeled as internal masquerade. Writes the metrics CSV
/// to `out` and `<out>.manifest.json`.
pub fn cmd_eval(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> Result<EvalReport, PipelineError> {
    let mut manifest = RunManifest::start("eval", cfg);
    let mut records = Vec::new();
    for path in inputs {
        records.extend(corpus::read_corpus(path)?);
        manifest.input(path)?;
    }
    let (recs, queries): (Vec<CorpusRecord>, Vec<NormalizedQuery>) =
        corpus::normalize_corpus(&records)?.into_iter().unzip();
    let vectors = embed_queries(&cfg.encoder, cfg.embeddings.as_deref(), &queries)?;
    let mut genuine = Vec::new();
    let mut masquerade = Vec::new();
    for (rec, v) in recs.iter().zip(vectors) {
        let Some(user) = rec.user.clone() else { continue };
        match rec.truth {
            None | Some(GroundTruth::Normal) => genuine.push(LabeledQuery::new(v, user)),
            Some(GroundTruth::InternalMasquerade { .. }) => masquerade.push(LabeledQuery::new(v, user)),
            Some(GroundTruth::ExternalAttack { .. }) => {}
        }
    }
    let protocol = EvalProtocol {
        split_ratio: cfg.split_ratio,
        fit_ratio: cfg.split_ratio,
        repeats: cfg.repeats,
        shots_per_user: cfg.shots_per_user,
        train: cfg.classifier_config(),
        slack: cfg.slack_sup,
    };
    let report = evaluate_repeats(&genuine, &masquerade, &protocol)?;
    write_text(out, &report.to_csv())?;
    manifest.output(out)?;
    manifest.corpus_digest = Some(corpus_digest(&queries));
    manifest.finish(&manifest_path_for(out))?;
    Ok(report)
}
