//! Synthetic workload over a fixed nine-table schema: role-scoped normal
//! corpora, outsider attack injection, and insider masquerade injection.
//!
//! Normal queries are emitted already parameterized (`?` in literal
//! positions). A tenth of them are rewritten with concrete literals and mixed
//! case so the normalizer is exercised end to end; both forms normalize to the
//! same text.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AttackKind, CorpusRecord, GroundTruth};
use crate::normalize::{fnv1a64, normalize_str};

pub const BUILTIN_SCHEMA: &str = include_str!("../data/schema_v1.json");
pub const SHORT_TARGET_TOKENS: f64 = 12.0;
pub const RAW_VARIANT_RATE: f64 = 0.1;
pub const DEFAULT_LONG_MEAN: usize = 200;
pub const DEFAULT_LONG_MAX: usize = 1900;
/// Long-mode targets at or below this collapse to short mode.
pub const SHORT_MODE_LIMIT: usize = 20;
const LONG_MIN_TOKENS: usize = 24;
/// Upper bound on how far one appended clause can overshoot a length target.
const LONG_OVERSHOOT: usize = 16;
const BUCKET_TRIES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("role {role:?}: only {produced} unique templates found, {requested} requested")]
    ExhaustedTemplates {
        role: String,
        requested: usize,
        produced: usize,
    },
    #[error("role {role:?} has {available} normal queries, {requested} requested")]
    InsufficientSource {
        role: String,
        available: usize,
        requested: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Privilege {
    Select,
    Insert,
    Update,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDef {
    pub name: String,
    pub base: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub object: String,
    pub columns: Vec<String>,
    pub privileges: Vec<Privilege>,
}

impl Grant {
    pub fn allows(&self, p: Privilege) -> bool {
        self.privileges.contains(&p)
    }
}

/// Statement mix and habits of one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleStyle {
    pub select_weight: f64,
    pub aggregate_weight: f64,
    pub update_weight: f64,
    pub insert_weight: f64,
    pub where_rate: f64,
    pub order_by_rate: f64,
    /// Selects exactly one sensitive column whenever the object has one.
    pub one_sensitive: bool,
    pub operators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub name: String,
    pub style: RoleStyle,
    pub grants: Vec<Grant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub version: u32,
    pub tables: Vec<TableDef>,
    pub views: Vec<ViewDef>,
    pub sensitive_columns: Vec<String>,
    pub roles: Vec<RoleSpec>,
}

impl SchemaSpec {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_SCHEMA).expect("built-in schema is valid")
    }

    pub fn from_json(s: &str) -> Result<Self, GeneratorError> {
        let spec: Self = serde_json::from_str(s).map_err(|e| GeneratorError::Schema(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn role(&self, name: &str) -> Result<&RoleSpec, GeneratorError> {
        self.roles
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| GeneratorError::UnknownRole(name.to_owned()))
    }

    pub fn role_names(&self) -> Vec<&str> {
        self.roles.iter().map(|r| r.name.as_str()).collect()
    }

    /// Columns of a table or view.
    pub fn object_columns(&self, name: &str) -> Option<&[String]> {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.columns.as_slice())
            .or_else(|| self.views.iter().find(|v| v.name == name).map(|v| v.columns.as_slice()))
    }

    pub fn is_view(&self, name: &str) -> bool {
        self.views.iter().any(|v| v.name == name)
    }

    pub fn is_sensitive(&self, column: &str) -> bool {
        self.sensitive_columns.iter().any(|c| c == column)
    }

    pub fn attribute_count(&self) -> usize {
        self.tables.iter().flat_map(|t| &t.columns).collect::<HashSet<_>>().len()
    }

    /// Sensitive columns appearing in any of the role's grants.
    pub fn sensitive_grants(&self, role: &RoleSpec) -> Vec<String> {
        let mut out: Vec<String> = role
            .grants
            .iter()
            .flat_map(|g| &g.columns)
            .filter(|c| self.is_sensitive(c))
            .cloned()
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let err = |m: String| Err(GeneratorError::Schema(m));
        for v in &self.views {
            let Some(base) = self.tables.iter().find(|t| t.name == v.base) else {
                return err(format!("view {} has unknown base {}", v.name, v.base));
            };
            if let Some(c) = v.columns.iter().find(|c| !base.columns.contains(c)) {
                return err(format!("view {} exposes {c}, not a column of {}", v.name, v.base));
            }
        }
        for c in &self.sensitive_columns {
            if !self.tables.iter().any(|t| t.columns.contains(c)) {
                return err(format!("sensitive column {c} is not in any table"));
            }
        }
        for r in &self.roles {
            if r.grants.is_empty() {
                return err(format!("role {} has no grants", r.name));
            }
            for g in &r.grants {
                let Some(cols) = self.object_columns(&g.object) else {
                    return err(format!("role {} granted unknown object {}", r.name, g.object));
                };
                if let Some(c) = g.columns.iter().find(|c| !cols.contains(c)) {
                    return err(format!("role {} granted {c} on {}, which lacks it", r.name, g.object));
                }
                if self.is_view(&g.object) && !g.privileges.iter().all(|p| *p == Privilege::Select) {
                    return err(format!("role {} has a write grant on view {}", r.name, g.object));
                }
            }
        }
        let broad = self.roles.iter().filter(|r| self.sensitive_grants(r).len() > 1).count();
        if broad > 1 {
            return err("more than one role holds several sensitive columns".into());
        }
        let overlap = self
            .objects()
            .iter()
            .any(|o| self.roles.iter().filter(|r| r.grants.iter().any(|g| &g.object == o)).count() >= 2);
        if !overlap {
            return err("no object is shared by two roles".into());
        }
        Ok(())
    }

    fn objects(&self) -> Vec<String> {
        self.tables
            .iter()
            .map(|t| t.name.clone())
            .chain(self.views.iter().map(|v| v.name.clone()))
            .collect()
    }
}

/// Generated records plus the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub records: Vec<CorpusRecord>,
    pub generation_seed: u64,
}

impl GeneratedCorpus {
    pub fn new(generation_seed: u64) -> Self {
        Self {
            records: Vec::new(),
            generation_seed,
        }
    }

    /// Appends records, renumbering `seq` to continue after the current tail.
    pub fn extend(&mut self, records: impl IntoIterator<Item = CorpusRecord>) {
        for mut r in records {
            r.seq = self.records.len() as u64;
            self.records.push(r);
        }
    }

    pub fn to_jsonl(&self) -> String {
        crate::corpus::to_jsonl(&self.records)
    }
}

fn role_rng(seed: u64, role: &str, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(role.as_bytes()).rotate_left(17) ^ salt)
}

fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

struct Builder<'a> {
    schema: &'a SchemaSpec,
    role: &'a RoleSpec,
}

/// `n` distinct entries of `from`, kept in their original (declaration) order.
fn pick_ordered<T: Clone>(rng: &mut ChaCha8Rng, from: &[T], n: usize) -> Vec<T> {
    let mut idx = rand::seq::index::sample(rng, from.len(), n.min(from.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| from[i].clone()).collect()
}

/// A run of `n` adjacent entries of `from` at a random offset.
fn pick_run<T: Clone>(rng: &mut ChaCha8Rng, from: &[T], n: usize) -> Vec<T> {
    let n = n.min(from.len());
    let start = rng.random_range(0..=from.len() - n);
    from[start..start + n].to_vec()
}

impl Builder<'_> {
    fn plain_columns<'g>(&self, g: &'g Grant) -> Vec<&'g String> {
        g.columns.iter().filter(|c| !self.schema.is_sensitive(c)).collect()
    }

    fn select_list(&self, rng: &mut ChaCha8Rng, g: &Grant, max: usize) -> Vec<String> {
        let plain = self.plain_columns(g);
        let sensitive: Vec<&String> = g.columns.iter().filter(|c| self.schema.is_sensitive(c)).collect();
        let n = rng.random_range(1..=max.min(g.columns.len()));
        if self.role.style.one_sensitive && !sensitive.is_empty() {
            let secret = *sensitive.choose(rng).expect("non-empty");
            let mut cols = pick_run(rng, &plain, n - 1);
            cols.push(secret);
            cols.sort_by_key(|c| g.columns.iter().position(|x| x == *c));
            cols.into_iter().cloned().collect()
        } else {
            pick_run(rng, &g.columns, n)
        }
    }

    fn predicate(&self, rng: &mut ChaCha8Rng, g: &Grant) -> String {
        let col = self.predicate_column(rng, g);
        self.compare(rng, &col)
    }

    fn compare(&self, rng: &mut ChaCha8Rng, col: &str) -> String {
        let op = self.role.style.operators.choose(rng).map_or("=", String::as_str);
        format!("{col} {op} ?")
    }

    fn where_clause(&self, rng: &mut ChaCha8Rng, g: &Grant, always: bool) -> String {
        if !always && !rng.random_bool(self.role.style.where_rate.clamp(0.0, 1.0)) {
            return String::new();
        }
        let n = rng.random_range(1..=2);
        let cols = pick_ordered(rng, &self.plain_columns(g), n);
        let preds: Vec<String> = cols.iter().map(|c| self.compare(rng, c)).collect();
        format!(" where {}", preds.join(" and "))
    }

    fn order_by(&self, rng: &mut ChaCha8Rng, g: &Grant) -> String {
        if rng.random_bool(self.role.style.order_by_rate.clamp(0.0, 1.0)) {
            let plain = self.plain_columns(g);
            if let Some(c) = plain.choose(rng) {
                return format!(" order by {c}");
            }
        }
        String::new()
    }

    fn select(&self, rng: &mut ChaCha8Rng, g: &Grant) -> String {
        let cols = self.select_list(rng, g, 4);
        let always = self.role.style.where_rate >= 1.0;
        format!(
            "select {} from {}{}{}",
            cols.join(" , "),
            g.object,
            self.where_clause(rng, g, always),
            self.order_by(rng, g)
        )
    }

    fn aggregate(&self, rng: &mut ChaCha8Rng, g: &Grant) -> String {
        let plain = self.plain_columns(g);
        let counted = plain.choose(rng).map_or_else(|| g.columns[0].clone(), |c| (*c).clone());
        if rng.random_bool(0.5) {
            let always = self.role.style.where_rate >= 1.0;
            format!("select count ( {counted} ) from {}{}", g.object, self.where_clause(rng, g, always))
        } else {
            let key = plain.choose(rng).map_or_else(|| counted.clone(), |c| (*c).clone());
            format!(
                "select {key} , count ( {counted} ) from {} group by {key}{}",
                g.object,
                self.order_by(rng, g)
            )
        }
    }

    fn update(&self, rng: &mut ChaCha8Rng, g: &Grant) -> String {
        let plain = self.plain_columns(g);
        let n = rng.random_range(1..=2.min(plain.len()).max(1));
        let sets: Vec<String> = pick_ordered(rng, &plain, n).iter().map(|c| format!("{c} = ?")).collect();
        format!("update {} set {}{}", g.object, sets.join(" , "), self.where_clause(rng, g, true))
    }

    fn insert(&self, rng: &mut ChaCha8Rng, g: &Grant) -> String {
        let n = rng.random_range(1..=3.min(g.columns.len()));
        let cols = pick_run(rng, &g.columns, n);
        let marks = vec!["?"; n].join(" , ");
        format!("insert into {} ( {} ) values ( {marks} )", g.object, cols.join(" , "))
    }

    fn grants_with(&self, p: Privilege) -> Vec<&Grant> {
        self.role.grants.iter().filter(|g| g.allows(p)).collect()
    }

    fn statement(&self, rng: &mut ChaCha8Rng) -> String {
        let s = &self.role.style;
        let selects = self.grants_with(Privilege::Select);
        let updates = self.grants_with(Privilege::Update);
        let inserts = self.grants_with(Privilege::Insert);
        let weights = [
            if selects.is_empty() { 0.0 } else { s.select_weight },
            if selects.is_empty() { 0.0 } else { s.aggregate_weight },
            if updates.is_empty() { 0.0 } else { s.update_weight },
            if inserts.is_empty() { 0.0 } else { s.insert_weight },
        ];
        let kind = WeightedIndex::new(weights).map_or(0, |w| w.sample(rng));
        let pool = match kind {
            0 | 1 => &selects,
            2 => &updates,
            _ => &inserts,
        };
        let g = *pool.choose(rng).expect("non-empty grant pool");
        match kind {
            0 => self.select(rng, g),
            1 => self.aggregate(rng, g),
            2 => self.update(rng, g),
            _ => self.insert(rng, g),
        }
    }

    /// Multi-join, nested statement of at least `target` tokens.
    fn long_statement(&self, rng: &mut ChaCha8Rng, target: usize) -> String {
        let selects = self.grants_with(Privilege::Select);
        let base = *selects.choose(rng).expect("select grant");
        let mut parts = vec![format!("select {} from {}", self.select_list(rng, base, 6).join(" , "), base.object)];
        let mut scope = vec![base];
        for _ in 0..rng.random_range(0..=2) {
            let other = *selects.choose(rng).expect("select grant");
            let (a, b) = (self.predicate_column(rng, base), self.predicate_column(rng, other));
            parts.push(format!("join {} on {a} = {b}", other.object));
            scope.push(other);
        }
        let first = *scope.choose(rng).expect("scope");
        parts.push(format!("where {}", self.predicate(rng, first)));
        let mut len: usize = parts.iter().map(|p| token_count(p)).sum();
        while len < target {
            let g = *scope.choose(rng).expect("scope");
            let clause = if rng.random_bool(0.6) {
                format!("and {}", self.predicate(rng, g))
            } else {
                let inner = *selects.choose(rng).expect("select grant");
                format!(
                    "and {} in ( select {} from {} where {} )",
                    self.predicate_column(rng, g),
                    self.predicate_column(rng, inner),
                    inner.object,
                    self.predicate(rng, inner)
                )
            };
            len += token_count(&clause);
            parts.push(clause);
        }
        parts.join(" ")
    }

    fn predicate_column(&self, rng: &mut ChaCha8Rng, g: &Grant) -> String {
        let plain = self.plain_columns(g);
        plain.choose(rng).map_or_else(|| g.columns[0].clone(), |c| (*c).clone())
    }
}

const WORDS: [&str; 6] = ["alice", "north", "q3", "2021-01-05", "acme%", "x"];

/// Replaces `?` markers with concrete literals and randomizes keyword case.
fn with_literals(template: &str, rng: &mut ChaCha8Rng) -> String {
    let upper = rng.random_bool(0.5);
    template
        .split(' ')
        .map(|tok| {
            if tok == "?" {
                match rng.random_range(0..4) {
                    0 => rng.random_range(0..10_000).to_string(),
                    1 => format!("-{}", rng.random_range(1..500)),
                    2 => format!("{}.{:02}", rng.random_range(0..1000), rng.random_range(0..100)),
                    _ => format!("'{}'", WORDS.choose(rng).expect("words")),
                }
            } else if upper {
                tok.to_uppercase()
            } else {
                tok.to_owned()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn normal_record(rng: &mut ChaCha8Rng, template: &str, role: &str, seq: u64) -> CorpusRecord {
    let query = if rng.random_bool(RAW_VARIANT_RATE) {
        with_literals(template, rng)
    } else {
        template.to_owned()
    };
    CorpusRecord::new(query, Some(role), seq).with_truth(GroundTruth::Normal)
}

fn normalized(text: &str) -> String {
    normalize_str(text).expect("generated SQL normalizes")
}

/// `count` distinct (after normalization) queries in the role's grant set,
/// with lengths steered toward a mean of 12 tokens.
pub fn generate_normal(
    schema: &SchemaSpec,
    role: &str,
    count: usize,
    seed: u64,
) -> Result<Vec<CorpusRecord>, GeneratorError> {
    let spec = schema.role(role)?;
    if count == 0 {
        return Err(GeneratorError::InvalidArgument("count must be at least 1".into()));
    }
    let builder = Builder { schema, role: spec };
    let mut rng = role_rng(seed, role, 0);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = 200 * count + 2000;
    let mut attempts = 0;
    while out.len() < count && attempts < budget {
        // Lengths 8..=16 are equally likely, centred on the target mean.
        let target = rng.random_range(8..=16i64);
        let mut best: Option<(String, String, i64)> = None;
        for _ in 0..BUCKET_TRIES {
            attempts += 1;
            let t = builder.statement(&mut rng);
            let norm = normalized(&t);
            if seen.contains(&norm) {
                continue;
            }
            let gap = (token_count(&norm) as i64 - target).abs();
            if best.as_ref().is_none_or(|b| gap < b.2) {
                best = Some((t, norm, gap));
            }
            if gap <= 1 {
                break;
            }
        }
        if let Some((t, norm, _)) = best {
            seen.insert(norm);
            out.push(normal_record(&mut rng, &t, role, out.len() as u64));
        }
    }
    if out.len() < count {
        return Err(GeneratorError::ExhaustedTemplates {
            role: role.to_owned(),
            requested: count,
            produced: out.len(),
        });
    }
    Ok(out)
}

/// Long multi-join queries whose lengths follow a Gamma(2) law rescaled to a
/// mean of `target_mean_tokens`, capped at `max_tokens`.
pub fn generate_long(
    schema: &SchemaSpec,
    role: &str,
    count: usize,
    target_mean_tokens: usize,
    max_tokens: usize,
    seed: u64,
) -> Result<Vec<CorpusRecord>, GeneratorError> {
    if target_mean_tokens <= SHORT_MODE_LIMIT {
        return generate_normal(schema, role, count, seed);
    }
    let spec = schema.role(role)?;
    if count == 0 {
        return Err(GeneratorError::InvalidArgument("count must be at least 1".into()));
    }
    if max_tokens < target_mean_tokens + LONG_OVERSHOOT {
        return Err(GeneratorError::InvalidArgument(format!(
            "max_tokens {max_tokens} too small for mean {target_mean_tokens}"
        )));
    }
    let builder = Builder { schema, role: spec };
    let mut rng = role_rng(seed, role, 0x10b6);
    let gamma = Gamma::new(2.0, target_mean_tokens as f64 / 2.0).expect("valid gamma");
    let draws: Vec<f64> = (0..count).map(|_| gamma.sample(&mut rng)).collect();
    let scale = target_mean_tokens as f64 * count as f64 / draws.iter().sum::<f64>();
    let ceiling = max_tokens - LONG_OVERSHOOT;

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for d in draws {
        let target = ((d * scale).round() as usize).clamp(LONG_MIN_TOKENS, ceiling);
        let mut accepted = None;
        for _ in 0..BUCKET_TRIES {
            let t = builder.long_statement(&mut rng, target);
            let norm = normalized(&t);
            if seen.insert(norm) {
                accepted = Some(t);
                break;
            }
        }
        let Some(t) = accepted else {
            return Err(GeneratorError::ExhaustedTemplates {
                role: role.to_owned(),
                requested: count,
                produced: out.len(),
            });
        };
        out.push(normal_record(&mut rng, &t, role, out.len() as u64));
    }
    Ok(out)
}

fn attack_record(query: String, user: &str, kind: AttackKind) -> CorpusRecord {
    CorpusRecord::new(query, Some(user), 0).with_truth(GroundTruth::ExternalAttack { attack: kind })
}

fn data_leak(schema: &SchemaSpec, rng: &mut ChaCha8Rng, j: usize) -> CorpusRecord {
    let outsiders: Vec<&RoleSpec> = schema
        .roles
        .iter()
        .filter(|r| schema.sensitive_grants(r).len() <= 1)
        .collect();
    let claimed = outsiders[j % outsiders.len().max(1)];
    if j == 0 {
        return attack_record(
            "select sensitive_c1, sensitive_c2 from T1".into(),
            &claimed.name,
            AttackKind::DataLeak,
        );
    }
    let held = schema.sensitive_grants(claimed);
    let foreign: Vec<&String> = schema.sensitive_columns.iter().filter(|c| !held.contains(c)).collect();
    let n = rng.random_range(2..=3.min(foreign.len()).max(2)).min(foreign.len());
    let cols: Vec<&String> = foreign.choose_multiple(rng, n).copied().collect();
    let mut tables: Vec<&str> = Vec::new();
    for c in &cols {
        let t = schema
            .tables
            .iter()
            .find(|t| t.columns.contains(c))
            .expect("sensitive column has a table");
        if !tables.contains(&t.name.as_str()) {
            tables.push(&t.name);
        }
    }
    let mut list: Vec<String> = cols.iter().map(|c| (*c).clone()).collect();
    if rng.random_bool(0.5) {
        let t = schema.tables.iter().find(|t| t.name == tables[0]).expect("table");
        let plain: Vec<&String> = t.columns.iter().filter(|c| !schema.is_sensitive(c)).collect();
        list.extend(plain.choose_multiple(rng, 2).map(|c| (*c).clone()));
    }
    attack_record(
        format!("select {} from {}", list.join(" , "), tables.join(" , ")),
        &claimed.name,
        AttackKind::DataLeak,
    )
}

fn sabotage(schema: &SchemaSpec, rng: &mut ChaCha8Rng, j: usize) -> CorpusRecord {
    let claimed = &schema.roles.choose(rng).expect("roles").name;
    let query = match j {
        0 => "DROP TABLE T3".to_owned(),
        1 => "UPDATE T1 SET COL1 = ? WHERE COL2 = ?".to_owned(),
        _ => {
            let t = schema.tables.choose(rng).expect("tables");
            let c = t.columns.choose(rng).expect("columns");
            match rng.random_range(0..6) {
                0 => format!("drop table {}", t.name),
                1 => format!("truncate table {}", t.name),
                2 => format!("delete from {}", t.name),
                3 => format!("update {} set {c} = ?", t.name),
                4 => format!("drop view {}", schema.views.choose(rng).expect("views").name),
                _ => format!("alter table {} drop column {c}", t.name),
            }
        }
    };
    attack_record(query, claimed, AttackKind::Sabotage)
}

fn sqli(schema: &SchemaSpec, rng: &mut ChaCha8Rng, j: usize) -> CorpusRecord {
    let role = schema.roles.choose(rng).expect("roles");
    let query = match j {
        0 => "SELECT * FROM T1 WHERE COL1 = ? OR ? = ?".to_owned(),
        1 => "SELECT * FROM T1 WHERE COL1 = ? AND COL2 = ? OR ? = ?".to_owned(),
        _ => {
            let g = role.grants.choose(rng).expect("grants");
            let plain: Vec<&String> = g.columns.iter().filter(|c| !schema.is_sensitive(c)).collect();
            let list = if rng.random_bool(0.5) {
                "*".to_owned()
            } else {
                plain.choose_multiple(rng, 2).map(|c| c.as_str()).collect::<Vec<_>>().join(" , ")
            };
            let n = rng.random_range(1..=2);
            let preds: Vec<String> = plain
                .choose_multiple(rng, n)
                .map(|c| format!("{c} = ?"))
                .collect();
            let head = format!("select {list} from {} where {}", g.object, preds.join(" and "));
            if rng.random_bool(0.5) {
                let tail = ["or ? = ?", "OR 1=1", "or 'a'='a'", "OR 2 = 2"].choose(rng).expect("tails");
                format!("{} {tail}", with_literals(&head, rng))
            } else {
                format!("{head} or ? = ?")
            }
        }
    };
    attack_record(query, &role.name, AttackKind::Sqli)
}

/// Outsider attacks, cycling through `kinds` (sorted) so each kind gets an
/// even share. The first records of each kind are the canonical forms:
/// a two-column sensitive dump, `drop table t3` then an unrestricted-role
/// `update t1`, and the two tautology injections.
pub fn inject_attacks(
    schema: &SchemaSpec,
    kinds: &[AttackKind],
    count: usize,
    seed: u64,
) -> Result<Vec<CorpusRecord>, GeneratorError> {
    if kinds.is_empty() {
        return Err(GeneratorError::InvalidArgument("no attack kinds requested".into()));
    }
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa77a_c4);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let j = i / kinds.len();
        let mut rec = match kinds[i % kinds.len()] {
            AttackKind::DataLeak => data_leak(schema, &mut rng, j),
            AttackKind::Sabotage => sabotage(schema, &mut rng, j),
            AttackKind::Sqli => sqli(schema, &mut rng, j),
        };
        rec.seq = i as u64;
        out.push(rec);
    }
    Ok(out)
}

/// Appends `count` of `source`'s normal queries relabeled as `victim`.
pub fn inject_internal_masquerade(
    corpus: &GeneratedCorpus,
    victim: &str,
    source: &str,
    count: usize,
    seed: u64,
) -> Result<GeneratedCorpus, GeneratorError> {
    if victim == source {
        return Err(GeneratorError::InvalidArgument("victim and source are the same role".into()));
    }
    for role in [victim, source] {
        if !corpus.records.iter().any(|r| r.user.as_deref() == Some(role)) {
            return Err(GeneratorError::UnknownRole(role.to_owned()));
        }
    }
    let mut out = corpus.clone();
    if count == 0 {
        return Ok(out);
    }
    let pool: Vec<usize> = corpus
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.user.as_deref() == Some(source) && r.truth == Some(GroundTruth::Normal))
        .map(|(i, _)| i)
        .collect();
    if pool.len() < count {
        return Err(GeneratorError::InsufficientSource {
            role: source.to_owned(),
            available: pool.len(),
            requested: count,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3a5c);
    let mut picked: Vec<usize> = pool.choose_multiple(&mut rng, count).copied().collect();
    picked.sort_unstable();
    out.extend(picked.into_iter().map(|i| {
        let mut r = corpus.records[i].clone();
        r.user = Some(victim.to_owned());
        r.truth = Some(GroundTruth::InternalMasquerade {
            source_user: source.to_owned(),
        });
        r
    }));
    Ok(out)
}

/// Parameters for a complete learning + detection scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub learning_per_role: usize,
    pub holdout_per_role: usize,
    pub attacks: usize,
    pub attack_kinds: Vec<AttackKind>,
    pub masquerade_victim: String,
    pub masquerade_source: String,
    pub masquerade_count: usize,
    pub long: bool,
    pub long_mean_tokens: usize,
    pub long_max_tokens: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            learning_per_role: 100,
            holdout_per_role: 20,
            attacks: 30,
            attack_kinds: AttackKind::ALL.to_vec(),
            masquerade_victim: "HR".into(),
            masquerade_source: "Finance".into(),
            masquerade_count: 30,
            long: false,
            long_mean_tokens: DEFAULT_LONG_MEAN,
            long_max_tokens: DEFAULT_LONG_MAX,
        }
    }
}

/// Learning corpus (normal queries only) and a detection corpus (held-out
/// normals, outsider attacks, then masquerades drawn from the source role's
/// learning queries).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub learning: GeneratedCorpus,
    pub detection: GeneratedCorpus,
}

pub fn generate_scenario(schema: &SchemaSpec, p: &ScenarioParams, seed: u64) -> Result<Scenario, GeneratorError> {
    let mut learning = GeneratedCorpus::new(seed);
    let mut detection = GeneratedCorpus::new(seed);
    let per_role = p.learning_per_role + p.holdout_per_role;
    for role in schema.role_names() {
        let records = if p.long {
            generate_long(schema, role, per_role, p.long_mean_tokens, p.long_max_tokens, seed)?
        } else {
            generate_normal(schema, role, per_role, seed)?
        };
        let (learn, hold) = records.split_at(p.learning_per_role);
        learning.extend(learn.iter().cloned());
        detection.extend(hold.iter().cloned());
    }
    if p.attacks > 0 {
        detection.extend(inject_attacks(schema, &p.attack_kinds, p.attacks, seed.wrapping_add(1))?);
    }
    if p.masquerade_count > 0 {
        let injected = inject_internal_masquerade(
            &learning,
            &p.masquerade_victim,
            &p.masquerade_source,
            p.masquerade_count,
            seed.wrapping_add(2),
        )?;
        detection.extend(injected.records.into_iter().skip(learning.records.len()));
    }
    Ok(Scenario { learning, detection })
}
