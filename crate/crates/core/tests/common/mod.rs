#![allow(dead_code)]

use std::collections::BTreeSet;

pub mod oracles;

use sqlsentinel::classifier::ProbabilityMatrix;
use sqlsentinel::corpus::CorpusRecord;
use sqlsentinel::embedding::{encode_query, EmbeddingVector, EncoderConfig};
use sqlsentinel::generator::{Privilege, SchemaSpec};

pub const REFERENCE_MATRIX_CSV: &str = include_str!("../data/reference_matrix.csv");

pub fn reference_matrix() -> ProbabilityMatrix {
    ProbabilityMatrix::from_csv(REFERENCE_MATRIX_CSV).expect("fixture parses")
}

/// Mann-Whitney AUC by exhaustive pair comparison; ties count one half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in positives {
        for n in negatives {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (positives.len() * negatives.len()) as f64
}

pub fn embed_records(records: &[CorpusRecord], cfg: &EncoderConfig) -> Vec<EmbeddingVector> {
    records
        .iter()
        .map(|r| encode_query(&r.to_normalized().expect("normalizes"), cfg).expect("encodes"))
        .collect()
}

const KEYWORDS: &[&str] = &[
    "select", "from", "where", "and", "or", "join", "on", "in", "update", "set", "insert", "into", "values", "count",
    "group", "by", "order", "like", "not", "as", "asc", "desc",
];

fn is_identifier(tok: &str) -> bool {
    tok.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && tok.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Independent scope check on a normalized statement: every referenced
/// object must be granted to `role` with the privilege the statement needs,
/// and every column must be among the role's granted columns on those
/// objects. Anything other than select/insert/update is out of scope.
pub fn permits(schema: &SchemaSpec, role: &str, normalized: &str) -> bool {
    let Some(spec) = schema.roles.iter().find(|r| r.name == role) else {
        return false;
    };
    let toks: Vec<&str> = normalized.split(' ').collect();
    let needed = match toks.first() {
        Some(&"select") => Privilege::Select,
        Some(&"update") => Privilege::Update,
        Some(&"insert") => Privilege::Insert,
        _ => return false,
    };

    let target = match needed {
        Privilege::Select => None,
        _ => toks.get(if needed == Privilege::Insert { 2 } else { 1 }).copied(),
    };
    let mut objects = BTreeSet::new();
    for (i, tok) in toks.iter().enumerate() {
        if !matches!(*tok, "from" | "join" | "update" | "into") {
            continue;
        }
        let mut j = i + 1;
        while j < toks.len() && is_identifier(toks[j]) && !KEYWORDS.contains(&toks[j]) {
            objects.insert(toks[j]);
            if toks.get(j + 1) != Some(&",") {
                break;
            }
            j += 2;
        }
    }
    if objects.is_empty() {
        return false;
    }

    let mut granted = BTreeSet::new();
    for obj in &objects {
        let privilege = if Some(*obj) == target { needed } else { Privilege::Select };
        let Some(grant) = spec.grants.iter().find(|g| g.object == *obj && g.privileges.contains(&privilege)) else {
            return false;
        };
        granted.extend(grant.columns.iter().map(String::as_str));
    }

    for tok in &toks {
        if *tok == "*" {
            let all_granted = objects.iter().all(|obj| {
                let declared = schema
                    .tables
                    .iter()
                    .find(|t| t.name == *obj)
                    .map(|t| t.columns.clone())
                    .or_else(|| schema.views.iter().find(|v| v.name == *obj).map(|v| v.columns.clone()))
                    .unwrap_or_default();
                declared.iter().all(|c| granted.contains(c.as_str()))
            });
            if !all_granted {
                return false;
            }
        } else if is_identifier(tok) && !KEYWORDS.contains(tok) && !objects.contains(tok) && !granted.contains(tok) {
            return false;
        }
    }
    true
}

pub mod fuzz {
    use rand::seq::IndexedRandom;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone, Copy)]
    enum Piece {
        Word(&'static str),
        Punct(&'static str),
        Literal,
    }

    const TABLES: [&str; 5] = ["t1", "employees", "Orders", "v_2", "\"My Tab\""];
    const COLUMNS: [&str; 6] = ["col1", "depid", "Amount", "x_9", "name", "\"2024\""];
    const OPS: [&str; 6] = ["=", "<", ">", "<=", ">=", "<>"];

    fn template(rng: &mut ChaCha8Rng) -> Vec<Piece> {
        use Piece::*;
        let table = Word(TABLES.choose(rng).unwrap());
        let col = |rng: &mut ChaCha8Rng| Word(COLUMNS.choose(rng).unwrap());
        let mut out = match rng.random_range(0..4) {
            0 => vec![Word("select"), col(rng), Punct(","), col(rng), Word("from"), table],
            1 => vec![Word("update"), table, Word("set"), col(rng), Punct("="), Literal],
            2 => vec![
                Word("insert"),
                Word("into"),
                table,
                Punct("("),
                col(rng),
                Punct(","),
                col(rng),
                Punct(")"),
                Word("values"),
                Punct("("),
                Literal,
                Punct(","),
                Literal,
                Punct(")"),
            ],
            _ => vec![Word("select"), Word("count"), Punct("("), Punct("*"), Punct(")"), Word("from"), table],
        };
        if !matches!(out[0], Word("insert")) {
            out.push(Word("where"));
            for i in 0..rng.random_range(1..=3) {
                if i > 0 {
                    out.push(Word(if rng.random_bool(0.5) { "and" } else { "or" }));
                }
                out.push(col(rng));
                match rng.random_range(0..3) {
                    0 => {
                        out.extend([Word("in"), Punct("(")]);
                        for k in 0..rng.random_range(1..=4) {
                            if k > 0 {
                                out.push(Punct(","));
                            }
                            out.push(Literal);
                        }
                        out.push(Punct(")"));
                    }
                    1 => out.extend([Word("like"), Literal]),
                    _ => out.extend([Punct(OPS.choose(rng).unwrap()), Literal]),
                }
            }
        }
        out
    }

    fn literal(rng: &mut ChaCha8Rng) -> String {
        match rng.random_range(0..8) {
            0 => rng.random_range(0..100_000).to_string(),
            1 => format!("-{}", rng.random_range(1..999)),
            2 => format!("{}.{}", rng.random_range(0..999), rng.random_range(0..999)),
            3 => format!("{}e-{}", rng.random_range(1..9), rng.random_range(1..20)),
            4 => "'it''s'".to_owned(),
            5 => r"'a\'b'".to_owned(),
            6 => format!("'{}'", ["", "x y", "ÅÄ", "--not a comment", "/*no*/", "?"].choose(rng).unwrap()),
            _ => "?".to_owned(),
        }
    }

    fn gap(rng: &mut ChaCha8Rng) -> &'static str {
        [" ", "  ", "\t", "\n ", " \r\n"].choose(rng).unwrap()
    }

    fn render(pieces: &[Piece], rng: &mut ChaCha8Rng) -> String {
        let mut out = String::new();
        if rng.random_bool(0.2) {
            out.push_str("/* lead */ ");
        }
        for (i, p) in pieces.iter().enumerate() {
            if i > 0 {
                out.push_str(gap(rng));
            }
            match p {
                Piece::Word(w) => {
                    if rng.random_bool(0.5) && !w.starts_with('"') {
                        out.push_str(&w.to_uppercase());
                    } else {
                        out.push_str(w);
                    }
                }
                Piece::Punct(s) => out.push_str(s),
                Piece::Literal => out.push_str(&literal(rng)),
            }
        }
        if rng.random_bool(0.2) {
            out.push_str(" -- trailing note");
        }
        out
    }

    /// Two renderings of one template that differ only in literal values,
    /// keyword case, whitespace and comments.
    pub fn query_pair(rng: &mut ChaCha8Rng) -> (String, String) {
        let t = template(rng);
        (render(&t, rng), render(&t, rng))
    }
}

/// Hashing-encoder embeddings of the three-role learning corpus for `seed`.
pub fn corpus_embeddings(seed: u64) -> Vec<EmbeddingVector> {
    use sqlsentinel::generator::{generate_scenario, ScenarioParams, SchemaSpec};
    let params = ScenarioParams {
        holdout_per_role: 0,
        attacks: 0,
        masquerade_count: 0,
        ..ScenarioParams::default()
    };
    let scenario = generate_scenario(&SchemaSpec::builtin(), &params, seed).expect("scenario generates");
    embed_records(&scenario.learning.records, &EncoderConfig::default())
}
