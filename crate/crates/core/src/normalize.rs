//! SQL query normalization.
//!
//! A single-pass lexer that lowercases keywords and identifiers, masks every
//! string and numeric literal with `?`, drops comments, and re-emits the
//! token stream separated by exactly one space. The canonical text is what
//! every downstream stage (embedding, dedup, classifier) sees.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("unterminated {quote} literal starting at byte {offset}")]
    UnterminatedLiteral { quote: char, offset: usize },
    #[error("unterminated block comment starting at byte {offset}")]
    UnterminatedComment { offset: usize },
}

/// A query as it arrives from the wire or a log, before any cleanup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawQuery {
    pub text: String,
    pub user_label: Option<String>,
    pub sequence_id: u64,
}

impl RawQuery {
    pub fn new(text: impl Into<String>, user_label: Option<&str>, sequence_id: u64) -> Self {
        Self {
            text: text.into(),
            user_label: user_label.map(str::to_owned),
            sequence_id,
        }
    }
}

/// Canonical, literal-free form of a query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedQuery {
    pub text: String,
    pub tokens: Vec<String>,
    pub user_label: Option<String>,
    pub sequence_id: u64,
    pub fingerprint: u64,
}

impl NormalizedQuery {
    pub fn fingerprint_hex(&self) -> String {
        fingerprint_hex(self.fingerprint)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn fingerprint(text: &str) -> u64 {
    fnv1a64(text.as_bytes())
}

pub fn fingerprint_hex(fp: u64) -> String {
    format!("{fp:016x}")
}

pub fn parse_fingerprint_hex(s: &str) -> Option<u64> {
    if s.is_empty() || s.len() > 16 {
        return None;
    }
    u64::from_str_radix(s, 16).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Word,
    Literal,
    Placeholder,
    Operator,
    OpenParen,
    CloseParen,
    Punct,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    out: Vec<(Kind, String)>,
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '@' || c == '#'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$' || c == '@' || c == '#'
}

const MULTI_CHAR_OPS: [&str; 10] = ["<=>", "<>", "<=", ">=", "!=", "==", "||", "::", "<<", ">>"];

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            out: Vec::new(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, offset: usize) -> Option<u8> {
        self.bytes.get(self.pos + offset).copied()
    }

    fn push(&mut self, kind: Kind, tok: String) {
        self.out.push((kind, tok));
    }

    /// A leading `+`/`-` belongs to a numeric literal only when the previous
    /// token cannot end an operand.
    fn sign_allowed(&self) -> bool {
        match self.out.last() {
            None => true,
            Some((kind, tok)) => match kind {
                Kind::Literal | Kind::Placeholder | Kind::CloseParen => false,
                Kind::Word => is_operand_keyword(tok),
                Kind::Operator | Kind::OpenParen | Kind::Punct => true,
            },
        }
    }

    fn run(mut self) -> Result<Vec<(Kind, String)>, NormalizeError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else if c == '-' && self.peek_at(1) == Some(b'-') {
                self.skip_line_comment();
            } else if c == '#' && !matches!(self.src[self.pos + 1..].chars().next(), Some(n) if is_ident_continue(n)) {
                // MySQL-style `# comment`; `#tmp` stays an identifier.
                self.skip_line_comment();
            } else if c == '/' && self.peek_at(1) == Some(b'*') {
                self.skip_block_comment()?;
            } else if c == '\'' {
                self.scan_quoted('\'', true)?;
                self.push(Kind::Literal, "?".into());
            } else if c == '"' || c == '`' {
                let body = self.scan_quoted(c, false)?;
                self.push(Kind::Word, format!("{c}{}{c}", body.to_lowercase()));
            } else if c == '[' && self.bracket_ident_ahead() {
                let end = self.src[self.pos..].find(']').map(|i| self.pos + i).unwrap_or(self.bytes.len());
                let body = &self.src[self.pos + 1..end];
                self.pos = end + 1;
                self.push(Kind::Word, format!("[{}]", body.to_lowercase()));
            } else if c.is_ascii_digit()
                || (c == '.' && self.peek_at(1).is_some_and(|b| b.is_ascii_digit()))
            {
                self.scan_number_or_word();
            } else if (c == '-' || c == '+')
                && self.sign_allowed()
                && self.number_follows(1)
            {
                self.pos += 1;
                self.scan_number_or_word();
                if self.out.last().map(|(k, _)| *k) != Some(Kind::Literal) {
                    // Sign followed by something like `1abc`: keep the sign.
                    let word = self.out.pop().expect("token just pushed");
                    self.push(Kind::Operator, c.to_string());
                    self.out.push(word);
                }
            } else if c == '?' {
                self.pos += 1;
                self.push(Kind::Placeholder, "?".into());
            } else if (c == '$' || c == ':')
                && self.peek_at(1).is_some_and(|b| b.is_ascii_digit() || (c == ':' && (b.is_ascii_alphabetic() || b == b'_')))
                && !(c == ':' && self.peek_at(1) == Some(b':'))
            {
                // `$1` / `:name` bind parameters are kept verbatim.
                self.pos += 1;
                while let Some(n) = self.peek() {
                    if is_ident_continue(n) {
                        self.pos += n.len_utf8();
                    } else {
                        break;
                    }
                }
                let tok = self.src[start..self.pos].to_lowercase();
                self.push(Kind::Placeholder, tok);
            } else if is_ident_start(c) {
                while let Some(n) = self.peek() {
                    if is_ident_continue(n) {
                        self.pos += n.len_utf8();
                    } else {
                        break;
                    }
                }
                let word = self.src[start..self.pos].to_lowercase();
                self.push(Kind::Word, word);
            } else if c == '(' {
                self.pos += 1;
                self.push(Kind::OpenParen, "(".into());
            } else if c == ')' {
                self.pos += 1;
                self.push(Kind::CloseParen, ")".into());
            } else if c == ',' || c == ';' || c == '.' {
                self.pos += 1;
                self.push(Kind::Punct, c.to_string());
            } else {
                let rest = &self.src[self.pos..];
                let op = MULTI_CHAR_OPS
                    .iter()
                    .find(|op| rest.starts_with(**op))
                    .map(|op| op.to_string())
                    .unwrap_or_else(|| c.to_lowercase().collect());
                self.pos += if MULTI_CHAR_OPS.contains(&op.as_str()) { op.len() } else { c.len_utf8() };
                self.push(Kind::Operator, op);
            }
        }
        Ok(self.out)
    }

    fn skip_line_comment(&mut self) {
        match self.src[self.pos..].find('\n') {
            Some(i) => self.pos += i + 1,
            None => self.pos = self.bytes.len(),
        }
    }

    fn skip_block_comment(&mut self) -> Result<(), NormalizeError> {
        let start = self.pos;
        match self.src[self.pos + 2..].find("*/") {
            Some(i) => {
                self.pos += 2 + i + 2;
                Ok(())
            }
            None => Err(NormalizeError::UnterminatedComment { offset: start }),
        }
    }

    /// Consumes a quoted run starting at the opening quote and returns its body.
    /// Doubled quotes are always an escape; backslash escapes apply to string
    /// literals only.
    fn scan_quoted(&mut self, quote: char, backslash: bool) -> Result<String, NormalizeError> {
        let start = self.pos;
        let q = quote as u8;
        let mut i = self.pos + 1;
        while i < self.bytes.len() {
            let b = self.bytes[i];
            if backslash && b == b'\\' {
                i += 2;
                continue;
            }
            if b == q {
                if self.bytes.get(i + 1) == Some(&q) {
                    i += 2;
                    continue;
                }
                let body = self.src[start + 1..i].to_string();
                self.pos = i + 1;
                return Ok(body);
            }
            i += 1;
        }
        Err(NormalizeError::UnterminatedLiteral { quote, offset: start })
    }

    /// `[name]` is a T-SQL quoted identifier when a `]` closes it on the same
    /// token run; otherwise `[` is punctuation (e.g. array subscripts).
    fn bracket_ident_ahead(&self) -> bool {
        let rest = &self.src[self.pos + 1..];
        match rest.find(']') {
            Some(i) => {
                let body = &rest[..i];
                !body.is_empty() && body.chars().next().is_some_and(is_ident_start) && !body.contains(['[', '\n'])
            }
            None => false,
        }
    }

    fn number_follows(&self, offset: usize) -> bool {
        match self.peek_at(offset) {
            Some(b) if b.is_ascii_digit() => true,
            Some(b'.') => self.peek_at(offset + 1).is_some_and(|b| b.is_ascii_digit()),
            _ => false,
        }
    }

    /// Numbers: decimal with optional fraction and exponent, or `0x` hex.
    /// A digit run glued to identifier characters (`1st_col`) is an identifier.
    fn scan_number_or_word(&mut self) {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        if b[i] == b'0' && matches!(b.get(i + 1), Some(b'x' | b'X')) && b.get(i + 2).is_some_and(|c| c.is_ascii_hexdigit()) {
            i += 2;
            while i < b.len() && b[i].is_ascii_hexdigit() {
                i += 1;
            }
        } else {
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            if i < b.len() && b[i] == b'.' {
                i += 1;
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let mut j = i + 1;
                if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                    j += 1;
                }
                if j < b.len() && b[j].is_ascii_digit() {
                    while j < b.len() && b[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
        }
        self.pos = i;
        let glued = self.peek().is_some_and(|c| is_ident_continue(c) && !c.is_ascii_digit());
        if glued {
            while let Some(n) = self.peek() {
                if is_ident_continue(n) {
                    self.pos += n.len_utf8();
                } else {
                    break;
                }
            }
            let word = self.src[start..self.pos].to_lowercase();
            self.push(Kind::Word, word);
        } else {
            self.push(Kind::Literal, "?".into());
        }
    }
}

/// Keywords after which a `-`/`+` starts a signed literal rather than a
/// binary operation.
fn is_operand_keyword(word: &str) -> bool {
    matches!(
        word,
        "select" | "where" | "and" | "or" | "not" | "on" | "having" | "when" | "then" | "else"
            | "values" | "set" | "in" | "between" | "like" | "is" | "return" | "limit" | "offset"
            | "by" | "case" | "as" | "interval"
    )
}

pub fn normalize(raw: &RawQuery) -> Result<NormalizedQuery, NormalizeError> {
    if raw.text.trim().is_empty() {
        return Err(NormalizeError::EmptyQuery);
    }
    let tokens: Vec<String> = Lexer::new(&raw.text).run()?.into_iter().map(|(_, t)| t).collect();
    if tokens.is_empty() {
        // Comment-only input.
        return Err(NormalizeError::EmptyQuery);
    }
    let text = tokens.join(" ");
    let fingerprint = fingerprint(&text);
    Ok(NormalizedQuery {
        text,
        tokens,
        user_label: raw.user_label.clone(),
        sequence_id: raw.sequence_id,
        fingerprint,
    })
}

/// Convenience wrapper for ad-hoc strings.
pub fn normalize_str(text: &str) -> Result<String, NormalizeError> {
    normalize(&RawQuery::new(text, None, 0)).map(|q| q.text)
}

/// Keeps the first occurrence (lowest sequence id) of every
/// `(user, normalized text)` pair, preserving input order.
pub fn dedup(corpus: &[NormalizedQuery]) -> Vec<NormalizedQuery> {
    dedup_indices(corpus).into_iter().map(|i| corpus[i].clone()).collect()
}

/// Indices (ascending) of the records [`dedup`] keeps.
pub fn dedup_indices(corpus: &[NormalizedQuery]) -> Vec<usize> {
    let mut first: HashMap<(Option<&str>, &str), usize> = HashMap::new();
    for (idx, q) in corpus.iter().enumerate() {
        let key = (q.user_label.as_deref(), q.text.as_str());
        first
            .entry(key)
            .and_modify(|kept| {
                if corpus[*kept].sequence_id > q.sequence_id {
                    *kept = idx;
                }
            })
            .or_insert(idx);
    }
    let mut keep: Vec<usize> = first.into_values().collect();
    keep.sort_unstable();
    keep
}

/// Token sequence handed to an encoder. The built-in encoder consumes the
/// normalizer's tokens directly; subword encoders can re-tokenize `nq.text`.
pub fn tokenize_for_encoder(nq: &NormalizedQuery) -> Vec<String> {
    nq.tokens.clone()
}
