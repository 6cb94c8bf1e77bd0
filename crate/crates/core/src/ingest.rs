//! Review streams, sentiment lexicons and price tables.
//!
//! Reviews arrive as JSON lines. A line carries either raw `text` (scored
//! against a [`Lexicon`] at ingest time) or precomputed `pos_words` /
//! `neg_words` counts. Malformed lines never abort a parse; they are reported
//! as [`Diagnostic`]s with their 1-based line number.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One review of one product.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub product_id: String,
    pub date: NaiveDate,
    /// Star rating in `1..=5`.
    pub rating: u8,
    /// Verified purchase (AVP) flag.
    pub verified: bool,
    pub helpful_votes: u32,
    pub total_votes: u32,
    pub pos_words: u32,
    pub neg_words: u32,
    /// Review length in words; 0 when unknown.
    #[serde(default)]
    pub word_count: u32,
    #[serde(default)]
    pub comments: u32,
}

impl ReviewRecord {
    /// 4-5 stars.
    pub fn is_like(&self) -> bool {
        self.rating >= 4
    }

    pub fn helpfulness(&self) -> f64 {
        crate::series::helpfulness(self.helpful_votes, self.total_votes).unwrap_or(0.0)
    }

    pub fn sentiment(&self) -> f64 {
        crate::series::sentiment_coefficient(self.pos_words, self.neg_words)
    }

    /// Serialize to one line of the review JSON-lines schema.
    pub fn to_json_line(&self) -> String {
        let raw = RawReview {
            product_id: self.product_id.clone(),
            date: self.date.format("%Y-%m-%d").to_string(),
            rating: i64::from(self.rating),
            verified: self.verified,
            helpful_votes: i64::from(self.helpful_votes),
            total_votes: i64::from(self.total_votes),
            text: None,
            pos_words: Some(i64::from(self.pos_words)),
            neg_words: Some(i64::from(self.neg_words)),
            word_count: Some(i64::from(self.word_count)),
            comments: Some(i64::from(self.comments)),
        };
        serde_json::to_string(&raw).expect("review serialization cannot fail")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawReview {
    product_id: String,
    date: String,
    rating: i64,
    verified: bool,
    helpful_votes: i64,
    total_votes: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos_words: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    neg_words: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    word_count: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    comments: Option<i64>,
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Result of parsing a review stream.
#[derive(Debug, Clone, Default)]
pub struct ParsedReviews {
    /// Records grouped by product, each group sorted by date.
    pub products: BTreeMap<String, Vec<ReviewRecord>>,
    pub diagnostics: Vec<Diagnostic>,
    pub lines_read: usize,
}

impl ParsedReviews {
    pub fn accepted(&self) -> usize {
        self.products.values().map(Vec::len).sum()
    }

    pub fn rejected(&self) -> usize {
        self.diagnostics.len()
    }
}

/// Parse a JSON-lines review stream.
///
/// `lexicon` is needed only for lines that carry `text`.
pub fn parse_reviews<R: BufRead>(source: R, lexicon: Option<&Lexicon>) -> Result<ParsedReviews> {
    let mut out = ParsedReviews::default();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse(format!("line {line_no}: {e}")))?;
        out.lines_read += 1;
        match parse_line(&line, lexicon) {
            Ok(rec) => out.products.entry(rec.product_id.clone()).or_default().push(rec),
            Err(message) => out.diagnostics.push(Diagnostic {
                line: line_no,
                message,
            }),
        }
    }
    for recs in out.products.values_mut() {
        recs.sort_by_key(|r| r.date);
    }
    Ok(out)
}

pub fn read_reviews(path: &Path, lexicon: Option<&Lexicon>) -> Result<ParsedReviews> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reviews(std::io::BufReader::new(file), lexicon)
}

fn count_field(value: i64, name: &str) -> std::result::Result<u32, String> {
    u32::try_from(value).map_err(|_| format!("{name} must be a non-negative integer, got {value}"))
}

fn parse_line(line: &str, lexicon: Option<&Lexicon>) -> std::result::Result<ReviewRecord, String> {
    if line.trim().is_empty() {
        return Err("empty line".into());
    }
    let raw: RawReview = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
    if raw.product_id.is_empty() {
        return Err("empty product_id".into());
    }
    let date = NaiveDate::parse_from_str(&raw.date, "%Y-%m-%d")
        .map_err(|e| format!("bad date {:?}: {e}", raw.date))?;
    if !(1..=5).contains(&raw.rating) {
        return Err(format!("rating {} outside [1,5]", raw.rating));
    }
    let helpful_votes = count_field(raw.helpful_votes, "helpful_votes")?;
    let total_votes = count_field(raw.total_votes, "total_votes")?;
    if helpful_votes > total_votes {
        return Err(format!(
            "helpful_votes {helpful_votes} exceeds total_votes {total_votes}"
        ));
    }

    let (pos_words, neg_words, text_words) = match (&raw.text, lexicon) {
        (Some(text), Some(lex)) => {
            let tokens = tokenize(text);
            let (p, n) = score_sentiment(&tokens, lex);
            (p, n, Some(tokens.len() as u32))
        }
        _ => match (raw.pos_words, raw.neg_words) {
            (Some(p), Some(n)) => (count_field(p, "pos_words")?, count_field(n, "neg_words")?, None),
            _ if raw.text.is_some() => {
                return Err("record has text but no lexicon was supplied".into())
            }
            _ => return Err("record needs either text or pos_words/neg_words".into()),
        },
    };
    let word_count = match raw.word_count {
        Some(w) => count_field(w, "word_count")?,
        None => text_words.unwrap_or(0),
    };
    let comments = raw.comments.map(|c| count_field(c, "comments")).transpose()?.unwrap_or(0);

    Ok(ReviewRecord {
        product_id: raw.product_id,
        date,
        rating: raw.rating as u8,
        verified: raw.verified,
        helpful_votes,
        total_votes,
        pos_words,
        neg_words,
        word_count,
        comments,
    })
}

/// Split on non-alphanumeric characters and lowercase.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Positive and negative opinion word sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    positive: BTreeSet<String>,
    negative: BTreeSet<String>,
}

impl Lexicon {
    /// Build a lexicon, normalizing words and dropping any word present in both
    /// sets. Returns the lexicon and the list of dropped words.
    pub fn new<P, N>(positive: P, negative: N) -> (Self, Vec<String>)
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
        N: IntoIterator,
        N::Item: AsRef<str>,
    {
        let norm = |w: &str| w.trim().to_lowercase();
        let mut pos: BTreeSet<String> = positive
            .into_iter()
            .map(|w| norm(w.as_ref()))
            .filter(|w| !w.is_empty())
            .collect();
        let mut neg: BTreeSet<String> = negative
            .into_iter()
            .map(|w| norm(w.as_ref()))
            .filter(|w| !w.is_empty())
            .collect();
        let overlap: Vec<String> = pos.intersection(&neg).cloned().collect();
        for w in &overlap {
            pos.remove(w);
            neg.remove(w);
        }
        (
            Lexicon {
                positive: pos,
                negative: neg,
            },
            overlap,
        )
    }

    pub fn positive(&self) -> &BTreeSet<String> {
        &self.positive
    }

    pub fn negative(&self) -> &BTreeSet<String> {
        &self.negative
    }
}

/// Count tokens found in the positive and negative sets, with multiplicity.
pub fn score_sentiment<S: AsRef<str>>(tokens: &[S], lex: &Lexicon) -> (u32, u32) {
    tokens.iter().fold((0, 0), |(p, n), t| {
        let t = t.as_ref();
        (
            p + u32::from(lex.positive.contains(t)),
            n + u32::from(lex.negative.contains(t)),
        )
    })
}

fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with(';'))
        .map(str::to_string)
        .collect())
}

/// Load a lexicon from two word-per-line files (`;` starts a comment line).
pub fn load_lexicon(pos_path: &Path, neg_path: &Path) -> Result<Lexicon> {
    let pos = read_word_list(pos_path)?;
    let neg = read_word_list(neg_path)?;
    let (lex, overlap) = Lexicon::new(pos, neg);
    for w in &overlap {
        log::warn!("lexicon word {w:?} appears in both lists; dropped from both");
    }
    Ok(lex)
}

/// Product prices in currency units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceTable(BTreeMap<String, f64>);

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, product_id: impl Into<String>, price: f64) -> Result<()> {
        if !(price.is_finite() && price >= 0.0) {
            return Err(Error::Domain(format!("price must be finite and >= 0, got {price}")));
        }
        self.0.insert(product_id.into(), price);
        Ok(())
    }

    pub fn get(&self, product_id: &str) -> Option<f64> {
        self.0.get(product_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Parse a `product_id,price` CSV with a header row; `#` lines are skipped.
pub fn parse_prices<R: std::io::Read>(source: R) -> Result<PriceTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source);
    let mut table = PriceTable::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("prices row {}: {e}", i + 2)))?;
        let id = rec.get(0).unwrap_or_default();
        let price: f64 = rec
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|e| Error::Parse(format!("prices row {}: bad price: {e}", i + 2)))?;
        table.insert(id, price)?;
    }
    Ok(table)
}

pub fn read_prices(path: &Path) -> Result<PriceTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_prices(file)
}

pub fn write_prices<W: std::io::Write>(table: &PriceTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["product_id", "price"]).map_err(io)?;
    for (id, p) in table.iter() {
        w.write_record([id, &p.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}
