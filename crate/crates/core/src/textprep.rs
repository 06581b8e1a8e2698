//! Word-level tokenization and corpus token statistics.
//!
//! Text is lowercased, split on every character that is not a Unicode letter
//! or number, and tokens with fewer than two characters are dropped. Tokens
//! occurring fewer than `min_count` times in the reference corpus are
//! removed afterwards with [`filter_rare`].

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::sha256_hex;

#[derive(Debug, Error)]
pub enum TextprepError {
    #[error("corpus contains no documents")]
    EmptyCorpus,
    #[error("frequency table line {0}: {1}")]
    MalformedTable(usize, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const MIN_ALNUM: usize = 2;
pub const DEFAULT_MIN_COUNT: u64 = 2;

/// Ordered lowercase tokens of one document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream(pub Vec<String>);

impl TokenStream {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl<S: Into<String>> FromIterator<S> for TokenStream {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenStream(iter.into_iter().map(Into::into).collect())
    }
}

/// Lowercases first so that multi-char lowercase expansions (e.g. `İ`) are
/// split like any other separator and never end up inside a token.
pub fn tokenize(text: &str) -> TokenStream {
    let lower = text.to_lowercase();
    lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().take(MIN_ALNUM).count() >= MIN_ALNUM)
        .map(str::to_owned)
        .collect()
}

/// Exact token counts over a set of documents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
    total_tokens: u64,
    doc_count: u64,
}

impl FrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, stream: &TokenStream) {
        for t in stream.iter() {
            match self.counts.get_mut(t) {
                Some(c) => *c += 1,
                None => {
                    self.counts.insert(t.to_owned(), 1);
                }
            }
        }
        self.total_tokens += stream.len() as u64;
        self.doc_count += 1;
    }

    /// Merges another shard into this one. Merging is associative and
    /// commutative, so shards can be counted in parallel.
    pub fn merge(&mut self, other: FrequencyTable) {
        for (t, c) in other.counts {
            *self.counts.entry(t).or_insert(0) += c;
        }
        self.total_tokens += other.total_tokens;
        self.doc_count += other.doc_count;
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    pub fn vocabulary_size(&self) -> usize {
        self.counts.len()
    }

    pub fn sorted(&self) -> Vec<(&str, u64)> {
        let mut v: Vec<(&str, u64)> = self.counts.iter().map(|(t, c)| (t.as_str(), *c)).collect();
        v.sort_unstable_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// Sorted `token\tcount` lines preceded by two `#` header lines carrying
    /// the document and token totals.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "#doc_count\t{}", self.doc_count)?;
        writeln!(w, "#total_tokens\t{}", self.total_tokens)?;
        for (t, c) in self.sorted() {
            writeln!(w, "{t}\t{c}")?;
        }
        Ok(())
    }

    pub fn read_tsv(r: impl BufRead) -> Result<Self, TextprepError> {
        let mut table = FrequencyTable::new();
        let mut summed = 0u64;
        let mut declared_total = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| TextprepError::MalformedTable(i + 1, msg.to_string());
            let (key, value) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let value: u64 = value.parse().map_err(|_| bad("count is not an integer"))?;
            match key {
                "#doc_count" => table.doc_count = value,
                "#total_tokens" => declared_total = Some(value),
                k if k.starts_with('#') => return Err(bad("unknown header")),
                k => {
                    if table.counts.insert(k.to_owned(), value).is_some() {
                        return Err(bad("duplicate token"));
                    }
                    summed += value;
                }
            }
        }
        table.total_tokens = declared_total.unwrap_or(summed);
        if table.total_tokens != summed {
            return Err(TextprepError::MalformedTable(
                0,
                "token counts do not sum to #total_tokens".into(),
            ));
        }
        Ok(table)
    }

    /// Content hash of the sorted table, independent of file layout.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to a Vec cannot fail");
        sha256_hex(&buf)
    }
}

pub fn build_frequency_table<'a>(docs: impl IntoIterator<Item = &'a TokenStream>) -> FrequencyTable {
    let mut table = FrequencyTable::new();
    for d in docs {
        table.add(d);
    }
    table
}

/// Keeps tokens whose corpus count is at least `min_count`; absent tokens
/// count as zero.
pub fn filter_rare(stream: &TokenStream, table: &FrequencyTable, min_count: u64) -> TokenStream {
    if min_count <= 1 && stream.iter().all(|t| table.count(t) >= min_count) {
        return stream.clone();
    }
    stream.iter().filter(|t| table.count(t) >= min_count).collect()
}

/// `(total_tokens, average_tokens_per_doc)`, the average truncated to an
/// integer.
pub fn corpus_stats<'a>(docs: impl IntoIterator<Item = &'a TokenStream>) -> Result<(u64, u64), TextprepError> {
    let (mut total, mut n) = (0u64, 0u64);
    for d in docs {
        total += d.len() as u64;
        n += 1;
    }
    Ok((total, average_tokens(total, n)?))
}

pub fn average_tokens(total: u64, doc_count: u64) -> Result<u64, TextprepError> {
    if doc_count == 0 {
        return Err(TextprepError::EmptyCorpus);
    }
    Ok(total / doc_count)
}
