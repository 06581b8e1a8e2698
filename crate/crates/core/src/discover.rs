//! Scores the unlabeled candidate pool with a trained model, exports the
//! top of the ranking as a review queue, and tallies expert verdicts on it.

use std::collections::HashSet;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{group_by_doc, resolve, AnnotationRecord, Century, DocumentRef, Resolution};
use crate::features::vectorize_tokens;
use crate::models::{Model, ModelError};
use crate::textprep::{filter_rare, tokenize, FrequencyTable};

#[derive(Debug, Error)]
pub enum DiscoverError {
    #[error("model was trained against frequency table {model} but {table} was supplied")]
    FingerprintMismatch { model: String, table: String },
    #[error("unknown document id `{0}`")]
    UnknownDocId(String),
    #[error("jobs must be >= 1")]
    InvalidJobs,
    #[error("review queue row {row}: {message}")]
    MalformedQueue { row: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_TOP_N: usize = 200;
pub const QUEUE_HEADER: [&str; 5] = ["rank", "doc_id", "score", "century", "model_fingerprint"];

/// One row of the review queue. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub rank: usize,
    pub doc_id: String,
    pub score: f64,
    pub century: Century,
    pub model_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub doc_id: String,
    pub century: Century,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ranking {
    pub ranked: Vec<RankedCandidate>,
    pub skipped: Vec<Skipped>,
}

/// A scored document before ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub doc_id: String,
    pub century: Century,
    pub score: f64,
    /// Raw decision value; breaks ties between scores that saturated to the
    /// same float.
    pub decision: f64,
}

/// Sorts by score descending, then decision value descending, then id
/// ascending, and assigns ranks from 1.
pub fn rank_scored(mut items: Vec<Scored>, model_fingerprint: &str) -> Vec<RankedCandidate> {
    items.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.decision.total_cmp(&a.decision))
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    items
        .into_iter()
        .enumerate()
        .map(|(i, s)| RankedCandidate {
            rank: i + 1,
            doc_id: s.doc_id,
            score: s.score,
            century: s.century,
            model_fingerprint: model_fingerprint.to_string(),
        })
        .collect()
}

/// Documents handed to the worker pool at once; only their scores are kept.
const CHUNK: usize = 512;

enum Outcome {
    Scored(Scored),
    Skipped(Skipped),
}

fn score_one(model: &Model, doc: &DocumentRef, freq: &FrequencyTable) -> Result<Outcome, ModelError> {
    let skip = |reason: String| {
        Ok(Outcome::Skipped(Skipped {
            doc_id: doc.id.clone(),
            century: doc.century,
            reason,
        }))
    };
    let text = match doc.read_text() {
        Ok(t) => t,
        Err(e) => return skip(format!("unreadable: {e}")),
    };
    let cfg = model.features();
    let tokens = filter_rare(&tokenize(&text), freq, cfg.min_count);
    if tokens.is_empty() {
        return skip("empty after filtering".into());
    }
    let x = vectorize_tokens(&tokens, cfg);
    let scored = model.predict_score(&x)?;
    Ok(Outcome::Scored(Scored {
        doc_id: doc.id.clone(),
        century: doc.century,
        score: scored.score,
        decision: model.decision(&x)?,
    }))
}

/// Vectorizes with the model's own feature config and ranks every
/// candidate. At most `jobs` documents are open or in memory at a time
/// (per chunk). Unreadable documents and documents left empty by the rare
/// token filter are reported in `skipped`, in input order.
pub fn score_candidates(
    model: &Model,
    candidates: &[DocumentRef],
    freq: &FrequencyTable,
    jobs: usize,
) -> Result<Ranking, DiscoverError> {
    if jobs == 0 {
        return Err(DiscoverError::InvalidJobs);
    }
    let table = freq.fingerprint();
    if table != model.freq_fingerprint() {
        return Err(DiscoverError::FingerprintMismatch {
            model: model.freq_fingerprint().to_string(),
            table,
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    let mut scored = Vec::with_capacity(candidates.len());
    let mut skipped = Vec::new();
    for chunk in candidates.chunks(CHUNK) {
        let outcomes: Vec<Outcome> = pool.install(|| {
            chunk
                .par_iter()
                .map(|d| score_one(model, d, freq))
                .collect::<Result<_, _>>()
        })?;
        for o in outcomes {
            match o {
                Outcome::Scored(s) => scored.push(s),
                Outcome::Skipped(s) => skipped.push(s),
            }
        }
    }
    Ok(Ranking {
        ranked: rank_scored(scored, &model.fingerprint()),
        skipped,
    })
}

/// Writes the first `top_n` rows (or fewer) in rank order.
pub fn export_queue(ranked: &[RankedCandidate], top_n: usize, w: impl Write) -> Result<usize, DiscoverError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(QUEUE_HEADER)?;
    let rows = ranked.len().min(top_n);
    for r in &ranked[..rows] {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(rows)
}

/// `doc_id,century,reason` rows for documents that could not be scored.
pub fn export_skipped(skipped: &[Skipped], w: impl Write) -> Result<(), DiscoverError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["doc_id", "century", "reason"])?;
    for s in skipped {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a review queue and checks that ranks run 1, 2, 3, ... with
/// non-increasing scores and unique ids.
pub fn read_queue(r: impl Read) -> Result<Vec<RankedCandidate>, DiscoverError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(QUEUE_HEADER) {
        return Err(DiscoverError::MalformedQueue {
            row: 0,
            message: format!("expected header {}", QUEUE_HEADER.join(",")),
        });
    }
    let mut out: Vec<RankedCandidate> = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.deserialize().enumerate() {
        let row: RankedCandidate = row?;
        let bad = |message: String| Err(DiscoverError::MalformedQueue { row: i + 1, message });
        if row.rank != i + 1 {
            return bad(format!("rank {} out of sequence", row.rank));
        }
        if !(0.0..=1.0).contains(&row.score) {
            return bad(format!("score {} outside [0, 1]", row.score));
        }
        if out.last().is_some_and(|prev| prev.score < row.score) {
            return bad("scores must not increase with rank".into());
        }
        if !seen.insert(row.doc_id.clone()) {
            return bad(format!("duplicate id `{}`", row.doc_id));
        }
        out.push(row);
    }
    Ok(out)
}

/// Verdict counts over a queue, one resolution per document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub queued: usize,
    /// Documents with a definitive or disputed resolution.
    pub evaluated: usize,
    pub confirmed: usize,
    pub rejected: usize,
    pub disputed: usize,
    /// Only `Uncertain` verdicts so far.
    pub uncertain: usize,
    pub remaining: usize,
}

impl Tally {
    /// Fails on verdicts for documents outside `queue`.
    pub fn of(queue: &[RankedCandidate], verdicts: &[AnnotationRecord]) -> Result<Self, DiscoverError> {
        let ids: HashSet<&str> = queue.iter().map(|q| q.doc_id.as_str()).collect();
        if let Some(v) = verdicts.iter().find(|v| !ids.contains(v.doc_id.as_str())) {
            return Err(DiscoverError::UnknownDocId(v.doc_id.clone()));
        }
        let mut t = Tally {
            queued: queue.len(),
            ..Tally::default()
        };
        for recs in group_by_doc(verdicts).values() {
            match resolve(recs.iter().copied()) {
                Some((_, Resolution::Confirmed)) => t.confirmed += 1,
                Some((_, Resolution::Rejected)) => t.rejected += 1,
                Some((_, Resolution::Disputed)) => t.disputed += 1,
                Some((_, Resolution::Pending)) => t.uncertain += 1,
                None => {}
            }
        }
        t.evaluated = t.confirmed + t.rejected + t.disputed;
        t.remaining = t.queued - t.evaluated;
        Ok(t)
    }

    /// `(rate, defined)`; the rate is reported as 0 when nothing has been
    /// evaluated.
    pub fn confirmation_rate(&self) -> (f64, bool) {
        if self.evaluated == 0 {
            (0.0, false)
        } else {
            (self.confirmed as f64 / self.evaluated as f64, true)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub century: Option<Century>,
    pub evaluated_top_n: usize,
    pub confirmed: usize,
    pub rejected: usize,
    pub disputed: usize,
    pub confirmation_rate: f64,
    pub rate_defined: bool,
}

pub fn discovery_report(
    queue: &[RankedCandidate],
    verdicts: &[AnnotationRecord],
) -> Result<DiscoveryReport, DiscoverError> {
    let t = Tally::of(queue, verdicts)?;
    let (confirmation_rate, rate_defined) = t.confirmation_rate();
    Ok(DiscoveryReport {
        century: queue.first().map(|q| q.century),
        evaluated_top_n: t.evaluated,
        confirmed: t.confirmed,
        rejected: t.rejected,
        disputed: t.disputed,
        confirmation_rate,
        rate_defined,
    })
}
