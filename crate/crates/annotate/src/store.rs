//! In-memory view of the review queues plus the append-only verdict log.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::Utc;
use serde::Serialize;
use wayfinder_core::corpus::{
    append_annotation, load_annotation_log, manifest_line, resolve, AnnotationRecord, Century, DocumentRef, Label,
    Provenance, Resolution, Verdict,
};
use wayfinder_core::discover::{read_queue, RankedCandidate, Tally};

use crate::error::AnnotateError;
use crate::excerpt::read_excerpt;

pub const DEFAULT_EXCERPT_CHARS: usize = 4000;
pub const MAX_PAGE: usize = 500;
const MAX_ANNOTATOR_LEN: usize = 128;

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub log_path: PathBuf,
    pub excerpt_chars: usize,
    /// Round stamped on new verdicts.
    pub round: u32,
}

impl StoreOptions {
    pub fn new(log_path: impl Into<PathBuf>) -> Self {
        StoreOptions {
            log_path: log_path.into(),
            excerpt_chars: DEFAULT_EXCERPT_CHARS,
            round: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictView {
    pub annotator: String,
    pub verdict: Verdict,
    pub round: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueueItem {
    #[serde(flatten)]
    pub candidate: RankedCandidate,
    pub text_excerpt: String,
    pub full_text_available: bool,
    /// Consensus of the latest round, if anyone has reviewed the document.
    pub current_verdict: Option<Resolution>,
    pub verdicts: Vec<VerdictView>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueuePage {
    pub century: Century,
    pub total: usize,
    pub offset: usize,
    pub items: Vec<QueueItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Progress {
    pub century: Century,
    pub queued: usize,
    pub evaluated: usize,
    pub confirmed: usize,
    pub rejected: usize,
    pub disputed: usize,
    pub uncertain: usize,
    pub remaining: usize,
    pub confirmation_rate: f64,
    pub rate_defined: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Disagreement {
    pub doc_id: String,
    pub verdicts: Vec<VerdictView>,
}

/// Verdicts of one round, turned into labeled manifest lines.
#[derive(Debug, Clone, Serialize)]
pub struct ExportFragment {
    pub round: u32,
    pub confirmed: usize,
    pub rejected: usize,
    /// JSON Lines in corpus-manifest format.
    pub manifest: String,
    /// Confirm and Reject in the same round; left out of `manifest`.
    pub disputed: Vec<Disagreement>,
    /// Only `Uncertain` verdicts; left out of `manifest`.
    pub pending: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Posted {
    Created,
    /// An identical verdict was already on record.
    Existing,
}

#[derive(Default)]
struct Records {
    all: Vec<AnnotationRecord>,
    by_key: HashMap<(String, String, u32), usize>,
    by_doc: HashMap<String, Vec<usize>>,
}

impl Records {
    fn push(&mut self, r: AnnotationRecord) {
        let i = self.all.len();
        self.by_key.insert((r.doc_id.clone(), r.annotator.clone(), r.round), i);
        self.by_doc.entry(r.doc_id.clone()).or_default().push(i);
        self.all.push(r);
    }

    fn of_doc(&self, doc_id: &str) -> impl Iterator<Item = &AnnotationRecord> {
        self.by_doc.get(doc_id).into_iter().flatten().map(|&i| &self.all[i])
    }
}

fn views<'a>(records: impl Iterator<Item = &'a AnnotationRecord>) -> Vec<VerdictView> {
    records
        .map(|r| VerdictView {
            annotator: r.annotator.clone(),
            verdict: r.verdict,
            round: r.round,
        })
        .collect()
}

/// Shared service state. Reads take a short read lock; verdict writes are
/// serialized through a single appender and hit the disk before they become
/// visible.
pub struct Store {
    opts: StoreOptions,
    queues: BTreeMap<Century, Vec<RankedCandidate>>,
    docs: HashMap<String, DocumentRef>,
    queued: HashMap<String, (Century, usize)>,
    records: RwLock<Records>,
    appender: Mutex<()>,
}

impl Store {
    /// Loads the queues and replays the annotation log. Every queued id must
    /// appear in `docs`.
    pub fn open(
        queues: &[(Century, PathBuf)],
        docs: Vec<DocumentRef>,
        opts: StoreOptions,
    ) -> Result<Self, AnnotateError> {
        let docs: HashMap<String, DocumentRef> = docs.into_iter().map(|d| (d.id.clone(), d)).collect();
        let mut loaded = BTreeMap::new();
        let mut queued = HashMap::new();
        for (century, path) in queues {
            if loaded.contains_key(century) {
                return Err(AnnotateError::DuplicateQueue(*century));
            }
            let rows = load_queue(path, *century)?;
            for (i, row) in rows.iter().enumerate() {
                if !docs.contains_key(&row.doc_id) {
                    return Err(AnnotateError::QueueDocNotInManifest {
                        century: *century,
                        doc_id: row.doc_id.clone(),
                    });
                }
                queued.insert(row.doc_id.clone(), (*century, i));
            }
            loaded.insert(*century, rows);
        }
        let mut records = Records::default();
        for r in load_annotation_log(&opts.log_path)? {
            records.push(r);
        }
        Ok(Store {
            opts,
            queues: loaded,
            docs,
            queued,
            records: RwLock::new(records),
            appender: Mutex::new(()),
        })
    }

    pub fn options(&self) -> &StoreOptions {
        &self.opts
    }

    /// Loaded centuries with their queue lengths.
    pub fn centuries(&self) -> Vec<(Century, usize)> {
        self.queues.iter().map(|(c, q)| (*c, q.len())).collect()
    }

    fn queue(&self, century: Century) -> Result<&[RankedCandidate], AnnotateError> {
        self.queues
            .get(&century)
            .map(Vec::as_slice)
            .ok_or(AnnotateError::NoQueueForCentury(century))
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Records> {
        self.records.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn queue_page(&self, century: Century, offset: usize, limit: usize) -> Result<QueuePage, AnnotateError> {
        let queue = self.queue(century)?;
        let start = offset.min(queue.len());
        let end = start.saturating_add(limit.min(MAX_PAGE)).min(queue.len());
        let slice = &queue[start..end];
        let excerpts: Vec<Option<String>> = slice
            .iter()
            .map(|c| read_excerpt(&self.docs[&c.doc_id].text_path, self.opts.excerpt_chars).ok())
            .collect();
        let records = self.read();
        let items = slice
            .iter()
            .zip(excerpts)
            .map(|(c, excerpt)| QueueItem {
                candidate: c.clone(),
                full_text_available: excerpt.is_some(),
                text_excerpt: excerpt.unwrap_or_default(),
                current_verdict: resolve(records.of_doc(&c.doc_id)).map(|(_, r)| r),
                verdicts: views(records.of_doc(&c.doc_id)),
            })
            .collect();
        Ok(QueuePage {
            century,
            total: queue.len(),
            offset,
            items,
        })
    }

    /// Path of a queued document's full text.
    pub fn text_path(&self, doc_id: &str) -> Result<&Path, AnnotateError> {
        if !self.queued.contains_key(doc_id) {
            return Err(AnnotateError::UnknownDocId(doc_id.to_string()));
        }
        Ok(&self.docs[doc_id].text_path)
    }

    /// Records a verdict in the current round. The record is synced to the
    /// log before this returns.
    pub fn post_verdict(
        &self,
        doc_id: &str,
        verdict: Verdict,
        annotator: &str,
    ) -> Result<(AnnotationRecord, Posted), AnnotateError> {
        if !self.queued.contains_key(doc_id) {
            return Err(AnnotateError::UnknownDocId(doc_id.to_string()));
        }
        let annotator = annotator.trim();
        if annotator.is_empty()
            || annotator.chars().count() > MAX_ANNOTATOR_LEN
            || annotator.chars().any(char::is_control)
        {
            return Err(AnnotateError::BadRequest(format!(
                "annotator must be 1..={MAX_ANNOTATOR_LEN} printable characters"
            )));
        }
        let round = self.opts.round;
        let _writer = self.appender.lock().unwrap_or_else(|e| e.into_inner());
        let key = (doc_id.to_string(), annotator.to_string(), round);
        let existing = {
            let records = self.read();
            records.by_key.get(&key).map(|&i| records.all[i].clone())
        };
        if let Some(existing) = existing {
            return if existing.verdict == verdict {
                Ok((existing, Posted::Existing))
            } else {
                Err(AnnotateError::ConflictingVerdict {
                    existing: Box::new(existing),
                })
            };
        }
        let record = AnnotationRecord {
            doc_id: key.0,
            verdict,
            annotator: key.1,
            timestamp: Utc::now(),
            round,
        };
        append_annotation(&self.opts.log_path, &record)?;
        self.records
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .push(record.clone());
        Ok((record, Posted::Created))
    }

    pub fn progress(&self, century: Century) -> Result<Progress, AnnotateError> {
        let queue = self.queue(century)?;
        let records = self.read();
        let relevant: Vec<AnnotationRecord> = records
            .all
            .iter()
            .filter(|r| self.queued.get(&r.doc_id).is_some_and(|(c, _)| *c == century))
            .cloned()
            .collect();
        drop(records);
        let t = Tally::of(queue, &relevant).map_err(|e| AnnotateError::Internal(e.to_string()))?;
        let (confirmation_rate, rate_defined) = t.confirmation_rate();
        Ok(Progress {
            century,
            queued: t.queued,
            evaluated: t.evaluated,
            confirmed: t.confirmed,
            rejected: t.rejected,
            disputed: t.disputed,
            uncertain: t.uncertain,
            remaining: t.remaining,
            confirmation_rate,
            rate_defined,
        })
    }

    /// Confirmed documents become labeled positives and rejected ones labeled
    /// negatives, ordered by century and rank. Disagreements are reported,
    /// never resolved.
    pub fn export(&self, round: u32) -> ExportFragment {
        let records = self.read();
        let mut grouped: BTreeMap<(Century, usize), (&str, Vec<&AnnotationRecord>)> = BTreeMap::new();
        for r in records.all.iter().filter(|r| r.round == round) {
            if let Some(&pos) = self.queued.get(&r.doc_id) {
                grouped
                    .entry(pos)
                    .or_insert_with(|| (r.doc_id.as_str(), Vec::new()))
                    .1
                    .push(r);
            }
        }
        let mut out = ExportFragment {
            round,
            confirmed: 0,
            rejected: 0,
            manifest: String::new(),
            disputed: Vec::new(),
            pending: Vec::new(),
        };
        for (doc_id, recs) in grouped.into_values() {
            let label = match resolve(recs.iter().copied()) {
                Some((_, Resolution::Confirmed)) => {
                    out.confirmed += 1;
                    Label::Travelogue
                }
                Some((_, Resolution::Rejected)) => {
                    out.rejected += 1;
                    Label::NonTravelogue
                }
                Some((_, Resolution::Disputed)) => {
                    out.disputed.push(Disagreement {
                        doc_id: doc_id.to_string(),
                        verdicts: views(recs.into_iter()),
                    });
                    continue;
                }
                _ => {
                    out.pending.push(doc_id.to_string());
                    continue;
                }
            };
            let doc = &self.docs[doc_id];
            let labeled = DocumentRef {
                label: Some(label),
                provenance: doc.provenance.or(Some(Provenance::ModelDiscovery)),
                ..doc.clone()
            };
            out.manifest.push_str(&manifest_line(&labeled, Path::new("")));
            out.manifest.push('\n');
        }
        out
    }

    /// Number of records currently held (log lines after de-duplication).
    pub fn record_count(&self) -> usize {
        self.read().all.len()
    }
}

fn load_queue(path: &Path, century: Century) -> Result<Vec<RankedCandidate>, AnnotateError> {
    let file = File::open(path).map_err(|e| AnnotateError::io(path, e))?;
    let rows = read_queue(file).map_err(|source| AnnotateError::Queue {
        path: path.display().to_string(),
        source,
    })?;
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.century != century) {
        return Err(AnnotateError::QueueCenturyMismatch {
            path: path.display().to_string(),
            row: i + 1,
            expected: century,
            found: row.century,
        });
    }
    Ok(rows)
}
