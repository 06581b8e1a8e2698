//! Manifests, century partitions, balanced negative sampling and the
//! annotation records that move documents between partition pools.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {0}: malformed manifest record: {1}")]
    MalformedLine(usize, String),
    #[error("line {1}: missing field `{0}`")]
    MissingField(&'static str, usize),
    #[error("line {1}: duplicate document id `{0}`")]
    DuplicateId(String, usize),
    #[error("line {1}: text file {0} is not readable")]
    UnreadableText(String, usize),
    #[error("requested {requested} negatives but only {available} candidates are available")]
    InsufficientCandidates { requested: usize, available: usize },
    #[error("unknown document id `{0}`")]
    UnknownDocId(String),
    #[error("conflicting verdicts for `{doc_id}` in round {round}")]
    ConflictingVerdicts { doc_id: String, round: u32 },
    #[error("annotation log line {0}: {1}")]
    MalformedAnnotation(usize, String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Publication century of a volume. Stored as metadata, never inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Century {
    C16,
    C17,
    C18,
    C19,
}

impl Century {
    pub const ALL: [Century; 4] = [Century::C16, Century::C17, Century::C18, Century::C19];

    pub fn number(self) -> u8 {
        match self {
            Century::C16 => 16,
            Century::C17 => 17,
            Century::C18 => 18,
            Century::C19 => 19,
        }
    }
}

impl TryFrom<u8> for Century {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        match n {
            16 => Ok(Century::C16),
            17 => Ok(Century::C17),
            18 => Ok(Century::C18),
            19 => Ok(Century::C19),
            other => Err(format!("century must be 16..=19, got {other}")),
        }
    }
}

impl From<Century> for u8 {
    fn from(c: Century) -> u8 {
        c.number()
    }
}

impl fmt::Display for Century {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl std::str::FromStr for Century {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: u8 = s
            .trim_end_matches("th")
            .parse()
            .map_err(|_| format!("not a century: `{s}`"))?;
        Century::try_from(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Travelogue,
    NonTravelogue,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Travelogue
    }

    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Travelogue
        } else {
            Label::NonTravelogue
        }
    }
}

/// How a document entered the labeled ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    KeywordSearch,
    RandomSample,
    ModelDiscovery,
}

/// One volume: metadata plus the location of its plain text.
///
/// A document without a label belongs to the candidate pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRef {
    pub id: String,
    pub century: Century,
    pub text_path: PathBuf,
    pub label: Option<Label>,
    pub provenance: Option<Provenance>,
}

impl DocumentRef {
    pub fn is_candidate(&self) -> bool {
        self.label.is_none()
    }

    pub fn read_text(&self) -> std::io::Result<String> {
        std::fs::read_to_string(&self.text_path)
    }
}

/// Reads a JSON Lines manifest. Relative `text_path`s resolve against the
/// manifest's directory. The first bad line aborts the load.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<DocumentRef>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(BufReader::new(file), base)
}

pub fn parse_manifest(reader: impl BufRead, base: &Path) -> Result<Vec<DocumentRef>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::MalformedLine(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_manifest_line(&line, line_no, base)?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id, line_no));
        }
        if !doc.text_path.is_file() {
            return Err(CorpusError::UnreadableText(
                doc.text_path.display().to_string(),
                line_no,
            ));
        }
        out.push(doc);
    }
    Ok(out)
}

fn parse_manifest_line(line: &str, line_no: usize, base: &Path) -> Result<DocumentRef, CorpusError> {
    let malformed = |msg: String| CorpusError::MalformedLine(line_no, msg);
    let value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("expected a JSON object".into()))?;
    let field = |name: &'static str| obj.get(name).ok_or(CorpusError::MissingField(name, line_no));

    let id = field("id")?
        .as_str()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| malformed("`id` must be a non-empty string".into()))?
        .to_string();
    let century = field("century")?
        .as_u64()
        .and_then(|n| u8::try_from(n).ok())
        .ok_or_else(|| malformed("`century` must be an integer".into()))
        .and_then(|n| Century::try_from(n).map_err(malformed))?;
    let text_path = field("text_path")?
        .as_str()
        .ok_or_else(|| malformed("`text_path` must be a string".into()))?;
    let label = match obj.get("label") {
        None | Some(Value::Null) => None,
        Some(v) => Some(serde_json::from_value(v.clone()).map_err(|e| malformed(format!("label: {e}")))?),
    };
    let provenance = match obj.get("provenance") {
        None | Some(Value::Null) => None,
        Some(v) => Some(serde_json::from_value(v.clone()).map_err(|e| malformed(format!("provenance: {e}")))?),
    };
    Ok(DocumentRef {
        id,
        century,
        text_path: base.join(text_path),
        label,
        provenance,
    })
}

/// Serializes one manifest line, writing `text_path` relative to `base`
/// when the document lives underneath it.
pub fn manifest_line(doc: &DocumentRef, base: &Path) -> String {
    let rel = doc
        .text_path
        .strip_prefix(base)
        .ok()
        .filter(|_| !base.as_os_str().is_empty())
        .unwrap_or(&doc.text_path);
    let record = ManifestRecord {
        id: &doc.id,
        century: doc.century,
        text_path: rel.to_string_lossy().into_owned(),
        label: doc.label,
        provenance: doc.provenance,
    };
    serde_json::to_string(&record).expect("manifest records serialize")
}

#[derive(Serialize)]
struct ManifestRecord<'a> {
    id: &'a str,
    century: Century,
    text_path: String,
    label: Option<Label>,
    provenance: Option<Provenance>,
}

pub fn save_manifest(path: impl AsRef<Path>, docs: &[DocumentRef]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        writeln!(w, "{}", manifest_line(doc, base)).map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

/// Documents of one century routed by label. The three pools are disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPartition {
    pub century: Century,
    pub positives: Vec<DocumentRef>,
    pub negatives: Vec<DocumentRef>,
    pub candidates: Vec<DocumentRef>,
}

impl CorpusPartition {
    pub fn empty(century: Century) -> Self {
        CorpusPartition {
            century,
            positives: Vec::new(),
            negatives: Vec::new(),
            candidates: Vec::new(),
        }
    }

    /// Labeled documents, positives first.
    pub fn labeled(&self) -> impl Iterator<Item = &DocumentRef> {
        self.positives.iter().chain(self.negatives.iter())
    }

    pub fn all(&self) -> impl Iterator<Item = &DocumentRef> {
        self.labeled().chain(self.candidates.iter())
    }

    /// How many more verified negatives are needed to match the positives.
    pub fn negative_shortfall(&self) -> usize {
        self.positives.len().saturating_sub(self.negatives.len())
    }
}

pub fn partition(refs: &[DocumentRef], century: Century) -> CorpusPartition {
    let mut p = CorpusPartition::empty(century);
    for doc in refs.iter().filter(|d| d.century == century) {
        match doc.label {
            Some(Label::Travelogue) => p.positives.push(doc.clone()),
            Some(Label::NonTravelogue) => p.negatives.push(doc.clone()),
            None => p.candidates.push(doc.clone()),
        }
    }
    p
}

/// Draws `n` distinct candidates uniformly without replacement.
///
/// The drawn documents stay unlabeled and are tagged `RandomSample`: they are
/// pending expert verification and only enter the negative pool through a
/// `Reject` verdict in [`apply_annotations`].
pub fn sample_negatives(partition: &CorpusPartition, n: usize, seed: u64) -> Result<Vec<DocumentRef>, CorpusError> {
    let available = partition.candidates.len();
    if n > available {
        return Err(CorpusError::InsufficientCandidates {
            requested: n,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, available, n)
        .into_iter()
        .map(|i| DocumentRef {
            provenance: Some(Provenance::RandomSample),
            ..partition.candidates[i].clone()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirm,
    Reject,
    Uncertain,
}

/// One expert decision on one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub verdict: Verdict,
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
    pub round: u32,
}

impl AnnotationRecord {
    pub fn key(&self) -> (&str, &str, u32) {
        (&self.doc_id, &self.annotator, self.round)
    }
}

/// Consensus over all records for a single document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Confirmed,
    Rejected,
    /// Only `Uncertain` verdicts so far.
    Pending,
    /// Confirm and Reject in the same round; needs a human decision.
    Disputed,
}

/// Resolves the records of one document. Only the latest round counts;
/// within it `Uncertain` yields to any definitive verdict.
pub fn resolve<'a>(records: impl IntoIterator<Item = &'a AnnotationRecord>) -> Option<(u32, Resolution)> {
    let mut latest: Option<u32> = None;
    let mut confirms = 0usize;
    let mut rejects = 0usize;
    for r in records {
        match latest {
            Some(round) if r.round < round => continue,
            Some(round) if r.round == round => {}
            _ => {
                latest = Some(r.round);
                confirms = 0;
                rejects = 0;
            }
        }
        match r.verdict {
            Verdict::Confirm => confirms += 1,
            Verdict::Reject => rejects += 1,
            Verdict::Uncertain => {}
        }
    }
    let round = latest?;
    let res = match (confirms > 0, rejects > 0) {
        (true, true) => Resolution::Disputed,
        (true, false) => Resolution::Confirmed,
        (false, true) => Resolution::Rejected,
        (false, false) => Resolution::Pending,
    };
    Some((round, res))
}

/// Groups records by document id, preserving first-seen order of ids.
pub fn group_by_doc(records: &[AnnotationRecord]) -> BTreeMap<&str, Vec<&AnnotationRecord>> {
    let mut map: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.doc_id.as_str()).or_default().push(r);
    }
    map
}

/// Moves documents between pools according to expert verdicts.
///
/// `Confirm` routes a document to positives and `Reject` to negatives,
/// whichever pool it currently sits in; `Uncertain` leaves it in place.
/// Moved documents keep their relative order and are appended to the target
/// pool in partition order.
pub fn apply_annotations(
    partition: CorpusPartition,
    records: &[AnnotationRecord],
) -> Result<CorpusPartition, CorpusError> {
    let known: HashSet<&str> = partition.all().map(|d| d.id.as_str()).collect();
    if let Some(r) = records.iter().find(|r| !known.contains(r.doc_id.as_str())) {
        return Err(CorpusError::UnknownDocId(r.doc_id.clone()));
    }

    let mut decided: HashMap<String, Label> = HashMap::new();
    for (doc_id, recs) in group_by_doc(records) {
        match resolve(recs.iter().copied()) {
            Some((round, Resolution::Disputed)) => {
                return Err(CorpusError::ConflictingVerdicts {
                    doc_id: doc_id.to_string(),
                    round,
                })
            }
            Some((_, Resolution::Confirmed)) => {
                decided.insert(doc_id.to_string(), Label::Travelogue);
            }
            Some((_, Resolution::Rejected)) => {
                decided.insert(doc_id.to_string(), Label::NonTravelogue);
            }
            _ => {}
        }
    }

    let CorpusPartition {
        century,
        positives,
        negatives,
        candidates,
    } = partition;
    let mut out = CorpusPartition::empty(century);
    let mut moved_pos = Vec::new();
    let mut moved_neg = Vec::new();
    let pools = [
        (Some(Label::Travelogue), positives),
        (Some(Label::NonTravelogue), negatives),
        (None, candidates),
    ];
    for (current, pool) in pools {
        for mut doc in pool {
            match decided.get(&doc.id).copied() {
                Some(target) if Some(target) != current => {
                    doc.label = Some(target);
                    if doc.provenance.is_none() {
                        doc.provenance = Some(Provenance::ModelDiscovery);
                    }
                    match target {
                        Label::Travelogue => moved_pos.push(doc),
                        Label::NonTravelogue => moved_neg.push(doc),
                    }
                }
                _ => match current {
                    Some(Label::Travelogue) => out.positives.push(doc),
                    Some(Label::NonTravelogue) => out.negatives.push(doc),
                    None => out.candidates.push(doc),
                },
            }
        }
    }
    out.positives.extend(moved_pos);
    out.negatives.extend(moved_neg);
    Ok(out)
}

/// Reads an append-only annotation log. Exact repeats of a
/// `(doc_id, annotator, round)` key are collapsed; a differing verdict for
/// the same key is a conflict.
pub fn load_annotation_log(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>, CorpusError> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CorpusError::io(path, e)),
    };
    let mut out: Vec<AnnotationRecord> = Vec::new();
    let mut index: HashMap<(String, String, u32), usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedAnnotation(i + 1, e.to_string()))?;
        let key = (rec.doc_id.clone(), rec.annotator.clone(), rec.round);
        match index.get(&key) {
            Some(&j) if out[j].verdict == rec.verdict => continue,
            Some(_) => {
                return Err(CorpusError::ConflictingVerdicts {
                    doc_id: rec.doc_id,
                    round: rec.round,
                })
            }
            None => {
                index.insert(key, out.len());
                out.push(rec);
            }
        }
    }
    Ok(out)
}

/// Appends one record and syncs it to disk before returning.
pub fn append_annotation(path: impl AsRef<Path>, record: &AnnotationRecord) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CorpusError::io(path, e))?;
    let mut line = serde_json::to_string(record).expect("annotation records serialize");
    line.push('\n');
    file.write_all(line.as_bytes())
        .and_then(|_| file.sync_data())
        .map_err(|e| CorpusError::io(path, e))
}
