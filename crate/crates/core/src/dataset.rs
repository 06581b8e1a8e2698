//! Tokenized labeled sets and the per-century reference frequency table.

use rayon::prelude::*;

use crate::corpus::{CorpusError, CorpusPartition, DocumentRef, Label};
use crate::features::{vectorize_tokens, FeatureConfig, SparseVector};
use crate::textprep::{filter_rare, tokenize, FrequencyTable, TokenStream};

/// Ground-truth documents held as raw token streams so they can be
/// re-vectorized under any feature profile.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    pub tokens: Vec<TokenStream>,
}

impl LabeledSet {
    /// Reads and tokenizes every labeled document of the partition.
    pub fn from_partition(p: &CorpusPartition) -> Result<Self, CorpusError> {
        let docs: Vec<&DocumentRef> = p.labeled().collect();
        let tokens = docs.par_iter().map(|d| read_tokens(d)).collect::<Result<Vec<_>, _>>()?;
        Ok(LabeledSet {
            ids: docs.iter().map(|d| d.id.clone()).collect(),
            labels: docs
                .iter()
                .map(|d| d.label.expect("labeled() yields labeled docs"))
                .collect(),
            tokens,
        })
    }

    pub fn from_texts<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = (String, Label, S)>,
        S: AsRef<str>,
    {
        let mut set = LabeledSet::default();
        for (id, label, text) in items {
            set.ids.push(id);
            set.labels.push(label);
            set.tokens.push(tokenize(text.as_ref()));
        }
        set
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `(positives, negatives)`.
    pub fn class_sizes(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| l.is_positive()).count();
        (pos, self.labels.len() - pos)
    }

    pub fn items(&self) -> Vec<(String, Label)> {
        self.ids.iter().cloned().zip(self.labels.iter().copied()).collect()
    }

    /// Frequency table over this set's own tokens.
    pub fn frequency_table(&self) -> FrequencyTable {
        self.tokens
            .par_iter()
            .fold(FrequencyTable::new, |mut t, s| {
                t.add(s);
                t
            })
            .reduce(FrequencyTable::new, |mut a, b| {
                a.merge(b);
                a
            })
    }

    /// Rare-token filter then hashing, one vector per document, in order.
    pub fn vectorize(&self, freq: &FrequencyTable, cfg: &FeatureConfig) -> Vec<SparseVector> {
        self.tokens
            .par_iter()
            .map(|s| vectorize_tokens(&filter_rare(s, freq, cfg.min_count), cfg))
            .collect()
    }
}

pub fn read_tokens(doc: &DocumentRef) -> Result<TokenStream, CorpusError> {
    let text = doc.read_text().map_err(|e| CorpusError::io(&doc.text_path, e))?;
    Ok(tokenize(&text))
}

/// Counts tokens over every document of the partition (ground truth and
/// candidates), one file at a time per worker. This is the table the
/// min-frequency filter consults for the century.
pub fn reference_table(p: &CorpusPartition) -> Result<FrequencyTable, CorpusError> {
    let docs: Vec<&DocumentRef> = p.all().collect();
    docs.par_iter()
        .try_fold(FrequencyTable::new, |mut t, d| {
            t.add(&read_tokens(d)?);
            Ok(t)
        })
        .try_reduce(FrequencyTable::new, |mut a, b| {
            a.merge(b);
            Ok(a)
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Century;
    use crate::textprep::build_frequency_table;

    fn doc(dir: &std::path::Path, id: &str, label: Option<Label>, text: &str) -> DocumentRef {
        let path = dir.join(format!("{id}.txt"));
        std::fs::write(&path, text).unwrap();
        DocumentRef {
            id: id.into(),
            century: Century::C17,
            text_path: path,
            label,
            provenance: None,
        }
    }

    #[test]
    fn reference_table_counts_every_pool() {
        let dir = tempfile::tempdir().unwrap();
        let p = CorpusPartition {
            century: Century::C17,
            positives: vec![doc(dir.path(), "a", Some(Label::Travelogue), "Reise nach Rom")],
            negatives: vec![doc(dir.path(), "b", Some(Label::NonTravelogue), "Predigt in Rom")],
            candidates: vec![doc(dir.path(), "c", None, "Rom Rom")],
        };
        let t = reference_table(&p).unwrap();
        assert_eq!(t.count("rom"), 4);
        assert_eq!(t.doc_count(), 3);
        let set = LabeledSet::from_partition(&p).unwrap();
        assert_eq!(set.ids, vec!["a", "b"]);
        assert_eq!(set.class_sizes(), (1, 1));
        assert_eq!(set.frequency_table(), build_frequency_table(&set.tokens));
    }

    #[test]
    fn missing_text_is_an_io_error() {
        let mut p = CorpusPartition::empty(Century::C16);
        p.candidates.push(DocumentRef {
            id: "gone".into(),
            century: Century::C16,
            text_path: "/nonexistent/gone.txt".into(),
            label: None,
            provenance: None,
        });
        assert!(matches!(reference_table(&p), Err(CorpusError::Io { .. })));
    }
}
