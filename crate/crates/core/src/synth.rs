//! Synthetic stand-in corpus: two topic vocabularies over a shared Zipfian
//! background, with OCR-style token corruption.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{save_manifest, Century, CorpusError, DocumentRef, Label, Provenance};
use crate::dataset::LabeledSet;
use crate::fingerprint::derive_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic corpus config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub century: Century,
    pub docs_per_class: usize,
    /// Mean tokens per document.
    pub doc_length: usize,
    /// Lengths are uniform in `doc_length * (1 ± length_jitter)`.
    pub length_jitter: f64,
    /// Topic words per class, shared ones included.
    pub topic_vocab: usize,
    /// Fraction of each topic vocabulary that both classes use.
    pub shared_fraction: f64,
    pub background_vocab: usize,
    /// Mean probability that a token is drawn from the class topic
    /// vocabulary; each document scales it by a factor in [0.5, 1.5].
    pub topic_share: f64,
    /// Probability that an emitted token is corrupted.
    pub noise_rate: f64,
    pub zipf_exponent: f64,
    /// Unlabeled pool size.
    pub candidates: usize,
    /// How many pool documents come from the positive generator.
    pub planted_positives: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            century: Century::C18,
            docs_per_class: 200,
            doc_length: 2000,
            length_jitter: 0.25,
            topic_vocab: 400,
            shared_fraction: 0.2,
            background_vocab: 6000,
            topic_share: 0.03,
            noise_rate: 0.05,
            zipf_exponent: 1.0,
            candidates: 0,
            planted_positives: 0,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.docs_per_class == 0 || self.doc_length == 0 {
            return bad("docs_per_class and doc_length must be >= 1");
        }
        if !(0.0..1.0).contains(&self.length_jitter) {
            return bad("length_jitter must be in [0, 1)");
        }
        if self.topic_vocab < 2 || self.background_vocab < 2 {
            return bad("vocabularies need at least two words");
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return bad("shared_fraction must be in [0, 1]");
        }
        if !(0.0..=(2.0 / 3.0)).contains(&self.topic_share) {
            return bad("topic_share must be in [0, 2/3]");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise_rate must be in [0, 1]");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be >= 0");
        }
        if self.planted_positives > self.candidates {
            return bad("planted_positives exceeds candidates");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthDoc {
    pub id: String,
    pub label: Option<Label>,
    /// Which generator produced the text; for pool documents this is the
    /// hidden truth.
    pub positive: bool,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub docs: Vec<SynthDoc>,
}

const CONSONANTS: &[&str] = &[
    "b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "w", "z", "sch", "st", "ch",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ä", "ö", "ü", "ei", "au"];
const OCR_CHARS: &[char] = &[
    'a', 'c', 'e', 'i', 'l', 'm', 'n', 'r', 's', 't', 'u', 'ſ', 'f', '0', '1', '3', '5', '8', 'é', 'ü', '.', ',', '\'',
];

/// Distinct pseudo-German word for every index. Consonant-vowel syllables
/// parse unambiguously only if no vowel string is a prefix of a consonant
/// string, which holds here, so the map is injective.
fn word(mut n: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::new();
    let mut syllables = 0;
    while syllables < 2 || n > 0 {
        let d = n % base;
        n /= base;
        out.push_str(CONSONANTS[d / VOWELS.len()]);
        out.push_str(VOWELS[d % VOWELS.len()]);
        syllables += 1;
    }
    out
}

struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, s: f64) -> Self {
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for r in 1..=n {
            acc += (r as f64).powf(-s);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Zipf { cdf }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1)
    }
}

struct Vocabulary {
    background: Vec<String>,
    topics: [Vec<String>; 2],
    background_zipf: Zipf,
    topic_zipf: Zipf,
}

impl Vocabulary {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let shared = (cfg.shared_fraction * cfg.topic_vocab as f64).round() as usize;
        let exclusive = cfg.topic_vocab - shared;
        let b = cfg.background_vocab;
        let background: Vec<String> = (0..b).map(word).collect();
        let shared_words: Vec<String> = (b..b + shared).map(word).collect();
        let topics = [0, 1].map(|c| {
            let start = b + shared + c * exclusive;
            let mut v: Vec<String> = shared_words
                .iter()
                .cloned()
                .chain((start..start + exclusive).map(word))
                .collect();
            v.shuffle(rng);
            v
        });
        Vocabulary {
            background,
            topics,
            background_zipf: Zipf::new(b, cfg.zipf_exponent),
            topic_zipf: Zipf::new(cfg.topic_vocab, cfg.zipf_exponent),
        }
    }
}

fn corrupt(w: &str, rng: &mut impl Rng) -> String {
    let mut chars: Vec<char> = w.chars().collect();
    let pos = rng.gen_range(0..chars.len());
    let c = *OCR_CHARS.choose(rng).expect("nonempty");
    match rng.gen_range(0..4) {
        0 => chars[pos] = c,
        1 => chars.insert(pos, c),
        2 if chars.len() > 2 => {
            chars.remove(pos);
        }
        _ => chars.insert(pos, if rng.gen_bool(0.5) { '-' } else { ' ' }),
    }
    chars.into_iter().collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn document(cfg: &SynthConfig, vocab: &Vocabulary, positive: bool, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = cfg.length_jitter;
    let len = ((cfg.doc_length as f64) * rng.gen_range((1.0 - j)..=(1.0 + j)))
        .round()
        .max(1.0) as usize;
    let share = cfg.topic_share * rng.gen_range(0.5..=1.5);
    let topic = &vocab.topics[usize::from(positive)];
    let mut out = String::with_capacity(len * 8);
    let mut sentence_left = 0usize;
    for k in 0..len {
        let w = if rng.gen_bool(share) {
            &topic[vocab.topic_zipf.sample(&mut rng)]
        } else {
            &vocab.background[vocab.background_zipf.sample(&mut rng)]
        };
        let mut w = if rng.gen_bool(cfg.noise_rate) {
            corrupt(w, &mut rng)
        } else {
            w.clone()
        };
        if sentence_left == 0 || rng.gen_bool(0.1) {
            w = capitalize(&w);
        }
        if sentence_left == 0 {
            sentence_left = rng.gen_range(6..20);
            if k > 0 {
                out.push_str(if k % 7 == 0 { ".\n" } else { ". " });
            }
        } else {
            out.push_str(if rng.gen_bool(0.06) { ", " } else { " " });
        }
        out.push_str(&w);
        sentence_left -= 1;
    }
    out.push_str(".\n");
    out
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = Vocabulary::new(cfg, &mut rng);

    let mut labeled: Vec<bool> = (0..2 * cfg.docs_per_class).map(|i| i < cfg.docs_per_class).collect();
    labeled.shuffle(&mut rng);
    let mut pool: Vec<bool> = (0..cfg.candidates).map(|i| i < cfg.planted_positives).collect();
    pool.shuffle(&mut rng);

    let specs: Vec<(String, Option<Label>, bool)> = labeled
        .iter()
        .enumerate()
        .map(|(i, &p)| (format!("gt-{i:04}"), Some(Label::from_positive(p)), p))
        .chain(pool.iter().enumerate().map(|(i, &p)| (format!("cand-{i:05}"), None, p)))
        .collect();
    let docs = specs
        .into_par_iter()
        .enumerate()
        .map(|(i, (id, label, positive))| SynthDoc {
            text: document(cfg, &vocab, positive, derive_seed(cfg.seed, &[i as u64])),
            id,
            label,
            positive,
        })
        .collect();
    Ok(SynthCorpus {
        config: cfg.clone(),
        docs,
    })
}

impl SynthCorpus {
    pub fn labeled_set(&self) -> LabeledSet {
        LabeledSet::from_texts(
            self.docs
                .iter()
                .filter_map(|d| d.label.map(|l| (d.id.clone(), l, d.text.as_str()))),
        )
    }

    /// Ids of pool documents produced by the positive generator.
    pub fn planted(&self) -> Vec<&str> {
        self.docs
            .iter()
            .filter(|d| d.label.is_none() && d.positive)
            .map(|d| d.id.as_str())
            .collect()
    }

    pub fn document_refs(&self, text_dir: &Path) -> Vec<DocumentRef> {
        self.docs
            .iter()
            .map(|d| DocumentRef {
                id: d.id.clone(),
                century: self.config.century,
                text_path: text_dir.join(format!("{}.txt", d.id)),
                label: d.label,
                provenance: d.label.map(|_| Provenance::KeywordSearch),
            })
            .collect()
    }

    /// Writes `texts/<id>.txt`, `manifest.jsonl` and `planted.txt` (one
    /// planted id per line) under `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, SynthError> {
        let texts = dir.join("texts");
        fs::create_dir_all(&texts).map_err(|e| CorpusError::io(&texts, e))?;
        for d in &self.docs {
            let p = texts.join(format!("{}.txt", d.id));
            fs::write(&p, &d.text).map_err(|e| CorpusError::io(&p, e))?;
        }
        let manifest = dir.join("manifest.jsonl");
        save_manifest(&manifest, &self.document_refs(&texts))?;
        let planted = dir.join("planted.txt");
        let body: String = self.planted().iter().map(|id| format!("{id}\n")).collect();
        fs::write(&planted, body).map_err(|e| CorpusError::io(&planted, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_manifest, partition};
    use crate::textprep::tokenize;
    use std::collections::HashSet;

    fn small() -> SynthConfig {
        SynthConfig {
            docs_per_class: 10,
            doc_length: 300,
            candidates: 20,
            planted_positives: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn words_are_distinct_and_tokenize_whole() {
        let words: Vec<String> = (0..30_000).map(word).collect();
        let set: HashSet<&String> = words.iter().collect();
        assert_eq!(set.len(), words.len());
        for w in words.iter().step_by(97) {
            assert_eq!(tokenize(w).0, vec![w.clone()]);
        }
    }

    #[test]
    fn topic_vocabularies_overlap_by_the_shared_fraction() {
        let cfg = SynthConfig::default();
        let v = Vocabulary::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let a: HashSet<&String> = v.topics[0].iter().collect();
        let b: HashSet<&String> = v.topics[1].iter().collect();
        assert_eq!(a.len(), 400);
        assert_eq!(a.intersection(&b).count(), 80);
        let bg: HashSet<&String> = v.background.iter().collect();
        assert!(a.is_disjoint(&bg) && b.is_disjoint(&bg));
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&small()).unwrap();
        assert_eq!(a, generate(&small()).unwrap());
        assert_ne!(a.docs, generate(&SynthConfig { seed: 2, ..small() }).unwrap().docs);
        assert_eq!(a.docs.len(), 40);
        assert_eq!(a.planted().len(), 4);
        assert_eq!(a.labeled_set().class_sizes(), (10, 10));
    }

    #[test]
    fn lengths_follow_the_config() {
        let c = generate(&small()).unwrap();
        for d in &c.docs {
            let n = d.text.split_whitespace().count();
            assert!((200..=420).contains(&n), "{n}");
        }
    }

    #[test]
    fn written_corpus_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate(&small()).unwrap();
        let manifest = c.write(dir.path()).unwrap();
        let docs = load_manifest(&manifest).unwrap();
        let p = partition(&docs, Century::C18);
        assert_eq!((p.positives.len(), p.negatives.len(), p.candidates.len()), (10, 10, 20));
        let planted = fs::read_to_string(dir.path().join("planted.txt")).unwrap();
        assert_eq!(planted.lines().count(), 4);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig {
            planted_positives: 30,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            noise_rate: 1.5,
            ..small()
        })
        .is_err());
    }
}
