//! Unigram + bigram extraction and feature hashing into fixed-dimension
//! sparse vectors.
//!
//! Grams are hashed with 64-bit FNV-1a over their UTF-8 bytes (tokens joined
//! by a single space). The low bits select the index; the top bit selects
//! the sign when signed hashing is enabled. The hash has no seed, so vectors
//! are identical across platforms and runs.

use std::collections::{HashMap, HashSet};
use std::hash::Hasher;
use std::io::{Read, Write};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::textprep::{filter_rare, tokenize, FrequencyTable, TokenStream, DEFAULT_MIN_COUNT};

/// Identifier embedded in model files; bump if the hashing scheme changes.
pub const HASH_ID: &str = "fnv1a64-lowbits-sign63";
pub const DEFAULT_HASH_DIM: usize = 1 << 18;
pub const MIN_HASH_DIM: usize = 1 << 10;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("corrupt vector data: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    None,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Count,
    Binary,
}

/// The two fixed hashing setups: non-negative counts for multinomial naive
/// Bayes, signed L2-normalized counts for everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HashProfile {
    UnsignedCounts,
    SignedL2,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub hash_dim: usize,
    pub signed: bool,
    pub normalize: Normalize,
    pub weighting: Weighting,
    /// Minimum corpus frequency a token needs to survive filtering.
    pub min_count: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig::for_profile(HashProfile::SignedL2)
    }
}

impl FeatureConfig {
    /// Profile defaults: raw counts for the unsigned profile, binary
    /// presence for the signed one.
    pub fn for_profile(profile: HashProfile) -> Self {
        let signed = profile == HashProfile::SignedL2;
        FeatureConfig {
            ngram_min: 1,
            ngram_max: 2,
            hash_dim: DEFAULT_HASH_DIM,
            signed,
            normalize: if signed { Normalize::L2 } else { Normalize::None },
            weighting: if signed { Weighting::Binary } else { Weighting::Count },
            min_count: DEFAULT_MIN_COUNT,
        }
    }

    /// Same n-gram range, dimension and filter, switched to `profile`. The
    /// signed profile keeps this config's weighting when it already is
    /// signed; the unsigned profile always counts.
    pub fn with_profile(&self, profile: HashProfile) -> Self {
        let base = FeatureConfig::for_profile(profile);
        let weighting = if profile == HashProfile::SignedL2 && self.profile() == Some(HashProfile::SignedL2) {
            self.weighting
        } else {
            base.weighting
        };
        FeatureConfig {
            ngram_min: self.ngram_min,
            ngram_max: self.ngram_max,
            hash_dim: self.hash_dim,
            min_count: self.min_count,
            weighting,
            ..base
        }
    }

    /// Unsigned profile: unsigned, unnormalized counts. Signed profile:
    /// signed and L2-normalized, either weighting.
    pub fn profile(&self) -> Option<HashProfile> {
        match (self.signed, self.normalize, self.weighting) {
            (false, Normalize::None, Weighting::Count) => Some(HashProfile::UnsignedCounts),
            (true, Normalize::L2, _) => Some(HashProfile::SignedL2),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.ngram_min < 1 || self.ngram_min > self.ngram_max {
            return Err(FeatureError::InvalidConfig(format!(
                "n-gram range ({}, {}) must satisfy 1 <= min <= max",
                self.ngram_min, self.ngram_max
            )));
        }
        if !self.hash_dim.is_power_of_two() || self.hash_dim < MIN_HASH_DIM || self.hash_dim > 1 << 31 {
            return Err(FeatureError::InvalidConfig(format!(
                "hash_dim {} must be a power of two in [2^10, 2^31]",
                self.hash_dim
            )));
        }
        Ok(())
    }
}

/// Sorted `(index, weight)` pairs; indices strictly increase and no weight
/// is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn empty(dim: usize) -> Self {
        SparseVector {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds a vector from unsorted pairs; duplicates are summed and zero
    /// sums dropped.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for (i, w) in pairs {
            assert!((i as usize) < dim, "index {i} out of range for dim {dim}");
            *acc.entry(i).or_insert(0.0) += w;
        }
        let mut entries: Vec<(u32, f64)> = acc.into_iter().filter(|&(_, w)| w != 0.0).collect();
        entries.sort_unstable_by_key(|&(i, _)| i);
        SparseVector { dim, entries }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        SparseVector {
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|&(_, &w)| w != 0.0)
                .map(|(i, &w)| (i as u32, w))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|&(i, w)| (i as usize, w))
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, w)| w * dense[i]).sum()
    }

    pub fn dot_f32(&self, dense: &[f32]) -> f64 {
        self.iter().map(|(i, w)| w * f64::from(dense[i])).sum()
    }

    fn l2_normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for e in &mut self.entries {
                e.1 /= n;
            }
        }
    }

    /// Binary record: varint dim, varint entry count, then per entry a
    /// varint index and a little-endian f32 weight.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_varint(w, self.dim as u64)?;
        write_varint(w, self.entries.len() as u64)?;
        for &(i, v) in &self.entries {
            write_varint(w, u64::from(i))?;
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, FeatureError> {
        let dim = read_varint(r)? as usize;
        let n = read_varint(r)? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        let mut prev: Option<u32> = None;
        for _ in 0..n {
            let i = u32::try_from(read_varint(r)?).map_err(|_| FeatureError::Corrupt("index overflow".into()))?;
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            let v = f64::from(f32::from_le_bytes(buf));
            if i as usize >= dim || prev.is_some_and(|p| p >= i) || v == 0.0 {
                return Err(FeatureError::Corrupt(format!("bad entry ({i}, {v})")));
            }
            prev = Some(i);
            entries.push((i, v));
        }
        Ok(SparseVector { dim, entries })
    }
}

pub(crate) fn write_varint(w: &mut impl Write, mut v: u64) -> std::io::Result<()> {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            return w.write_all(&[byte]);
        }
        w.write_all(&[byte | 0x80])?;
    }
}

pub(crate) fn read_varint(r: &mut impl Read) -> Result<u64, FeatureError> {
    let mut out = 0u64;
    for shift in (0..64).step_by(7) {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        out |= u64::from(b[0] & 0x7f) << shift;
        if b[0] & 0x80 == 0 {
            return Ok(out);
        }
    }
    Err(FeatureError::Corrupt("varint longer than 10 bytes".into()))
}

/// All contiguous n-grams for n in the configured range, unigrams first,
/// then bigrams, each group in document order.
pub fn extract_ngrams(stream: &TokenStream, cfg: &FeatureConfig) -> Vec<String> {
    let tokens = stream.tokens();
    let mut out = Vec::new();
    for n in cfg.ngram_min..=cfg.ngram_max {
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    out
}

/// FNV-1a 64 of the gram's UTF-8 bytes.
pub fn gram_hash(gram: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(gram.as_bytes());
    h.finish()
}

fn hash_tokens(tokens: &[String]) -> u64 {
    let mut h = FnvHasher::default();
    for (k, t) in tokens.iter().enumerate() {
        if k > 0 {
            h.write(b" ");
        }
        h.write(t.as_bytes());
    }
    h.finish()
}

#[inline]
fn slot(hash: u64, cfg: &FeatureConfig) -> (u32, f64) {
    let index = (hash & (cfg.hash_dim as u64 - 1)) as u32;
    let sign = if cfg.signed && hash >> 63 == 1 { -1.0 } else { 1.0 };
    (index, sign)
}

fn finish(acc: HashMap<u32, f64>, cfg: &FeatureConfig) -> SparseVector {
    let mut entries: Vec<(u32, f64)> = acc.into_iter().filter(|&(_, w)| w != 0.0).collect();
    entries.sort_unstable_by_key(|&(i, _)| i);
    let mut v = SparseVector {
        dim: cfg.hash_dim,
        entries,
    };
    if cfg.normalize == Normalize::L2 {
        v.l2_normalize();
    }
    v
}

fn accumulate(hashes: impl Iterator<Item = u64>, cfg: &FeatureConfig) -> SparseVector {
    let mut acc: HashMap<u32, f64> = HashMap::new();
    match cfg.weighting {
        Weighting::Count => {
            for h in hashes {
                let (i, s) = slot(h, cfg);
                *acc.entry(i).or_insert(0.0) += s;
            }
        }
        Weighting::Binary => {
            let distinct: HashSet<u64> = hashes.collect();
            for h in distinct {
                let (i, s) = slot(h, cfg);
                *acc.entry(i).or_insert(0.0) += s;
            }
        }
    }
    finish(acc, cfg)
}

/// Hashes gram strings into a vector of dimension `cfg.hash_dim`.
///
/// Binary weighting saturates each distinct gram at 1 before its sign is
/// applied; colliding grams still add up within an index.
pub fn hash_vectorize<S: AsRef<str>>(grams: &[S], cfg: &FeatureConfig) -> SparseVector {
    accumulate(grams.iter().map(|g| gram_hash(g.as_ref())), cfg)
}

/// Same as `hash_vectorize(&extract_ngrams(stream, cfg), cfg)` without
/// materializing the gram strings.
pub fn vectorize_tokens(stream: &TokenStream, cfg: &FeatureConfig) -> SparseVector {
    let tokens = stream.tokens();
    let hashes = (cfg.ngram_min..=cfg.ngram_max).flat_map(|n| tokens.windows(n).map(hash_tokens));
    accumulate(hashes, cfg)
}

/// Tokenize, drop rare tokens, extract grams, hash.
pub fn vectorize_document(text: &str, freq: &FrequencyTable, cfg: &FeatureConfig) -> SparseVector {
    vectorize_tokens(&filter_rare(&tokenize(text), freq, cfg.min_count), cfg)
}

const CACHE_MAGIC: &[u8; 6] = b"WFVEC\0";
const CACHE_VERSION: u8 = 1;

/// A vectorized labeled corpus, cached between pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorCache {
    /// Fingerprint of the configuration that produced the vectors.
    pub fingerprint: String,
    pub records: Vec<(String, Option<Label>, SparseVector)>,
}

impl VectorCache {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&[CACHE_VERSION])?;
        write_bytes(w, self.fingerprint.as_bytes())?;
        write_varint(w, self.records.len() as u64)?;
        for (id, label, v) in &self.records {
            write_bytes(w, id.as_bytes())?;
            let tag = match label {
                None => 0u8,
                Some(Label::Travelogue) => 1,
                Some(Label::NonTravelogue) => 2,
            };
            w.write_all(&[tag])?;
            v.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, FeatureError> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic[..6] != CACHE_MAGIC || magic[6] != CACHE_VERSION {
            return Err(FeatureError::Corrupt(
                "not a vector cache (bad magic or version)".into(),
            ));
        }
        let fingerprint = read_string(r)?;
        let n = read_varint(r)? as usize;
        let mut records = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let id = read_string(r)?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let label = match tag[0] {
                0 => None,
                1 => Some(Label::Travelogue),
                2 => Some(Label::NonTravelogue),
                t => return Err(FeatureError::Corrupt(format!("bad label tag {t}"))),
            };
            records.push((id, label, SparseVector::read_from(r)?));
        }
        Ok(VectorCache { fingerprint, records })
    }
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> std::io::Result<()> {
    write_varint(w, b.len() as u64)?;
    w.write_all(b)
}

fn read_string(r: &mut impl Read) -> Result<String, FeatureError> {
    let len = read_varint(r)? as usize;
    if len > 1 << 20 {
        return Err(FeatureError::Corrupt("string too long".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| FeatureError::Corrupt(e.to_string()))
}
