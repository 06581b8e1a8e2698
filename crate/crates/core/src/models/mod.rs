//! Classifier families behind a common trait, looked up by name.
//!
//! A [`ClassifierFamily`] knows how to train and decode one kind of model; a
//! trained [`Classifier`] scores sparse vectors. [`Registry::builtin`] holds
//! the four stock families (`mnb`, `svm`, `logreg`, `mlp`) and callers may
//! register more. [`Model`] pairs a classifier with the frozen feature
//! configuration that produced its inputs and owns the on-disk format.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Label;
use crate::features::{FeatureConfig, HashProfile, Normalize, SparseVector, Weighting, HASH_ID};

pub mod linear;
pub mod mlp;
pub mod mnb;

pub use linear::{train_linear, LinearFamily, LinearLoss, LinearModel, LinearObjective};
pub use mlp::{train_mlp, MlpFamily, MlpModel, MlpObjective, MlpParams};
pub use mnb::{train_mnb, MnbFamily, MnbModel};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data must contain both classes")]
    SingleClassInput,
    #[error("feature {index} has negative weight {value}; multinomial NB needs counts")]
    NegativeFeature { index: usize, value: f64 },
    #[error("training diverged in epoch {epoch} (non-finite loss)")]
    DivergenceDetected { epoch: usize },
    #[error("vector dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature profile mismatch: {0}")]
    ProfileMismatch(String),
    #[error("unsupported model format version {0}")]
    VersionMismatch(u16),
    #[error("model file checksum mismatch (truncated or corrupted)")]
    ChecksumMismatch,
    #[error("unknown model family `{0}`")]
    UnknownFamily(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("corrupt model parameters: {0}")]
    Corrupt(String),
    #[error("{xs} feature vectors but {ys} labels")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Hyperparameters shared by all trainers; each family reads the fields it
/// needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    /// MLP only.
    pub hidden_units: usize,
    /// Stop when the epoch loss has not improved for this many epochs.
    pub early_stop_patience: Option<usize>,
    /// Naive Bayes smoothing.
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 32,
            l2: 1e-4,
            seed: 7,
            hidden_units: 32,
            early_stop_patience: None,
            alpha: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be >= 0");
        }
        if 2.0 * self.learning_rate * self.l2 >= 1.0 {
            return bad("2 * learning_rate * l2 must be < 1 (weight decay would flip signs)");
        }
        if self.hidden_units == 0 {
            return bad("hidden_units must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be > 0");
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience must be >= 1 when set");
        }
        Ok(())
    }
}

/// A trained model's view of a sparse input.
pub trait Classifier: fmt::Debug + Send + Sync {
    fn family(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Raw decision value: margin, logit or log-odds. Monotone in [`score`](Self::score).
    fn decision(&self, x: &SparseVector) -> f64;

    /// Probability-like score of the positive class in `[0, 1]`.
    fn score(&self, x: &SparseVector) -> f64;

    /// Family-specific parameter blob (little-endian, weights as f32).
    fn encode_params(&self, out: &mut Vec<u8>);

    fn as_any(&self) -> &dyn Any;
}

/// One interchangeable classifier family.
pub trait ClassifierFamily: Send + Sync {
    fn name(&self) -> &'static str;

    /// Stable one-byte tag written to model files.
    fn tag(&self) -> u8;

    fn profile(&self) -> HashProfile;

    fn default_config(&self) -> TrainConfig {
        TrainConfig::default()
    }

    fn train(&self, xs: &[SparseVector], ys: &[Label], cfg: &TrainConfig) -> Result<Box<dyn Classifier>, ModelError>;

    fn decode_params(&self, bytes: &[u8]) -> Result<Box<dyn Classifier>, ModelError>;
}

/// Families keyed by name.
#[derive(Clone, Default)]
pub struct Registry {
    families: BTreeMap<&'static str, Arc<dyn ClassifierFamily>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut r = Registry::new();
        r.register(Arc::new(MnbFamily));
        r.register(Arc::new(LinearFamily::svm()));
        r.register(Arc::new(LinearFamily::logreg()));
        r.register(Arc::new(MlpFamily));
        r
    }

    /// Adds or replaces a family. Panics if another family already uses the
    /// same tag.
    pub fn register(&mut self, family: Arc<dyn ClassifierFamily>) {
        if let Some(other) = self
            .families
            .values()
            .find(|f| f.tag() == family.tag() && f.name() != family.name())
        {
            panic!("family tag {} already used by `{}`", family.tag(), other.name());
        }
        self.families.insert(family.name(), family);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ClassifierFamily>, ModelError> {
        self.families
            .get(name)
            .cloned()
            .ok_or_else(|| ModelError::UnknownFamily(name.to_string()))
    }

    pub fn by_tag(&self, tag: u8) -> Result<Arc<dyn ClassifierFamily>, ModelError> {
        self.families
            .values()
            .find(|f| f.tag() == tag)
            .cloned()
            .ok_or_else(|| ModelError::UnknownFamily(format!("tag {tag}")))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.families.keys().copied().collect()
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.families.keys()).finish()
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub score: f64,
    pub label: Label,
    pub threshold: f64,
}

impl ScoredLabel {
    /// Ties at the threshold classify positive.
    pub fn new(score: f64, threshold: f64) -> Self {
        ScoredLabel {
            score,
            label: Label::from_positive(score >= threshold),
            threshold,
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn signed_labels(xs: &[SparseVector], ys: &[Label]) -> Result<Vec<f64>, ModelError> {
    if xs.len() != ys.len() {
        return Err(ModelError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    let pos = ys.iter().filter(|y| y.is_positive()).count();
    if pos == 0 || pos == ys.len() {
        return Err(ModelError::SingleClassInput);
    }
    Ok(ys.iter().map(|y| if y.is_positive() { 1.0 } else { -1.0 }).collect())
}

pub(crate) fn common_dim(xs: &[SparseVector]) -> Result<usize, ModelError> {
    let dim = xs.first().map(SparseVector::dim).unwrap_or(0);
    if let Some(x) = xs.iter().find(|x| x.dim() != dim) {
        return Err(ModelError::DimensionMismatch {
            expected: dim,
            got: x.dim(),
        });
    }
    Ok(dim)
}

/// Little-endian cursor over a parameter blob.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() < n {
            return Err(ModelError::Corrupt("unexpected end of parameters".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, ModelError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>, ModelError> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| ModelError::Corrupt("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn string(&mut self) -> Result<String, ModelError> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| ModelError::Corrupt(e.to_string()))
    }

    pub(crate) fn finish(self) -> Result<(), ModelError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Corrupt(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub const MODEL_MAGIC: &[u8; 8] = b"WFMODEL\0";
pub const MODEL_FORMAT_VERSION: u16 = 1;

/// A trained classifier plus the preprocessing it expects.
#[derive(Debug)]
pub struct Model {
    classifier: Box<dyn Classifier>,
    features: FeatureConfig,
    hash_id: String,
    freq_fingerprint: String,
    run_fingerprint: String,
    tag: u8,
}

impl Model {
    /// Wraps a trained classifier; the feature config must use the family's
    /// hashing profile.
    pub fn new(
        family: &dyn ClassifierFamily,
        classifier: Box<dyn Classifier>,
        features: FeatureConfig,
        freq_fingerprint: impl Into<String>,
        run_fingerprint: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if features.profile() != Some(family.profile()) {
            return Err(ModelError::ProfileMismatch(format!(
                "family `{}` needs {:?} features, config gives {:?}",
                family.name(),
                family.profile(),
                features.profile()
            )));
        }
        if classifier.dim() != features.hash_dim {
            return Err(ModelError::DimensionMismatch {
                expected: features.hash_dim,
                got: classifier.dim(),
            });
        }
        Ok(Model {
            classifier,
            features,
            hash_id: HASH_ID.to_string(),
            freq_fingerprint: freq_fingerprint.into(),
            run_fingerprint: run_fingerprint.into(),
            tag: family.tag(),
        })
    }

    pub fn classifier(&self) -> &dyn Classifier {
        self.classifier.as_ref()
    }

    pub fn family(&self) -> &'static str {
        self.classifier.family()
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn freq_fingerprint(&self) -> &str {
        &self.freq_fingerprint
    }

    pub fn run_fingerprint(&self) -> &str {
        &self.run_fingerprint
    }

    pub fn check_input(&self, x: &SparseVector) -> Result<(), ModelError> {
        if x.dim() != self.classifier.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.classifier.dim(),
                got: x.dim(),
            });
        }
        if self.features.profile() == Some(HashProfile::UnsignedCounts) {
            if let Some((i, w)) = x.iter().find(|&(_, w)| w < 0.0) {
                return Err(ModelError::ProfileMismatch(format!(
                    "negative weight {w} at {i}: signed vector given to a count model"
                )));
            }
        }
        Ok(())
    }

    pub fn predict_score(&self, x: &SparseVector) -> Result<ScoredLabel, ModelError> {
        self.predict_with_threshold(x, DEFAULT_THRESHOLD)
    }

    pub fn predict_with_threshold(&self, x: &SparseVector, threshold: f64) -> Result<ScoredLabel, ModelError> {
        self.check_input(x)?;
        Ok(ScoredLabel::new(self.classifier.score(x), threshold))
    }

    pub fn decision(&self, x: &SparseVector) -> Result<f64, ModelError> {
        self.check_input(x)?;
        Ok(self.classifier.decision(x))
    }

    /// Layout: magic, format version (u16), family tag (u8), feature
    /// config, hash id, frequency-table fingerprint, run fingerprint,
    /// parameter blob (u64 length + bytes), SHA-256 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.push(self.tag);
        let f = &self.features;
        out.push(f.ngram_min as u8);
        out.push(f.ngram_max as u8);
        out.extend_from_slice(&(f.hash_dim as u32).to_le_bytes());
        out.push(u8::from(f.signed));
        out.push(match f.normalize {
            Normalize::None => 0,
            Normalize::L2 => 1,
        });
        out.push(match f.weighting {
            Weighting::Count => 0,
            Weighting::Binary => 1,
        });
        out.extend_from_slice(&f.min_count.to_le_bytes());
        put_string(&mut out, &self.hash_id);
        put_string(&mut out, &self.freq_fingerprint);
        put_string(&mut out, &self.run_fingerprint);
        let mut params = Vec::new();
        self.classifier.encode_params(&mut params);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        out.extend_from_slice(&params);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8], registry: &Registry) -> Result<Self, ModelError> {
        if bytes.len() < MODEL_MAGIC.len() + 32 {
            return Err(ModelError::ChecksumMismatch);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ModelError::ChecksumMismatch);
        }
        let mut r = Reader::new(body);
        if r.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
            return Err(ModelError::Corrupt("not a model file".into()));
        }
        let version = r.u16()?;
        if version != MODEL_FORMAT_VERSION {
            return Err(ModelError::VersionMismatch(version));
        }
        let family = registry.by_tag(r.u8()?)?;
        let features = FeatureConfig {
            ngram_min: r.u8()? as usize,
            ngram_max: r.u8()? as usize,
            hash_dim: r.u32()? as usize,
            signed: r.u8()? != 0,
            normalize: match r.u8()? {
                0 => Normalize::None,
                1 => Normalize::L2,
                n => return Err(ModelError::Corrupt(format!("normalize tag {n}"))),
            },
            weighting: match r.u8()? {
                0 => Weighting::Count,
                1 => Weighting::Binary,
                n => return Err(ModelError::Corrupt(format!("weighting tag {n}"))),
            },
            min_count: r.u64()?,
        };
        let hash_id = r.string()?;
        if hash_id != HASH_ID {
            return Err(ModelError::ProfileMismatch(format!(
                "model hashed with `{hash_id}`, this build uses `{HASH_ID}`"
            )));
        }
        let freq_fingerprint = r.string()?;
        let run_fingerprint = r.string()?;
        let len = r.u64()? as usize;
        let params = r.take(len)?;
        r.finish()?;
        let classifier = family.decode_params(params)?;
        Model::new(family.as_ref(), classifier, features, freq_fingerprint, run_fingerprint)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>, registry: &Registry) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Model::from_bytes(&bytes, registry)
    }

    /// Hex SHA-256 of the serialized model.
    pub fn fingerprint(&self) -> String {
        crate::fingerprint::sha256_hex(&self.to_bytes())
    }
}

pub fn predict_score(model: &Model, x: &SparseVector) -> Result<ScoredLabel, ModelError> {
    model.predict_score(x)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<(), ModelError> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>, registry: &Registry) -> Result<Model, ModelError> {
    Model::load(path, registry)
}
