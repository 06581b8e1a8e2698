//! Multinomial naive Bayes with additive smoothing over hashed counts.

use std::any::Any;
use std::collections::HashMap;

use super::{Classifier, ClassifierFamily, ModelError, Reader, TrainConfig};
use crate::corpus::Label;
use crate::features::{HashProfile, SparseVector};

/// Class 0 is the negative class, class 1 the positive class.
#[derive(Debug, Clone, PartialEq)]
pub struct MnbModel {
    alpha: f64,
    dim: usize,
    class_docs: [u64; 2],
    /// Per-class sparse feature counts, sorted by index. Stored as f32 so
    /// the serialized model reproduces scores bit for bit.
    counts: [Vec<(u32, f32)>; 2],
    log_prior: [f64; 2],
    log_denominator: [f64; 2],
    lookup: [HashMap<u32, f64>; 2],
}

impl MnbModel {
    pub fn from_counts(
        alpha: f64,
        dim: usize,
        class_docs: [u64; 2],
        counts: [Vec<(u32, f32)>; 2],
    ) -> Result<Self, ModelError> {
        if class_docs[0] == 0 || class_docs[1] == 0 {
            return Err(ModelError::SingleClassInput);
        }
        let n = (class_docs[0] + class_docs[1]) as f64;
        let log_prior = [(class_docs[0] as f64 / n).ln(), (class_docs[1] as f64 / n).ln()];
        let mut log_denominator = [0.0; 2];
        let mut lookup: [HashMap<u32, f64>; 2] = Default::default();
        for c in 0..2 {
            let total: f64 = counts[c].iter().map(|&(_, v)| f64::from(v)).sum();
            log_denominator[c] = (alpha * dim as f64 + total).ln();
            lookup[c] = counts[c].iter().map(|&(i, v)| (i, f64::from(v))).collect();
        }
        Ok(MnbModel {
            alpha,
            dim,
            class_docs,
            counts,
            log_prior,
            log_denominator,
            lookup,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn log_prior(&self) -> [f64; 2] {
        self.log_prior
    }

    /// `ln((alpha + count_c[j]) / (alpha * dim + total_c))`.
    pub fn log_likelihood(&self, class: usize, index: u32) -> f64 {
        let count = self.lookup[class].get(&index).copied().unwrap_or(0.0);
        (self.alpha + count).ln() - self.log_denominator[class]
    }

    /// Unnormalized log joint `ln P(c) + sum_j x_j ln theta_cj` per class.
    pub fn joint_log_likelihood(&self, x: &SparseVector) -> [f64; 2] {
        let mut out = self.log_prior;
        for (c, o) in out.iter_mut().enumerate() {
            *o += x
                .entries()
                .iter()
                .map(|&(j, v)| v * self.log_likelihood(c, j))
                .sum::<f64>();
        }
        out
    }

    /// Normalized log posteriors `[ln P(neg | x), ln P(pos | x)]`.
    pub fn log_posteriors(&self, x: &SparseVector) -> [f64; 2] {
        let jll = self.joint_log_likelihood(x);
        let m = jll[0].max(jll[1]);
        let lse = m + ((jll[0] - m).exp() + (jll[1] - m).exp()).ln();
        [jll[0] - lse, jll[1] - lse]
    }
}

pub fn train_mnb(xs: &[SparseVector], ys: &[Label], alpha: f64) -> Result<MnbModel, ModelError> {
    super::signed_labels(xs, ys)?;
    let dim = super::common_dim(xs)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(ModelError::InvalidConfig("alpha must be > 0".into()));
    }
    let mut acc: [HashMap<u32, f64>; 2] = Default::default();
    let mut class_docs = [0u64; 2];
    for (x, y) in xs.iter().zip(ys) {
        let c = usize::from(y.is_positive());
        class_docs[c] += 1;
        for &(j, v) in x.entries() {
            if v < 0.0 {
                return Err(ModelError::NegativeFeature {
                    index: j as usize,
                    value: v,
                });
            }
            *acc[c].entry(j).or_insert(0.0) += v;
        }
    }
    let counts = acc.map(|m| {
        let mut v: Vec<(u32, f32)> = m.into_iter().map(|(j, c)| (j, c as f32)).collect();
        v.sort_unstable_by_key(|&(j, _)| j);
        v
    });
    MnbModel::from_counts(alpha, dim, class_docs, counts)
}

impl Classifier for MnbModel {
    fn family(&self) -> &'static str {
        "mnb"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn decision(&self, x: &SparseVector) -> f64 {
        let jll = self.joint_log_likelihood(x);
        jll[1] - jll[0]
    }

    fn score(&self, x: &SparseVector) -> f64 {
        self.log_posteriors(x)[1].exp().clamp(0.0, 1.0)
    }

    fn encode_params(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for c in 0..2 {
            out.extend_from_slice(&self.class_docs[c].to_le_bytes());
            out.extend_from_slice(&(self.counts[c].len() as u32).to_le_bytes());
            for &(j, v) in &self.counts[c] {
                out.extend_from_slice(&j.to_le_bytes());
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MnbFamily;

impl ClassifierFamily for MnbFamily {
    fn name(&self) -> &'static str {
        "mnb"
    }

    fn tag(&self) -> u8 {
        1
    }

    fn profile(&self) -> HashProfile {
        HashProfile::UnsignedCounts
    }

    fn train(&self, xs: &[SparseVector], ys: &[Label], cfg: &TrainConfig) -> Result<Box<dyn Classifier>, ModelError> {
        Ok(Box::new(train_mnb(xs, ys, cfg.alpha)?))
    }

    fn decode_params(&self, bytes: &[u8]) -> Result<Box<dyn Classifier>, ModelError> {
        let mut r = Reader::new(bytes);
        let alpha = r.f64()?;
        let dim = r.u32()? as usize;
        let mut class_docs = [0u64; 2];
        let mut counts: [Vec<(u32, f32)>; 2] = Default::default();
        for c in 0..2 {
            class_docs[c] = r.u64()?;
            let n = r.u32()? as usize;
            counts[c].reserve(n.min(1 << 24));
            for _ in 0..n {
                let j = r.u32()?;
                if j as usize >= dim {
                    return Err(ModelError::Corrupt(format!("feature index {j} >= {dim}")));
                }
                counts[c].push((j, r.f32()?));
            }
        }
        r.finish()?;
        Ok(Box::new(MnbModel::from_counts(alpha, dim, class_docs, counts)?))
    }
}
