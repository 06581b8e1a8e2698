//! One-hidden-layer perceptron: ReLU hidden units, sigmoid output, binary
//! cross-entropy, mini-batch SGD.
//!
//! The input layer is stored row-major by input feature (`w1[j * hidden + k]`)
//! so a sparse input touches only the rows of its nonzero features.

use std::any::Any;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{put_f32s, sigmoid, softplus, Classifier, ClassifierFamily, ModelError, Reader, TrainConfig};
use crate::corpus::Label;
use crate::features::{HashProfile, SparseVector};

/// Trainable parameters in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub dim: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpParams {
    /// Uniform init in `±sqrt(6 / fan_in)` per layer, zero biases.
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = (6.0 / dim as f64).sqrt();
        let l2 = (6.0 / hidden as f64).sqrt();
        let w1 = (0..dim * hidden).map(|_| rng.gen_range(-l1..l1)).collect();
        let w2 = (0..hidden).map(|_| rng.gen_range(-l2..l2)).collect();
        MlpParams {
            dim,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            dim: self.dim,
            hidden: self.hidden,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.hidden],
            w2: vec![0.0; self.hidden],
            b2: 0.0,
        }
    }

    /// All parameters in the order w1, b1, w2, b2.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.w1.len() + 2 * self.hidden + 1);
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn unflatten(&self, flat: &[f64]) -> Self {
        let (a, b) = (self.w1.len(), self.hidden);
        assert_eq!(flat.len(), a + 2 * b + 1);
        MlpParams {
            dim: self.dim,
            hidden: self.hidden,
            w1: flat[..a].to_vec(),
            b1: flat[a..a + b].to_vec(),
            w2: flat[a + b..a + 2 * b].to_vec(),
            b2: flat[a + 2 * b],
        }
    }

    /// Hidden pre-activations with the input layer taken as `w1_scale * w1`.
    fn hidden_pre(&self, x: &SparseVector, w1_scale: f64) -> Vec<f64> {
        let h = self.hidden;
        let mut a = self.b1.clone();
        for (j, v) in x.iter() {
            let row = &self.w1[j * h..(j + 1) * h];
            let v = v * w1_scale;
            a.iter_mut().zip(row).for_each(|(ak, wk)| *ak += v * wk);
        }
        a
    }

    pub fn logit(&self, x: &SparseVector) -> f64 {
        let a = self.hidden_pre(x, 1.0);
        self.b2 + a.iter().zip(&self.w2).map(|(ak, wk)| ak.max(0.0) * wk).sum::<f64>()
    }

    fn squared_weights(&self) -> f64 {
        self.w1.iter().chain(&self.w2).map(|v| v * v).sum()
    }
}

/// Per-example backward pass: loss plus the output and hidden deltas,
/// scaled by `scale`.
struct Backward {
    loss: f64,
    activations: Vec<f64>,
    d_out: f64,
    d_hidden: Vec<f64>,
}

fn backward(p: &MlpParams, x: &SparseVector, y: f64, scale: f64, w1_scale: f64) -> Backward {
    let a = p.hidden_pre(x, w1_scale);
    let activations: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();
    let z = p.b2 + activations.iter().zip(&p.w2).map(|(h, w)| h * w).sum::<f64>();
    // d/dz softplus(-y z) = -y sigmoid(-y z)
    let d_out = -y * sigmoid(-y * z) * scale;
    let d_hidden = a
        .iter()
        .zip(&p.w2)
        .map(|(&ak, &wk)| if ak > 0.0 { d_out * wk } else { 0.0 })
        .collect();
    Backward {
        loss: softplus(-y * z),
        activations,
        d_out,
        d_hidden,
    }
}

/// Training objective `mean(BCE) + l2 * (|W1|^2 + |w2|^2)`; biases are not
/// regularized.
#[derive(Debug)]
pub struct MlpObjective<'a> {
    xs: &'a [SparseVector],
    ys: Vec<f64>,
    l2: f64,
}

impl<'a> MlpObjective<'a> {
    pub fn new(xs: &'a [SparseVector], ys: &[Label], l2: f64) -> Result<Self, ModelError> {
        let ys = super::signed_labels(xs, ys)?;
        super::common_dim(xs)?;
        Ok(MlpObjective { xs, ys, l2 })
    }

    /// Forward-only evaluation of the objective.
    pub fn loss(&self, p: &MlpParams) -> f64 {
        let data: f64 = self
            .xs
            .iter()
            .zip(&self.ys)
            .map(|(x, &y)| softplus(-y * p.logit(x)))
            .sum();
        data / self.xs.len() as f64 + self.l2 * p.squared_weights()
    }

    /// Dense analytic gradient of [`loss`](Self::loss).
    pub fn gradient(&self, p: &MlpParams) -> MlpParams {
        let mut g = p.zeros_like();
        let scale = 1.0 / self.xs.len() as f64;
        let h = p.hidden;
        for (x, &y) in self.xs.iter().zip(&self.ys) {
            let bw = backward(p, x, y, scale, 1.0);
            g.b2 += bw.d_out;
            for k in 0..h {
                g.w2[k] += bw.d_out * bw.activations[k];
                g.b1[k] += bw.d_hidden[k];
            }
            for (j, v) in x.iter() {
                for k in 0..h {
                    g.w1[j * h + k] += v * bw.d_hidden[k];
                }
            }
        }
        for (gk, wk) in g.w1.iter_mut().zip(&p.w1) {
            *gk += 2.0 * self.l2 * wk;
        }
        for (gk, wk) in g.w2.iter_mut().zip(&p.w2) {
            *gk += 2.0 * self.l2 * wk;
        }
        g
    }

    /// One SGD step on `batch`; returns the batch's mean data loss.
    ///
    /// The input layer is `w1_scale * p.w1`: weight decay only shrinks the
    /// scalar, so a step costs O(batch nnz * hidden) instead of touching
    /// every input weight.
    fn step(&self, p: &mut MlpParams, batch: &[usize], lr: f64, w1_scale: &mut f64) -> f64 {
        let scale = 1.0 / batch.len() as f64;
        let h = p.hidden;
        let passes: Vec<Backward> = batch
            .iter()
            .map(|&i| backward(p, &self.xs[i], self.ys[i], scale, *w1_scale))
            .collect();
        if self.l2 > 0.0 {
            let decay = 1.0 - 2.0 * lr * self.l2;
            *w1_scale *= decay;
            p.w2.iter_mut().for_each(|v| *v *= decay);
        }
        let inv = lr / *w1_scale;
        let mut loss = 0.0;
        let mut g_w2 = vec![0.0; h];
        let mut g_b1 = vec![0.0; h];
        let mut g_b2 = 0.0;
        for (&i, bw) in batch.iter().zip(&passes) {
            loss += bw.loss;
            g_b2 += bw.d_out;
            for k in 0..h {
                g_w2[k] += bw.d_out * bw.activations[k];
                g_b1[k] += bw.d_hidden[k];
            }
            for (j, v) in self.xs[i].iter() {
                let row = &mut p.w1[j * h..(j + 1) * h];
                row.iter_mut().zip(&bw.d_hidden).for_each(|(w, d)| *w -= inv * v * d);
            }
        }
        for k in 0..h {
            p.w2[k] -= lr * g_w2[k];
            p.b1[k] -= lr * g_b1[k];
        }
        p.b2 -= lr * g_b2;
        if *w1_scale < 1e-6 {
            fold_scale(p, w1_scale);
        }
        loss * scale
    }
}

fn fold_scale(p: &mut MlpParams, w1_scale: &mut f64) {
    if *w1_scale != 1.0 {
        let s = *w1_scale;
        p.w1.iter_mut().for_each(|v| *v *= s);
        *w1_scale = 1.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dim: usize,
    hidden: usize,
    seed: u64,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: f32,
}

impl MlpModel {
    fn from_params(p: &MlpParams, seed: u64) -> Self {
        let q = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        MlpModel {
            dim: p.dim,
            hidden: p.hidden,
            seed,
            w1: q(&p.w1),
            b1: q(&p.b1),
            w2: q(&p.w2),
            b2: p.b2 as f32,
        }
    }

    pub fn layer_sizes(&self) -> [usize; 3] {
        [self.dim, self.hidden, 1]
    }

    pub fn output_bias(&self) -> f32 {
        self.b2
    }

    pub fn logit(&self, x: &SparseVector) -> f64 {
        let h = self.hidden;
        let mut a: Vec<f64> = self.b1.iter().map(|&v| f64::from(v)).collect();
        for (j, v) in x.iter() {
            let row = &self.w1[j * h..(j + 1) * h];
            a.iter_mut().zip(row).for_each(|(ak, &wk)| *ak += v * f64::from(wk));
        }
        f64::from(self.b2)
            + a.iter()
                .zip(&self.w2)
                .map(|(ak, &wk)| ak.max(0.0) * f64::from(wk))
                .sum::<f64>()
    }
}

pub fn train_mlp(xs: &[SparseVector], ys: &[Label], cfg: &TrainConfig) -> Result<MlpModel, ModelError> {
    cfg.validate()?;
    let obj = MlpObjective::new(xs, ys, cfg.l2)?;
    let mut p = MlpParams::init(xs[0].dim(), cfg.hidden_units, cfg.seed);
    // separate stream for shuffling so init does not depend on epochs
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut w1_scale = 1.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let l = obj.step(&mut p, batch, cfg.learning_rate, &mut w1_scale);
            if !l.is_finite() {
                return Err(ModelError::DivergenceDetected { epoch });
            }
            total += l;
            batches += 1;
        }
        let epoch_loss = total / batches as f64;
        if !p.b2.is_finite() || p.w2.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::DivergenceDetected { epoch });
        }
        if let Some(patience) = cfg.early_stop_patience {
            if epoch_loss < best {
                best = epoch_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    fold_scale(&mut p, &mut w1_scale);
    if p.w1.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::DivergenceDetected { epoch: cfg.epochs });
    }
    Ok(MlpModel::from_params(&p, cfg.seed))
}

impl Classifier for MlpModel {
    fn family(&self) -> &'static str {
        "mlp"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn decision(&self, x: &SparseVector) -> f64 {
        self.logit(x)
    }

    fn score(&self, x: &SparseVector) -> f64 {
        sigmoid(self.logit(x))
    }

    fn encode_params(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_f32s(out, &self.w1);
        put_f32s(out, &self.b1);
        put_f32s(out, &self.w2);
        out.extend_from_slice(&self.b2.to_le_bytes());
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MlpFamily;

impl ClassifierFamily for MlpFamily {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn tag(&self) -> u8 {
        4
    }

    fn profile(&self) -> HashProfile {
        HashProfile::SignedL2
    }

    fn default_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.3,
            epochs: 40,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    fn train(&self, xs: &[SparseVector], ys: &[Label], cfg: &TrainConfig) -> Result<Box<dyn Classifier>, ModelError> {
        Ok(Box::new(train_mlp(xs, ys, cfg)?))
    }

    fn decode_params(&self, bytes: &[u8]) -> Result<Box<dyn Classifier>, ModelError> {
        let mut r = Reader::new(bytes);
        let dim = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let seed = r.u64()?;
        let w1 = r.f32_vec(
            dim.checked_mul(hidden)
                .ok_or_else(|| ModelError::Corrupt("shape overflow".into()))?,
        )?;
        let b1 = r.f32_vec(hidden)?;
        let w2 = r.f32_vec(hidden)?;
        let b2 = r.f32()?;
        r.finish()?;
        Ok(Box::new(MlpModel {
            dim,
            hidden,
            seed,
            w1,
            b1,
            w2,
            b2,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::clusters;
    use super::*;

    fn xor() -> (Vec<SparseVector>, Vec<Label>) {
        [
            ([0.0, 0.0], false),
            ([0.0, 1.0], true),
            ([1.0, 0.0], true),
            ([1.0, 1.0], false),
        ]
        .iter()
        .map(|(p, y)| (SparseVector::from_dense(&[p[0], p[1]]), Label::from_positive(*y)))
        .unzip()
    }

    #[test]
    fn learns_xor_with_eight_hidden_units() {
        let (xs, ys) = xor();
        let cfg = TrainConfig {
            hidden_units: 8,
            epochs: 3000,
            batch_size: 4,
            learning_rate: 0.5,
            l2: 0.0,
            seed: 1,
            ..Default::default()
        };
        let m = train_mlp(&xs, &ys, &cfg).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(m.score(x) >= 0.5, y.is_positive(), "{x:?}");
        }
    }

    #[test]
    fn zero_epochs_scores_near_initial_bias() {
        let (xs, ys) = clusters(10, 1 << 10, 2, true);
        let cfg = TrainConfig {
            epochs: 0,
            hidden_units: 16,
            ..Default::default()
        };
        let m = train_mlp(&xs, &ys, &cfg).unwrap();
        let base = sigmoid(f64::from(m.output_bias()));
        for x in &xs {
            assert!((m.score(x) - base).abs() < 0.05);
        }
    }

    #[test]
    fn shape_chain_and_determinism() {
        let (xs, ys) = clusters(10, 256, 2, true);
        let cfg = TrainConfig {
            hidden_units: 6,
            epochs: 4,
            ..Default::default()
        };
        let a = train_mlp(&xs, &ys, &cfg).unwrap();
        assert_eq!(a.layer_sizes(), [256, 6, 1]);
        assert_eq!(a.w1.len(), 256 * 6);
        assert_eq!(a, train_mlp(&xs, &ys, &cfg).unwrap());
    }

    #[test]
    fn flatten_round_trip() {
        let p = MlpParams::init(5, 3, 9);
        assert_eq!(p.unflatten(&p.flatten()), p);
    }

    #[test]
    fn step_matches_dense_gradient_descent() {
        let (xs, ys) = clusters(4, 32, 6, true);
        let obj = MlpObjective::new(&xs, &ys, 1e-3).unwrap();
        let p0 = MlpParams::init(32, 4, 3);
        let g = obj.gradient(&p0);
        let mut p = p0.clone();
        let all: Vec<usize> = (0..xs.len()).collect();
        let mut s = 1.0;
        obj.step(&mut p, &all, 0.1, &mut s);
        fold_scale(&mut p, &mut s);
        let expect: Vec<f64> = p0.flatten().iter().zip(g.flatten()).map(|(w, d)| w - 0.1 * d).collect();
        for (a, b) in p.flatten().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
