//! Linear SVM (hinge loss) and logistic regression trained with mini-batch
//! SGD on the objective `mean(loss(y_i, w.x_i + b)) + l2 * |w|^2`.

use std::any::Any;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{put_f32s, sigmoid, softplus, Classifier, ClassifierFamily, ModelError, Reader, TrainConfig};
use crate::corpus::Label;
use crate::features::{HashProfile, SparseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearLoss {
    Hinge,
    Logistic,
}

impl LinearLoss {
    /// Loss and its derivative with respect to the margin `m` for a label
    /// `y` in {-1, +1}. The hinge subgradient at `y*m == 1` is taken as 0.
    pub fn value_and_slope(self, y: f64, m: f64) -> (f64, f64) {
        match self {
            LinearLoss::Hinge => {
                let t = 1.0 - y * m;
                if t > 0.0 {
                    (t, -y)
                } else {
                    (0.0, 0.0)
                }
            }
            LinearLoss::Logistic => (softplus(-y * m), -y * sigmoid(-y * m)),
        }
    }
}

/// The training objective over a fixed data set, exposed so the analytic
/// gradient can be checked against finite differences.
#[derive(Debug)]
pub struct LinearObjective<'a> {
    xs: &'a [SparseVector],
    ys: Vec<f64>,
    loss: LinearLoss,
    l2: f64,
}

impl<'a> LinearObjective<'a> {
    pub fn new(xs: &'a [SparseVector], ys: &[Label], loss: LinearLoss, l2: f64) -> Result<Self, ModelError> {
        let ys = super::signed_labels(xs, ys)?;
        super::common_dim(xs)?;
        Ok(LinearObjective { xs, ys, loss, l2 })
    }

    pub fn dim(&self) -> usize {
        self.xs[0].dim()
    }

    pub fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        self.xs.iter().map(|x| x.dot(w) + b).collect()
    }

    pub fn loss(&self, w: &[f64], b: f64) -> f64 {
        let data: f64 = self
            .xs
            .iter()
            .zip(&self.ys)
            .map(|(x, &y)| self.loss.value_and_slope(y, x.dot(w) + b).0)
            .sum::<f64>()
            / self.xs.len() as f64;
        data + self.l2 * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// Mean data loss over `batch` and the per-example margin slopes already
    /// divided by the batch size.
    /// Mean loss and per-example scaled slopes for weights `w_scale * w`.
    fn batch_slopes(&self, w: &[f64], w_scale: f64, b: f64, batch: &[usize]) -> (f64, Vec<f64>) {
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let slopes = batch
            .iter()
            .map(|&i| {
                let (l, s) = self.loss.value_and_slope(self.ys[i], w_scale * self.xs[i].dot(w) + b);
                total += l;
                s * scale
            })
            .collect();
        (total * scale, slopes)
    }

    /// Full gradient `(dL/dw, dL/db)`.
    pub fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let all: Vec<usize> = (0..self.xs.len()).collect();
        let (_, slopes) = self.batch_slopes(w, 1.0, b, &all);
        let mut gw: Vec<f64> = w.iter().map(|v| 2.0 * self.l2 * v).collect();
        let mut gb = 0.0;
        for (&i, s) in all.iter().zip(slopes) {
            for (j, v) in self.xs[i].iter() {
                gw[j] += s * v;
            }
            gb += s;
        }
        (gw, gb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: Vec<f32>,
    bias: f32,
    loss: LinearLoss,
    l2: f64,
}

impl LinearModel {
    pub fn new(weights: Vec<f32>, bias: f32, loss: LinearLoss, l2: f64) -> Self {
        LinearModel {
            weights,
            bias,
            loss,
            l2,
        }
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> f32 {
        self.bias
    }

    pub fn loss(&self) -> LinearLoss {
        self.loss
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|&w| f64::from(w).powi(2)).sum::<f64>().sqrt()
    }

    pub fn margin(&self, x: &SparseVector) -> f64 {
        x.dot_f32(&self.weights) + f64::from(self.bias)
    }
}

/// Mini-batch SGD with a per-epoch shuffle seeded from `cfg.seed`.
pub fn train_linear(
    xs: &[SparseVector],
    ys: &[Label],
    loss: LinearLoss,
    cfg: &TrainConfig,
) -> Result<LinearModel, ModelError> {
    cfg.validate()?;
    let obj = LinearObjective::new(xs, ys, loss, cfg.l2)?;
    let mut v = vec![0.0f64; obj.dim()];
    let mut scale = 1.0f64;
    let mut b = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let lr = cfg.learning_rate;
    let decay = 1.0 - 2.0 * lr * cfg.l2;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (batch_loss, slopes) = obj.batch_slopes(&v, scale, b, batch);
            if !batch_loss.is_finite() {
                return Err(ModelError::DivergenceDetected { epoch });
            }
            epoch_loss += batch_loss;
            batches += 1;
            // w = scale * v; decaying the scalar keeps the step sparse
            scale *= decay;
            for (&i, s) in batch.iter().zip(slopes) {
                for (j, x) in xs[i].iter() {
                    v[j] -= lr * s * x / scale;
                }
                b -= lr * s;
            }
            if scale < 1e-6 {
                v.iter_mut().for_each(|x| *x *= scale);
                scale = 1.0;
            }
        }
        let epoch_loss = epoch_loss / batches as f64;
        if !epoch_loss.is_finite() || !b.is_finite() {
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
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::DivergenceDetected { epoch: cfg.epochs });
    }
    Ok(LinearModel {
        weights: v.iter().map(|&x| (x * scale) as f32).collect(),
        bias: b as f32,
        loss,
        l2: cfg.l2,
    })
}

impl Classifier for LinearModel {
    fn family(&self) -> &'static str {
        match self.loss {
            LinearLoss::Hinge => "svm",
            LinearLoss::Logistic => "logreg",
        }
    }

    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn decision(&self, x: &SparseVector) -> f64 {
        self.margin(x)
    }

    /// Logistic regression reports its probability; the SVM margin is
    /// squashed through a unit-slope sigmoid (monotone, uncalibrated).
    fn score(&self, x: &SparseVector) -> f64 {
        sigmoid(self.margin(x))
    }

    fn encode_params(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.l2.to_le_bytes());
        out.extend_from_slice(&(self.weights.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.bias.to_le_bytes());
        put_f32s(out, &self.weights);
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearFamily {
    loss: LinearLoss,
}

impl LinearFamily {
    pub fn svm() -> Self {
        LinearFamily {
            loss: LinearLoss::Hinge,
        }
    }

    pub fn logreg() -> Self {
        LinearFamily {
            loss: LinearLoss::Logistic,
        }
    }
}

impl ClassifierFamily for LinearFamily {
    fn name(&self) -> &'static str {
        match self.loss {
            LinearLoss::Hinge => "svm",
            LinearLoss::Logistic => "logreg",
        }
    }

    fn tag(&self) -> u8 {
        match self.loss {
            LinearLoss::Hinge => 2,
            LinearLoss::Logistic => 3,
        }
    }

    fn profile(&self) -> HashProfile {
        HashProfile::SignedL2
    }

    /// Small batches and a larger step: unit-norm document vectors share a
    /// dominant common direction, and the generic defaults leave the
    /// discriminative directions barely trained.
    fn default_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 40,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    fn train(&self, xs: &[SparseVector], ys: &[Label], cfg: &TrainConfig) -> Result<Box<dyn Classifier>, ModelError> {
        Ok(Box::new(train_linear(xs, ys, self.loss, cfg)?))
    }

    fn decode_params(&self, bytes: &[u8]) -> Result<Box<dyn Classifier>, ModelError> {
        let mut r = Reader::new(bytes);
        let l2 = r.f64()?;
        let dim = r.u32()? as usize;
        let bias = r.f32()?;
        let weights = r.f32_vec(dim)?;
        r.finish()?;
        Ok(Box::new(LinearModel::new(weights, bias, self.loss, l2)))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::clusters;
    use super::*;

    fn accuracy(m: &LinearModel, xs: &[SparseVector], ys: &[Label]) -> f64 {
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| (m.margin(x) >= 0.0) == y.is_positive())
            .count();
        hits as f64 / xs.len() as f64
    }

    fn separable_2d() -> (Vec<SparseVector>, Vec<Label>) {
        // points in the first two coordinates of a 4-d space
        let pts = [
            ([2.0, 1.0], true),
            ([1.5, 2.0], true),
            ([3.0, 0.5], true),
            ([-1.0, -2.0], false),
            ([-2.0, -0.5], false),
            ([-0.5, -1.5], false),
        ];
        pts.iter()
            .map(|(p, y)| {
                (
                    SparseVector::from_dense(&[p[0], p[1], 0.0, 0.0]),
                    Label::from_positive(*y),
                )
            })
            .unzip()
    }

    #[test]
    fn separable_toy_set_is_learned_by_both_losses() {
        let (xs, ys) = separable_2d();
        for loss in [LinearLoss::Hinge, LinearLoss::Logistic] {
            let m = train_linear(&xs, &ys, loss, &TrainConfig::default()).unwrap();
            assert_eq!(accuracy(&m, &xs, &ys), 1.0, "{loss:?}");
        }
    }

    #[test]
    fn duplicating_data_leaves_full_batch_solution_unchanged() {
        let (xs, ys) = clusters(10, 64, 3, true);
        let cfg = TrainConfig {
            batch_size: 1000,
            epochs: 50,
            ..Default::default()
        };
        let xs2: Vec<SparseVector> = xs.iter().chain(&xs).cloned().collect();
        let ys2: Vec<Label> = ys.iter().chain(&ys).copied().collect();
        for loss in [LinearLoss::Hinge, LinearLoss::Logistic] {
            let a = train_linear(&xs, &ys, loss, &cfg).unwrap();
            let b = train_linear(&xs2, &ys2, loss, &cfg).unwrap();
            for x in &xs {
                assert!((a.margin(x) - b.margin(x)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (xs, ys) = clusters(20, 128, 4, true);
        let a = train_linear(&xs, &ys, LinearLoss::Logistic, &TrainConfig::default()).unwrap();
        let b = train_linear(&xs, &ys, LinearLoss::Logistic, &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_model_scores_one_half() {
        let m = LinearModel::new(vec![0.0; 8], 0.0, LinearLoss::Hinge, 0.0);
        let x = SparseVector::from_dense(&[1.0, -3.0, 0.0, 2.0, 0.0, 0.0, 0.0, 9.0]);
        assert_eq!(m.score(&x), 0.5);
    }

    #[test]
    fn stronger_l2_shrinks_weights() {
        let (xs, ys) = clusters(15, 64, 8, true);
        let norms: Vec<f64> = [1e-4, 1e-2, 1e-1]
            .iter()
            .map(|&l2| {
                let cfg = TrainConfig {
                    l2,
                    epochs: 2000,
                    batch_size: 1000,
                    learning_rate: 0.5,
                    ..Default::default()
                };
                train_linear(&xs, &ys, LinearLoss::Logistic, &cfg)
                    .unwrap()
                    .weight_norm()
            })
            .collect();
        assert!(norms[0] >= norms[1] && norms[1] >= norms[2], "{norms:?}");
    }

    #[test]
    fn single_class_and_divergence() {
        let (xs, _) = separable_2d();
        let ys = vec![Label::Travelogue; xs.len()];
        assert!(matches!(
            train_linear(&xs, &ys, LinearLoss::Hinge, &TrainConfig::default()),
            Err(ModelError::SingleClassInput)
        ));
        let (xs, ys) = separable_2d();
        let wild = TrainConfig {
            learning_rate: 1e308,
            l2: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            train_linear(&xs, &ys, LinearLoss::Logistic, &wild),
            Err(ModelError::DivergenceDetected { .. })
        ));
        let flipping = TrainConfig {
            learning_rate: 1.0,
            l2: 0.5,
            ..Default::default()
        };
        assert!(matches!(
            train_linear(&xs, &ys, LinearLoss::Logistic, &flipping),
            Err(ModelError::InvalidConfig(_))
        ));
    }

    #[test]
    fn early_stopping_halts_when_loss_plateaus() {
        let (xs, ys) = separable_2d();
        let cfg = TrainConfig {
            epochs: 10_000,
            early_stop_patience: Some(2),
            ..Default::default()
        };
        // hinge loss reaches exactly zero and stops improving
        let m = train_linear(&xs, &ys, LinearLoss::Hinge, &cfg).unwrap();
        assert_eq!(accuracy(&m, &xs, &ys), 1.0);
    }
}
