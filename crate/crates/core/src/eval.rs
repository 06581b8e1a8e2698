//! Stratified hold-out split, k-fold cross-validation, precision / recall /
//! F1 and a coin-flip baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Century, Label};
use crate::dataset::LabeledSet;
use crate::features::{FeatureConfig, FeatureError, SparseVector};
use crate::fingerprint::{derive_seed, fingerprint_of};
use crate::models::{Classifier, ClassifierFamily, ModelError, ScoredLabel, TrainConfig, DEFAULT_THRESHOLD};
use crate::textprep::FrequencyTable;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("both classes must be present")]
    SingleClassInput,
    #[error("split ratio {0} is outside (0, 1)")]
    InvalidRatio(f64),
    #[error("k = {0}; at least two folds are required")]
    InvalidFolds(usize),
    #[error("{class:?} has {available} examples, fewer than k = {k}")]
    TooFewExamples { class: Label, k: usize, available: usize },
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("no labels to evaluate")]
    EmptyInput,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Hold-out split of a labeled set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub valid_ids: Vec<String>,
    pub ratio_permille: u32,
    pub seed: u64,
    pub stratified_by: String,
}

fn class_indices(labels: &[Label], positive: bool) -> Vec<usize> {
    (0..labels.len())
        .filter(|&i| labels[i].is_positive() == positive)
        .collect()
}

fn shuffled(mut idx: Vec<usize>, seed: u64) -> Vec<usize> {
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Number of training items for a class of size `n`. The epsilon keeps
/// products such as `0.29 * 100` from landing just below an integer.
fn train_share(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Index form of [`stratified_split`]: `(train, valid)`, each ascending.
pub fn stratified_split_indices(
    labels: &[Label],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::InvalidRatio(ratio));
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for positive in [true, false] {
        let idx = class_indices(labels, positive);
        if idx.is_empty() {
            return Err(EvalError::SingleClassInput);
        }
        let idx = shuffled(idx, derive_seed(seed, &[u64::from(positive)]));
        let cut = train_share(ratio, idx.len());
        train.extend_from_slice(&idx[..cut]);
        valid.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

/// Shuffles each class with the seed and cuts it at `floor(ratio * n)`;
/// the remainder goes to validation.
pub fn stratified_split(items: &[(String, Label)], ratio: f64, seed: u64) -> Result<SplitPlan, EvalError> {
    let labels: Vec<Label> = items.iter().map(|(_, l)| *l).collect();
    let (train, valid) = stratified_split_indices(&labels, ratio, seed)?;
    let ids = |v: Vec<usize>| v.into_iter().map(|i| items[i].0.clone()).collect();
    Ok(SplitPlan {
        train_ids: ids(train),
        valid_ids: ids(valid),
        ratio_permille: (ratio * 1000.0).round() as u32,
        seed,
        stratified_by: "label".into(),
    })
}

/// Training and test indices of one fold.
pub type FoldIndices = (Vec<usize>, Vec<usize>);

/// Index form of [`kfold`]: `(train, test)` pairs, each ascending.
///
/// Each class is shuffled and dealt round-robin; the negatives continue
/// where the positives stopped, so total fold sizes also differ by at most 1.
pub fn kfold_indices(labels: &[Label], k: usize, seed: u64) -> Result<Vec<FoldIndices>, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidFolds(k));
    }
    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut dealt = 0;
    for positive in [true, false] {
        let idx = class_indices(labels, positive);
        if idx.len() < k {
            return Err(EvalError::TooFewExamples {
                class: Label::from_positive(positive),
                k,
                available: idx.len(),
            });
        }
        for i in shuffled(idx, derive_seed(seed, &[100 + u64::from(positive)])) {
            tests[dealt % k].push(i);
            dealt += 1;
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = (0..labels.len()).filter(|i| test.binary_search(i).is_err()).collect();
            (train, test)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub fn kfold(items: &[(String, Label)], k: usize, seed: u64) -> Result<Vec<Fold>, EvalError> {
    let labels: Vec<Label> = items.iter().map(|(_, l)| *l).collect();
    let ids = |v: &[usize]| v.iter().map(|&i| items[i].0.clone()).collect();
    Ok(kfold_indices(&labels, k, seed)?
        .iter()
        .map(|(tr, te)| Fold {
            train: ids(tr),
            test: ids(te),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn record(&mut self, truth: bool, pred: bool) {
        match (truth, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Positive-class precision, recall and F1. A zero denominator yields 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

fn ratio_or_zero(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let precision = ratio_or_zero(c.tp, c.tp + c.fp);
        let recall = ratio_or_zero(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            precision,
            recall,
            f1,
            confusion: c,
        }
    }
}

pub fn compute_metrics(y_true: &[Label], y_pred: &[Label]) -> Result<Metrics, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut c = Confusion::default();
    for (t, p) in y_true.iter().zip(y_pred) {
        c.record(t.is_positive(), p.is_positive());
    }
    Ok(Metrics::from_confusion(c))
}

/// Fair coin-flip predictions, repeated `trials` times (at least once).
/// Confusion counts are pooled over trials before the ratios are taken, so
/// the F1 identity holds for the reported numbers too.
pub fn random_baseline(y_true: &[Label], seed: u64, trials: usize) -> Metrics {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Confusion::default();
    for _ in 0..trials.max(1) {
        for t in y_true {
            c.record(t.is_positive(), rng.gen_bool(0.5));
        }
    }
    Metrics::from_confusion(c)
}

/// Unweighted mean of per-fold ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// max - min of the per-fold F1 scores.
    pub f1_spread: f64,
}

impl MeanMetrics {
    pub fn of(folds: &[Metrics]) -> Self {
        let n = folds.len().max(1) as f64;
        let mean = |f: fn(&Metrics) -> f64| folds.iter().map(f).sum::<f64>() / n;
        let f1s = folds.iter().map(|m| m.f1);
        let spread = f1s.clone().fold(f64::NEG_INFINITY, f64::max) - f1s.fold(f64::INFINITY, f64::min);
        MeanMetrics {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            f1_spread: if folds.is_empty() { 0.0 } else { spread },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub ratio: f64,
    pub folds: usize,
    pub seed: u64,
    pub baseline_trials: usize,
    pub threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            ratio: 0.75,
            folds: 5,
            seed: 42,
            baseline_trials: 1000,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub century: Century,
    pub family: String,
    pub config_fingerprint: String,
    pub freq_fingerprint: String,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub settings: EvalSettings,
    pub train_size: usize,
    pub valid_size: usize,
    pub per_fold: Vec<Metrics>,
    pub cv_mean: MeanMetrics,
    pub validation: Metrics,
    pub baseline: Metrics,
}

/// Hash of everything that configures an experiment (not of the data).
pub fn config_fingerprint(
    family: &str,
    features: &FeatureConfig,
    train: &TrainConfig,
    settings: &EvalSettings,
) -> String {
    fingerprint_of(&(family, features, train, settings))
}

fn subset<T: Clone>(all: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| all[i].clone()).collect()
}

/// Predicted labels at `threshold`.
pub fn predict_labels(model: &dyn Classifier, xs: &[SparseVector], threshold: f64) -> Vec<Label> {
    xs.iter()
        .map(|x| ScoredLabel::new(model.score(x), threshold).label)
        .collect()
}

fn fit_and_score(
    family: &dyn ClassifierFamily,
    xs: &[SparseVector],
    ys: &[Label],
    train: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
    threshold: f64,
) -> Result<Metrics, EvalError> {
    let model = family.train(&subset(xs, train), &subset(ys, train), cfg)?;
    let pred = predict_labels(model.as_ref(), &subset(xs, test), threshold);
    compute_metrics(&subset(ys, test), &pred)
}

/// Split, k-fold CV on the training part, retrain on the whole training
/// part, score the validation part, and add the coin-flip baseline on the
/// same validation labels. Folds train concurrently; any failure aborts.
pub fn run_experiment(
    set: &LabeledSet,
    freq: &FrequencyTable,
    features: &FeatureConfig,
    train: &TrainConfig,
    settings: &EvalSettings,
    family: &dyn ClassifierFamily,
    century: Century,
) -> Result<EvaluationReport, EvalError> {
    let features = features.with_profile(family.profile());
    features.validate()?;
    train.validate()?;
    let xs = set.vectorize(freq, &features);
    let ys = &set.labels;

    let (tr, va) = stratified_split_indices(ys, settings.ratio, settings.seed)?;
    let tr_labels = subset(ys, &tr);
    let folds = kfold_indices(&tr_labels, settings.folds, settings.seed)?;
    let per_fold = folds
        .par_iter()
        .map(|(f_tr, f_te)| {
            let to_global = |v: &[usize]| v.iter().map(|&i| tr[i]).collect::<Vec<_>>();
            fit_and_score(
                family,
                &xs,
                ys,
                &to_global(f_tr),
                &to_global(f_te),
                train,
                settings.threshold,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let validation = fit_and_score(family, &xs, ys, &tr, &va, train, settings.threshold)?;
    let baseline = random_baseline(
        &subset(ys, &va),
        derive_seed(settings.seed, &[0xba5e]),
        settings.baseline_trials,
    );

    Ok(EvaluationReport {
        century,
        family: family.name().to_string(),
        config_fingerprint: config_fingerprint(family.name(), &features, train, settings),
        freq_fingerprint: freq.fingerprint(),
        cv_mean: MeanMetrics::of(&per_fold),
        train_size: tr.len(),
        valid_size: va.len(),
        features,
        train: train.clone(),
        settings: settings.clone(),
        per_fold,
        validation,
        baseline,
    })
}

/// Which numbers fill the table cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableSource {
    Validation,
    CrossValidation,
}

fn column_title(family: &str) -> String {
    match family {
        "logreg" => "Log".into(),
        other => other.to_uppercase(),
    }
}

/// Plain-text table: one row per century, P / R / F1 per family, followed
/// by the coin-flip baseline of the first report in each row.
pub fn render_table(reports: &[EvaluationReport], source: TableSource) -> String {
    let mut families: Vec<&str> = Vec::new();
    let mut rows: BTreeMap<Century, BTreeMap<&str, &EvaluationReport>> = BTreeMap::new();
    for r in reports {
        if !families.contains(&r.family.as_str()) {
            families.push(&r.family);
        }
        rows.entry(r.century).or_default().insert(&r.family, r);
    }
    let cell = 18;
    let mut out = format!("{:<8}", "");
    for f in families.iter().map(|f| column_title(f)).chain(["Random".to_string()]) {
        let _ = write!(out, "| {f:<cell$}");
    }
    out.push('\n');
    let _ = write!(out, "{:<8}", "Century");
    for _ in 0..=families.len() {
        let _ = write!(out, "| {:<5} {:<5} {:<6}", "P", "R", "F1");
    }
    out.push('\n');
    let triple = |p: f64, r: f64, f: f64| format!("| {p:<5.2} {r:<5.2} {f:<6.2}");
    for (century, by_family) in &rows {
        let _ = write!(out, "{:<8}", century.to_string());
        for f in &families {
            match by_family.get(f) {
                Some(r) => {
                    let (p, rc, f1) = match source {
                        TableSource::Validation => (r.validation.precision, r.validation.recall, r.validation.f1),
                        TableSource::CrossValidation => (r.cv_mean.precision, r.cv_mean.recall, r.cv_mean.f1),
                    };
                    out.push_str(&triple(p, rc, f1));
                }
                None => {
                    let _ = write!(out, "| {:<cell$}", "-");
                }
            }
        }
        let b = by_family.values().next().map(|r| r.baseline).expect("row has a report");
        out.push_str(&triple(b.precision, b.recall, b.f1));
        out.push('\n');
    }
    out
}
