//! Acceptance suite. Prints one `PASS` or `FAIL` line per criterion with the
//! measured value, the pinned tolerance and the wall time, then exits
//! nonzero if anything failed. Runs without the libtest harness
//! (`harness = false`) so the report reads top to bottom.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::Value;
use wayfinder_core::corpus::{load_manifest, partition, Century, Label};
use wayfinder_core::curve::{learning_curve, CurveSettings};
use wayfinder_core::dataset::{reference_table, LabeledSet};
use wayfinder_core::discover::{export_queue, read_queue, score_candidates};
use wayfinder_core::eval::{
    compute_metrics, kfold_indices, random_baseline, run_experiment, stratified_split_indices, EvalSettings, Metrics,
};
use wayfinder_core::features::{FeatureConfig, SparseVector};
use wayfinder_core::models::{train_mnb, LinearLoss, LinearObjective, MlpObjective, MlpParams, Model, Registry};
use wayfinder_core::synth::{generate, SynthConfig, SynthCorpus};
use wayfinder_core::textprep::{tokenize, FrequencyTable};

/// Every threshold the suite judges against, in one place.
mod tol {
    use std::time::Duration;

    /// Naive Bayes posteriors vs. the direct product formula (absolute).
    pub const MNB_POSTERIOR: f64 = 1e-9;
    pub const MNB_BUDGET: Duration = Duration::from_secs(10);

    /// Central-difference step and the largest accepted relative error.
    pub const FD_STEP: f64 = 1e-5;
    pub const FD_REL_ERROR: f64 = 1e-4;
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor)`.
    pub const FD_FLOOR: f64 = 1e-6;
    /// Hinge and ReLU points closer than this to a kink are redrawn.
    pub const KINK_CLEARANCE: f64 = 1e-3;
    pub const FD_POINTS: usize = 20;
    pub const GRADIENT_BUDGET: Duration = Duration::from_secs(30);

    pub const F1_STRONG: f64 = 0.95;
    pub const F1_WEAK: f64 = 0.90;
    pub const FOLD_SPREAD: f64 = 0.05;
    pub const CLASSIFY_BUDGET: Duration = Duration::from_secs(180);

    pub const CURVE_F1_AT_30: f64 = 0.80;
    pub const CURVE_BUDGET: Duration = Duration::from_secs(300);

    pub const GOLDEN_MIN_PAIRS: usize = 30;

    /// Stratified split: train count per class vs. `ratio * n`.
    pub const SPLIT_SLACK: f64 = 1.0;
    pub const F1_IDENTITY: f64 = 1e-12;
    pub const BASELINE_F1: f64 = 0.5;
    pub const BASELINE_SLACK: f64 = 0.02;
    pub const BASELINE_TRIALS: usize = 1000;

    pub const RANKED_DOCS: usize = 100;

    pub const POOL: usize = 1000;
    pub const PLANTED: usize = 100;
    pub const TOP_N: usize = 200;
    pub const PLANTED_IN_TOP: usize = 80;
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Result<Outcome, String>;

fn main() -> ExitCode {
    let checks: [(&str, Option<Duration>, Check); 9] = [
        ("mnb_oracle", Some(tol::MNB_BUDGET), mnb_oracle),
        ("gradients", Some(tol::GRADIENT_BUDGET), gradients),
        (
            "synthetic_classification",
            Some(tol::CLASSIFY_BUDGET),
            synthetic_classification,
        ),
        ("learning_curve", Some(tol::CURVE_BUDGET), learning_curve_shape),
        ("tokenizer_golden", None, tokenizer_golden),
        ("eval_invariants", None, eval_invariants),
        ("determinism", None, determinism),
        ("margin_rank_invariance", None, margin_rank_invariance),
        ("discovery_enrichment", None, discovery_enrichment),
    ];
    let mut failed = 0;
    for (name, budget, check) in checks {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let (pass, mut detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = budget.is_none_or(|b| took <= b);
        match budget {
            Some(b) => detail.push_str(&format!("; {:.1}s (budget {}s)", took.as_secs_f64(), b.as_secs())),
            None => detail.push_str(&format!("; {:.1}s", took.as_secs_f64())),
        }
        let ok = pass && in_time;
        if !ok {
            failed += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// Naive Bayes against the smoothed Bayes formula evaluated term by term.

fn labels_from_mask(n: usize, mask: u32) -> Vec<Label> {
    (0..n).map(|i| Label::from_positive(mask >> i & 1 == 1)).collect()
}

/// `P(pos | x)` straight from `prior * prod theta^x`, no logs.
fn brute_force_posterior(docs: &[Vec<f64>], labels: &[Label], alpha: f64, x: &[f64]) -> f64 {
    let d = x.len();
    let mut joint = [0.0; 2];
    for (c, j) in joint.iter_mut().enumerate() {
        let members: Vec<&Vec<f64>> = docs
            .iter()
            .zip(labels)
            .filter(|(_, l)| usize::from(l.is_positive()) == c)
            .map(|(doc, _)| doc)
            .collect();
        let prior = members.len() as f64 / docs.len() as f64;
        let per_feature: Vec<f64> = (0..d).map(|f| members.iter().map(|doc| doc[f]).sum()).collect();
        let total: f64 = per_feature.iter().sum();
        let mut p = prior;
        for f in 0..d {
            let theta = (alpha + per_feature[f]) / (alpha * d as f64 + total);
            for _ in 0..x[f] as u32 {
                p *= theta;
            }
        }
        *j = p;
    }
    joint[1] / (joint[0] + joint[1])
}

/// Count matrices for `n` docs by `d` features with entries in 0..=3:
/// all of them when there are at most 4^6, otherwise a seeded sample plus
/// the all-zero and all-three corners.
fn count_matrices(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<f64>>> {
    let cells = n * d;
    let to_matrix = |flat: Vec<f64>| flat.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
    if cells <= 6 {
        return (0..4u32.pow(cells as u32))
            .map(|mut code| {
                to_matrix(
                    (0..cells)
                        .map(|_| {
                            let v = f64::from(code % 4);
                            code /= 4;
                            v
                        })
                        .collect(),
                )
            })
            .collect();
    }
    let mut out = vec![to_matrix(vec![0.0; cells]), to_matrix(vec![3.0; cells])];
    out.extend((0..64).map(|_| to_matrix((0..cells).map(|_| f64::from(rng.gen_range(0..=3u8))).collect())));
    out
}

fn mnb_oracle() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4e42);
    let mut instances = 0usize;
    let mut exhaustive = 0usize;
    let mut worst = 0.0f64;
    for n in 2..=5usize {
        for d in 1..=10usize {
            let matrices = count_matrices(n, d, &mut rng);
            for mask in 1..(1u32 << n) - 1 {
                let labels = labels_from_mask(n, mask);
                for docs in &matrices {
                    for alpha in [1.0, 0.5] {
                        let xs: Vec<SparseVector> = docs.iter().map(|r| SparseVector::from_dense(r)).collect();
                        let model = train_mnb(&xs, &labels, alpha).map_err(|e| e.to_string())?;
                        let mut queries: Vec<Vec<f64>> = docs.clone();
                        queries.push(vec![1.0; d]);
                        queries.push((0..d).map(|f| (f % 4) as f64).collect());
                        for q in &queries {
                            let expected = brute_force_posterior(docs, &labels, alpha, q);
                            let got = model.log_posteriors(&SparseVector::from_dense(q))[1].exp();
                            worst = worst.max((got - expected).abs());
                        }
                        instances += 1;
                        if n * d <= 6 {
                            exhaustive += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(Outcome::new(
        worst <= tol::MNB_POSTERIOR,
        format!(
            "{instances} instances ({exhaustive} from exhaustive enumeration), max |posterior - oracle| {worst:.2e} (tol {:.0e})",
            tol::MNB_POSTERIOR
        ),
    ))
}

// ---------------------------------------------------------------------------
// Analytic gradients against central differences.

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(tol::FD_FLOOR)
}

fn random_data(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> (Vec<SparseVector>, Vec<Label>) {
    let xs = (0..n)
        .map(|_| {
            let dense: Vec<f64> = (0..dim)
                .map(|_| {
                    if rng.gen_bool(0.6) {
                        rng.gen_range(-1.0..1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            SparseVector::from_dense(&dense)
        })
        .collect();
    let ys = (0..n).map(|i| Label::from_positive(i % 2 == 0)).collect();
    (xs, ys)
}

fn signed(y: Label) -> f64 {
    if y.is_positive() {
        1.0
    } else {
        -1.0
    }
}

fn linear_gradient_error(loss: LinearLoss, rng: &mut ChaCha8Rng) -> Result<(f64, usize), String> {
    let dim = 8;
    let (xs, ys) = random_data(12, dim, rng);
    let obj = LinearObjective::new(&xs, &ys, loss, 0.01).map_err(|e| e.to_string())?;
    let h = tol::FD_STEP;
    let mut worst = 0.0f64;
    let mut redrawn = 0;
    let mut done = 0;
    while done < tol::FD_POINTS {
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let b = rng.gen_range(-0.5..0.5);
        if loss == LinearLoss::Hinge {
            let near_kink = obj
                .margins(&w, b)
                .iter()
                .zip(&ys)
                .any(|(m, &y)| (1.0 - signed(y) * m).abs() < tol::KINK_CLEARANCE);
            if near_kink {
                redrawn += 1;
                continue;
            }
        }
        let (gw, gb) = obj.gradient(&w, b);
        for j in 0..dim {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            let numeric = (obj.loss(&up, b) - obj.loss(&down, b)) / (2.0 * h);
            worst = worst.max(rel_error(gw[j], numeric));
        }
        let numeric_b = (obj.loss(&w, b + h) - obj.loss(&w, b - h)) / (2.0 * h);
        worst = worst.max(rel_error(gb, numeric_b));
        done += 1;
    }
    Ok((worst, redrawn))
}

/// Worst relative error per MLP layer: w1, b1, w2, b2.
fn mlp_gradient_error(rng: &mut ChaCha8Rng) -> Result<([f64; 4], usize), String> {
    let (dim, hidden) = (6, 5);
    let (xs, ys) = random_data(10, dim, rng);
    let obj = MlpObjective::new(&xs, &ys, 0.01).map_err(|e| e.to_string())?;
    let h = tol::FD_STEP;
    let mut worst = [0.0f64; 4];
    let mut redrawn = 0;
    let mut done = 0;
    while done < tol::FD_POINTS {
        let mut p = MlpParams::init(dim, hidden, rng.gen());
        p.b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
        p.b2 = rng.gen_range(-0.3..0.3);
        let near_kink = xs.iter().any(|x| {
            (0..hidden).any(|k| {
                let pre = p.b1[k] + x.iter().map(|(j, v)| v * p.w1[j * hidden + k]).sum::<f64>();
                pre.abs() < tol::KINK_CLEARANCE
            })
        });
        if near_kink {
            redrawn += 1;
            continue;
        }
        let analytic = obj.gradient(&p).flatten();
        let flat = p.flatten();
        let bounds = [
            dim * hidden,
            dim * hidden + hidden,
            dim * hidden + 2 * hidden,
            flat.len(),
        ];
        for i in 0..flat.len() {
            let (mut up, mut down) = (flat.clone(), flat.clone());
            up[i] += h;
            down[i] -= h;
            let numeric = (obj.loss(&p.unflatten(&up)) - obj.loss(&p.unflatten(&down))) / (2.0 * h);
            let layer = bounds.iter().position(|&end| i < end).expect("index within params");
            worst[layer] = worst[layer].max(rel_error(analytic[i], numeric));
        }
        done += 1;
    }
    Ok((worst, redrawn))
}

fn gradients() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772);
    let (logistic, _) = linear_gradient_error(LinearLoss::Logistic, &mut rng)?;
    let (hinge, hinge_redrawn) = linear_gradient_error(LinearLoss::Hinge, &mut rng)?;
    let (mlp, mlp_redrawn) = mlp_gradient_error(&mut rng)?;
    let all = [logistic, hinge, mlp[0], mlp[1], mlp[2], mlp[3]];
    let worst = all.iter().cloned().fold(0.0, f64::max);
    Ok(Outcome::new(
        worst < tol::FD_REL_ERROR,
        format!(
            "max rel error logistic {logistic:.1e}, hinge {hinge:.1e}, mlp w1 {:.1e} b1 {:.1e} w2 {:.1e} b2 {:.1e} \
             (tol {:.0e}, {} points each; redrawn near kinks: hinge {hinge_redrawn}, relu {mlp_redrawn})",
            mlp[0],
            mlp[1],
            mlp[2],
            mlp[3],
            tol::FD_REL_ERROR,
            tol::FD_POINTS
        ),
    ))
}

// ---------------------------------------------------------------------------
// Classification and learning curve on the default synthetic corpus.

struct Synthetic {
    set: LabeledSet,
    freq: FrequencyTable,
}

fn default_corpus() -> &'static Synthetic {
    static CORPUS: OnceLock<Synthetic> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let corpus = generate(&SynthConfig::default()).expect("default synth config is valid");
        let set = corpus.labeled_set();
        let freq = set.frequency_table();
        Synthetic { set, freq }
    })
}

fn synthetic_classification() -> Result<Outcome, String> {
    let data = default_corpus();
    let registry = Registry::builtin();
    let settings = EvalSettings::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, floor) in [
        ("mlp", tol::F1_STRONG),
        ("svm", tol::F1_STRONG),
        ("mnb", tol::F1_WEAK),
        ("logreg", tol::F1_WEAK),
    ] {
        let family = registry.get(name).map_err(|e| e.to_string())?;
        let report = run_experiment(
            &data.set,
            &data.freq,
            &FeatureConfig::default(),
            &family.default_config(),
            &settings,
            family.as_ref(),
            Century::C18,
        )
        .map_err(|e| e.to_string())?;
        let f1 = report.validation.f1;
        let spread = report.cv_mean.f1_spread;
        pass &= f1 >= floor && spread < tol::FOLD_SPREAD;
        parts.push(format!("{name} F1 {f1:.3} (>= {floor}) spread {spread:.3}"));
    }
    Ok(Outcome::new(
        pass,
        format!("{}; fold spread tol < {}", parts.join(", "), tol::FOLD_SPREAD),
    ))
}

fn learning_curve_shape() -> Result<Outcome, String> {
    let data = default_corpus();
    let registry = Registry::builtin();
    let family = registry.get("mlp").map_err(|e| e.to_string())?;
    let settings = CurveSettings::default();
    let curve = learning_curve(
        &data.set,
        &data.freq,
        &FeatureConfig::default(),
        &family.default_config(),
        &settings,
        family.as_ref(),
        Century::C18,
    )
    .map_err(|e| e.to_string())?;
    let at = |size: usize| {
        curve
            .points
            .iter()
            .find(|p| p.per_class_size == size)
            .ok_or_else(|| format!("curve has no point at {size}/class"))
    };
    let (p5, p30, p50) = (at(5)?, at(30)?, at(50)?);
    Ok(Outcome::new(
        p30.mean_f1 >= tol::CURVE_F1_AT_30 && p5.variance > p50.variance,
        format!(
            "mean F1 at 30/class {:.3} (>= {}), sample variance at 5/class {:.2e} vs 50/class {:.2e} (must be larger), {} repeats",
            p30.mean_f1,
            tol::CURVE_F1_AT_30,
            p5.variance,
            p50.variance,
            settings.repeats
        ),
    ))
}

// ---------------------------------------------------------------------------
// Tokenizer golden pairs (generated once by an independent implementation).

#[derive(Deserialize)]
struct Golden {
    input: String,
    tokens: Vec<String>,
}

fn tokenizer_golden() -> Result<Outcome, String> {
    let pairs: Vec<Golden> =
        serde_json::from_str(include_str!("fixtures/tokenizer_golden.json")).map_err(|e| e.to_string())?;
    let mismatches: Vec<&str> = pairs
        .iter()
        .filter(|g| tokenize(&g.input).tokens() != g.tokens.as_slice())
        .map(|g| g.input.as_str())
        .collect();
    Ok(Outcome::new(
        pairs.len() >= tol::GOLDEN_MIN_PAIRS && mismatches.is_empty(),
        format!(
            "{}/{} pairs match exactly (need >= {} pairs){}",
            pairs.len() - mismatches.len(),
            pairs.len(),
            tol::GOLDEN_MIN_PAIRS,
            if mismatches.is_empty() {
                String::new()
            } else {
                format!("; mismatched inputs: {mismatches:?}")
            }
        ),
    ))
}

// ---------------------------------------------------------------------------
// Evaluation protocol invariants.

fn f1_identity_error(m: &Metrics) -> f64 {
    let c = m.confusion;
    let p = if c.tp + c.fp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let r = if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (m.precision - p).abs().max((m.recall - r).abs()).max((m.f1 - f1).abs())
}

fn eval_invariants() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6576);
    let mut problems = Vec::new();
    let mut fold_cases = 0;
    let mut split_cases = 0;
    let mut worst_split = 0.0f64;
    for _ in 0..200 {
        let pos = rng.gen_range(10..80);
        let neg = rng.gen_range(10..80);
        let mut labels: Vec<Label> = (0..pos + neg).map(|i| Label::from_positive(i < pos)).collect();
        rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
        let ratio = rng.gen_range(0.5..0.9);
        let seed = rng.gen();

        let (train, valid) = stratified_split_indices(&labels, ratio, seed).map_err(|e| e.to_string())?;
        let train_pos = train.iter().filter(|&&i| labels[i].is_positive()).count();
        let train_neg = train.len() - train_pos;
        for (got, n) in [(train_pos, pos), (train_neg, neg)] {
            let dev = (got as f64 - ratio * n as f64).abs();
            worst_split = worst_split.max(dev);
        }
        if train.len() + valid.len() != labels.len() {
            problems.push("split does not cover the data".to_string());
        }
        split_cases += 1;

        let train_labels: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
        let folds = kfold_indices(&train_labels, 5, seed).map_err(|e| e.to_string())?;
        let mut seen = vec![0u32; train_labels.len()];
        for (fold_train, fold_test) in &folds {
            for &i in fold_test {
                seen[i] += 1;
            }
            if fold_train.iter().any(|i| fold_test.contains(i)) {
                problems.push("fold train and test overlap".to_string());
            }
        }
        if folds.len() != 5 || seen.iter().any(|&s| s != 1) {
            problems.push(format!("5-fold test sets not a partition ({} folds)", folds.len()));
        }
        fold_cases += 1;
    }
    if worst_split > tol::SPLIT_SLACK {
        problems.push(format!("split ratio off by {worst_split:.2} items"));
    }

    // Every confusion matrix the protocol emits, plus random ones.
    let mut emitted: Vec<Metrics> = Vec::new();
    let small = generate(&SynthConfig {
        docs_per_class: 40,
        doc_length: 400,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let set = small.labeled_set();
    let freq = set.frequency_table();
    let registry = Registry::builtin();
    for name in registry.names() {
        let family = registry.get(name).map_err(|e| e.to_string())?;
        let report = run_experiment(
            &set,
            &freq,
            &FeatureConfig::default(),
            &family.default_config(),
            &EvalSettings::default(),
            family.as_ref(),
            Century::C18,
        )
        .map_err(|e| e.to_string())?;
        emitted.extend(report.per_fold.iter().copied());
        emitted.push(report.validation);
        emitted.push(report.baseline);
    }
    for _ in 0..500 {
        let n = rng.gen_range(1..60);
        let truth: Vec<Label> = (0..n).map(|_| Label::from_positive(rng.gen())).collect();
        let pred: Vec<Label> = (0..n).map(|_| Label::from_positive(rng.gen())).collect();
        emitted.push(compute_metrics(&truth, &pred).map_err(|e| e.to_string())?);
    }
    let worst_f1 = emitted.iter().map(f1_identity_error).fold(0.0, f64::max);
    if worst_f1 > tol::F1_IDENTITY {
        problems.push(format!("F1 identity off by {worst_f1:.1e}"));
    }

    let balanced: Vec<Label> = (0..200).map(|i| Label::from_positive(i % 2 == 0)).collect();
    let baseline = random_baseline(&balanced, 2024, tol::BASELINE_TRIALS).f1;
    if (baseline - tol::BASELINE_F1).abs() > tol::BASELINE_SLACK {
        problems.push(format!("baseline F1 {baseline:.4}"));
    }

    Ok(Outcome::new(
        problems.is_empty(),
        format!(
            "{fold_cases} fold partitions, {split_cases} splits (max deviation {worst_split:.2} items, tol {}), \
             {} confusion matrices (max F1 identity error {worst_f1:.1e}), baseline F1 {baseline:.4} over {} trials \
             (tol {} ± {}){}",
            tol::SPLIT_SLACK,
            emitted.len(),
            tol::BASELINE_TRIALS,
            tol::BASELINE_F1,
            tol::BASELINE_SLACK,
            if problems.is_empty() {
                String::new()
            } else {
                format!("; problems: {problems:?}")
            }
        ),
    ))
}

// ---------------------------------------------------------------------------
// Two full CLI pipeline runs with the same config.

fn wayfinder(args: &[&str], run_root: &Path) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wayfinder"))
        .args(args)
        .env("WAYFINDER_RUN_ROOT", run_root)
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    if !out.status.success() {
        return Err(format!(
            "`wayfinder {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    let last = stdout.lines().last().ok_or("no summary line")?;
    serde_json::from_str(last).map_err(|e| e.to_string())
}

fn collect_files(dir: &Path, base: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, base, out)?;
        } else {
            let rel = path.strip_prefix(base).expect("walk stays under base").to_path_buf();
            out.insert(rel, std::fs::read(&path)?);
        }
    }
    Ok(())
}

fn determinism() -> Result<Outcome, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = tmp.path().join("corpus");
    let corpus_str = corpus.to_str().ok_or("non-UTF-8 temp path")?;
    let run = |root: &Path| -> Result<_, String> {
        wayfinder(
            &[
                "synth",
                "--out",
                corpus_str,
                "--docs-per-class",
                "30",
                "--doc-length",
                "500",
                "--candidates",
                "150",
                "--planted",
                "15",
            ],
            root,
        )?;
        let config = corpus.join("wayfinder.toml");
        let config = config.to_str().ok_or("non-UTF-8 temp path")?;
        let mut run_dir = None;
        for stage in ["prep", "train", "eval", "curve", "rank", "report"] {
            let summary = wayfinder(&["-c", config, "--set", "curve.sizes=[5,10]", stage], root)?;
            run_dir = summary["run_dir"].as_str().map(PathBuf::from);
        }
        let run_dir = run_dir.ok_or("no run_dir in summary")?;
        let mut files = BTreeMap::new();
        collect_files(&run_dir, &run_dir, &mut files).map_err(|e| e.to_string())?;
        Ok(files)
    };
    let first = run(&tmp.path().join("a"))?;
    let second = run(&tmp.path().join("b"))?;
    let differing: Vec<String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let has = |prefix: &str| first.keys().any(|k| k.starts_with(prefix));
    let complete = ["train", "eval", "rank", "report"].iter().all(|s| has(s));
    Ok(Outcome::new(
        differing.is_empty() && complete,
        format!(
            "{} artifacts compared byte for byte (models, eval reports, curves, queues, report){}",
            first.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!("; differing: {differing:?}")
            }
        ),
    ))
}

// ---------------------------------------------------------------------------
// SVM: ordering by raw margin equals ordering by squashed score.

fn margin_rank_invariance() -> Result<Outcome, String> {
    let corpus = generate(&SynthConfig {
        docs_per_class: 50,
        doc_length: 600,
        candidates: tol::RANKED_DOCS,
        planted_positives: tol::RANKED_DOCS / 2,
        seed: 5,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let set = corpus.labeled_set();
    let freq = set.frequency_table();
    let registry = Registry::builtin();
    let family = registry.get("svm").map_err(|e| e.to_string())?;
    let features = FeatureConfig::for_profile(family.profile());
    let model = family
        .train(&set.vectorize(&freq, &features), &set.labels, &family.default_config())
        .map_err(|e| e.to_string())?;
    let pool = LabeledSet::from_texts(
        corpus
            .docs
            .iter()
            .filter(|d| d.label.is_none())
            .map(|d| (d.id.clone(), Label::NonTravelogue, d.text.as_str())),
    );
    let xs = pool.vectorize(&freq, &features);
    let by = |key: &dyn Fn(&SparseVector) -> f64| {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| key(&xs[b]).total_cmp(&key(&xs[a])).then(pool.ids[a].cmp(&pool.ids[b])));
        order
    };
    let by_margin = by(&|x| model.decision(x));
    let by_score = by(&|x| model.score(x));
    let agree = by_margin.iter().zip(&by_score).filter(|(a, b)| a == b).count();
    Ok(Outcome::new(
        xs.len() == tol::RANKED_DOCS && by_margin == by_score,
        format!("{agree}/{} rank positions identical", xs.len()),
    ))
}

// ---------------------------------------------------------------------------
// Desk-scale discovery: planted positives must dominate the review queue.

fn discovery_enrichment() -> Result<Outcome, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus: SynthCorpus = generate(&SynthConfig {
        candidates: tol::POOL,
        planted_positives: tol::PLANTED,
        seed: 3,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let manifest = corpus.write(tmp.path()).map_err(|e| e.to_string())?;
    let planted: Vec<String> = corpus.planted().into_iter().map(String::from).collect();

    let docs = load_manifest(&manifest).map_err(|e| e.to_string())?;
    let p = partition(&docs, Century::C18);
    let freq = reference_table(&p).map_err(|e| e.to_string())?;
    let set = LabeledSet::from_partition(&p).map_err(|e| e.to_string())?;
    let registry = Registry::builtin();
    let family = registry.get("mlp").map_err(|e| e.to_string())?;
    let features = FeatureConfig::for_profile(family.profile());
    let classifier = family
        .train(&set.vectorize(&freq, &features), &set.labels, &family.default_config())
        .map_err(|e| e.to_string())?;
    let model = Model::new(family.as_ref(), classifier, features, freq.fingerprint(), "acceptance")
        .map_err(|e| e.to_string())?;

    let ranking = score_candidates(&model, &p.candidates, &freq, 1).map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    export_queue(&ranking.ranked, tol::TOP_N, &mut csv).map_err(|e| e.to_string())?;
    let queue = read_queue(csv.as_slice()).map_err(|e| e.to_string())?;
    let hits = queue.iter().filter(|c| planted.contains(&c.doc_id)).count();
    Ok(Outcome::new(
        ranking.ranked.len() == tol::POOL && queue.len() == tol::TOP_N && hits >= tol::PLANTED_IN_TOP,
        format!(
            "{hits}/{} planted in top {} of {} scored ({} skipped); need >= {}; by chance ~{:.0}",
            planted.len(),
            queue.len(),
            ranking.ranked.len(),
            ranking.skipped.len(),
            tol::PLANTED_IN_TOP,
            tol::PLANTED as f64 * tol::TOP_N as f64 / tol::POOL as f64
        ),
    ))
}
