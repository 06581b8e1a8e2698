//! Learning curves over ground-truth size: repeated balanced samples of `s`
//! documents per class, tested on everything not sampled.

use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Century, Label};
use crate::dataset::LabeledSet;
use crate::eval::{compute_metrics, predict_labels, EvalError};
use crate::features::{FeatureConfig, FeatureError};
use crate::fingerprint::{derive_seed, fingerprint_of};
use crate::models::{ClassifierFamily, ModelError, TrainConfig, DEFAULT_THRESHOLD};
use crate::textprep::FrequencyTable;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("sample size {size} per class leaves no test documents (class has {available})")]
    SizeTooLarge { size: usize, available: usize },
    #[error("invalid curve settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub const STANDARD_SIZES: [usize; 7] = [5, 10, 15, 20, 25, 30, 50];
pub const EXTENDED_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSettings {
    pub sizes: Vec<usize>,
    /// Appends 100 per class to `sizes`.
    pub extended: bool,
    pub repeats: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for CurveSettings {
    fn default() -> Self {
        CurveSettings {
            sizes: STANDARD_SIZES.to_vec(),
            extended: false,
            repeats: 5,
            seed: 42,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl CurveSettings {
    /// Sorted, deduplicated sizes including the extension when enabled.
    pub fn effective_sizes(&self) -> Vec<usize> {
        let mut s = self.sizes.clone();
        if self.extended {
            s.push(EXTENDED_SIZE);
        }
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveCell {
    pub size: usize,
    pub repeat: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub per_class_size: usize,
    pub repeats: usize,
    pub f1_values: Vec<f64>,
    pub mean_f1: f64,
    /// Sample variance (n - 1 denominator); 0 for a single repeat.
    pub variance: f64,
}

impl CurvePoint {
    pub fn from_values(per_class_size: usize, f1_values: Vec<f64>) -> Self {
        let (mean_f1, variance) = mean_and_sample_variance(&f1_values);
        CurvePoint {
            per_class_size,
            repeats: f1_values.len(),
            f1_values,
            mean_f1,
            variance,
        }
    }
}

pub fn mean_and_sample_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub century: Century,
    pub family: String,
    pub config_fingerprint: String,
    pub variance: String,
    pub points: Vec<CurvePoint>,
}

/// Draws `size` distinct members of `pool`.
fn draw(pool: &[usize], size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, pool.len(), size)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Training and test indices for one `(size, repeat)` cell. The sample is
/// drawn without replacement per class; the test set is its complement.
pub fn cell_split(labels: &[Label], size: usize, seed: u64, repeat: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[size as u64, repeat as u64]));
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_positive()).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_positive()).collect();
    let mut train = draw(&pos, size, &mut rng);
    train.extend(draw(&neg, size, &mut rng));
    train.sort_unstable();
    let test = (0..labels.len()).filter(|i| train.binary_search(i).is_err()).collect();
    (train, test)
}

pub fn learning_curve(
    set: &LabeledSet,
    freq: &FrequencyTable,
    features: &FeatureConfig,
    train: &TrainConfig,
    settings: &CurveSettings,
    family: &dyn ClassifierFamily,
    century: Century,
) -> Result<LearningCurve, CurveError> {
    let sizes = settings.effective_sizes();
    if sizes.is_empty() || sizes[0] == 0 {
        return Err(CurveError::InvalidSettings("sizes must be nonempty and >= 1".into()));
    }
    if settings.repeats == 0 {
        return Err(CurveError::InvalidSettings("repeats must be >= 1".into()));
    }
    let (pos, neg) = set.class_sizes();
    let available = pos.min(neg);
    if let Some(&size) = sizes.iter().find(|&&s| s + 1 > available) {
        return Err(CurveError::SizeTooLarge { size, available });
    }
    let features = features.with_profile(family.profile());
    features.validate()?;
    train.validate()?;
    let xs = set.vectorize(freq, &features);
    let ys = &set.labels;

    let jobs: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&s| (0..settings.repeats).map(move |r| (s, r)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(size, repeat)| -> Result<CurveCell, CurveError> {
            let (tr, te) = cell_split(ys, size, settings.seed, repeat);
            let pick = |idx: &[usize]| idx.iter().map(|&i| xs[i].clone()).collect::<Vec<_>>();
            let labels_of = |idx: &[usize]| idx.iter().map(|&i| ys[i]).collect::<Vec<_>>();
            let model = family.train(&pick(&tr), &labels_of(&tr), train)?;
            let pred = predict_labels(model.as_ref(), &pick(&te), settings.threshold);
            let f1 = compute_metrics(&labels_of(&te), &pred)?.f1;
            Ok(CurveCell { size, repeat, f1 })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let points = sizes
        .iter()
        .map(|&s| {
            let values = cells.iter().filter(|c| c.size == s).map(|c| c.f1).collect();
            CurvePoint::from_values(s, values)
        })
        .collect();
    Ok(LearningCurve {
        century,
        family: family.name().to_string(),
        config_fingerprint: fingerprint_of(&(family.name(), &features, train, settings)),
        variance: "sample (n-1)".into(),
        points,
    })
}

impl LearningCurve {
    pub fn cells(&self) -> Vec<CurveCell> {
        self.points
            .iter()
            .flat_map(|p| {
                p.f1_values.iter().enumerate().map(|(repeat, &f1)| CurveCell {
                    size: p.per_class_size,
                    repeat,
                    f1,
                })
            })
            .collect()
    }

    /// `size,repeat,f1` rows.
    pub fn write_csv(&self, w: impl Write) -> Result<(), CurveError> {
        let mut out = csv::Writer::from_writer(w);
        for c in self.cells() {
            out.serialize(c).map_err(|e| CurveError::Io(e.into()))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Mean F1 per size with a mean ± variance band.
    pub fn to_svg(&self) -> String {
        let (w, h, m) = (640.0, 400.0, 50.0);
        let max_size = self.points.iter().map(|p| p.per_class_size).max().unwrap_or(1) as f64;
        let x = |s: usize| m + (s as f64 / max_size) * (w - 2.0 * m);
        let y = |f: f64| h - m - f.clamp(0.0, 1.0) * (h - 2.0 * m);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="20" text-anchor="middle">{} {} — mean F1 ± variance ({})</text>"#,
            w / 2.0,
            self.century,
            self.family,
            self.variance
        );
        let _ = writeln!(
            svg,
            r#"<path d="M{m} {m} V{} H{}" stroke="black" fill="none"/>"#,
            h - m,
            w - m
        );
        for t in 0..=5 {
            let f = t as f64 / 5.0;
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{f:.1}</text>"#,
                m - 6.0,
                y(f) + 4.0
            );
        }
        for p in &self.points {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                x(p.per_class_size),
                h - m + 18.0,
                p.per_class_size
            );
        }
        let band: Vec<String> = self
            .points
            .iter()
            .map(|p| format!("{:.1},{:.1}", x(p.per_class_size), y(p.mean_f1 + p.variance)))
            .chain(
                self.points
                    .iter()
                    .rev()
                    .map(|p| format!("{:.1},{:.1}", x(p.per_class_size), y(p.mean_f1 - p.variance))),
            )
            .collect();
        let _ = writeln!(
            svg,
            r##"<polygon points="{}" fill="#9ecae1" opacity="0.5"/>"##,
            band.join(" ")
        );
        let line: Vec<String> = self
            .points
            .iter()
            .map(|p| format!("{:.1},{:.1}", x(p.per_class_size), y(p.mean_f1)))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
            line.join(" ")
        );
        for p in &self.points {
            let _ = writeln!(
                svg,
                r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#08519c"/>"##,
                x(p.per_class_size),
                y(p.mean_f1)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}
