//! Pipeline stages behind one trait, looked up by subcommand name.

use std::collections::BTreeMap;
use std::fs::File;

use serde_json::json;
use wayfinder_core::corpus::{load_annotation_log, sample_negatives, CorpusPartition};
use wayfinder_core::curve::learning_curve;
use wayfinder_core::dataset::{reference_table, LabeledSet};
use wayfinder_core::discover::{discovery_report, export_queue, export_skipped, read_queue, score_candidates};
use wayfinder_core::eval::{render_table, run_experiment, EvaluationReport, TableSource};
use wayfinder_core::fingerprint::derive_seed;
use wayfinder_core::models::Model;
use wayfinder_core::textprep::average_tokens;

use crate::context::{comment_line, Context, Outcome};
use crate::error::CliError;

pub trait Stage: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &Context) -> Result<Outcome, CliError>;
}

pub struct StageRegistry {
    stages: BTreeMap<&'static str, Box<dyn Stage>>,
}

impl StageRegistry {
    pub fn builtin() -> Self {
        let mut stages: BTreeMap<&'static str, Box<dyn Stage>> = BTreeMap::new();
        for s in [
            Box::new(Prep) as Box<dyn Stage>,
            Box::new(Train),
            Box::new(Eval),
            Box::new(Curve),
            Box::new(Rank),
            Box::new(Report),
        ] {
            stages.insert(s.name(), s);
        }
        StageRegistry { stages }
    }

    pub fn get(&self, name: &str) -> Option<&dyn Stage> {
        self.stages.get(name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.stages.keys().copied().collect()
    }
}

fn labeled_set(p: &CorpusPartition) -> Result<LabeledSet, CliError> {
    Ok(LabeledSet::from_partition(p)?)
}

/// Frequency tables and corpus statistics; a negative sample for expert
/// review when a century has fewer negatives than positives.
pub struct Prep;

impl Stage for Prep {
    fn name(&self) -> &'static str {
        "prep"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let mut out = Outcome::default();
        let mut per_century = BTreeMap::new();
        for p in ctx.partitions()? {
            let c = p.century;
            let table = reference_table(&p)?;
            ctx.write_freq(&mut out, c, &table)?;
            let shortfall = p.negative_shortfall();
            let mut sampled = 0;
            if shortfall > 0 && shortfall <= p.candidates.len() {
                let seed = derive_seed(ctx.loaded.config.corpus.seed, &[c.number() as u64]);
                let sample = sample_negatives(&p, shortfall, seed)?;
                let base = std::path::Path::new("");
                let body: String = sample
                    .iter()
                    .map(|d| wayfinder_core::corpus::manifest_line(d, base) + "\n")
                    .collect();
                ctx.write(&mut out, &ctx.artifact("prep", c, "negative-sample.jsonl"), body)?;
                sampled = sample.len();
            }
            let summary = json!({
                "century": c,
                "positives": p.positives.len(),
                "negatives": p.negatives.len(),
                "candidates": p.candidates.len(),
                "documents": table.doc_count(),
                "total_tokens": table.total_tokens(),
                "average_tokens": average_tokens(table.total_tokens(), table.doc_count()).ok(),
                "vocabulary": table.vocabulary_size(),
                "freq_fingerprint": table.fingerprint(),
                "negative_shortfall": shortfall,
                "negatives_sampled_for_review": sampled,
            });
            ctx.write_json(&mut out, &ctx.artifact("prep", c, "summary.json"), "prep", &summary)?;
            per_century.insert(c.to_string(), summary);
        }
        out.detail("centuries", per_century);
        Ok(out)
    }
}

/// One model per century and family, fitted on the full ground truth.
pub struct Train;

impl Stage for Train {
    fn name(&self) -> &'static str {
        "train"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let mut out = Outcome::default();
        let mut models = BTreeMap::new();
        for p in ctx.partitions()? {
            let c = p.century;
            let freq = ctx.read_freq(c)?;
            let set = labeled_set(&p)?;
            for name in &ctx.loaded.config.models.families {
                let family = ctx.registry.get(name)?;
                let features = ctx.loaded.config.features.with_profile(family.profile());
                let xs = set.vectorize(&freq, &features);
                let classifier = family.train(&xs, &set.labels, ctx.loaded.config.train_config(name)?)?;
                let model = Model::new(
                    family.as_ref(),
                    classifier,
                    features,
                    freq.fingerprint(),
                    ctx.fingerprint(),
                )?;
                let path = ctx.model_path(c, name);
                ctx.write(&mut out, &path, model.to_bytes())?;
                models.insert(format!("{c}/{name}"), model.fingerprint());
            }
        }
        out.detail("models", models);
        Ok(out)
    }
}

/// Split, cross-validation, validation and baseline per century and family.
pub struct Eval;

impl Stage for Eval {
    fn name(&self) -> &'static str {
        "eval"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let cfg = &ctx.loaded.config;
        let mut out = Outcome::default();
        let mut reports: Vec<EvaluationReport> = Vec::new();
        for p in ctx.partitions()? {
            let c = p.century;
            let freq = ctx.read_freq(c)?;
            let set = labeled_set(&p)?;
            for name in &cfg.models.families {
                let family = ctx.registry.get(name)?;
                let r = run_experiment(
                    &set,
                    &freq,
                    &cfg.features,
                    cfg.train_config(name)?,
                    &cfg.eval,
                    family.as_ref(),
                    c,
                )?;
                ctx.write_json(
                    &mut out,
                    &ctx.artifact("eval", c, &format!("{name}.json")),
                    "report",
                    &r,
                )?;
                reports.push(r);
            }
        }
        let stamp = comment_line(ctx.fingerprint(), "#", "");
        let validation = stamp.clone() + &render_table(&reports, TableSource::Validation);
        let cv = stamp + &render_table(&reports, TableSource::CrossValidation);
        ctx.write(&mut out, &ctx.stage_file("eval", "table.txt"), &validation)?;
        ctx.write(&mut out, &ctx.stage_file("eval", "table-cv.txt"), &cv)?;
        let f1: BTreeMap<String, serde_json::Value> = reports
            .iter()
            .map(|r| {
                (
                    format!("{}/{}", r.century, r.family),
                    json!({"validation_f1": r.validation.f1, "cv_f1": r.cv_mean.f1, "cv_spread": r.cv_mean.f1_spread}),
                )
            })
            .collect();
        out.detail("f1", f1);
        Ok(out)
    }
}

/// Ground-truth size sweep for the configured family.
pub struct Curve;

impl Stage for Curve {
    fn name(&self) -> &'static str {
        "curve"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let cfg = &ctx.loaded.config;
        let name = cfg.curve.family.as_str();
        let family = ctx.registry.get(name)?;
        let settings = cfg.curve.settings();
        let mut out = Outcome::default();
        let mut means = BTreeMap::new();
        for p in ctx.partitions()? {
            let c = p.century;
            let freq = ctx.read_freq(c)?;
            let set = labeled_set(&p)?;
            let lc = learning_curve(
                &set,
                &freq,
                &cfg.features,
                cfg.train_config(name)?,
                &settings,
                family.as_ref(),
                c,
            )?;
            let mut csv = comment_line(ctx.fingerprint(), "#", "").into_bytes();
            lc.write_csv(&mut csv)?;
            ctx.write(&mut out, &ctx.artifact("curve", c, &format!("{name}.csv")), csv)?;
            ctx.write_json(
                &mut out,
                &ctx.artifact("curve", c, &format!("{name}.json")),
                "curve",
                &lc,
            )?;
            let svg = comment_line(ctx.fingerprint(), "<!--", " -->") + &lc.to_svg();
            ctx.write(&mut out, &ctx.artifact("curve", c, &format!("{name}.svg")), svg)?;
            let m: BTreeMap<String, f64> = lc
                .points
                .iter()
                .map(|pt| (pt.per_class_size.to_string(), pt.mean_f1))
                .collect();
            means.insert(c.to_string(), m);
        }
        out.detail("family", name);
        out.detail("mean_f1", means);
        Ok(out)
    }
}

/// Scores the candidate pool and exports the review queue.
pub struct Rank;

impl Stage for Rank {
    fn name(&self) -> &'static str {
        "rank"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let cfg = &ctx.loaded.config;
        let mut out = Outcome::default();
        let mut counts = BTreeMap::new();
        let partitions = ctx.partitions()?;
        // Check every input before doing any work.
        for p in &partitions {
            let model = ctx.model_path(p.century, &cfg.discover.family);
            if !model.is_file() {
                return Err(CliError::missing("train", model));
            }
            ctx.read_freq(p.century)?;
        }
        for p in partitions {
            let c = p.century;
            let freq = ctx.read_freq(c)?;
            let model = ctx.load_model(c, &cfg.discover.family)?;
            let ranking = score_candidates(&model, &p.candidates, &freq, ctx.jobs)?;
            let mut queue = Vec::new();
            let rows = export_queue(&ranking.ranked, cfg.discover.top_n, &mut queue)?;
            ctx.write(&mut out, &ctx.queue_path(c), queue)?;
            let mut skipped = comment_line(ctx.fingerprint(), "#", "").into_bytes();
            export_skipped(&ranking.skipped, &mut skipped)?;
            ctx.write(&mut out, &ctx.artifact("rank", c, "queue.skipped.csv"), skipped)?;
            counts.insert(
                c.to_string(),
                json!({
                    "scored": ranking.ranked.len(),
                    "skipped": ranking.skipped.len(),
                    "queued": rows,
                    "model_fingerprint": model.fingerprint(),
                }),
            );
        }
        out.detail("family", &cfg.discover.family);
        out.detail("centuries", counts);
        Ok(out)
    }
}

/// Collects evaluation tables, curve means and live discovery numbers.
pub struct Report;

impl Stage for Report {
    fn name(&self) -> &'static str {
        "report"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let cfg = &ctx.loaded.config;
        let mut reports: Vec<EvaluationReport> = Vec::new();
        let mut curves = BTreeMap::new();
        let mut discovery = BTreeMap::new();
        let verdicts = load_annotation_log(&cfg.service.log)?;
        for c in ctx.centuries() {
            for name in &cfg.models.families {
                let path = ctx.artifact("eval", c, &format!("{name}.json"));
                if let Ok(text) = std::fs::read_to_string(&path) {
                    let v: serde_json::Value = serde_json::from_str(&text)
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                    let r: EvaluationReport = serde_json::from_value(v["report"].clone())
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                    reports.push(r);
                }
            }
            let curve = ctx.artifact("curve", c, &format!("{}.json", cfg.curve.family));
            if let Ok(text) = std::fs::read_to_string(&curve) {
                let v: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", curve.display())))?;
                curves.insert(c.to_string(), v["curve"].clone());
            }
            let queue = ctx.queue_path(c);
            if queue.is_file() {
                let rows = read_queue(File::open(&queue).map_err(|e| CliError::io(&queue, e))?)?;
                let ids: std::collections::HashSet<&str> = rows.iter().map(|r| r.doc_id.as_str()).collect();
                let mine: Vec<_> = verdicts
                    .iter()
                    .filter(|v| ids.contains(v.doc_id.as_str()))
                    .cloned()
                    .collect();
                discovery.insert(c.to_string(), discovery_report(&rows, &mine)?);
            }
        }
        if reports.is_empty() && curves.is_empty() && discovery.is_empty() {
            return Err(CliError::missing("eval", ctx.run_dir.join("eval")));
        }
        let mut md = String::from("# Wayfinder run report\n\n");
        md.push_str(&format!("Config fingerprint: `{}`\n\n", ctx.fingerprint()));
        if !reports.is_empty() {
            md.push_str("## Validation (P / R / F1)\n\n```\n");
            md.push_str(&render_table(&reports, TableSource::Validation));
            md.push_str("```\n\n## Cross-validation mean (P / R / F1)\n\n```\n");
            md.push_str(&render_table(&reports, TableSource::CrossValidation));
            md.push_str("```\n\n");
        }
        for (c, curve) in &curves {
            md.push_str(&format!("## Learning curve, century {c} ({})\n\n", cfg.curve.family));
            md.push_str("| per class | mean F1 | variance |\n|---:|---:|---:|\n");
            for p in curve["points"].as_array().into_iter().flatten() {
                md.push_str(&format!(
                    "| {} | {:.3} | {:.5} |\n",
                    p["per_class_size"],
                    p["mean_f1"].as_f64().unwrap_or(f64::NAN),
                    p["variance"].as_f64().unwrap_or(f64::NAN)
                ));
            }
            md.push('\n');
        }
        if !discovery.is_empty() {
            md.push_str("## Discovery\n\n| century | evaluated | confirmed | rejected | disputed | rate |\n|---|---:|---:|---:|---:|---:|\n");
            for (c, d) in &discovery {
                let rate = if d.rate_defined {
                    format!("{:.1}%", 100.0 * d.confirmation_rate)
                } else {
                    "—".into()
                };
                md.push_str(&format!(
                    "| {c} | {} | {} | {} | {} | {rate} |\n",
                    d.evaluated_top_n, d.confirmed, d.rejected, d.disputed
                ));
            }
        }
        let mut out = Outcome::default();
        let summary = json!({"evaluations": reports, "curves": curves, "discovery": discovery});
        ctx.write_json(&mut out, &ctx.stage_file("report", "report.json"), "report", &summary)?;
        ctx.write(&mut out, &ctx.stage_file("report", "report.md"), md)?;
        out.detail("evaluations", reports.len());
        out.detail("curves", curves.len());
        out.detail("discovery", discovery);
        Ok(out)
    }
}
