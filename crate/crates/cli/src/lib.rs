//! The `wayfinder` command line: one declarative config file drives every
//! pipeline stage, and each stage writes its artifacts into a run
//! directory named after the config fingerprint.

pub mod config;
pub mod context;
pub mod error;
pub mod stages;

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use wayfinder_annotate::{Store, StoreOptions};
use wayfinder_core::corpus::{load_manifest, Century};
use wayfinder_core::synth::{generate, SynthConfig};

pub use config::{load, Loaded, RunConfig, RUN_ROOT_ENV};
pub use context::{Context, Outcome};
pub use error::CliError;
pub use stages::{Stage, StageRegistry};

#[derive(Debug, Parser)]
#[command(name = "wayfinder", version, about = "Find a genre in a large OCR'd corpus")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = config::DEFAULT_CONFIG)]
    pub config: PathBuf,
    /// Override one config key, e.g. `--set eval.seed=7`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Upper bound on worker threads.
    #[arg(short, long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition manifests, build frequency tables, sample negatives for review.
    Prep,
    /// Fit every configured family on the full ground truth.
    Train,
    /// Stratified split, k-fold CV, validation scores and random baseline.
    Eval,
    /// Learning curve over ground-truth sizes.
    Curve,
    /// Score the candidate pool and export the review queue.
    Rank,
    /// Run the review service over the exported queues.
    Serve,
    /// Summarize evaluation, curves and review progress.
    Report,
    /// Generate a synthetic two-topic corpus plus a starter config.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 18)]
    pub century: u8,
    #[arg(long, default_value_t = 200)]
    pub docs_per_class: usize,
    #[arg(long, default_value_t = 2000)]
    pub doc_length: usize,
    /// Unlabeled pool size.
    #[arg(long, default_value_t = 0)]
    pub candidates: usize,
    /// Pool documents drawn from the positive generator.
    #[arg(long, default_value_t = 0)]
    pub planted: usize,
    #[arg(long, default_value_t = 0.2)]
    pub shared_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_rate: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Prints one JSON object on a single stdout line.
pub fn print_summary(v: &Value) {
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{v}");
    let _ = stdout.flush();
}

fn summary(stage: &str, ctx: &Context, out: Outcome) -> Value {
    let mut v = json!({
        "status": "ok",
        "stage": stage,
        "config_fingerprint": ctx.fingerprint(),
        "run_dir": ctx.run_dir.display().to_string(),
        "artifacts": out.artifacts,
    });
    v.as_object_mut().expect("object").extend(out.details);
    v
}

pub fn error_summary(e: &CliError) -> Value {
    let mut v = json!({
        "status": "error",
        "category": e.category(),
        "exit_code": e.exit_code(),
        "message": e.to_string(),
    });
    if let CliError::MissingArtifact { stage, .. } = e {
        v["stage"] = json!(stage);
    }
    v
}

/// Runs one subcommand and returns its summary line. `serve` blocks until
/// interrupted.
pub fn run(cli: Cli) -> Result<Value, CliError> {
    let jobs = cli
        .jobs
        .map(usize::from)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    // Fails only if the global pool already exists (e.g. repeated in-process
    // calls); that pool's size then stands.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();

    if let Command::Synth(args) = &cli.command {
        return synth(args);
    }
    let loaded = config::load(Some(&cli.config), &cli.overrides)?;
    let ctx = Context::new(loaded, jobs);
    std::fs::create_dir_all(&ctx.run_dir).map_err(|e| CliError::io(&ctx.run_dir, e))?;
    let resolved = ctx.run_dir.join("config.toml");
    let text = format!(
        "# config_fingerprint = \"{}\"\n{}",
        ctx.fingerprint(),
        ctx.loaded.config.to_toml()
    );
    std::fs::write(&resolved, text).map_err(|e| CliError::io(&resolved, e))?;

    let name = match cli.command {
        Command::Prep => "prep",
        Command::Train => "train",
        Command::Eval => "eval",
        Command::Curve => "curve",
        Command::Rank => "rank",
        Command::Report => "report",
        Command::Serve => return serve(&ctx),
        Command::Synth(_) => unreachable!("handled above"),
    };
    let registry = StageRegistry::builtin();
    let stage = registry
        .get(name)
        .ok_or_else(|| CliError::Config(format!("no stage `{name}`")))?;
    let out = stage.run(&ctx)?;
    Ok(summary(name, &ctx, out))
}

fn serve(ctx: &Context) -> Result<Value, CliError> {
    let svc = &ctx.loaded.config.service;
    let mut queues: Vec<(Century, PathBuf)> = Vec::new();
    for c in ctx.centuries() {
        let q = ctx.queue_path(c);
        if q.is_file() {
            queues.push((c, q));
        }
    }
    if queues.is_empty() {
        return Err(CliError::missing("rank", ctx.run_dir.join("rank")));
    }
    let mut docs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (_, manifest) in &ctx.loaded.centuries {
        if seen.insert(manifest.clone()) {
            docs.extend(load_manifest(manifest)?);
        }
    }
    let opts = StoreOptions {
        log_path: svc.log.clone(),
        excerpt_chars: svc.excerpt_chars,
        round: svc.round,
    };
    let store = Arc::new(Store::open(&queues, docs, opts)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(ctx.jobs.max(1))
        .enable_all()
        .build()
        .map_err(|e| CliError::io("tokio runtime", e))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&svc.bind)
            .await
            .map_err(|e| CliError::io(&svc.bind, e))?;
        let addr = listener.local_addr().map_err(|e| CliError::io(&svc.bind, e))?;
        print_summary(&json!({
            "status": "ok",
            "stage": "serve",
            "event": "listening",
            "config_fingerprint": ctx.fingerprint(),
            "address": addr.to_string(),
            "queues": queues.iter().map(|(c, _)| c.number()).collect::<Vec<_>>(),
            "log": svc.log.display().to_string(),
        }));
        wayfinder_annotate::serve(listener, store, svc.static_dir.clone(), shutdown_signal())
            .await
            .map_err(|e| CliError::io(&svc.bind, e))
    })?;
    Ok(json!({"status": "ok", "stage": "serve", "event": "stopped", "config_fingerprint": ctx.fingerprint()}))
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

const STARTER_CONFIG: &str = r#"# Generated by `wayfinder synth`. Every key not listed here keeps its default;
# see the README for the full set.

[corpus]
manifests = { "CENTURY" = "manifest.jsonl" }

[discover]
top_n = 200
"#;

fn synth(a: &SynthArgs) -> Result<Value, CliError> {
    let century = Century::try_from(a.century).map_err(CliError::Config)?;
    let cfg = SynthConfig {
        century,
        docs_per_class: a.docs_per_class,
        doc_length: a.doc_length,
        candidates: a.candidates,
        planted_positives: a.planted,
        shared_fraction: a.shared_fraction,
        noise_rate: a.noise_rate,
        seed: a.seed,
        ..SynthConfig::default()
    };
    cfg.validate()?;
    let corpus = generate(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let manifest = corpus.write(&a.out)?;
    let config_path = a.out.join(config::DEFAULT_CONFIG);
    let wrote_config = !config_path.exists();
    if wrote_config {
        let text = STARTER_CONFIG.replace("CENTURY", &century.to_string());
        std::fs::write(&config_path, text).map_err(|e| CliError::io(&config_path, e))?;
    }
    Ok(json!({
        "status": "ok",
        "stage": "synth",
        "manifest": manifest.display().to_string(),
        "config": wrote_config.then(|| config_path.display().to_string()),
        "documents": corpus.docs.len(),
        "planted": corpus.planted().len(),
        "synth": cfg,
    }))
}
