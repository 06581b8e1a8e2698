//! The run configuration: one TOML file, layered over built-in defaults,
//! with `--set key=value` overrides applied last.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wayfinder_core::corpus::Century;
use wayfinder_core::curve::CurveSettings;
use wayfinder_core::discover::DEFAULT_TOP_N;
use wayfinder_core::eval::EvalSettings;
use wayfinder_core::features::FeatureConfig;
use wayfinder_core::fingerprint::{fingerprint_of, sha256_hex};
use wayfinder_core::models::{Registry, TrainConfig};

use crate::error::CliError;

pub const DEFAULT_CONFIG: &str = "wayfinder.toml";
pub const RUN_ROOT_ENV: &str = "WAYFINDER_RUN_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub features: FeatureConfig,
    pub models: ModelsSection,
    pub eval: EvalSettings,
    pub curve: CurveSection,
    pub discover: DiscoverSection,
    pub service: ServiceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Century number (`"16"` … `"19"`) to manifest path. Several centuries
    /// may share one manifest.
    pub manifests: BTreeMap<String, PathBuf>,
    /// Annotation logs whose verdicts are applied to the partitions.
    pub annotations: Vec<PathBuf>,
    /// Seed for drawing negative samples.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    pub families: Vec<String>,
    /// Hyperparameters per family; missing keys fall back to the family's
    /// defaults.
    pub train: BTreeMap<String, TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    pub family: String,
    pub sizes: Vec<usize>,
    pub extended: bool,
    pub repeats: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl CurveSection {
    pub fn settings(&self) -> CurveSettings {
        CurveSettings {
            sizes: self.sizes.clone(),
            extended: self.extended,
            repeats: self.repeats,
            seed: self.seed,
            threshold: self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoverSection {
    /// Family whose model ranks the candidates.
    pub family: String,
    pub top_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    pub log: PathBuf,
    pub excerpt_chars: usize,
    /// Round stamped on new verdicts.
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let registry = Registry::builtin();
        let families = ["mnb", "svm", "logreg", "mlp"];
        let train = families
            .iter()
            .map(|f| (f.to_string(), registry.get(f).expect("builtin family").default_config()))
            .collect();
        let curve = CurveSettings::default();
        RunConfig {
            corpus: CorpusSection {
                manifests: BTreeMap::new(),
                annotations: Vec::new(),
                seed: 11,
            },
            features: FeatureConfig::default(),
            models: ModelsSection {
                families: families.iter().map(|f| f.to_string()).collect(),
                train,
            },
            eval: EvalSettings::default(),
            curve: CurveSection {
                family: "mlp".into(),
                sizes: curve.sizes,
                extended: curve.extended,
                repeats: curve.repeats,
                seed: curve.seed,
                threshold: curve.threshold,
            },
            discover: DiscoverSection {
                family: "mlp".into(),
                top_n: DEFAULT_TOP_N,
            },
            service: ServiceSection {
                bind: "127.0.0.1:8080".into(),
                log: PathBuf::from("annotations.jsonl"),
                excerpt_chars: wayfinder_annotate::DEFAULT_EXCERPT_CHARS,
                round: 0,
                static_dir: None,
            },
        }
    }
}

/// A validated config with paths made absolute.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    /// Directory relative paths were resolved against.
    pub base: PathBuf,
    pub centuries: Vec<(Century, PathBuf)>,
    pub fingerprint: String,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`; the value is read as TOML when it parses, as a bare
/// string otherwise.
fn apply_override(tree: &mut toml::Value, raw: &str) -> Result<(), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{raw}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override `{raw}` has an empty key segment")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut nested = parsed;
    for seg in path.iter().rev() {
        let mut t = toml::Table::new();
        t.insert(seg.to_string(), nested);
        nested = toml::Value::Table(t);
    }
    merge(tree, nested);
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunConfig {
    /// Defaults, then `text` (a TOML document), then `overrides`.
    pub fn from_layers(text: Option<&str>, overrides: &[String]) -> Result<Self, CliError> {
        let mut tree = toml::Value::try_from(RunConfig::default())
            .map_err(|e| CliError::Config(format!("defaults do not serialize: {e}")))?;
        if let Some(text) = text {
            let user: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
            merge(&mut tree, toml::Value::Table(user));
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        RunConfig::deserialize(tree).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn train_config(&self, family: &str) -> Result<&TrainConfig, CliError> {
        self.models
            .train
            .get(family)
            .ok_or_else(|| CliError::Config(format!("no [models.train.{family}] section")))
    }

    /// Checks everything that does not need the data: families exist, the
    /// hyperparameters are valid and every input path is present.
    pub fn validate(mut self, base: &Path) -> Result<Loaded, CliError> {
        let registry = Registry::builtin();
        if self.corpus.manifests.is_empty() {
            return Err(CliError::Config("corpus.manifests is empty".into()));
        }
        let mut centuries = Vec::new();
        for (key, path) in &mut self.corpus.manifests {
            let century: Century = key
                .parse()
                .map_err(|e| CliError::Config(format!("corpus.manifests: {e}")))?;
            *path = resolve(base, path);
            if !path.is_file() {
                return Err(CliError::Config(format!("manifest {} does not exist", path.display())));
            }
            centuries.push((century, path.clone()));
        }
        for path in &mut self.corpus.annotations {
            *path = resolve(base, path);
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "annotation log {} does not exist",
                    path.display()
                )));
            }
        }
        if self.models.families.is_empty() {
            return Err(CliError::Config("models.families is empty".into()));
        }
        for family in &self.models.families {
            registry.get(family).map_err(|_| {
                CliError::Config(format!(
                    "unknown family `{family}`; known: {}",
                    registry.names().join(", ")
                ))
            })?;
            self.train_config(family)?
                .validate()
                .map_err(|e| CliError::Config(format!("models.train.{family}: {e}")))?;
        }
        for (what, family) in [
            ("curve.family", &self.curve.family),
            ("discover.family", &self.discover.family),
        ] {
            registry
                .get(family)
                .map_err(|_| CliError::Config(format!("{what}: unknown family `{family}`")))?;
            self.train_config(family)?;
        }
        if !self.models.families.contains(&self.discover.family) {
            return Err(CliError::Config(format!(
                "discover.family `{}` is not listed in models.families, so no model would be trained for it",
                self.discover.family
            )));
        }
        self.features
            .validate()
            .map_err(|e| CliError::Config(format!("features: {e}")))?;
        if self.discover.top_n == 0 {
            return Err(CliError::Config("discover.top_n must be >= 1".into()));
        }
        self.service.log = resolve(base, &self.service.log);
        if let Some(dir) = &mut self.service.static_dir {
            *dir = resolve(base, dir);
        }
        let fingerprint = self.fingerprint()?;
        Ok(Loaded {
            config: self,
            base: base.to_path_buf(),
            centuries,
            fingerprint,
        })
    }

    /// Hash of everything that shapes pipeline artifacts: the resolved
    /// config minus service settings, plus the content of every manifest
    /// and annotation log.
    fn fingerprint(&self) -> Result<String, CliError> {
        let manifests: Vec<(String, String)> = self
            .corpus
            .manifests
            .values()
            .map(|p| Ok((p.display().to_string(), file_digest(p)?)))
            .collect::<Result<_, CliError>>()?;
        let annotations: Vec<(String, String)> = self
            .corpus
            .annotations
            .iter()
            .map(|p| Ok((p.display().to_string(), file_digest(p)?)))
            .collect::<Result<_, CliError>>()?;
        let mut pipeline = self.clone();
        pipeline.service = RunConfig::default().service;
        Ok(fingerprint_of(&(pipeline, manifests, annotations)))
    }
}

/// Reads the config file (or `wayfinder.toml` in the working directory),
/// applies overrides and validates.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Loaded, CliError> {
    let path = path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG));
    let text =
        std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = RunConfig::from_layers(Some(&text), overrides)?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let base = std::path::absolute(&base).map_err(|e| CliError::io(&base, e))?;
    config.validate(&base)
}

impl Loaded {
    /// `$WAYFINDER_RUN_ROOT/<fingerprint prefix>`, or `runs/…` next to the
    /// config file when the variable is unset.
    pub fn run_dir(&self) -> PathBuf {
        let root = std::env::var_os(RUN_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.base.join("runs"));
        root.join(wayfinder_core::fingerprint::short(&self.fingerprint))
    }
}
