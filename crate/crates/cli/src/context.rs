//! Shared plumbing for pipeline stages: data loading, artifact paths and
//! fingerprint-stamped writers.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use wayfinder_core::corpus::{
    apply_annotations, load_annotation_log, load_manifest, partition, AnnotationRecord, Century, CorpusPartition,
    DocumentRef,
};
use wayfinder_core::models::{Model, Registry};
use wayfinder_core::textprep::FrequencyTable;

use crate::config::Loaded;
use crate::error::CliError;

const FP_TSV_HEADER: &str = "#config_fingerprint\t";

pub struct Context {
    pub loaded: Loaded,
    pub registry: Registry,
    pub run_dir: PathBuf,
    pub jobs: usize,
}

/// What a stage reports on its summary line.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub details: serde_json::Map<String, Value>,
}

impl Outcome {
    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details.insert(
            key.to_string(),
            serde_json::to_value(value).expect("summary values serialize"),
        );
    }
}

impl Context {
    pub fn new(loaded: Loaded, jobs: usize) -> Self {
        let run_dir = loaded.run_dir();
        Context {
            loaded,
            registry: Registry::builtin(),
            run_dir,
            jobs,
        }
    }

    pub fn fingerprint(&self) -> &str {
        &self.loaded.fingerprint
    }

    pub fn centuries(&self) -> impl Iterator<Item = Century> + '_ {
        self.loaded.centuries.iter().map(|(c, _)| *c)
    }

    /// `<run>/<stage>/<century>/<name>`.
    pub fn artifact(&self, stage: &str, century: Century, name: &str) -> PathBuf {
        self.run_dir.join(stage).join(century.to_string()).join(name)
    }

    pub fn stage_file(&self, stage: &str, name: &str) -> PathBuf {
        self.run_dir.join(stage).join(name)
    }

    pub fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.run_dir).unwrap_or(p).display().to_string()
    }

    /// Writes `bytes`, creating parent directories, and records the path.
    pub fn write(&self, out: &mut Outcome, path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
        out.artifacts.push(self.relative(path));
        Ok(())
    }

    /// Pretty JSON object with `config_fingerprint` as its first key.
    pub fn write_json(&self, out: &mut Outcome, path: &Path, key: &str, value: impl Serialize) -> Result<(), CliError> {
        let mut obj = serde_json::Map::new();
        obj.insert("config_fingerprint".into(), json!(self.fingerprint()));
        obj.insert(key.into(), serde_json::to_value(value).expect("artifacts serialize"));
        let mut text = serde_json::to_string_pretty(&Value::Object(obj)).expect("json");
        text.push('\n');
        self.write(out, path, text)
    }

    /// Manifest documents per configured century, with the configured
    /// annotation logs applied.
    pub fn partitions(&self) -> Result<Vec<CorpusPartition>, CliError> {
        let mut manifests: BTreeMap<&Path, Vec<DocumentRef>> = BTreeMap::new();
        for (_, path) in &self.loaded.centuries {
            if !manifests.contains_key(path.as_path()) {
                manifests.insert(path, load_manifest(path)?);
            }
        }
        let records = self.annotation_records()?;
        self.loaded
            .centuries
            .iter()
            .map(|(century, path)| {
                let p = partition(&manifests[path.as_path()], *century);
                let ids: HashSet<&str> = p.all().map(|d| d.id.as_str()).collect();
                let mine: Vec<AnnotationRecord> = records
                    .iter()
                    .filter(|r| ids.contains(r.doc_id.as_str()))
                    .cloned()
                    .collect();
                Ok(apply_annotations(p, &mine)?)
            })
            .collect()
    }

    fn annotation_records(&self) -> Result<Vec<AnnotationRecord>, CliError> {
        let mut all = Vec::new();
        for path in &self.loaded.config.corpus.annotations {
            all.extend(load_annotation_log(path)?);
        }
        Ok(all)
    }

    pub fn freq_path(&self, century: Century) -> PathBuf {
        self.artifact("prep", century, "freq.tsv")
    }

    pub fn write_freq(&self, out: &mut Outcome, century: Century, table: &FrequencyTable) -> Result<(), CliError> {
        let mut buf = format!("{FP_TSV_HEADER}{}\n", self.fingerprint()).into_bytes();
        table.write_tsv(&mut buf).expect("writing to a Vec cannot fail");
        self.write(out, &self.freq_path(century), buf)
    }

    pub fn read_freq(&self, century: Century) -> Result<FrequencyTable, CliError> {
        let path = self.freq_path(century);
        let text = fs::read_to_string(&path).map_err(|_| CliError::missing("prep", &path))?;
        let body = text
            .strip_prefix(FP_TSV_HEADER)
            .and_then(|rest| rest.split_once('\n'))
            .map(|(_, body)| body)
            .unwrap_or(&text);
        Ok(FrequencyTable::read_tsv(BufReader::new(body.as_bytes()))?)
    }

    pub fn model_path(&self, century: Century, family: &str) -> PathBuf {
        self.artifact("train", century, &format!("{family}.model"))
    }

    pub fn load_model(&self, century: Century, family: &str) -> Result<Model, CliError> {
        let path = self.model_path(century, family);
        if !path.is_file() {
            return Err(CliError::missing("train", &path));
        }
        Ok(Model::load(&path, &self.registry)?)
    }

    pub fn queue_path(&self, century: Century) -> PathBuf {
        self.artifact("rank", century, "queue.csv")
    }
}

/// `# config_fingerprint=<fp>` comment line for CSV and SVG artifacts whose
/// column layout is fixed.
pub fn comment_line(fp: &str, open: &str, close: &str) -> String {
    format!("{open} config_fingerprint={fp}{close}\n")
}
