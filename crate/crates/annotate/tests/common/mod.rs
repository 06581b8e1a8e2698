#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use wayfinder_annotate::{router, Store, StoreOptions};
use wayfinder_core::corpus::{save_manifest, Century, DocumentRef};
use wayfinder_core::discover::{export_queue, RankedCandidate};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub docs: Vec<DocumentRef>,
    pub queues: Vec<(Century, PathBuf)>,
}

impl Fixture {
    /// `n17` queued candidates for the 17th century and `n18` for the 18th.
    pub fn new(n17: usize, n18: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let texts = dir.path().join("texts");
        std::fs::create_dir(&texts).unwrap();
        let mut docs = Vec::new();
        let mut queues = Vec::new();
        for (century, n) in [(Century::C17, n17), (Century::C18, n18)] {
            let mut ranked = Vec::new();
            for i in 0..n {
                let id = format!("c{century}-{i:04}");
                let path = texts.join(format!("{id}.txt"));
                std::fs::write(
                    &path,
                    format!("Reisebeschreibung {id}: Straße über Grüße nach Venedig. ").repeat(3),
                )
                .unwrap();
                docs.push(DocumentRef {
                    id: id.clone(),
                    century,
                    text_path: path,
                    label: None,
                    provenance: None,
                });
                ranked.push(RankedCandidate {
                    rank: i + 1,
                    doc_id: id,
                    score: 1.0 - i as f64 / (n as f64 + 1.0),
                    century,
                    model_fingerprint: "fp-test".into(),
                });
            }
            let q = dir.path().join(format!("queue-{century}.csv"));
            export_queue(&ranked, ranked.len(), std::fs::File::create(&q).unwrap()).unwrap();
            queues.push((century, q));
        }
        save_manifest(dir.path().join("manifest.jsonl"), &docs).unwrap();
        Fixture { dir, docs, queues }
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.path().join("annotations.jsonl")
    }

    pub fn options(&self) -> StoreOptions {
        StoreOptions::new(self.log_path())
    }

    pub fn store(&self) -> Arc<Store> {
        self.store_with(self.options())
    }

    pub fn store_with(&self, opts: StoreOptions) -> Arc<Store> {
        Arc::new(Store::open(&self.queues, self.docs.clone(), opts).unwrap())
    }

    pub fn app(&self) -> Router {
        router(self.store(), None)
    }

    pub fn log_lines(&self) -> usize {
        std::fs::read_to_string(self.log_path())
            .map(|s| s.lines().filter(|l| !l.trim().is_empty()).count())
            .unwrap_or(0)
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }
}

pub async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, bytes) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

pub async fn post_verdict(app: &Router, doc_id: &str, verdict: &str, annotator: &str) -> (StatusCode, Value) {
    let body = serde_json::json!({"doc_id": doc_id, "verdict": verdict, "annotator": annotator});
    let req = Request::post("/api/verdict")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = call(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}
