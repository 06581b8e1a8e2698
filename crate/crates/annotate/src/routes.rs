use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio_util::io::ReaderStream;
use tower_http::services::ServeDir;
use wayfinder_core::corpus::{Century, Verdict};

use crate::error::AnnotateError;
use crate::store::{Posted, Store};

/// Chunk size for streamed document text.
pub const TEXT_CHUNK: usize = 64 * 1024;
const DEFAULT_LIMIT: usize = 50;

type Shared = State<Arc<Store>>;

/// The API under `/api`, plus the review UI bundle at `/` when a directory
/// is given.
pub fn router(store: Arc<Store>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queues", get(queues))
        .route("/api/queue", get(queue))
        .route("/api/doc/{id}/text", get(text))
        .route("/api/verdict", post(verdict))
        .route("/api/progress", get(progress))
        .route("/api/export", get(export))
        .route("/api/{*rest}", any(not_found))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.fallback(not_found),
    }
}

async fn not_found() -> Response {
    let body = serde_json::json!({"error_code": "not_found", "message": "no such route"});
    (StatusCode::NOT_FOUND, Json(body)).into_response()
}

fn bad_query(e: QueryRejection) -> AnnotateError {
    AnnotateError::BadRequest(e.body_text())
}

fn parse_century(raw: Option<&str>) -> Result<Century, AnnotateError> {
    let raw = raw.ok_or_else(|| AnnotateError::BadRequest("missing `century` parameter".into()))?;
    raw.parse().map_err(AnnotateError::BadRequest)
}

/// Runs blocking store work off the async workers.
async fn blocking<T, F>(store: Arc<Store>, f: F) -> Result<T, AnnotateError>
where
    T: Send + 'static,
    F: FnOnce(&Store) -> Result<T, AnnotateError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| AnnotateError::Internal(e.to_string()))?
}

#[derive(Serialize)]
struct QueueSummary {
    century: Century,
    length: usize,
}

async fn queues(State(store): Shared) -> Json<Vec<QueueSummary>> {
    Json(
        store
            .centuries()
            .into_iter()
            .map(|(century, length)| QueueSummary { century, length })
            .collect(),
    )
}

#[derive(Deserialize)]
struct QueueParams {
    century: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn queue(State(store): Shared, q: Result<Query<QueueParams>, QueryRejection>) -> Result<Response, AnnotateError> {
    let Query(q) = q.map_err(bad_query)?;
    let century = parse_century(q.century.as_deref())?;
    let (offset, limit) = (q.offset.unwrap_or(0), q.limit.unwrap_or(DEFAULT_LIMIT));
    let page = blocking(store, move |s| s.queue_page(century, offset, limit)).await?;
    Ok(Json(page).into_response())
}

async fn text(State(store): Shared, Path(id): Path<String>) -> Result<Response, AnnotateError> {
    let path = store.text_path(&id)?.to_path_buf();
    let file = tokio::fs::File::open(&path)
        .await
        .map_err(|_| AnnotateError::TextUnavailable(id.clone()))?;
    let len = file.metadata().await.map_err(|e| AnnotateError::io(&path, e))?.len();
    let body = Body::from_stream(ReaderStream::with_capacity(file, TEXT_CHUNK));
    Ok((
        [
            (header::CONTENT_TYPE, "text/plain; charset=utf-8".to_string()),
            (header::CONTENT_LENGTH, len.to_string()),
        ],
        body,
    )
        .into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    doc_id: String,
    verdict: Verdict,
    annotator: String,
}

async fn verdict(
    State(store): Shared,
    body: Result<Json<VerdictBody>, JsonRejection>,
) -> Result<Response, AnnotateError> {
    let Json(b) = body.map_err(|e| AnnotateError::BadRequest(e.body_text()))?;
    let (record, posted) = blocking(store, move |s| s.post_verdict(&b.doc_id, b.verdict, &b.annotator)).await?;
    let status = match posted {
        Posted::Created => StatusCode::CREATED,
        Posted::Existing => StatusCode::OK,
    };
    Ok((status, Json(record)).into_response())
}

#[derive(Deserialize)]
struct ProgressParams {
    century: Option<String>,
}

async fn progress(
    State(store): Shared,
    q: Result<Query<ProgressParams>, QueryRejection>,
) -> Result<Response, AnnotateError> {
    let Query(q) = q.map_err(bad_query)?;
    let century = parse_century(q.century.as_deref())?;
    let p = blocking(store, move |s| s.progress(century)).await?;
    Ok(Json(p).into_response())
}

#[derive(Deserialize)]
struct ExportParams {
    round: Option<u32>,
    format: Option<String>,
}

/// JSON summary by default; `format=jsonl` returns only the manifest lines.
async fn export(
    State(store): Shared,
    q: Result<Query<ExportParams>, QueryRejection>,
) -> Result<Response, AnnotateError> {
    let Query(q) = q.map_err(bad_query)?;
    let round = q
        .round
        .ok_or_else(|| AnnotateError::BadRequest("missing `round` parameter".into()))?;
    let raw = match q.format.as_deref() {
        None | Some("json") => false,
        Some("jsonl") => true,
        Some(other) => return Err(AnnotateError::BadRequest(format!("unknown format `{other}`"))),
    };
    let fragment = blocking(store, move |s| Ok(s.export(round))).await?;
    Ok(if raw {
        ([(header::CONTENT_TYPE, "application/x-ndjson")], fragment.manifest).into_response()
    } else {
        Json(fragment).into_response()
    })
}
