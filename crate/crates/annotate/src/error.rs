use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;
use wayfinder_core::corpus::{AnnotationRecord, Century, CorpusError};
use wayfinder_core::discover::DiscoverError;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("no review queue loaded for century {0}")]
    NoQueueForCentury(Century),
    #[error("unknown document id `{0}`")]
    UnknownDocId(String),
    #[error("`{}` already has a {:?} verdict from `{}` in round {}", .existing.doc_id, .existing.verdict, .existing.annotator, .existing.round)]
    ConflictingVerdict { existing: Box<AnnotationRecord> },
    #[error("text of `{0}` is not available")]
    TextUnavailable(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("queue for century {century} lists `{doc_id}`, which no manifest describes")]
    QueueDocNotInManifest { century: Century, doc_id: String },
    #[error("queue {path}: row {row} belongs to century {found}, expected {expected}")]
    QueueCenturyMismatch {
        path: String,
        row: usize,
        expected: Century,
        found: Century,
    },
    #[error("more than one queue given for century {0}")]
    DuplicateQueue(Century),
    #[error("queue {path}: {source}")]
    Queue {
        path: String,
        #[source]
        source: DiscoverError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl AnnotateError {
    pub fn error_code(&self) -> &'static str {
        match self {
            AnnotateError::NoQueueForCentury(_) => "no_queue_for_century",
            AnnotateError::UnknownDocId(_) => "unknown_doc_id",
            AnnotateError::ConflictingVerdict { .. } => "conflicting_verdict",
            AnnotateError::TextUnavailable(_) => "text_unavailable",
            AnnotateError::BadRequest(_) => "bad_request",
            AnnotateError::QueueDocNotInManifest { .. }
            | AnnotateError::QueueCenturyMismatch { .. }
            | AnnotateError::DuplicateQueue(_)
            | AnnotateError::Queue { .. } => "invalid_queue",
            AnnotateError::Corpus(_) => "corpus_error",
            AnnotateError::Io { .. } => "io_error",
            AnnotateError::Internal(_) => "internal_error",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            AnnotateError::NoQueueForCentury(_)
            | AnnotateError::UnknownDocId(_)
            | AnnotateError::TextUnavailable(_) => StatusCode::NOT_FOUND,
            AnnotateError::ConflictingVerdict { .. } => StatusCode::CONFLICT,
            AnnotateError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        AnnotateError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error_code: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    existing: Option<&'a AnnotationRecord>,
}

impl IntoResponse for AnnotateError {
    fn into_response(self) -> Response {
        let existing = match &self {
            AnnotateError::ConflictingVerdict { existing } => Some(existing.as_ref()),
            _ => None,
        };
        let body = ErrorBody {
            error_code: self.error_code(),
            message: self.to_string(),
            existing,
        };
        (self.status(), Json(body)).into_response()
    }
}
