//! HTTP service for the expert review loop.
//!
//! Serves ranked review queues with text excerpts, streams full texts,
//! records verdicts in an append-only log (synced before acknowledging),
//! reports progress, and exports decided documents as a manifest fragment
//! for the next training round. State is flat files: queue CSVs plus the
//! log, replayed on start.

mod error;
mod excerpt;
mod routes;
mod store;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

pub use error::AnnotateError;
pub use excerpt::read_excerpt;
pub use routes::{router, TEXT_CHUNK};
pub use store::{
    Disagreement, ExportFragment, Posted, Progress, QueueItem, QueuePage, Store, StoreOptions, VerdictView,
    DEFAULT_EXCERPT_CHARS, MAX_PAGE,
};

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    store: Arc<Store>,
    static_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(store, static_dir))
        .with_graceful_shutdown(shutdown)
        .await
}
