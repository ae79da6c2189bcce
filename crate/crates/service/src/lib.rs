//! HTTP API over the detection engine and the explanation rank study.
//!
//! Jobs and rank submissions are persisted to an append-only JSONL log and
//! replayed on startup.

mod api;
mod log;
mod rank;
mod state;

pub use api::router;
pub use log::{EventLog, LogEntry};
pub use rank::{RankStudy, StudySample, StudySpec, Submission};
pub use state::{AppState, DetectRequest, DetectionJob, JobState};

pub async fn serve(addr: &str, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "service listening");
    axum::serve(listener, router(state)).await
}
