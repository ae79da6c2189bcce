use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::rank::{SubmitError, Submission};
use crate::state::{AppState, DetectRequest, DetectionJob, JobState};

pub const JUDGE_HEADER: &str = "x-judge-id";

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, kind, message: message.into() }
    }

    fn not_found(what: &str, id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("unknown {what} {id:?}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.kind, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "SchemaViolation", e.to_string()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/detect", post(detect))
        .route("/jobs/{id}", get(job))
        .route("/jobs/{id}/trace", get(trace))
        .route("/jobs/{id}/evidence", get(evidence))
        .route("/rank-study/samples", get(samples))
        .route("/rank-study/submissions", post(submit))
        .route("/rank-study/report", get(report))
        .with_state(state)
}

fn store_upload(state: &AppState, job_id: &str, b64: &str) -> ApiResult<String> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "SchemaViolation", format!("image_b64: {e}")))?;
    let dir = match &state.0.upload_dir {
        Some(d) => d.clone(),
        None => std::env::temp_dir().join("ooc-uploads"),
    };
    let internal = |e: std::io::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Io", e.to_string());
    std::fs::create_dir_all(&dir).map_err(internal)?;
    let path = dir.join(format!("{job_id}.img"));
    std::fs::write(&path, bytes).map_err(internal)?;
    Ok(path.display().to_string())
}

async fn detect(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let mut req: DetectRequest = parse_body(&body)?;
    if req.caption.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "SchemaViolation", "caption must be non-empty"));
    }
    let Some(engine) = state.0.engine.clone() else {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "NoEngine", "no indices loaded"));
    };
    let job_id = state.next_job_id();
    if let Some(b64) = req.image_b64.take() {
        req.image_ref = Some(store_upload(&state, &job_id, &b64)?);
    }
    if req.image_ref.as_deref().unwrap_or("").is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "SchemaViolation", "image_ref or image_b64 required"));
    }
    let job = DetectionJob { job_id: job_id.clone(), request: req, state: JobState::Queued, result: None, evidence: None, error: None };
    state.put_job(job.clone());

    let worker = state.clone();
    tokio::task::spawn_blocking(move || {
        let mut job = job;
        job.state = JobState::Running;
        worker.put_job(job.clone());
        match engine.detect(&job.item()) {
            Ok(det) => {
                job.state = JobState::Done;
                job.result = Some(det.verdict);
                job.evidence = det.evidence;
            }
            Err(err) => {
                job.state = JobState::Failed;
                job.error = Some(format!("kind={} msg={err}", err.kind()));
            }
        }
        worker.put_job(job);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))))
}

fn lookup(state: &AppState, id: &str) -> ApiResult<DetectionJob> {
    state.job(id).ok_or_else(|| ApiError::not_found("job", id))
}

async fn job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<DetectionJob>> {
    lookup(&state, &id).map(Json)
}

fn finished(job: &DetectionJob) -> ApiResult<()> {
    if job.state != JobState::Done {
        return Err(ApiError::new(StatusCode::CONFLICT, "NotDone", format!("job {} is {:?}", job.job_id, job.state)));
    }
    Ok(())
}

async fn trace(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let job = lookup(&state, &id)?;
    finished(&job)?;
    let verdict = job.result.expect("done jobs carry a result");
    Ok(Json(json!(verdict.trace)))
}

async fn evidence(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let job = lookup(&state, &id)?;
    finished(&job)?;
    Ok(Json(json!(job.evidence)))
}

async fn samples(State(state): State<AppState>) -> Json<Value> {
    let study = state.0.study.lock().expect("study lock");
    let samples: Vec<Value> = study
        .spec
        .samples
        .iter()
        .map(|s| {
            json!({
                "sample_id": s.sample_id,
                "caption": s.caption,
                "image_ref": s.image_ref,
                "candidates": s.explanations.iter().map(|(m, e)| json!({ "method": m, "explanation": e })).collect::<Vec<_>>(),
            })
        })
        .collect();
    Json(json!({ "methods": study.spec.methods, "samples": samples }))
}

#[derive(Deserialize)]
struct SubmissionBody {
    #[serde(default)]
    judge_id: Option<String>,
    sample_id: String,
    ranks: std::collections::BTreeMap<String, u32>,
}

async fn submit(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let b: SubmissionBody = parse_body(&body)?;
    let judge = b
        .judge_id
        .or_else(|| headers.get(JUDGE_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string))
        .filter(|j| !j.trim().is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "SchemaViolation", "judge_id required"))?;
    let sub = Submission { judge_id: judge, sample_id: b.sample_id, ranks: b.ranks };
    let mut study = state.0.study.lock().expect("study lock");
    match study.submit(&sub) {
        Ok(()) => {}
        Err(SubmitError::UnknownSample(id)) => return Err(ApiError::not_found("sample", &id)),
        Err(e @ SubmitError::Duplicate { .. }) => return Err(ApiError::new(StatusCode::CONFLICT, "DuplicateSubmission", e.to_string())),
        Err(SubmitError::Invalid(e)) => return Err(ApiError::new(StatusCode::BAD_REQUEST, e.kind(), e.to_string())),
    }
    // Logged while the study lock is held so log order matches admission order.
    state
        .record_submission(&sub)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Io", e.to_string()))?;
    Ok((StatusCode::CREATED, Json(json!({ "status": "accepted", "submissions": study.submissions() }))))
}

async fn report(State(state): State<AppState>) -> Json<Value> {
    let study = state.0.study.lock().expect("study lock");
    let r = study.report();
    let rows: Vec<Value> = r
        .methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            json!({
                "method": m,
                "mean_rank": r.means[i],
                "display": if r.cells > 0 { r.mean_display(i) } else { "-".to_string() },
            })
        })
        .collect();
    Json(json!({
        "methods": rows,
        "cells": r.cells,
        "rank_sum_exact": r.sum_is_exact(),
    }))
}
