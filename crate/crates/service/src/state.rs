use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use ooc_core::corpus::{NewsItem, PreExtraction};
use ooc_core::{Engine, EvidenceSet, Verdict};
use serde::{Deserialize, Serialize};

use crate::log::{EventLog, LogEntry};
use crate::rank::{RankStudy, StudySpec, Submission};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub caption: String,
    /// Path or URL of the image. Ignored when `image_b64` is given.
    #[serde(default)]
    pub image_ref: Option<String>,
    /// Uploaded image bytes, base64.
    #[serde(default, skip_serializing)]
    pub image_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_extracted: Option<PreExtraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionJob {
    pub job_id: String,
    pub request: DetectRequest,
    pub state: JobState,
    /// Present iff `state` is `done`.
    pub result: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<EvidenceSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DetectionJob {
    pub fn item(&self) -> NewsItem {
        let mut item = NewsItem::new(
            self.request.item_id.clone().unwrap_or_else(|| self.job_id.clone()),
            self.request.image_ref.clone().unwrap_or_default(),
            self.request.caption.clone(),
        );
        item.pre_extracted = self.request.pre_extracted.clone();
        item
    }
}

pub struct Inner {
    pub engine: Option<Arc<Engine>>,
    pub jobs: RwLock<HashMap<String, DetectionJob>>,
    pub next_job: Mutex<u64>,
    pub study: Mutex<RankStudy>,
    pub log: EventLog,
    pub upload_dir: Option<std::path::PathBuf>,
}

#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

impl AppState {
    /// Builds state and replays `entries` from a previously opened log.
    ///
    /// Jobs left queued or running by a previous process are marked failed.
    pub fn new(engine: Option<Arc<Engine>>, study: StudySpec, log: EventLog, entries: Vec<LogEntry>) -> Self {
        let mut jobs = HashMap::new();
        let mut study = RankStudy::new(study);
        let mut max_job = 0;
        for entry in entries {
            match entry {
                LogEntry::Job { job } => {
                    if let Some(n) = job.job_id.strip_prefix("job-").and_then(|n| n.parse::<u64>().ok()) {
                        max_job = max_job.max(n);
                    }
                    jobs.insert(job.job_id.clone(), *job);
                }
                LogEntry::Submission { submission } => {
                    if let Err(err) = study.submit(&submission) {
                        tracing::warn!(%err, "log replay rejected a submission");
                    }
                }
            }
        }
        let mut interrupted = Vec::new();
        for job in jobs.values_mut() {
            if matches!(job.state, JobState::Queued | JobState::Running) {
                job.state = JobState::Failed;
                job.error = Some("interrupted by restart".into());
                interrupted.push(job.clone());
            }
        }
        for job in interrupted {
            let _ = log.append(&LogEntry::Job { job: Box::new(job) });
        }
        let upload_dir = log.path().and_then(|p| p.parent()).map(|d| d.join("uploads"));
        AppState(Arc::new(Inner {
            engine,
            jobs: RwLock::new(jobs),
            next_job: Mutex::new(max_job + 1),
            study: Mutex::new(study),
            log,
            upload_dir,
        }))
    }

    pub fn next_job_id(&self) -> String {
        let mut n = self.0.next_job.lock().expect("job counter");
        let id = format!("job-{:06}", *n);
        *n += 1;
        id
    }

    pub fn put_job(&self, job: DetectionJob) {
        if let Err(err) = self.0.log.append(&LogEntry::Job { job: Box::new(job.clone()) }) {
            tracing::error!(%err, job = %job.job_id, "failed to log job");
        }
        self.0.jobs.write().expect("jobs lock").insert(job.job_id.clone(), job);
    }

    pub fn job(&self, id: &str) -> Option<DetectionJob> {
        self.0.jobs.read().expect("jobs lock").get(id).cloned()
    }

    pub fn record_submission(&self, s: &Submission) -> std::io::Result<()> {
        self.0.log.append(&LogEntry::Submission { submission: s.clone() })
    }
}
