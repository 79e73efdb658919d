//! In-memory job table shared by the train and dispatch endpoints.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::error::ApiError;

/// Ordered so that a job only ever moves to a larger status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

/// A job as returned by the polling endpoints. `result` is set only once
/// the job is done and `error` only once it failed.
#[derive(Debug, Serialize)]
pub struct Job<M, R> {
    pub id: String,
    pub status: JobStatus,
    pub submitted_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub progress: Progress,
    pub request: M,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Arc<R>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

impl<M: Clone, R> Clone for Job<M, R> {
    fn clone(&self) -> Self {
        Job {
            id: self.id.clone(),
            status: self.status,
            submitted_at: self.submitted_at,
            started_at: self.started_at,
            finished_at: self.finished_at,
            progress: self.progress,
            request: self.request.clone(),
            result: self.result.clone(),
            error: self.error.clone(),
        }
    }
}

pub struct JobTable<M, R> {
    prefix: &'static str,
    next: AtomicU64,
    jobs: Mutex<BTreeMap<String, Job<M, R>>>,
}

impl<M: Clone, R> JobTable<M, R> {
    pub fn new(prefix: &'static str) -> Self {
        JobTable { prefix, next: AtomicU64::new(1), jobs: Mutex::new(BTreeMap::new()) }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, Job<M, R>>> {
        self.jobs.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Inserts a queued job unless `conflict` matches an unfinished one.
    pub fn submit(&self, request: M, conflict: impl Fn(&M) -> bool) -> Result<String, ApiError> {
        let mut jobs = self.lock();
        if let Some(j) = jobs.values().find(|j| !j.status.is_finished() && conflict(&j.request)) {
            return Err(ApiError::conflict("already_running", format!("job {} is still {:?}", j.id, j.status))
                .with_details(serde_json::json!({ "job_id": j.id })));
        }
        let id = format!("{}-{:06}", self.prefix, self.next.fetch_add(1, Ordering::SeqCst));
        jobs.insert(
            id.clone(),
            Job {
                id: id.clone(),
                status: JobStatus::Queued,
                submitted_at: Utc::now(),
                started_at: None,
                finished_at: None,
                progress: Progress::default(),
                request,
                result: None,
                error: None,
            },
        );
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<Job<M, R>> {
        self.lock().get(id).cloned()
    }

    pub fn start(&self, id: &str) {
        if let Some(j) = self.lock().get_mut(id) {
            if j.status < JobStatus::Running {
                j.status = JobStatus::Running;
                j.started_at = Some(Utc::now());
            }
        }
    }

    pub fn progress(&self, id: &str, done: usize, total: usize) {
        if let Some(j) = self.lock().get_mut(id) {
            if !j.status.is_finished() {
                j.progress = Progress { done, total };
            }
        }
    }

    /// Records the outcome. Finished jobs are immutable; later calls are ignored.
    pub fn finish(&self, id: &str, outcome: Result<R, ApiError>) {
        if let Some(j) = self.lock().get_mut(id) {
            if j.status.is_finished() {
                return;
            }
            j.finished_at = Some(Utc::now());
            match outcome {
                Ok(r) => {
                    j.status = JobStatus::Done;
                    j.result = Some(Arc::new(r));
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e);
                }
            }
        }
    }
}
