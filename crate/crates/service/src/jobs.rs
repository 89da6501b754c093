use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::store::{content_id, Kind, Store};
use crate::{ErrorBody, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Enrich,
    Topics,
    Sample,
    Report,
    Eval,
}

impl JobKind {
    pub fn name(self) -> &'static str {
        match self {
            JobKind::Enrich => "enrich",
            JobKind::Topics => "topics",
            JobKind::Sample => "sample",
            JobKind::Report => "report",
            JobKind::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }

    fn can_move_to(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running) | (JobStatus::Running, JobStatus::Done | JobStatus::Failed) | (JobStatus::Queued, JobStatus::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    /// Store references of the job's inputs, e.g. `corpora/<id>`.
    pub inputs: Vec<String>,
    /// Store reference of the result once done.
    #[serde(default)]
    pub output_ref: Option<String>,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub error: Option<ErrorBody>,
}

/// Runs jobs on the blocking pool, at most `max_jobs` at once, admitted in
/// submission order. Identical submissions share one job.
#[derive(Debug)]
pub struct JobRunner {
    store: Store,
    permits: Arc<Semaphore>,
    jobs: Mutex<HashMap<String, JobRecord>>,
}

impl JobRunner {
    /// Loads persisted jobs. Jobs left unfinished by an earlier process are
    /// marked failed.
    pub fn new(store: Store, max_jobs: usize) -> Result<Self, ServiceError> {
        let mut jobs = HashMap::new();
        for mut job in store.all::<JobRecord>(Kind::Jobs)? {
            if !job.status.is_terminal() {
                job.status = JobStatus::Failed;
                job.finished_at = Some(Utc::now());
                job.error = Some(ServiceError::Internal("interrupted by a restart".into()).body());
                store.put(Kind::Jobs, &job.job_id, &job)?;
            }
            jobs.insert(job.job_id.clone(), job);
        }
        Ok(JobRunner { store, permits: Arc::new(Semaphore::new(max_jobs.max(1))), jobs: Mutex::new(jobs) })
    }

    pub fn get(&self, job_id: &str) -> Result<JobRecord, ServiceError> {
        self.jobs
            .lock()
            .expect("job table poisoned")
            .get(job_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("job `{job_id}`")))
    }

    /// Job id for a request: hash of kind and canonical request JSON.
    pub fn job_id(kind: JobKind, request: &serde_json::Value) -> String {
        content_id(format!("{}\n{}", kind.name(), request).as_bytes())
    }

    /// Queues `work` unless an identical request already has a job. Returns
    /// the job and whether it was newly created. `work` returns the output
    /// reference.
    pub fn submit<F>(
        self: &Arc<Self>,
        kind: JobKind,
        inputs: Vec<String>,
        request: &serde_json::Value,
        work: F,
    ) -> Result<(JobRecord, bool), ServiceError>
    where
        F: FnOnce() -> Result<String, ServiceError> + Send + 'static,
    {
        let job_id = Self::job_id(kind, request);
        let record = {
            let mut jobs = self.jobs.lock().expect("job table poisoned");
            if let Some(existing) = jobs.get(&job_id) {
                return Ok((existing.clone(), false));
            }
            let record = JobRecord {
                job_id: job_id.clone(),
                kind,
                status: JobStatus::Queued,
                inputs,
                output_ref: None,
                created_at: Utc::now(),
                started_at: None,
                finished_at: None,
                error: None,
            };
            self.store.put(Kind::Jobs, &job_id, &record)?;
            jobs.insert(job_id.clone(), record.clone());
            record
        };
        let runner = Arc::clone(self);
        let permits = Arc::clone(&self.permits);
        tokio::spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore is never closed");
            runner.transition(&job_id, JobStatus::Running, None, None);
            let outcome = tokio::task::spawn_blocking(work)
                .await
                .unwrap_or_else(|e| Err(ServiceError::Internal(format!("job panicked: {e}"))));
            match outcome {
                Ok(output) => runner.transition(&job_id, JobStatus::Done, Some(output), None),
                Err(e) => {
                    tracing::warn!(job = %job_id, error = %e, "job failed");
                    runner.transition(&job_id, JobStatus::Failed, None, Some(e.body()))
                }
            }
        });
        Ok((record, true))
    }

    fn transition(&self, job_id: &str, next: JobStatus, output: Option<String>, error: Option<ErrorBody>) {
        let mut jobs = self.jobs.lock().expect("job table poisoned");
        let Some(job) = jobs.get_mut(job_id) else { return };
        if !job.status.can_move_to(next) {
            tracing::error!(job = %job_id, from = ?job.status, to = ?next, "rejected backward job transition");
            return;
        }
        job.status = next;
        let now = Utc::now();
        match next {
            JobStatus::Running => job.started_at = Some(now),
            _ => job.finished_at = Some(now),
        }
        job.output_ref = output;
        job.error = error;
        if let Err(e) = self.store.put(Kind::Jobs, job_id, &*job) {
            tracing::error!(job = %job_id, error = %e, "cannot persist job record");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    async fn wait(runner: &JobRunner, id: &str) -> JobRecord {
        for _ in 0..500 {
            let job = runner.get(id).unwrap();
            if job.status.is_terminal() {
                return job;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        panic!("job {id} did not finish");
    }

    #[test]
    fn transitions_only_move_forward() {
        assert!(JobStatus::Queued.can_move_to(JobStatus::Running));
        assert!(JobStatus::Running.can_move_to(JobStatus::Done));
        assert!(!JobStatus::Done.can_move_to(JobStatus::Running));
        assert!(!JobStatus::Failed.can_move_to(JobStatus::Done));
        assert!(!JobStatus::Running.can_move_to(JobStatus::Queued));
    }

    #[tokio::test]
    async fn jobs_complete_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let runner = Arc::new(JobRunner::new(Store::open(dir.path()).unwrap(), 2).unwrap());
        let req = serde_json::json!({"a": 1});
        let (job, created) = runner.submit(JobKind::Sample, vec!["corpora/c".into()], &req, || Ok("samples/x".into())).unwrap();
        assert!(created);
        let (again, created) = runner.submit(JobKind::Sample, vec![], &req, || Ok("other".into())).unwrap();
        assert!(!created);
        assert_eq!(again.job_id, job.job_id);
        let done = wait(&runner, &job.job_id).await;
        assert_eq!(done.status, JobStatus::Done);
        assert_eq!(done.output_ref.as_deref(), Some("samples/x"));
        assert!(done.started_at.unwrap() >= done.created_at);

        let (failed, _) = runner
            .submit(JobKind::Sample, vec![], &serde_json::json!({"a": 2}), || Err(ServiceError::Unprocessable("bad class".into())))
            .unwrap();
        let failed = wait(&runner, &failed.job_id).await;
        assert_eq!(failed.status, JobStatus::Failed);
        assert_eq!(failed.error.unwrap().code, "unprocessable");
    }

    #[tokio::test]
    async fn concurrency_is_bounded() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let dir = tempfile::tempdir().unwrap();
        let runner = Arc::new(JobRunner::new(Store::open(dir.path()).unwrap(), 2).unwrap());
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let mut ids = Vec::new();
        for i in 0..6 {
            let (a, p) = (Arc::clone(&active), Arc::clone(&peak));
            let (job, _) = runner
                .submit(JobKind::Enrich, vec![], &serde_json::json!(i), move || {
                    let now = a.fetch_add(1, Ordering::SeqCst) + 1;
                    p.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(20));
                    a.fetch_sub(1, Ordering::SeqCst);
                    Ok(String::new())
                })
                .unwrap();
            ids.push(job.job_id);
        }
        for id in &ids {
            wait(&runner, id).await;
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[tokio::test]
    async fn unfinished_jobs_fail_on_reload() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let stale = JobRecord {
            job_id: "j1".into(),
            kind: JobKind::Topics,
            status: JobStatus::Running,
            inputs: vec![],
            output_ref: None,
            created_at: Utc::now(),
            started_at: None,
            finished_at: None,
            error: None,
        };
        store.put(Kind::Jobs, "j1", &stale).unwrap();
        let runner = JobRunner::new(store, 1).unwrap();
        assert_eq!(runner.get("j1").unwrap().status, JobStatus::Failed);
    }
}
