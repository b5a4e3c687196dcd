//! In-memory registry of long-running operations.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use atsc_core::api::{ApiError, JobState, JobStatus};
use serde::Serialize;
use uuid::Uuid;

#[derive(Clone, Default)]
pub struct JobStore {
    jobs: Arc<Mutex<HashMap<String, JobStatus>>>,
}

impl JobStore {
    /// Runs `work` on the blocking pool and returns the job's initial status.
    pub fn spawn<T, F>(&self, kind: &str, work: F) -> JobStatus
    where
        T: Serialize,
        F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    {
        let status = JobStatus {
            id: Uuid::new_v4().to_string(),
            kind: kind.to_string(),
            state: JobState::Running,
            output: None,
            error: None,
        };
        self.jobs.lock().expect("job store").insert(status.id.clone(), status.clone());
        let jobs = self.jobs.clone();
        let id = status.id.clone();
        tokio::task::spawn_blocking(move || {
            let outcome = work();
            let mut jobs = jobs.lock().expect("job store");
            let job = jobs.get_mut(&id).expect("job registered");
            match outcome.and_then(|v| {
                serde_json::to_value(v).map_err(|e| ApiError {
                    error: e.to_string(),
                    problems: Vec::new(),
                })
            }) {
                Ok(value) => {
                    job.state = JobState::Succeeded;
                    job.output = Some(value);
                }
                Err(error) => {
                    job.state = JobState::Failed;
                    job.error = Some(error);
                }
            }
        });
        status
    }

    pub fn get(&self, id: &str) -> Option<JobStatus> {
        self.jobs.lock().expect("job store").get(id).cloned()
    }
}
