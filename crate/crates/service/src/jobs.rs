//! Background jobs with polled progress and cooperative cancellation.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ServiceError, ServiceResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub kind: String,
    pub status: JobStatus,
    pub stage: String,
    pub progress: f64,
    pub result: Option<Value>,
    pub error: Option<Value>,
}

pub struct Job {
    view: Mutex<JobView>,
    cancel: AtomicBool,
}

impl Job {
    pub fn view(&self) -> JobView {
        self.view.lock().expect("job lock").clone()
    }

    /// Records progress; `false` once cancellation was requested.
    pub fn update(&self, stage: &str, progress: f64) -> bool {
        let mut v = self.view.lock().expect("job lock");
        v.stage = stage.to_string();
        v.progress = progress.clamp(0.0, 1.0);
        !self.cancel.load(Ordering::SeqCst)
    }

    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::SeqCst);
    }

    pub fn finish(&self, outcome: ServiceResult<Value>) {
        let mut v = self.view.lock().expect("job lock");
        match outcome {
            Ok(result) => {
                v.status = JobStatus::Done;
                v.progress = 1.0;
                v.result = Some(result);
            }
            Err(ServiceError::Cancelled) => v.status = JobStatus::Cancelled,
            Err(e) => {
                v.status = JobStatus::Failed;
                v.error = Some(e.body()["error"].clone());
            }
        }
    }
}

#[derive(Default)]
pub struct Jobs {
    map: Mutex<BTreeMap<String, Arc<Job>>>,
    next: AtomicU64,
}

impl Jobs {
    pub fn create(&self, kind: &str) -> Arc<Job> {
        let id = format!("job-{}", self.next.fetch_add(1, Ordering::SeqCst) + 1);
        let job = Arc::new(Job {
            view: Mutex::new(JobView {
                id: id.clone(),
                kind: kind.into(),
                status: JobStatus::Running,
                stage: "queued".into(),
                progress: 0.0,
                result: None,
                error: None,
            }),
            cancel: AtomicBool::new(false),
        });
        self.map.lock().expect("jobs lock").insert(id, job.clone());
        job
    }

    pub fn get(&self, id: &str) -> ServiceResult<Arc<Job>> {
        self.map
            .lock()
            .expect("jobs lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("job {id}")))
    }
}
