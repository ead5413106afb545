//! Shared server state: dataset cache, sessions and jobs, with on-disk
//! persistence under the data directory.
//!
//! Layout:
//!
//! ```text
//! <data_dir>/datasets/<id>.json   source description, rebuilt on demand
//! <data_dir>/sessions/<id>.json   latest session snapshot
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde_json::Value;

use crate::config::Config;
use crate::dataset::{build_dataset, DatasetEntry, DatasetSource};
use crate::error::{ServiceError, ServiceResult};
use crate::jobs::Jobs;
use crate::session::Session;

/// One session: mutations queue on `lock`, reads see the last committed copy.
pub struct SessionSlot {
    pub lock: Arc<tokio::sync::Mutex<()>>,
    committed: RwLock<Session>,
}

impl SessionSlot {
    pub fn read(&self) -> Session {
        self.committed.read().expect("session lock").clone()
    }
}

pub struct AppState {
    pub config: Config,
    datasets: RwLock<BTreeMap<String, Arc<DatasetEntry>>>,
    /// Serialises rebuilds of datasets known only from their manifest.
    rebuild: Mutex<()>,
    sessions: Mutex<BTreeMap<String, Arc<SessionSlot>>>,
    pub jobs: Jobs,
    next_session: AtomicU64,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

impl AppState {
    pub fn open(config: Config) -> ServiceResult<Arc<Self>> {
        std::fs::create_dir_all(config.data_dir.join("datasets"))?;
        std::fs::create_dir_all(config.data_dir.join("sessions"))?;
        let mut last = 0;
        for entry in std::fs::read_dir(config.data_dir.join("sessions"))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(n) = name.strip_prefix("s-").and_then(|s| s.strip_suffix(".json")).and_then(|s| s.parse().ok()) {
                last = last.max(n);
            }
        }
        Ok(Arc::new(AppState {
            config,
            datasets: RwLock::default(),
            rebuild: Mutex::default(),
            sessions: Mutex::default(),
            jobs: Jobs::default(),
            next_session: AtomicU64::new(last),
        }))
    }

    fn dataset_path(&self, id: &str) -> PathBuf {
        self.config.data_dir.join("datasets").join(format!("{id}.json"))
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.config.data_dir.join("sessions").join(format!("{id}.json"))
    }

    pub fn cached_dataset(&self, id: &str) -> Option<Arc<DatasetEntry>> {
        self.datasets.read().expect("dataset lock").get(id).cloned()
    }

    pub fn insert_dataset(&self, entry: DatasetEntry) -> ServiceResult<Arc<DatasetEntry>> {
        write_atomic(&self.dataset_path(&entry.id), &serde_json::to_string_pretty(&entry.source)?)?;
        let entry = Arc::new(entry);
        self.datasets.write().expect("dataset lock").insert(entry.id.clone(), entry.clone());
        Ok(entry)
    }

    /// The cached dataset, rebuilding it from its manifest if needed. Blocking.
    pub fn dataset_blocking(&self, id: &str) -> ServiceResult<Arc<DatasetEntry>> {
        if let Some(e) = self.cached_dataset(id) {
            return Ok(e);
        }
        let _guard = self.rebuild.lock().expect("rebuild lock");
        if let Some(e) = self.cached_dataset(id) {
            return Ok(e);
        }
        let path = self.dataset_path(id);
        if !valid_id(id) || !path.exists() {
            return Err(ServiceError::NotFound(format!("dataset {id}")));
        }
        let source: DatasetSource = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let entry = build_dataset(source, &self.config, &mut |_, _| true)?;
        self.insert_dataset(entry)
    }

    pub fn dataset_known(&self, id: &str) -> bool {
        self.cached_dataset(id).is_some() || (valid_id(id) && self.dataset_path(id).exists())
    }

    pub fn create_session(&self, dataset_id: &str, seed: u64) -> ServiceResult<Session> {
        if !self.dataset_known(dataset_id) {
            return Err(ServiceError::NotFound(format!("dataset {dataset_id}")));
        }
        let id = format!("s-{}", self.next_session.fetch_add(1, Ordering::SeqCst) + 1);
        let session = Session::new(id.clone(), dataset_id, seed);
        self.persist(&session)?;
        let slot = Arc::new(SessionSlot {
            lock: Arc::default(),
            committed: RwLock::new(session.clone()),
        });
        self.sessions.lock().expect("sessions lock").insert(id, slot);
        Ok(session)
    }

    /// The session, loading its snapshot from disk on first access.
    pub fn session(&self, id: &str) -> ServiceResult<Arc<SessionSlot>> {
        let mut map = self.sessions.lock().expect("sessions lock");
        if let Some(s) = map.get(id) {
            return Ok(s.clone());
        }
        let path = self.session_path(id);
        if !valid_id(id) || !path.exists() {
            return Err(ServiceError::NotFound(format!("session {id}")));
        }
        let session = Session::from_snapshot(&std::fs::read_to_string(path)?)?;
        let slot = Arc::new(SessionSlot {
            lock: Arc::default(),
            committed: RwLock::new(session),
        });
        map.insert(id.to_string(), slot.clone());
        Ok(slot)
    }

    pub fn persist(&self, session: &Session) -> ServiceResult<()> {
        write_atomic(&self.session_path(&session.id), &session.snapshot()?)
    }

    /// Runs `op` on a copy of the session; commits and persists only on
    /// success. Blocking; the caller holds the slot's lock.
    pub fn apply(
        &self,
        slot: &SessionSlot,
        op: impl FnOnce(&mut Session, &DatasetEntry, &Config) -> ServiceResult<Value>,
    ) -> ServiceResult<Value> {
        let mut work = slot.read();
        let entry = self.dataset_blocking(&work.dataset_id)?;
        let before = work.clone();
        let out = op(&mut work, &entry, &self.config)?;
        if work != before {
            self.persist(&work)?;
            *slot.committed.write().expect("session lock") = work;
        }
        Ok(out)
    }
}

fn write_atomic(path: &std::path::Path, text: &str) -> ServiceResult<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
