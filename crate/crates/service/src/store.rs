//! In-memory session store with optional per-session JSON snapshots.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use hse_core::dataset::CsvOptions;
use hse_core::session::SessionSnapshot;
use hse_core::synthetic::BlobSpec;
use hse_core::{ActiveSession, Dataset, SessionConfig};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::error::ApiError;

/// Synthetic datasets available without a dataset directory.
pub const BUILTIN_DATASETS: [&str; 1] = ["four_gaussians"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Named {
        name: String,
    },
    Inline {
        csv: String,
        #[serde(default)]
        label_column: Option<String>,
        #[serde(default)]
        class_count: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub id: String,
    /// Seconds since the Unix epoch.
    pub created_at: f64,
    pub config: SessionConfig,
}

pub struct SessionEntry {
    pub handle: SessionHandle,
    pub source: DatasetSource,
    pub session: Arc<Mutex<ActiveSession>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PersistedSession {
    handle: SessionHandle,
    source: DatasetSource,
    snapshot: SessionSnapshot,
}

pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<SessionEntry>>>,
    dataset_dir: Option<PathBuf>,
    snapshot_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(dataset_dir: Option<PathBuf>, snapshot_dir: Option<PathBuf>) -> Self {
        AppState { sessions: RwLock::new(HashMap::new()), dataset_dir, snapshot_dir }
    }

    pub fn resolve(&self, source: &DatasetSource) -> Result<Arc<Dataset>, ApiError> {
        match source {
            DatasetSource::Named { name } => self.named_dataset(name),
            DatasetSource::Inline { csv, label_column, class_count } => {
                let opts = CsvOptions {
                    label_column: label_column.clone(),
                    class_count: *class_count,
                    name: Some("inline".into()),
                };
                Ok(Arc::new(Dataset::from_csv_reader(csv.as_bytes(), &opts)?))
            }
        }
    }

    fn named_dataset(&self, name: &str) -> Result<Arc<Dataset>, ApiError> {
        let valid = !name.is_empty()
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !valid {
            return Err(ApiError::bad_request(format!("invalid dataset name {name:?}")));
        }
        if let Some(dir) = &self.dataset_dir {
            let path = dir.join(format!("{name}.csv"));
            if path.is_file() {
                return Ok(Arc::new(Dataset::load_csv(&path, None)?));
            }
        }
        match name {
            "four_gaussians" => Ok(Arc::new(BlobSpec::four_gaussians(400, 0).generate(name)?)),
            _ => Err(ApiError::not_found(format!("unknown dataset {name:?}"))),
        }
    }

    pub fn insert(&self, handle: SessionHandle, source: DatasetSource, session: ActiveSession) -> Arc<SessionEntry> {
        let entry = Arc::new(SessionEntry { handle, source, session: Arc::new(Mutex::new(session)) });
        self.sessions.write().expect("session map poisoned").insert(entry.handle.id.clone(), entry.clone());
        entry
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionEntry>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `<snapshot_dir>/<id>.json` if snapshots are enabled.
    pub fn persist(&self, entry: &SessionEntry, session: &ActiveSession) -> Result<(), ApiError> {
        let Some(dir) = &self.snapshot_dir else { return Ok(()) };
        let record = PersistedSession {
            handle: entry.handle.clone(),
            source: entry.source.clone(),
            snapshot: session.snapshot(),
        };
        let body = serde_json::to_vec(&record).map_err(|e| ApiError::internal(e.to_string()))?;
        write_atomic(&dir.join(format!("{}.json", entry.handle.id)), &body)
            .map_err(|e| ApiError::internal(format!("snapshot write failed: {e}")))
    }

    /// Restores every snapshot in the snapshot directory; returns the ids
    /// restored and the files that could not be.
    pub fn restore_snapshots(&self) -> (Vec<String>, Vec<(PathBuf, String)>) {
        let mut restored = Vec::new();
        let mut failed = Vec::new();
        let Some(dir) = &self.snapshot_dir else { return (restored, failed) };
        let Ok(read) = std::fs::read_dir(dir) else { return (restored, failed) };
        let mut paths: Vec<PathBuf> =
            read.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect();
        paths.sort();
        for path in paths {
            match self.restore_one(&path) {
                Ok(id) => restored.push(id),
                Err(e) => failed.push((path, e)),
            }
        }
        (restored, failed)
    }

    fn restore_one(&self, path: &Path) -> Result<String, String> {
        let text = std::fs::read(path).map_err(|e| e.to_string())?;
        let record: PersistedSession = serde_json::from_slice(&text).map_err(|e| e.to_string())?;
        let dataset = self.resolve(&record.source).map_err(|e| e.message)?;
        let session = ActiveSession::restore(dataset, &record.snapshot).map_err(|e| e.to_string())?;
        let id = record.handle.id.clone();
        self.insert(record.handle, record.source, session);
        Ok(id)
    }
}

fn write_atomic(path: &Path, body: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, body)?;
    std::fs::rename(tmp, path)
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}
