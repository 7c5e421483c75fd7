use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::instance::WorkflowEvent;
use super::EngineError;

/// Durable home of instance snapshots and per-instance event journals.
pub trait SnapshotStore: Send + Sync {
    fn put_snapshot(&self, instance_id: &str, bytes: &[u8]) -> Result<(), EngineError>;
    fn get_snapshot(&self, instance_id: &str) -> Result<Option<Vec<u8>>, EngineError>;
    fn append_journal(&self, instance_id: &str, event: &WorkflowEvent) -> Result<(), EngineError>;
    fn journal(&self, instance_id: &str) -> Result<Vec<WorkflowEvent>, EngineError>;
    fn instance_ids(&self) -> Result<Vec<String>, EngineError>;
}

/// In-memory store. Clones share contents, which lets a test "restart" an
/// engine against the same durable state.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    inner: Arc<Mutex<MemoryInner>>,
}

#[derive(Debug, Default)]
struct MemoryInner {
    snapshots: BTreeMap<String, Vec<u8>>,
    journals: BTreeMap<String, Vec<WorkflowEvent>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overwrites raw snapshot bytes, bypassing the checksum.
    pub fn tamper(&self, instance_id: &str, f: impl FnOnce(&mut Vec<u8>)) {
        let mut g = self.inner.lock().unwrap();
        if let Some(b) = g.snapshots.get_mut(instance_id) {
            f(b);
        }
    }
}

impl SnapshotStore for MemoryStore {
    fn put_snapshot(&self, instance_id: &str, bytes: &[u8]) -> Result<(), EngineError> {
        self.inner.lock().unwrap().snapshots.insert(instance_id.to_string(), bytes.to_vec());
        Ok(())
    }

    fn get_snapshot(&self, instance_id: &str) -> Result<Option<Vec<u8>>, EngineError> {
        Ok(self.inner.lock().unwrap().snapshots.get(instance_id).cloned())
    }

    fn append_journal(&self, instance_id: &str, event: &WorkflowEvent) -> Result<(), EngineError> {
        self.inner.lock().unwrap().journals.entry(instance_id.to_string()).or_default().push(event.clone());
        Ok(())
    }

    fn journal(&self, instance_id: &str) -> Result<Vec<WorkflowEvent>, EngineError> {
        Ok(self.inner.lock().unwrap().journals.get(instance_id).cloned().unwrap_or_default())
    }

    fn instance_ids(&self) -> Result<Vec<String>, EngineError> {
        Ok(self.inner.lock().unwrap().snapshots.keys().cloned().collect())
    }
}

/// `<dir>/<instance_id>.snapshot` plus `<dir>/<instance_id>.journal.jsonl`.
#[derive(Debug, Clone)]
pub struct FileStore {
    dir: PathBuf,
}

impl FileStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, EngineError> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self { dir: dir.as_ref().to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn snapshot_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.snapshot"))
    }

    fn journal_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.journal.jsonl"))
    }
}

impl SnapshotStore for FileStore {
    fn put_snapshot(&self, instance_id: &str, bytes: &[u8]) -> Result<(), EngineError> {
        let tmp = self.dir.join(format!(".{instance_id}.snapshot.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(tmp, self.snapshot_path(instance_id))?;
        Ok(())
    }

    fn get_snapshot(&self, instance_id: &str) -> Result<Option<Vec<u8>>, EngineError> {
        match fs::read(self.snapshot_path(instance_id)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn append_journal(&self, instance_id: &str, event: &WorkflowEvent) -> Result<(), EngineError> {
        let mut f = fs::OpenOptions::new().create(true).append(true).open(self.journal_path(instance_id))?;
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        f.write_all(&line)?;
        Ok(())
    }

    fn journal(&self, instance_id: &str) -> Result<Vec<WorkflowEvent>, EngineError> {
        let f = match fs::File::open(self.journal_path(instance_id)) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    fn instance_ids(&self) -> Result<Vec<String>, EngineError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".snapshot") {
                if !id.starts_with('.') {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
