use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::CorrectionEvent;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("event log {path} line {line}: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

/// Append-only storage for one case's correction events.
pub trait EventStore: Send {
    fn load(&mut self) -> Result<Vec<CorrectionEvent>, LogError>;
    /// Durable once this returns.
    fn append(&mut self, ev: &CorrectionEvent) -> Result<(), LogError>;
}

/// One JSON object per line, synced after every append.
#[derive(Debug)]
pub struct JsonlEventStore {
    path: PathBuf,
}

impl JsonlEventStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    fn io(&self, source: std::io::Error) -> LogError {
        LogError::Io {
            path: self.path.clone(),
            source,
        }
    }
}

impl EventStore for JsonlEventStore {
    fn load(&mut self) -> Result<Vec<CorrectionEvent>, LogError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(self.io(e)),
        };
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| self.io(e))?;
        let mut events = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(ev) => events.push(ev),
                // a torn final write from a crash
                Err(e) if i + 1 == lines.len() && e.is_eof() => {
                    log::warn!("{}: dropping truncated final line", self.path.display());
                }
                Err(source) => {
                    return Err(LogError::Corrupt {
                        path: self.path.clone(),
                        line: i + 1,
                        source,
                    })
                }
            }
        }
        Ok(events)
    }

    fn append(&mut self, ev: &CorrectionEvent) -> Result<(), LogError> {
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir).map_err(|e| self.io(e))?;
        }
        let mut line = serde_json::to_string(ev).expect("event serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| self.io(e))?;
        f.write_all(line.as_bytes()).map_err(|e| self.io(e))?;
        f.sync_data().map_err(|e| self.io(e))
    }
}

/// In-memory store. Clones share the same event list.
#[derive(Debug, Clone, Default)]
pub struct MemoryEventStore {
    events: Arc<Mutex<Vec<CorrectionEvent>>>,
}

impl MemoryEventStore {
    pub fn events(&self) -> Vec<CorrectionEvent> {
        self.events.lock().expect("event list lock").clone()
    }
}

impl EventStore for MemoryEventStore {
    fn load(&mut self) -> Result<Vec<CorrectionEvent>, LogError> {
        Ok(self.events())
    }

    fn append(&mut self, ev: &CorrectionEvent) -> Result<(), LogError> {
        self.events.lock().expect("event list lock").push(ev.clone());
        Ok(())
    }
}

/// Where the service keeps its per-case logs.
#[derive(Debug, Clone)]
pub enum LogBackend {
    /// `{dir}/{case_id}.jsonl`
    Dir(PathBuf),
    Memory(std::collections::BTreeMap<String, MemoryEventStore>),
}

impl LogBackend {
    pub fn memory() -> Self {
        LogBackend::Memory(Default::default())
    }

    pub(crate) fn open(&mut self, case_id: &str) -> Box<dyn EventStore> {
        match self {
            LogBackend::Dir(dir) => Box::new(JsonlEventStore::new(dir.join(format!("{case_id}.jsonl")))),
            LogBackend::Memory(stores) => Box::new(stores.entry(case_id.to_string()).or_default().clone()),
        }
    }
}
