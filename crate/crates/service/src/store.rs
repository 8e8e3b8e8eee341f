use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::broadcast;

use crate::model::{CnUpdate, RiskModel, Timestamp, ViolationRecord};

const MODELS_FILE: &str = "models.jsonl";
const VIOLATIONS_FILE: &str = "violations.jsonl";
const STREAM_CAPACITY: usize = 1024;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("update from unregistered coordination node {0}")]
    UnknownCn(String),
    #[error("violation at {time} precedes the last logged one at {last}")]
    OutOfOrder { time: Timestamp, last: Timestamp },
    #[error("store file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("store file {path} line {line}: {source}")]
    Corrupt {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Default)]
struct Inner {
    models: BTreeMap<String, RiskModel>,
    violations: Vec<ViolationRecord>,
}

#[derive(Debug)]
struct Sink {
    dir: PathBuf,
    models: File,
    violations: File,
}

impl Sink {
    fn append<T: Serialize>(&mut self, violations: bool, value: &T) -> Result<(), StoreError> {
        let (file, name) = if violations {
            (&mut self.violations, VIOLATIONS_FILE)
        } else {
            (&mut self.models, MODELS_FILE)
        };
        let mut line = serde_json::to_string(value).expect("store records serialize");
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(|source| StoreError::Io {
            path: self.dir.join(name).display().to_string(),
            source,
        })
    }
}

/// Single source of truth for CN risk models and the violation log.
///
/// Readers share a lock; writers are serialized, and a write is on disk
/// (when persistent) and broadcast before the lock is released, so log
/// order, file order and stream order agree.
#[derive(Debug)]
pub struct Store {
    inner: RwLock<Inner>,
    sink: Option<Mutex<Sink>>,
    stream: broadcast::Sender<ViolationRecord>,
}

impl Default for Store {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            inner: RwLock::default(),
            sink: None,
            stream: broadcast::channel(STREAM_CAPACITY).0,
        }
    }

    /// Opens (or creates) a persistent store in `dir`, replaying whatever
    /// an earlier run left there.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let io_err = |path: &Path| {
            let path = path.display().to_string();
            move |source| StoreError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut inner = Inner::default();
        for m in read_jsonl::<RiskModel>(&dir.join(MODELS_FILE))? {
            inner.models.insert(m.cn_id.clone(), m);
        }
        inner.violations = read_jsonl(&dir.join(VIOLATIONS_FILE))?;
        let open = |name: &str| {
            let p = dir.join(name);
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(io_err(&p))
        };
        let sink = Sink {
            dir: dir.to_path_buf(),
            models: open(MODELS_FILE)?,
            violations: open(VIOLATIONS_FILE)?,
        };
        Ok(Self {
            inner: RwLock::new(inner),
            sink: Some(Mutex::new(sink)),
            stream: broadcast::channel(STREAM_CAPACITY).0,
        })
    }

    /// Applies one CN update. Returns whether anything changed.
    pub fn collect(&self, update: CnUpdate) -> Result<bool, StoreError> {
        let mut inner = self.inner.write().expect("store lock");
        if let CnUpdate::Register(model) = update {
            if inner.models.get(&model.cn_id) == Some(&model) {
                return Ok(false);
            }
            self.persist(false, &model)?;
            inner.models.insert(model.cn_id.clone(), model);
            return Ok(true);
        }
        let cn_id = update.cn_id().to_string();
        if !inner.models.contains_key(&cn_id) {
            return Err(StoreError::UnknownCn(cn_id));
        }
        match update {
            CnUpdate::Register(_) => unreachable!("handled above"),
            CnUpdate::Trigger { time, .. } => self.touch(&mut inner, &cn_id, time),
            CnUpdate::Config { config, .. } => {
                let mut m = inner.models[&cn_id].clone();
                if m.policy_params.as_ref() == Some(&config) {
                    return Ok(false);
                }
                m.policy_params = Some(config);
                self.persist(false, &m)?;
                inner.models.insert(cn_id, m);
                Ok(true)
            }
            CnUpdate::Violation {
                time,
                violated_rule,
                cause,
                details,
                ..
            } => {
                if let Some(last) = inner.violations.last() {
                    if time < last.time {
                        return Err(StoreError::OutOfOrder { time, last: last.time });
                    }
                }
                let record = ViolationRecord {
                    index: inner.violations.len() as u64,
                    time,
                    cn_id: cn_id.clone(),
                    violated_rule,
                    cause,
                    details,
                };
                self.persist(true, &record)?;
                inner.violations.push(record.clone());
                // No subscribers is fine; the log is authoritative.
                let _ = self.stream.send(record);
                self.touch(&mut inner, &cn_id, time)
            }
        }
    }

    fn touch(&self, inner: &mut Inner, cn_id: &str, time: Timestamp) -> Result<bool, StoreError> {
        let m = inner.models.get_mut(cn_id).expect("checked by caller");
        if m.trigger_time.is_some_and(|t| t >= time) {
            return Ok(false);
        }
        m.trigger_time = Some(time);
        let m = m.clone();
        self.persist(false, &m)?;
        Ok(true)
    }

    fn persist<T: Serialize>(&self, violation: bool, value: &T) -> Result<(), StoreError> {
        match &self.sink {
            Some(sink) => sink.lock().expect("sink lock").append(violation, value),
            None => Ok(()),
        }
    }

    pub fn models(&self) -> Vec<RiskModel> {
        self.inner
            .read()
            .expect("store lock")
            .models
            .values()
            .cloned()
            .collect()
    }

    pub fn model(&self, cn_id: &str) -> Option<RiskModel> {
        self.inner.read().expect("store lock").models.get(cn_id).cloned()
    }

    /// Violations at or after `since`, in log order.
    pub fn violations_since(&self, since: Option<Timestamp>) -> Vec<ViolationRecord> {
        let inner = self.inner.read().expect("store lock");
        let start = since.map_or(0, |t| inner.violations.partition_point(|v| v.time < t));
        inner.violations[start..].to_vec()
    }

    pub fn violation_count(&self) -> usize {
        self.inner.read().expect("store lock").violations.len()
    }

    /// Backlog at or after `since` plus a receiver for everything logged
    /// later. Taken under one read lock, so nothing falls in between.
    pub fn subscribe(&self, since: Option<Timestamp>) -> (Vec<ViolationRecord>, broadcast::Receiver<ViolationRecord>) {
        let inner = self.inner.read().expect("store lock");
        let rx = self.stream.subscribe();
        let start = since.map_or(inner.violations.len(), |t| {
            inner.violations.partition_point(|v| v.time < t)
        });
        (inner.violations[start..].to_vec(), rx)
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(StoreError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| StoreError::Corrupt {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}
