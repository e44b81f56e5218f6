//! Append-only generation record log.
//!
//! The first line is [`RECORD_LOG_HEADER`]; every later line is one JSON
//! record. Updating a record appends its new version and the last line for an
//! id wins on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use nprompt_core::decode::{DecodeParams, HighlightSpan};
use nprompt_core::scoring::ImageRef;
use nprompt_core::{ClauseReport, ClauseSelection, OptimizeError, PromptOptimizer};
use serde::{Deserialize, Serialize};

pub const RECORD_LOG_HEADER: &str = "nprompt-records-v1";

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("record log {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("record log {path} does not start with {RECORD_LOG_HEADER:?}")]
    Header { path: PathBuf },
    #[error("record log {path}, line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown record {0:?}")]
    Unknown(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePair {
    pub original: ImageRef,
    pub optimized: ImageRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub pick_u: f64,
    pub pick_o: f64,
    pub aes_u: f64,
    pub aes_o: f64,
    pub preference_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub original_prompt: String,
    pub prefix: String,
    pub optimized_prompt: String,
    pub selections: ClauseSelection,
    pub seed: u64,
    pub decode_params: DecodeParams,
    pub highlights: Vec<HighlightSpan>,
    pub clause_status: Vec<ClauseReport>,
    pub satisfied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<ImagePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Scores>,
}

impl GenerationRecord {
    /// Re-runs the optimization the record was produced by.
    pub fn replay(&self, optimizer: &PromptOptimizer) -> Result<String, OptimizeError> {
        optimizer
            .optimize(&self.original_prompt, &self.selections, &self.decode_params)
            .map(|o| o.optimized_prompt)
    }
}

pub fn format_id(n: usize) -> String {
    format!("rec-{n:06}")
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct Inner {
    writer: Option<(PathBuf, BufWriter<File>)>,
    records: Vec<GenerationRecord>,
    index: HashMap<String, usize>,
}

impl Inner {
    fn append(&mut self, record: &GenerationRecord) -> Result<(), RecordError> {
        if let Some((path, w)) = &mut self.writer {
            let line = serde_json::to_string(record).expect("records serialize");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| RecordError::Io {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }

    fn put(&mut self, record: GenerationRecord) {
        match self.index.get(&record.id) {
            Some(&i) => self.records[i] = record,
            None => {
                self.index.insert(record.id.clone(), self.records.len());
                self.records.push(record);
            }
        }
    }
}

/// Record log with an in-memory index. All writes go through one lock.
pub struct RecordStore {
    inner: Mutex<Inner>,
}

impl RecordStore {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(Inner {
                writer: None,
                records: Vec::new(),
                index: HashMap::new(),
            }),
        }
    }

    /// Opens or creates the log at `path` and loads its records.
    pub fn open(path: &Path) -> Result<Self, RecordError> {
        let io = |e: std::io::Error| RecordError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut store = Self::in_memory();
        let fresh = !path.exists() || std::fs::metadata(path).map_err(io)?.len() == 0;
        if !fresh {
            let inner = store.inner.get_mut().expect("lock is not poisoned");
            for record in Self::read(path)? {
                inner.put(record);
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        let mut w = BufWriter::new(file);
        if fresh {
            writeln!(w, "{RECORD_LOG_HEADER}").and_then(|_| w.flush()).map_err(io)?;
        }
        store.inner.get_mut().expect("lock is not poisoned").writer = Some((path.to_path_buf(), w));
        Ok(store)
    }

    /// Every line of the log in order, including superseded versions.
    pub fn read(path: &Path) -> Result<Vec<GenerationRecord>, RecordError> {
        let file = File::open(path).map_err(|e| RecordError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut lines = BufReader::new(file).lines();
        match lines.next() {
            Some(Ok(h)) if h.trim_end() == RECORD_LOG_HEADER => {}
            _ => return Err(RecordError::Header { path: path.to_path_buf() }),
        }
        let mut out = Vec::new();
        for (i, line) in lines.enumerate() {
            let corrupt = |message: String| RecordError::Corrupt {
                path: path.to_path_buf(),
                line: i + 2,
                message,
            };
            let line = line.map_err(|e| corrupt(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?);
        }
        Ok(out)
    }

    /// Assigns the next id, persists and returns the record.
    pub fn insert(&self, mut record: GenerationRecord) -> Result<GenerationRecord, RecordError> {
        let mut inner = self.inner.lock().expect("record lock");
        record.id = format_id(inner.records.len() + 1);
        inner.append(&record)?;
        inner.put(record.clone());
        Ok(record)
    }

    /// Persists a new version of an existing record.
    pub fn update(&self, record: GenerationRecord) -> Result<(), RecordError> {
        let mut inner = self.inner.lock().expect("record lock");
        if !inner.index.contains_key(&record.id) {
            return Err(RecordError::Unknown(record.id));
        }
        inner.append(&record)?;
        inner.put(record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<GenerationRecord> {
        let inner = self.inner.lock().expect("record lock");
        inner.index.get(id).map(|&i| inner.records[i].clone())
    }

    pub fn all(&self) -> Vec<GenerationRecord> {
        self.inner.lock().expect("record lock").records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("record lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smallest and largest raw aesthetics score over all scored records.
    pub fn aesthetics_range(&self) -> Option<(f64, f64)> {
        let inner = self.inner.lock().expect("record lock");
        inner
            .records
            .iter()
            .filter_map(|r| r.scores.as_ref())
            .flat_map(|s| [s.aes_u, s.aes_o])
            .fold(None, |acc, x| match acc {
                None => Some((x, x)),
                Some((lo, hi)) => Some((f64::min(lo, x), f64::max(hi, x))),
            })
    }
}

/// Min-max normalization into `[0, 1]`; a degenerate range maps to 0.5.
pub fn min_max(x: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(prompt: &str) -> GenerationRecord {
        GenerationRecord {
            id: String::new(),
            timestamp: 1,
            original_prompt: prompt.into(),
            prefix: prompt.into(),
            optimized_prompt: format!("{prompt}, anime"),
            selections: ClauseSelection::auto(4),
            seed: 4,
            decode_params: DecodeParams::default(),
            highlights: vec![],
            clause_status: vec![],
            satisfied: true,
            images: None,
            scores: None,
        }
    }

    #[test]
    fn ids_are_sequential_and_the_log_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let store = RecordStore::open(&path).unwrap();
        let a = store.insert(draft("a cat")).unwrap();
        let b = store.insert(draft("a dog")).unwrap();
        assert_eq!((a.id.as_str(), b.id.as_str()), ("rec-000001", "rec-000002"));
        let mut scored = b.clone();
        scored.scores = Some(Scores { pick_u: 0.2, pick_o: 0.3, aes_u: 5.0, aes_o: 6.0, preference_pct: 52.5 });
        store.update(scored.clone()).unwrap();
        drop(store);

        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some(RECORD_LOG_HEADER));
        assert_eq!(text.lines().count(), 4);
        let reopened = RecordStore::open(&path).unwrap();
        assert_eq!(reopened.all(), vec![a, scored]);
        assert_eq!(reopened.insert(draft("x")).unwrap().id, "rec-000003");
        assert_eq!(reopened.aesthetics_range(), Some((5.0, 6.0)));
    }

    #[test]
    fn foreign_files_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "{}\n").unwrap();
        assert!(matches!(RecordStore::open(&path), Err(RecordError::Header { .. })));
        std::fs::write(&path, format!("{RECORD_LOG_HEADER}\nnot json\n")).unwrap();
        assert!(matches!(RecordStore::open(&path), Err(RecordError::Corrupt { line: 2, .. })));
    }

    #[test]
    fn updating_an_unknown_record_fails() {
        let store = RecordStore::in_memory();
        let mut r = draft("a");
        r.id = "rec-000009".into();
        assert!(matches!(store.update(r), Err(RecordError::Unknown(_))));
    }

    #[test]
    fn min_max_handles_a_flat_range() {
        assert_eq!(min_max(3.0, (2.0, 4.0)), 0.5);
        assert_eq!(min_max(4.0, (2.0, 4.0)), 1.0);
        assert_eq!(min_max(7.0, (7.0, 7.0)), 0.5);
    }
}
