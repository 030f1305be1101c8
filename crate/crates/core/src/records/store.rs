use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autoscheduler::{shapes_hash, TuningRecord};
use crate::loopnest::KernelClassId;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot persist a record without a valid cost (kernel `{0}`)")]
    InvalidCost(String),
    #[error("record origin `{origin}` does not match kernel class `{class}`")]
    OriginMismatch { origin: String, class: String },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Append-only JSONL file of tuning records with in-memory indexes.
#[derive(Debug, Default)]
pub struct RecordStore {
    path: Option<PathBuf>,
    records: Vec<TuningRecord>,
    offsets: Vec<u64>,
    end: u64,
    by_workload: BTreeMap<(KernelClassId, String), Vec<usize>>,
    by_class: BTreeMap<KernelClassId, Vec<usize>>,
    by_source: BTreeMap<String, Vec<usize>>,
}

impl RecordStore {
    pub fn in_memory() -> Self {
        RecordStore::default()
    }

    /// Opens (creating if absent) and indexes the store at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut store = RecordStore {
            path: Some(path.clone()),
            ..Default::default()
        };
        if !path.exists() {
            File::create(&path).map_err(io)?;
            return Ok(store);
        }
        let reader = BufReader::new(File::open(&path).map_err(io)?);
        let mut offset = 0u64;
        for (i, line) in reader.split(b'\n').enumerate() {
            let line = line.map_err(io)?;
            let len = line.len() as u64 + 1;
            if !line.iter().all(u8::is_ascii_whitespace) {
                let record: TuningRecord =
                    serde_json::from_slice(&line).map_err(|e| StoreError::Corrupt {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                store.index(record, offset);
            }
            offset += len;
        }
        store.end = offset;
        Ok(store)
    }

    fn index(&mut self, record: TuningRecord, offset: u64) {
        let i = self.records.len();
        self.by_workload
            .entry((record.kernel_class.clone(), shapes_hash(&record.kernel_shapes)))
            .or_default()
            .push(i);
        self.by_class
            .entry(record.kernel_class.clone())
            .or_default()
            .push(i);
        self.by_source
            .entry(record.source_model.clone())
            .or_default()
            .push(i);
        self.records.push(record);
        self.offsets.push(offset);
    }

    /// Appends `record`, returning its byte offset in the file.
    pub fn append(&mut self, record: TuningRecord) -> Result<u64, StoreError> {
        if !record.cost.valid || record.cost.median_ns.is_none() {
            return Err(StoreError::InvalidCost(record.kernel_name));
        }
        if record.schedule.origin != record.kernel_class {
            return Err(StoreError::OriginMismatch {
                origin: record.schedule.origin.to_string(),
                class: record.kernel_class.to_string(),
            });
        }
        let mut line = serde_json::to_string(&record).expect("records serialize");
        line.push('\n');
        let offset = self.end;
        if let Some(path) = &self.path {
            let io = |source| StoreError::Io {
                path: path.display().to_string(),
                source,
            };
            let mut f = OpenOptions::new().append(true).open(path).map_err(io)?;
            f.write_all(line.as_bytes()).map_err(io)?;
            f.flush().map_err(io)?;
        }
        self.end += line.len() as u64;
        self.index(record, offset);
        Ok(offset)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All records in file order.
    pub fn records(&self) -> &[TuningRecord] {
        &self.records
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    fn pick(&self, idx: Option<&Vec<usize>>) -> Vec<&TuningRecord> {
        idx.map_or_else(Vec::new, |v| v.iter().map(|&i| &self.records[i]).collect())
    }

    pub fn by_class(&self, class: &KernelClassId) -> Vec<&TuningRecord> {
        self.pick(self.by_class.get(class))
    }

    pub fn by_source(&self, model: &str) -> Vec<&TuningRecord> {
        self.pick(self.by_source.get(model))
    }

    pub fn by_workload(
        &self,
        class: &KernelClassId,
        shapes: &BTreeMap<crate::loopnest::Role, crate::loopnest::Shape>,
    ) -> Vec<&TuningRecord> {
        self.pick(self.by_workload.get(&(class.clone(), shapes_hash(shapes))))
    }

    pub fn sources(&self) -> Vec<&str> {
        self.by_source.keys().map(String::as_str).collect()
    }

    /// Index snapshot, for checking that re-opening rebuilds it identically.
    pub fn index_snapshot(&self) -> Vec<(String, Vec<u64>)> {
        let mut out = Vec::new();
        for ((class, hash), idx) in &self.by_workload {
            out.push((
                format!("workload:{class}:{hash}"),
                idx.iter().map(|&i| self.offsets[i]).collect(),
            ));
        }
        for (src, idx) in &self.by_source {
            out.push((
                format!("source:{src}"),
                idx.iter().map(|&i| self.offsets[i]).collect(),
            ));
        }
        out
    }
}
