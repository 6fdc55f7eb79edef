//! Admitted inputs and deduplicated crashes, optionally mirrored to disk.
//!
//! On-disk layout under the output directory:
//!
//! ```text
//! queue/000000        raw input bytes
//! queue/000000.json   sidecar metadata
//! crashes/000000      first input of each crash bin
//! crashes/000000.json
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::EngineError;
use crate::coverage::BranchKey;
use crate::harness::{CrashClass, RunResult, Verdict};
use crate::input::{InputId, Origin};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InputMeta {
    pub id: InputId,
    pub parent: Option<InputId>,
    pub origin: Origin,
    pub len: usize,
    /// Fast executions done when the input was stored.
    pub found_at_exec: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredInput {
    pub meta: InputMeta,
    pub bytes: Vec<u8>,
}

/// Crash bin identity: where it crashed and how.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CrashKey {
    pub at: Option<BranchKey>,
    pub class: CrashClass,
}

/// Bin key of a crashing run; `None` if the run did not crash.
pub fn dedup_crash(result: &RunResult) -> Option<CrashKey> {
    match &result.verdict {
        Verdict::Crash { at, class, .. } => Some(CrashKey {
            at: *at,
            class: class.clone(),
        }),
        Verdict::Ok => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CrashBin {
    pub id: u64,
    pub key: CrashKey,
    pub detail: String,
    pub parent: Option<InputId>,
    pub found_at_exec: u64,
    #[serde(skip)]
    pub bytes: Vec<u8>,
    /// Crashing runs that fell in this bin.
    #[serde(skip)]
    pub hits: u64,
}

#[derive(Debug, Default)]
pub struct Corpus {
    inputs: Vec<StoredInput>,
    crashes: Vec<CrashBin>,
    bins: HashMap<CrashKey, usize>,
    dir: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_pair(dir: &Path, id: u64, bytes: &[u8], meta: &impl Serialize) -> Result<(), EngineError> {
    let raw = dir.join(format!("{id:06}"));
    fs::write(&raw, bytes).map_err(io_err(&raw))?;
    let side = dir.join(format!("{id:06}.json"));
    let mut json = serde_json::to_vec_pretty(meta).expect("metadata serializes");
    json.push(b'\n');
    fs::write(&side, json).map_err(io_err(&side))
}

impl Corpus {
    /// In-memory corpus.
    pub fn new() -> Self {
        Self::default()
    }

    /// Corpus mirrored under `dir`, which must not already hold a corpus.
    pub fn on_disk(dir: &Path) -> Result<Self, EngineError> {
        for sub in ["queue", "crashes"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
            let occupied = fs::read_dir(&p).map_err(io_err(&p))?.next().is_some();
            if occupied {
                return Err(EngineError::OutputNotEmpty(p));
            }
        }
        Ok(Corpus {
            dir: Some(dir.to_path_buf()),
            ..Self::default()
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn get(&self, id: InputId) -> Option<&StoredInput> {
        self.inputs.get(id as usize)
    }

    pub fn inputs(&self) -> &[StoredInput] {
        &self.inputs
    }

    pub fn crashes(&self) -> &[CrashBin] {
        &self.crashes
    }

    pub fn add_input(&mut self, bytes: Vec<u8>, parent: Option<InputId>, origin: Origin, found_at_exec: u64) -> Result<InputId, EngineError> {
        let id = self.inputs.len() as InputId;
        let meta = InputMeta {
            id,
            parent,
            origin,
            len: bytes.len(),
            found_at_exec,
        };
        if let Some(dir) = &self.dir {
            write_pair(&dir.join("queue"), id, &bytes, &meta)?;
        }
        self.inputs.push(StoredInput { meta, bytes });
        Ok(id)
    }

    /// Files a crash; returns true if it opened a new bin.
    pub fn record_crash(&mut self, key: CrashKey, detail: &str, bytes: &[u8], parent: Option<InputId>, found_at_exec: u64) -> Result<bool, EngineError> {
        if let Some(&i) = self.bins.get(&key) {
            self.crashes[i].hits += 1;
            return Ok(false);
        }
        let bin = CrashBin {
            id: self.crashes.len() as u64,
            key: key.clone(),
            detail: detail.to_string(),
            parent,
            found_at_exec,
            bytes: bytes.to_vec(),
            hits: 1,
        };
        if let Some(dir) = &self.dir {
            write_pair(&dir.join("crashes"), bin.id, bytes, &bin)?;
        }
        self.bins.insert(key, self.crashes.len());
        self.crashes.push(bin);
        Ok(true)
    }
}
