//! Append-only per-stage transcript store and the per-request call cache.
//!
//! Store layout: `<root>/<benchmark>/<stage>.jsonl`, one
//! `{"config_hash", "key", "payload"}` object per line. A key is written at
//! most once per config hash; entries under other hashes are kept but ignored,
//! so changing one stage's settings only invalidates that stage.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use quorum_core::model::Benchmark;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Agents,
    Verbalized,
    Structure,
    Aggregate,
    Embeddings,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Agents,
        Stage::Verbalized,
        Stage::Structure,
        Stage::Aggregate,
        Stage::Embeddings,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Agents => "agents",
            Stage::Verbalized => "verbalized",
            Stage::Structure => "structure",
            Stage::Aggregate => "aggregate",
            Stage::Embeddings => "embeddings",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hit/miss counters shared by the store and the call cache.
#[derive(Debug, Default)]
pub struct Counters {
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Counters {
    pub fn hit(&self) {
        self.hits.fetch_add(1, Ordering::Relaxed);
    }

    pub fn miss(&self) {
        self.misses.fetch_add(1, Ordering::Relaxed);
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

#[derive(Serialize)]
struct EntryOut<'a> {
    config_hash: &'a str,
    key: &'a str,
    payload: &'a RawValue,
}

#[derive(Deserialize)]
struct EntryIn {
    config_hash: String,
    key: String,
    payload: Box<RawValue>,
}

#[derive(Default)]
struct StageFile {
    entries: HashMap<(String, String), String>,
    /// Byte length of the valid prefix; a torn final line past it is cut
    /// before the next append.
    valid_len: u64,
    torn: bool,
}

pub struct TranscriptStore {
    root: PathBuf,
    files: Mutex<HashMap<(Benchmark, Stage), StageFile>>,
    counters: Counters,
}

impl TranscriptStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| PipelineError::io(&root, e))?;
        Ok(TranscriptStore {
            root,
            files: Mutex::new(HashMap::new()),
            counters: Counters::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, benchmark: Benchmark, stage: Stage) -> PathBuf {
        self.root.join(benchmark.as_str()).join(format!("{stage}.jsonl"))
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    fn load(path: &Path) -> Result<StageFile> {
        let mut out = StageFile::default();
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(PipelineError::io(path, e)),
        };
        let mut reader = BufReader::new(file);
        let mut offset = 0u64;
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(|e| PipelineError::io(path, e))?;
            if n == 0 {
                break;
            }
            let complete = line.ends_with('\n');
            let text = line.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() {
                offset += n as u64;
                out.valid_len = offset;
                continue;
            }
            match serde_json::from_str::<EntryIn>(text) {
                Ok(entry) => {
                    out.entries
                        .entry((entry.config_hash, entry.key))
                        .or_insert_with(|| entry.payload.get().to_string());
                }
                Err(e) if !complete => {
                    warn!(path = %path.display(), offset, "ignoring torn final line: {e}");
                    out.torn = true;
                    break;
                }
                Err(e) => {
                    return Err(PipelineError::Corrupt {
                        path: path.to_path_buf(),
                        offset,
                        message: e.to_string(),
                    })
                }
            }
            offset += n as u64;
            out.valid_len = offset;
        }
        Ok(out)
    }

    fn with_file<T>(&self, benchmark: Benchmark, stage: Stage, f: impl FnOnce(&mut StageFile, &Path) -> Result<T>) -> Result<T> {
        let path = self.path(benchmark, stage);
        let mut files = self.files.lock().expect("store lock");
        let file = match files.entry((benchmark, stage)) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(Self::load(&path)?),
        };
        f(file, &path)
    }

    /// Raw payload text, or `None` on a miss.
    pub fn get(&self, benchmark: Benchmark, stage: Stage, config_hash: &str, key: &str) -> Result<Option<String>> {
        let found = self.with_file(benchmark, stage, |file, _| {
            Ok(file.entries.get(&(config_hash.to_string(), key.to_string())).cloned())
        })?;
        if found.is_some() {
            self.counters.hit();
        } else {
            self.counters.miss();
        }
        Ok(found)
    }

    /// Appends one entry. Returns `false` without writing when the key is
    /// already stored under this config hash.
    pub fn put(&self, benchmark: Benchmark, stage: Stage, config_hash: &str, key: &str, payload: &str) -> Result<bool> {
        let raw = RawValue::from_string(payload.to_string())?;
        if payload.contains('\n') {
            return Err(PipelineError::Protocol(format!("store payload for `{key}` spans lines")));
        }
        self.with_file(benchmark, stage, |file, path| {
            let id = (config_hash.to_string(), key.to_string());
            if file.entries.contains_key(&id) {
                return Ok(false);
            }
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
            }
            let mut line = serde_json::to_string(&EntryOut {
                config_hash,
                key,
                payload: &raw,
            })?;
            line.push('\n');
            let mut handle = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| PipelineError::io(path, e))?;
            if file.torn {
                handle.set_len(file.valid_len).map_err(|e| PipelineError::io(path, e))?;
                handle.seek(SeekFrom::End(0)).map_err(|e| PipelineError::io(path, e))?;
                file.torn = false;
            }
            handle.write_all(line.as_bytes()).map_err(|e| PipelineError::io(path, e))?;
            file.valid_len += line.len() as u64;
            file.entries.insert(id, payload.to_string());
            Ok(true)
        })
    }

    pub fn get_as<T: DeserializeOwned>(&self, benchmark: Benchmark, stage: Stage, config_hash: &str, key: &str) -> Result<Option<T>> {
        match self.get(benchmark, stage, config_hash, key)? {
            Some(text) => Ok(Some(serde_json::from_str(&text)?)),
            None => Ok(None),
        }
    }

    pub fn put_as<T: Serialize>(&self, benchmark: Benchmark, stage: Stage, config_hash: &str, key: &str, payload: &T) -> Result<bool> {
        self.put(benchmark, stage, config_hash, key, &serde_json::to_string(payload)?)
    }
}

/// Content hash of a fully specified request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// SHA-256 over the compact JSON encoding of `payload`. Struct fields
/// serialize in declaration order, so equal payloads give equal keys in
/// every process.
pub fn cache_key<T: Serialize>(payload: &T) -> CacheKey {
    let bytes = serde_json::to_vec(payload).expect("cache payload serializes");
    CacheKey(hex::encode(Sha256::digest(&bytes)))
}

/// One file per request: `<root>/<namespace>/<key[..2]>/<key>.json`.
pub struct CallCache {
    root: PathBuf,
    counters: Counters,
}

impl CallCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| PipelineError::io(&root, e))?;
        Ok(CallCache {
            root,
            counters: Counters::default(),
        })
    }

    fn path(&self, namespace: &str, key: &CacheKey) -> PathBuf {
        self.root.join(namespace).join(&key.0[..2]).join(format!("{}.json", key.0))
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn get(&self, namespace: &str, key: &CacheKey) -> Result<Option<String>> {
        let path = self.path(namespace, key);
        match fs::read_to_string(&path) {
            Ok(text) => {
                self.counters.hit();
                Ok(Some(text))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.counters.miss();
                Ok(None)
            }
            Err(e) => Err(PipelineError::io(path, e)),
        }
    }

    /// Writes through a temp file and rename so readers never see a partial entry.
    pub fn put(&self, namespace: &str, key: &CacheKey, body: &str) -> Result<()> {
        let path = self.path(namespace, key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let tmp = dir.join(format!(".{}.{}.tmp", key.0, std::process::id()));
        fs::write(&tmp, body).map_err(|e| PipelineError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| PipelineError::io(&path, e))
    }
}
