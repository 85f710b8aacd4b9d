use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbeddingVector;
use crate::error::{Error, Result};

/// Hex SHA-256 of `model + "\n" + text`.
pub fn cache_key(model: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    hasher.update(b"\n");
    hasher.update(text.as_bytes());
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheRecord {
    key: String,
    model: String,
    dims: usize,
    vector: Vec<f64>,
}

/// Embedding cache keyed by model and text. Reads are concurrent; writes go
/// through the lock one at a time.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    records: RwLock<HashMap<String, CacheRecord>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a cache file; a missing file yields an empty cache.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cache = Self::new();
        let file = match fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(cache),
            Err(e) => return Err(Error::io(path, e)),
        };
        {
            let mut records = cache.records.write().unwrap_or_else(|p| p.into_inner());
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                if record.vector.len() != record.dims {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        message: format!("dims {} but {} values", record.dims, record.vector.len()),
                    });
                }
                records.insert(record.key.clone(), record);
            }
        }
        Ok(cache)
    }

    /// Writes every record, sorted by key so the file is reproducible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let records = self.records.read().unwrap_or_else(|p| p.into_inner());
        let mut sorted: Vec<&CacheRecord> = records.values().collect();
        sorted.sort_by(|a, b| a.key.cmp(&b.key));
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for record in sorted {
            let line = serde_json::to_string(record).map_err(|e| Error::Protocol(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, model: &str, text: &str) -> Option<EmbeddingVector> {
        let key = cache_key(model, text);
        let records = self.records.read().unwrap_or_else(|p| p.into_inner());
        records
            .get(&key)
            .filter(|r| r.model == model)
            .and_then(|r| EmbeddingVector::new(r.vector.clone()).ok())
    }

    pub fn insert(&self, model: &str, text: &str, vector: &EmbeddingVector) {
        let record = CacheRecord {
            key: cache_key(model, text),
            model: model.to_string(),
            dims: vector.dims(),
            vector: vector.values().to_vec(),
        };
        self.records
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(record.key.clone(), record);
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
