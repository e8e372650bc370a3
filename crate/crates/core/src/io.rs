//! Newline-delimited JSON readers/writers, checksums, and atomic file writes.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reads one JSON record per line, skipping blank lines.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = BufWriter::new(&mut buf);
        for rec in records {
            serde_json::to_writer(&mut w, rec).map_err(|e| Error::Schema(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    write_atomic(path, &buf)
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

/// Writes via a temp file in the same directory, then renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Normalized tweet text keyed by tweet id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizedRecord {
    pub id: String,
    pub text: String,
    pub month: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<crate::preprocess::Category>,
}

/// Per-tweet category indices for the three tasks; used both for predictions
/// and for gold labels on the test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub tweet_id: String,
    pub aggression: usize,
    pub target: usize,
    #[serde(rename = "type")]
    pub speech_type: usize,
}

impl PredictionRecord {
    pub fn as_array(&self) -> [usize; 3] {
        [self.aggression, self.target, self.speech_type]
    }
}

/// True labels emitted by the synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub tweet_id: String,
    pub aggression: usize,
    pub target: usize,
    #[serde(rename = "type")]
    pub speech_type: usize,
}
