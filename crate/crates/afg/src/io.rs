//! JSON-lines persistence for splits, imported pseudo-answers and logs.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use afg_core::corpus::Example;
use afg_core::pseudo::PseudoRecord;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: {source}")]
    Invariant {
        path: PathBuf,
        line: usize,
        #[source]
        source: afg_core::Error,
    },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True when the file could not be read at all.
    pub fn is_missing(&self) -> bool {
        matches!(self, IoError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

pub fn create_parent(path: &Path) -> Result<(), IoError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e)),
        _ => Ok(()),
    }
}

/// Writes one JSON document per line. Field order follows the struct
/// declarations, so equal values give equal bytes.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    create_parent(path)?;
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| IoError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Parses every non-blank line; the first bad line aborts the whole file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| IoError::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn save_dataset(split: &[Example], path: &Path) -> Result<(), IoError> {
    write_jsonl(path, split)
}

/// Loads a split and checks every record invariant.
pub fn load_dataset(path: &Path) -> Result<Vec<Example>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut split = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| IoError::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        ex.validate().map_err(|source| IoError::Invariant {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        split.push(ex);
    }
    Ok(split)
}

/// Reads `{id, text, prompt_kind}` lines produced by an external model.
pub fn load_pseudo_records(path: &Path) -> Result<Vec<PseudoRecord>, IoError> {
    read_jsonl(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::io(path, e.into()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Schema {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}
