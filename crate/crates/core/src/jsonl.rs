use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl JsonlError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        JsonlError::Io { path: path.to_path_buf(), source }
    }
}

/// Reads non-blank lines as JSON values.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|source| JsonlError::Parse {
                path: path.to_path_buf(),
                line,
                source,
            })
        })
        .collect()
}

/// Non-blank lines with their 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, JsonlError> {
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| JsonlError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn write<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| JsonlError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| JsonlError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| JsonlError::io(path, e))?;
    }
    w.flush().map_err(|e| JsonlError::io(path, e))
}

/// Writes a text file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), JsonlError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| JsonlError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| JsonlError::io(path, e))
}
