//! Line-delimited JSON I/O with line-numbered errors and atomic writes.

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
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl JsonlError {
    pub fn schema(path: &Path, line: usize, message: impl Into<String>) -> Self {
        JsonlError::Schema {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> JsonlError {
    JsonlError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read every line of a JSONL file. Blank lines are skipped; a malformed
/// line reports its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let item: T = serde_json::from_str(&line)
            .map_err(|e| JsonlError::schema(path, line_no, e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

/// Read raw nonblank lines with their 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, JsonlError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if !line.trim().is_empty() {
            out.push((idx + 1, line));
        }
    }
    Ok(out)
}

/// Serialize items one per line, writing to a temp file in the target
/// directory and renaming into place so readers never see a partial file.
pub fn write_jsonl_atomic<T, I>(path: &Path, items: I) -> Result<(), JsonlError>
where
    T: Serialize,
    I: IntoIterator<Item = T>,
{
    let mut lines = Vec::new();
    for item in items {
        let line = serde_json::to_string(&item)
            .map_err(|e| JsonlError::schema(path, 0, e.to_string()))?;
        lines.push(line);
    }
    let contents = if lines.is_empty() {
        String::new()
    } else {
        lines.join("\n") + "\n"
    };
    write_text_atomic(path, &contents)
}

/// Atomically write a text file (temp file + rename).
pub fn write_text_atomic(path: &Path, contents: &str) -> Result<(), JsonlError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    {
        let mut writer = BufWriter::new(tmp.as_file());
        writer
            .write_all(contents.as_bytes())
            .map_err(|e| io_err(path, e))?;
        writer.flush().map_err(|e| io_err(path, e))?;
    }
    tmp.persist(path)
        .map_err(|e| io_err(path, e.error))
        .map(|_| ())
}
