//! Line-delimited JSON file helpers.
//!
//! All pipeline artifacts are JSONL: one JSON object per line, written in a
//! canonical order so identical inputs produce byte-identical files. Readers
//! report 1-based line numbers so malformed records can be located.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

/// One skipped or suspect input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordIssue {
    pub path: String,
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

/// Writes records to `path`, one JSON object per line.
pub struct JsonlWriter {
    path: String,
    inner: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonlWriter {
            path: path.display().to_string(),
            inner: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.inner, record)
            .map_err(|e| Error::record(&self.path, 0, e.to_string()))?;
        self.inner
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads every record from a JSONL file, failing on the first malformed line.
pub fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for_each_line(path, |line_no, line| {
        let record = serde_json::from_str(line)
            .map_err(|e| Error::record(path, line_no, e.to_string()))?;
        out.push(record);
        Ok(())
    })?;
    Ok(out)
}

/// Reads records from a JSONL file, collecting malformed lines as issues
/// instead of failing. Blank lines are skipped silently.
pub fn read_lenient<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Vec<RecordIssue>)> {
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for_each_line(path, |line_no, line| {
        match serde_json::from_str(line) {
            Ok(record) => out.push(record),
            Err(e) => issues.push(RecordIssue {
                path: path.display().to_string(),
                line: line_no,
                message: e.to_string(),
            }),
        }
        Ok(())
    })?;
    Ok((out, issues))
}

/// Calls `f` with (1-based line number, trimmed line) for every non-blank
/// line of the file.
pub fn for_each_line(
    path: &Path,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        f(idx + 1, trimmed)?;
    }
    Ok(())
}

/// Writes all records to `path` and flushes.
pub fn write_all<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = JsonlWriter::create(path)?;
    for record in records {
        writer.write(&record)?;
    }
    writer.finish()
}
