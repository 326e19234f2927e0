//! Line-delimited JSON readers and writers with line-accurate schema errors.
//!
//! Every batch artifact in this crate (samples, trajectories, reward reports,
//! group reports) is one JSON record per line. Readers validate strictly and
//! report the 1-based line number of the first offending record so that
//! million-line files can be debugged without a binary search.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

/// Failure while reading or writing a line-delimited JSON stream.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Validation hook applied to each decoded record.
///
/// Returning `Err(message)` aborts the read with a [`DataError::Schema`]
/// naming the offending line; the message should name the field at fault.
pub trait Validate {
    fn validate(&self) -> Result<(), String>;
}

/// Read every record of a JSONL stream, validating each line.
pub fn read_records<T, R>(reader: R) -> Result<Vec<T>, DataError>
where
    T: DeserializeOwned + Validate,
    R: BufRead,
{
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| DataError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        record.validate().map_err(|message| DataError::Schema {
            line: line_no,
            message,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Read a JSONL file from disk. See [`read_records`].
pub fn read_file<T>(path: &Path) -> Result<Vec<T>, DataError>
where
    T: DeserializeOwned + Validate,
{
    let file = File::open(path)?;
    read_records(BufReader::new(file))
}

/// Write records as one JSON object per line, in input order.
pub fn write_records<T, W>(writer: W, records: &[T]) -> Result<(), DataError>
where
    T: Serialize,
    W: Write,
{
    let mut w = BufWriter::new(writer);
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| DataError::Schema {
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Write a JSONL file to disk. See [`write_records`].
pub fn write_file<T>(path: &Path, records: &[T]) -> Result<(), DataError>
where
    T: Serialize,
{
    let file = File::create(path)?;
    write_records(file, records)
}
