//! CSV primitives shared by every artifact: shortest round-trip float
//! formatting (so written numbers parse back bit-identically) and
//! header-checked append/read helpers for resumable tables.

use std::io::Write;
use std::path::Path;

use crate::CliError;

/// Shortest representation that parses back to the identical f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Creates (or truncates) a CSV with the given header and rows.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Appends rows, writing the header first when the file does not exist.
pub fn append_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), CliError> {
    let exists = path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut text = String::new();
    if !exists {
        text.push_str(header);
        text.push('\n');
    }
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    f.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a CSV's data rows, verifying the header.
pub fn read_csv(path: &Path, header: &str) -> Result<Vec<Vec<String>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header => {}
        other => {
            return Err(CliError::Usage(format!(
                "{}: expected header {header:?}, got {other:?}",
                path.display()
            )))
        }
    }
    Ok(lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}
