//! Line-oriented dataset serialization with a gzip variant.
//!
//! Format (version tag on line 1, one entry per line):
//!
//! ```text
//! hamlearn-dataset v1 n=2
//! p=HI t=0.2 m=IY y=01
//! ```
//!
//! Preparation and measurement specs are one character per qubit from the
//! named-gate alphabet (I, X, H, S, D = S†, P = S·H, Y = H·S†), or an
//! explicit 2×2 complex matrix `c[re,im,re,im,re,im,re,im]` in column-major
//! order. Times use the shortest decimal representation that round-trips
//! the underlying binary value exactly. Files ending in `.gz` are
//! transparently compressed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use nalgebra::Matrix2;
use num_complex::Complex64;

use crate::query::{DatasetEntry, Query};
use crate::unitary::{Gate, LocalUnitary};
use crate::CoreError;

const VERSION_TAG: &str = "hamlearn-dataset v1";

fn gate_char(g: &Gate) -> Option<char> {
    match g {
        Gate::I => Some('I'),
        Gate::X => Some('X'),
        Gate::H => Some('H'),
        Gate::S => Some('S'),
        Gate::Sdg => Some('D'),
        Gate::Sh => Some('P'),
        Gate::Hsdg => Some('Y'),
        Gate::Custom(_) => None,
    }
}

fn write_unitary(u: &LocalUnitary, out: &mut String) {
    for g in u.factors() {
        match gate_char(g) {
            Some(c) => out.push(c),
            None => {
                let m = g.matrix();
                out.push_str("c[");
                for (i, e) in m.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&format!("{},{}", e.re, e.im));
                }
                out.push(']');
            }
        }
    }
}

fn parse_unitary(s: &str, line: usize) -> Result<LocalUnitary, CoreError> {
    let mut gates = Vec::new();
    let mut chars = s.char_indices().peekable();
    while let Some((idx, c)) = chars.next() {
        let gate = match c {
            'I' => Gate::I,
            'X' => Gate::X,
            'H' => Gate::H,
            'S' => Gate::S,
            'D' => Gate::Sdg,
            'P' => Gate::Sh,
            'Y' => Gate::Hsdg,
            'c' => {
                let rest = &s[idx + 1..];
                if !rest.starts_with('[') {
                    return Err(CoreError::Parse {
                        line,
                        reason: "custom gate must be written c[..]".into(),
                    });
                }
                let close = rest.find(']').ok_or_else(|| CoreError::Parse {
                    line,
                    reason: "unterminated custom gate".into(),
                })?;
                let body = &rest[1..close];
                let vals: Vec<f64> = body
                    .split(',')
                    .map(|v| {
                        v.parse::<f64>().map_err(|_| CoreError::Parse {
                            line,
                            reason: format!("bad float '{v}' in custom gate"),
                        })
                    })
                    .collect::<Result<_, _>>()?;
                if vals.len() != 8 {
                    return Err(CoreError::Parse {
                        line,
                        reason: format!("custom gate needs 8 floats, got {}", vals.len()),
                    });
                }
                // Element order matches write_unitary: both sides use the
                // matrix's native (column-major) iteration order.
                let mut m = Matrix2::from_element(Complex64::new(0.0, 0.0));
                for (k, e) in m.iter_mut().enumerate() {
                    *e = Complex64::new(vals[2 * k], vals[2 * k + 1]);
                }
                // Skip consumed characters: '[' + body + ']'.
                let consumed = close + 1;
                for _ in 0..consumed {
                    chars.next();
                }
                gates.push(Gate::Custom(m));
                continue;
            }
            other => {
                return Err(CoreError::Parse {
                    line,
                    reason: format!("unknown gate character '{other}'"),
                })
            }
        };
        gates.push(gate);
    }
    if gates.is_empty() {
        return Err(CoreError::Parse {
            line,
            reason: "empty unitary spec".into(),
        });
    }
    LocalUnitary::new(gates)
}

/// Serializes entries to any writer.
pub fn write_dataset_to<W: Write>(entries: &[DatasetEntry], mut w: W) -> Result<(), CoreError> {
    let n = entries.first().map_or(0, |e| e.query.prep.num_qubits());
    writeln!(w, "{VERSION_TAG} n={n}")?;
    let mut line = String::new();
    for e in entries {
        line.clear();
        line.push_str("p=");
        write_unitary(&e.query.prep, &mut line);
        line.push_str(&format!(" t={}", e.query.t));
        line.push_str(" m=");
        write_unitary(&e.query.meas, &mut line);
        line.push_str(&format!(" y={}", e.outcome_bits()));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Parses entries from any reader.
pub fn read_dataset_from<R: BufRead>(r: R) -> Result<Vec<DatasetEntry>, CoreError> {
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => {
            return Err(CoreError::VersionMismatch {
                expected: VERSION_TAG.to_string(),
                found: "<empty file>".to_string(),
            })
        }
    };
    if !header.starts_with(VERSION_TAG) {
        return Err(CoreError::VersionMismatch {
            expected: VERSION_TAG.to_string(),
            found: header.chars().take(40).collect(),
        });
    }
    let mut entries = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2; // 1-based, after the header
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut prep = None;
        let mut t = None;
        let mut meas = None;
        let mut outcome = None;
        for field in line.split_whitespace() {
            if let Some(v) = field.strip_prefix("p=") {
                prep = Some(parse_unitary(v, line_no)?);
            } else if let Some(v) = field.strip_prefix("t=") {
                t = Some(v.parse::<f64>().map_err(|_| CoreError::Parse {
                    line: line_no,
                    reason: format!("bad time '{v}'"),
                })?);
            } else if let Some(v) = field.strip_prefix("m=") {
                meas = Some(parse_unitary(v, line_no)?);
            } else if let Some(v) = field.strip_prefix("y=") {
                let mut idx = 0usize;
                for c in v.chars() {
                    idx = (idx << 1)
                        | match c {
                            '0' => 0,
                            '1' => 1,
                            other => {
                                return Err(CoreError::Parse {
                                    line: line_no,
                                    reason: format!("bad outcome bit '{other}'"),
                                })
                            }
                        };
                }
                outcome = Some((idx, v.len()));
            } else {
                return Err(CoreError::Parse {
                    line: line_no,
                    reason: format!("unknown field '{field}'"),
                });
            }
        }
        let (Some(prep), Some(t), Some(meas), Some((outcome, bits))) = (prep, t, meas, outcome)
        else {
            return Err(CoreError::Parse {
                line: line_no,
                reason: "missing one of p=, t=, m=, y=".into(),
            });
        };
        if bits != prep.num_qubits() {
            return Err(CoreError::Parse {
                line: line_no,
                reason: format!(
                    "outcome has {bits} bits but preparation acts on {} qubits",
                    prep.num_qubits()
                ),
            });
        }
        entries.push(DatasetEntry::new(Query { prep, t, meas }, outcome).map_err(|e| {
            CoreError::Parse {
                line: line_no,
                reason: e.to_string(),
            }
        })?);
    }
    Ok(entries)
}

/// Writes a dataset file; `.gz` extension selects gzip compression.
pub fn write_dataset(entries: &[DatasetEntry], path: &Path) -> Result<(), CoreError> {
    let file = File::create(path)?;
    if is_gz(path) {
        let enc = GzEncoder::new(BufWriter::new(file), flate2::Compression::default());
        let mut enc = enc;
        write_dataset_to(entries, &mut enc)?;
        enc.finish()?;
        Ok(())
    } else {
        write_dataset_to(entries, BufWriter::new(file))
    }
}

/// Reads a dataset file; `.gz` extension selects gzip decompression.
pub fn read_dataset(path: &Path) -> Result<Vec<DatasetEntry>, CoreError> {
    let file = File::open(path)?;
    if is_gz(path) {
        read_dataset_from(BufReader::new(GzDecoder::new(file)))
    } else {
        read_dataset_from(BufReader::new(file))
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Reads a dataset from a byte buffer (used by tests and the CLI).
pub fn read_dataset_bytes(bytes: &[u8]) -> Result<Vec<DatasetEntry>, CoreError> {
    read_dataset_from(BufReader::new(bytes as &[u8]))
}
