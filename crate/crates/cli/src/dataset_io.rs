//! Dataset and manifest files.
//!
//! Datasets are plain CSV — `prep,t,meas,outcome` — with product gates
//! spelled as dot-joined factor names (`H.Sh`), times in shortest
//! round-trip float notation, and outcomes as basis indices. The manifest
//! records everything needed to regenerate or audit the file.

use std::path::Path;

use hamlearn_core::{DatasetEntry, Gate, LocalUnitary, Query};
use serde::{Deserialize, Serialize};

use crate::csvio::fmt_f64;
use crate::CliError;

fn gate_token(g: &Gate) -> Result<&'static str, CliError> {
    Ok(match g {
        Gate::I => "I",
        Gate::X => "X",
        Gate::H => "H",
        Gate::S => "S",
        Gate::Sdg => "Sdg",
        Gate::Sh => "Sh",
        Gate::Hsdg => "Hsdg",
        Gate::Custom(_) => {
            return Err(CliError::Usage(
                "datasets with custom (non-named) gates cannot be serialized".into(),
            ))
        }
    })
}

fn gate_from_token(tok: &str) -> Result<Gate, CliError> {
    Ok(match tok {
        "I" => Gate::I,
        "X" => Gate::X,
        "H" => Gate::H,
        "S" => Gate::S,
        "Sdg" => Gate::Sdg,
        "Sh" => Gate::Sh,
        "Hsdg" => Gate::Hsdg,
        other => {
            return Err(CliError::Usage(format!(
                "unknown gate token {other:?}; accepted: I, X, H, S, Sdg, Sh, Hsdg"
            )))
        }
    })
}

pub fn unitary_token(u: &LocalUnitary) -> Result<String, CliError> {
    let toks: Result<Vec<&str>, CliError> = u.factors().iter().map(gate_token).collect();
    Ok(toks?.join("."))
}

pub fn unitary_from_token(tok: &str) -> Result<LocalUnitary, CliError> {
    let gates: Result<Vec<Gate>, CliError> = tok.split('.').map(gate_from_token).collect();
    Ok(LocalUnitary::new(gates?)?)
}

/// Serializes a dataset to CSV text (deterministic for named-gate
/// datasets).
pub fn dataset_to_csv(entries: &[DatasetEntry]) -> Result<String, CliError> {
    let mut out = String::from("prep,t,meas,outcome\n");
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            unitary_token(&e.query.prep)?,
            fmt_f64(e.query.t),
            unitary_token(&e.query.meas)?,
            e.outcome
        ));
    }
    Ok(out)
}

pub fn dataset_from_csv(text: &str) -> Result<Vec<DatasetEntry>, CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some("prep,t,meas,outcome") => {}
        other => {
            return Err(CliError::Usage(format!(
                "dataset CSV must start with the header `prep,t,meas,outcome`, got {other:?}"
            )))
        }
    }
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(CliError::Usage(format!(
                "dataset CSV line {}: expected 4 columns, got {}",
                i + 2,
                cols.len()
            )));
        }
        let prep = unitary_from_token(cols[0])?;
        let t: f64 = cols[1].parse().map_err(|e| {
            CliError::Usage(format!("dataset CSV line {}: bad time: {e}", i + 2))
        })?;
        let meas = unitary_from_token(cols[2])?;
        let outcome: usize = cols[3].parse().map_err(|e| {
            CliError::Usage(format!("dataset CSV line {}: bad outcome: {e}", i + 2))
        })?;
        entries.push(DatasetEntry::new(Query { prep, t, meas }, outcome)?);
    }
    Ok(entries)
}

pub fn write_dataset(path: &Path, entries: &[DatasetEntry]) -> Result<(), CliError> {
    let text = dataset_to_csv(entries)?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetEntry>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    dataset_from_csv(&text)
}

/// Generation provenance stored next to a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub truth: Vec<f64>,
    pub num_settings: usize,
    pub num_times: usize,
    pub shots_per_cell: usize,
    pub entries: usize,
    pub noisy: bool,
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<(), CliError> {
    let text = toml::to_string_pretty(m)
        .map_err(|e| CliError::Usage(format!("manifest serialize error: {e}")))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
