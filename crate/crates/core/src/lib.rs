//! Quantum simulation core for Hamiltonian learning.
//!
//! This crate provides the exact-simulation substrate the learners are
//! trained against: Pauli-string operators applied as signed basis
//! permutations, dense Hamiltonian models with parameter tying, time
//! evolution through Hermitian eigendecomposition, product-unitary state
//! preparation and measurement rotations, classical measurement-noise
//! channels, and the query/dataset layer that turns all of the above into
//! reproducible synthetic experiments.
//!
//! Conventions used throughout:
//!
//! * `ħ = 1`; all Hamiltonian coefficients are angular frequencies.
//! * Qubit 1 is the leftmost tensor factor and the leftmost character of an
//!   outcome bit-string, i.e. the *most significant* bit of a basis index.
//!   In code qubits are indexed `0..n` from the left.
//! * States are pure state vectors; noise acts on outcome distributions,
//!   never on states, so no density matrices appear anywhere.

pub mod dataset;
pub mod hamiltonian;
pub mod noise;
pub mod pauli;
pub mod query;
pub mod rng;
pub mod state;
pub mod unitary;

pub use hamiltonian::{EigenDecomposition, HamiltonianModel};
pub use noise::{DepolarizationForm, DepolarizationModel, ReadoutNoise};
pub use pauli::{Axis, PauliAction, PauliString};
pub use query::{DatasetEntry, GroupedDataset, NoiseConfig, Query, QueryGrid};
pub use state::StateVector;
pub use unitary::{measurement_probs, Gate, GateKey, LocalUnitary};

use thiserror::Error;

/// Errors produced by the simulation core.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("qubit count must be at least 1")]
    EmptySystem,
    #[error("basis index {index} out of range for {n} qubits")]
    BasisIndexOutOfRange { index: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dense form refused: {n} qubits exceeds cap of {cap}")]
    DenseCapExceeded { n: usize, cap: usize },
    #[error("state vector has vanishing norm and cannot be normalized")]
    ZeroNorm,
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },
    #[error("invalid Hamiltonian model: {reason}")]
    InvalidModel { reason: String },
    #[error("matrix factor is not unitary (deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },
    #[error("readout fidelity q={q} outside [0.5, 1]")]
    ReadoutOutOfRange { q: f64 },
    #[error("depolarization weight p_d={p_d} outside [0, 1]")]
    DepolarizationOutOfRange { p_d: f64 },
    #[error("depolarization model requires mu > 0, got {mu}")]
    InvalidTimeConstant { mu: f64 },
    #[error("time {t} precedes experiment start t0={t0}")]
    TimeBeforeStart { t: f64, t0: f64 },
    #[error("query grid is empty")]
    EmptyGrid,
    #[error("shots per query must be at least 1")]
    NoShots,
    #[error("dataset I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unsupported dataset version: expected {expected:?}, found {found:?}")]
    VersionMismatch { expected: String, found: String },
}
