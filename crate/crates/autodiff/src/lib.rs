//! Automatic differentiation and neural-network substrate.
//!
//! The centerpiece is a tensor-level tape ([`tape::Tape`]) that records
//! matrix-valued operations. Every node carries a value and, optionally, a
//! forward-mode tangent — the directional derivative with respect to the
//! raw time input. The reverse pass propagates *paired* adjoints (one for
//! the value, one for the tangent), which makes quantities built from
//! [`tape::Tape::tangent_of`] — like a Schrödinger-equation residual
//! containing ∂Ψ/∂t — exactly differentiable with respect to every weight:
//! forward-over-reverse without a second tape.
//!
//! On top of the tape sit a plain MLP ([`mlp::Mlp`]), the Adam optimizer
//! ([`adam::AdamState`]), a flat parameter store shared by networks and
//! physical parameters ([`tape::ParamStore`]), and a versioned binary
//! checkpoint format ([`checkpoint`]).

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod tape;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use mlp::{amplitude_input_tangent, amplitude_inputs, Mlp, MlpSpec};
pub use tape::{BlockInfo, NodeId, ParamStore, Tape};

use thiserror::Error;

/// Errors from the autodiff substrate.
#[derive(Debug, Error)]
pub enum AdError {
    #[error("loss node must be a 1×1 scalar, got {rows}×{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite gradient at parameter index {index}; step skipped")]
    NonFiniteGradient { index: usize },
    #[error("input width mismatch: network expects {expected}, got {got}")]
    InputWidth { expected: usize, got: usize },
    #[error("node has no tangent to extract")]
    MissingTangent,
    #[error("checkpoint I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint corrupt: {reason}")]
    CorruptCheckpoint { reason: String },
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { expected: u32, found: u32 },
}
