//! The two Hamiltonian-learning algorithms and the experiment drivers
//! built on them.
//!
//! * [`ipinn`] — the physics-informed learner: one neural quantum state
//!   per initial condition, trained jointly with the Hamiltonian (and
//!   optionally noise) parameters under a three-part loss — measurement
//!   data, Schrödinger-equation residual at sampled collocation times,
//!   and the initial-condition anchor.
//! * [`dnn`] — the tomography-style baseline: per-time-point state
//!   reconstruction by maximum likelihood, followed by a fit of the
//!   Hamiltonian parameters to the reconstructed states.
//! * [`scenarios`] — model builders for spin chains with translation
//!   tying, cross-resonance gate calibration, crosstalk identification,
//!   and parameter drift.
//! * [`studies`] — the experiment drivers: query-count scaling with
//!   power-law fits, time-grid (Δt) tables, constraint-point sweeps,
//!   drift compensation, and CR calibration in distribution-level and
//!   sampled modes.

pub mod dnn;
pub mod frechet;
pub mod ipinn;
pub mod losses;
pub mod metrics;
pub mod nnqs;
pub mod scenarios;
pub mod studies;

pub use dnn::{
    dnn_data_loss, dnn_fit_theta, dnn_reconstruct, dnn_train, DnnConfig, ReconRecord,
};
pub use frechet::ThetaFitContext;
pub use ipinn::{
    ipinn_probe_select, ipinn_train, DataLossForm, EpochRow, EstimationResult, IpinnTrainer,
    LrSchedule, NoiseFit, TrainConfig,
};
pub use metrics::mse;
pub use nnqs::NnqsEnsemble;
pub use scenarios::{
    build_cr_gate, build_crosstalk, build_drift, build_spin_chain, cr_c_from_theta,
    cr_theta_from_c, CrGateSpec, CrosstalkSpec, DriftSpec, SpinChainSpec,
};
pub use studies::{
    fit_power_law, phase_settings, run_constraint_point_study, run_cr_calibration,
    run_cr_calibration_noisy, run_drift_experiment, run_dt_study, run_scaling_experiment,
    saturation_point, shots_for, standard_settings, CrCalibration, DriftTrace, DtStudy, Learner,
    PConstraintStudy, PowerLawFit, ScalingRun, ScenarioRun,
};

use hamlearn_autodiff::AdError;
use hamlearn_core::CoreError;
use thiserror::Error;

/// Errors from learners and experiment drivers.
#[derive(Debug, Error)]
pub enum LearnError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no ensemble member matches the preparation of a dataset entry")]
    UnknownPreparation,
    #[error("non-finite {component} loss at epoch {epoch}")]
    NonFiniteLoss { component: &'static str, epoch: usize },
    #[error("state reconstruction degenerated to zero amplitudes (after retry) for group at t={t}")]
    DegenerateReconstruction { t: f64 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
}
