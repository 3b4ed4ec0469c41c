//! Declarative run configuration: one TOML file fully determines a run.
//!
//! Every knob mirrors a library type; [`RunConfig`] round-trips through
//! serialization unchanged, so a saved snapshot re-runs bit-identically.

use std::path::PathBuf;

use hamlearn_learners::{
    build_cr_gate, build_crosstalk, build_drift, build_spin_chain, phase_settings,
    standard_settings, CrGateSpec, CrosstalkSpec, DataLossForm, DnnConfig, DriftSpec, LrSchedule,
    NoiseFit, SpinChainSpec, TrainConfig,
};
use hamlearn_core::{HamiltonianModel, LocalUnitary, NoiseConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Top-level run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Run directory; overridden by --out, falling back to
    /// $HAMLEARN_OUT/<config stem> and then ./runs/<config stem>.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Master seed for dataset generation and training.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for study sweeps.
    #[serde(default = "one")]
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            out_dir: None,
            seed: 0,
            jobs: 1,
        }
    }
}

fn one() -> usize {
    1
}

/// Ground-truth system selector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    /// Periodic ZZ+Z chain with translation period `s`.
    SpinChain {
        n: usize,
        #[serde(default = "one")]
        s: usize,
        j: Vec<f64>,
        omega: Vec<f64>,
    },
    /// Two-qubit cross-resonance gate with measurement noise.
    CrGate {
        c: [f64; 7],
        #[serde(default = "default_q")]
        q: f64,
        #[serde(default = "default_mu")]
        mu: f64,
        #[serde(default)]
        t0: f64,
    },
    /// All-to-all XY (η) and ZZ (ε) crosstalk couplings.
    Crosstalk {
        n: usize,
        eta: Vec<f64>,
        epsilon: Vec<f64>,
    },
    /// Two-qubit drift model (ω₁, ω₂, ε), before and after the change.
    Drift { before: [f64; 3], after: [f64; 3] },
}

fn default_q() -> f64 {
    CrGateSpec::default().q
}
fn default_mu() -> f64 {
    CrGateSpec::default().mu
}

/// A scenario resolved into library objects.
pub struct ResolvedScenario {
    pub model: HamiltonianModel,
    pub truth: Vec<f64>,
    /// Drift scenarios also carry the post-change model.
    pub after: Option<HamiltonianModel>,
    pub noise: Option<NoiseConfig>,
    pub num_qubits: usize,
}

impl ScenarioConfig {
    pub fn resolve(&self) -> Result<ResolvedScenario, CliError> {
        match self {
            ScenarioConfig::SpinChain { n, s, j, omega } => {
                let spec = SpinChainSpec {
                    n: *n,
                    s: *s,
                    j: j.clone(),
                    omega: omega.clone(),
                };
                let model = build_spin_chain(&spec)?;
                Ok(ResolvedScenario {
                    truth: model.theta().to_vec(),
                    num_qubits: *n,
                    model,
                    after: None,
                    noise: None,
                })
            }
            ScenarioConfig::CrGate { c, q, mu, t0 } => {
                let spec = CrGateSpec {
                    c: *c,
                    q: *q,
                    mu: *mu,
                    t0: *t0,
                };
                let model = build_cr_gate(&spec)?;
                let noise = spec.noise()?;
                Ok(ResolvedScenario {
                    truth: model.theta().to_vec(),
                    num_qubits: 2,
                    model,
                    after: None,
                    noise: Some(noise),
                })
            }
            ScenarioConfig::Crosstalk { n, eta, epsilon } => {
                let spec = CrosstalkSpec {
                    n: *n,
                    eta: eta.clone(),
                    epsilon: epsilon.clone(),
                };
                let model = build_crosstalk(&spec)?;
                Ok(ResolvedScenario {
                    truth: model.theta().to_vec(),
                    num_qubits: *n,
                    model,
                    after: None,
                    noise: None,
                })
            }
            ScenarioConfig::Drift { before, after } => {
                let b = DriftSpec {
                    omega1: before[0],
                    omega2: before[1],
                    epsilon: before[2],
                };
                let a = DriftSpec {
                    omega1: after[0],
                    omega2: after[1],
                    epsilon: after[2],
                };
                let model = build_drift(&b)?;
                let post = build_drift(&a)?;
                Ok(ResolvedScenario {
                    truth: model.theta().to_vec(),
                    num_qubits: 2,
                    model,
                    after: Some(post),
                    noise: None,
                })
            }
        }
    }
}

/// Which setting menu a generated dataset uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingsKind {
    Standard,
    Phase,
}

impl SettingsKind {
    pub fn build(&self, n: usize) -> Result<Vec<(LocalUnitary, LocalUnitary)>, CliError> {
        Ok(match self {
            SettingsKind::Standard => standard_settings(n)?,
            SettingsKind::Phase => phase_settings(n)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Generate,
    Load,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_source")]
    pub source: SourceKind,
    #[serde(default = "default_total")]
    pub total_queries: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_settings_kind")]
    pub settings: SettingsKind,
    /// Dataset file: required for `source = "load"`, optional override
    /// of the generated file's location otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Sample through the scenario's noise model (CR gate only).
    #[serde(default)]
    pub noisy: bool,
}

fn default_source() -> SourceKind {
    SourceKind::Generate
}
fn default_total() -> usize {
    10_000
}
fn default_dt() -> f64 {
    0.1
}
fn default_t_max() -> f64 {
    1.0
}
fn default_settings_kind() -> SettingsKind {
    SettingsKind::Standard
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: default_source(),
            total_queries: default_total(),
            dt: default_dt(),
            t_max: default_t_max(),
            settings: default_settings_kind(),
            path: None,
            noisy: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ipinn,
    Dnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    #[serde(default = "default_learner_kind")]
    pub kind: LearnerKind,
    #[serde(default)]
    pub ipinn: IpinnParams,
    #[serde(default)]
    pub dnn: DnnParams,
}

fn default_learner_kind() -> LearnerKind {
    LearnerKind::Ipinn
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: default_learner_kind(),
            ipinn: IpinnParams::default(),
            dnn: DnnParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Constant,
    CosineTo { floor: f64 },
}

impl From<ScheduleConfig> for LrSchedule {
    fn from(s: ScheduleConfig) -> Self {
        match s {
            ScheduleConfig::Constant => LrSchedule::Constant,
            ScheduleConfig::CosineTo { floor } => LrSchedule::CosineTo(floor),
        }
    }
}

impl From<LrSchedule> for ScheduleConfig {
    fn from(s: LrSchedule) -> Self {
        match s {
            LrSchedule::Constant => ScheduleConfig::Constant,
            LrSchedule::CosineTo(floor) => ScheduleConfig::CosineTo { floor },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormConfig {
    Literal,
    LogLikelihood,
}

impl From<DataFormConfig> for DataLossForm {
    fn from(f: DataFormConfig) -> Self {
        match f {
            DataFormConfig::Literal => DataLossForm::Literal,
            DataFormConfig::LogLikelihood => DataLossForm::LogLikelihood,
        }
    }
}

impl From<DataLossForm> for DataFormConfig {
    fn from(f: DataLossForm) -> Self {
        match f {
            DataLossForm::Literal => DataFormConfig::Literal,
            DataLossForm::LogLikelihood => DataFormConfig::LogLikelihood,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitNoiseConfig {
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub literal_exp: bool,
    #[serde(default = "default_a_init")]
    pub a_init: f64,
    #[serde(default = "default_b_init")]
    pub b_init: f64,
}

fn default_a_init() -> f64 {
    NoiseFit::default().a_init
}
fn default_b_init() -> f64 {
    NoiseFit::default().b_init
}

impl From<FitNoiseConfig> for NoiseFit {
    fn from(f: FitNoiseConfig) -> Self {
        NoiseFit {
            t0: f.t0,
            literal_exp: f.literal_exp,
            a_init: f.a_init,
            b_init: f.b_init,
        }
    }
}

/// [`TrainConfig`] mirror (the seed comes from the run section).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IpinnParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub p_points: usize,
    pub t_max: f64,
    pub epochs: usize,
    pub lr: f64,
    pub lr_schedule: ScheduleConfig,
    pub hidden: Vec<usize>,
    pub theta_box: f64,
    pub physics_warmup: usize,
    pub data_form: DataFormConfig,
    pub restarts: usize,
    pub probe_epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_noise: Option<FitNoiseConfig>,
    /// Checkpoint cadence (epochs) for resumable fits; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for IpinnParams {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            p_points: d.p_points,
            t_max: d.t_max,
            epochs: d.epochs,
            lr: d.lr,
            lr_schedule: d.lr_schedule.into(),
            hidden: d.hidden,
            theta_box: d.theta_box,
            physics_warmup: d.physics_warmup,
            data_form: d.data_form.into(),
            restarts: d.restarts,
            probe_epochs: d.probe_epochs,
            fit_noise: None,
            checkpoint_every: 1_000,
        }
    }
}

impl IpinnParams {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            p_points: self.p_points,
            t_max: self.t_max,
            epochs: self.epochs,
            lr: self.lr,
            lr_schedule: self.lr_schedule.clone().into(),
            hidden: self.hidden.clone(),
            theta_box: self.theta_box,
            seed,
            fit_noise: self.fit_noise.map(Into::into),
            physics_warmup: self.physics_warmup,
            data_form: self.data_form.into(),
            restarts: self.restarts,
            probe_epochs: self.probe_epochs,
        }
    }
}

/// [`DnnConfig`] mirror (the seed comes from the run section).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DnnParams {
    pub recon_hidden: Vec<usize>,
    pub recon_epochs: usize,
    pub recon_lr: f64,
    pub theta_epochs: usize,
    pub theta_lr: f64,
    pub theta_box: f64,
    pub restarts: usize,
}

impl Default for DnnParams {
    fn default() -> Self {
        let d = DnnConfig::default();
        Self {
            recon_hidden: d.recon_hidden,
            recon_epochs: d.recon_epochs,
            recon_lr: d.recon_lr,
            theta_epochs: d.theta_epochs,
            theta_lr: d.theta_lr,
            theta_box: d.theta_box,
            restarts: d.restarts,
        }
    }
}

impl DnnParams {
    pub fn to_dnn_config(&self, seed: u64) -> DnnConfig {
        DnnConfig {
            recon_hidden: self.recon_hidden.clone(),
            recon_epochs: self.recon_epochs,
            recon_lr: self.recon_lr,
            theta_epochs: self.theta_epochs,
            theta_lr: self.theta_lr,
            theta_box: self.theta_box,
            restarts: self.restarts,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrMode {
    Distribution,
    Sampled,
}

/// Sweep description for the `study` verb.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StudyConfig {
    /// Query-count scaling with a power-law fit.
    Scaling { counts: Vec<usize>, seeds: Vec<u64> },
    /// Time-grid refinement at a fixed #(U,M) budget.
    Dt {
        dt_values: Vec<f64>,
        um_budget: usize,
        seeds: Vec<u64>,
    },
    /// Collocation-point saturation sweep.
    Constraint {
        p_values: Vec<usize>,
        total_queries: usize,
        seeds: Vec<u64>,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    /// Online drift compensation (requires the drift scenario).
    Drift {
        pretrain_total: usize,
        delta_n: usize,
        batches: usize,
        epochs_per_batch: usize,
        #[serde(default = "default_drift_threshold")]
        threshold: f64,
        seeds: Vec<u64>,
    },
    /// Cross-resonance calibration (requires the cr_gate scenario).
    Cr {
        mode: CrMode,
        times: Vec<f64>,
        epochs: usize,
        lr: f64,
        restarts: usize,
        #[serde(default = "default_total")]
        total_queries: usize,
        seeds: Vec<u64>,
    },
}

fn default_threshold() -> f64 {
    0.05
}
fn default_drift_threshold() -> f64 {
    1e-2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Render SVG plots alongside the CSVs.
    #[serde(default = "default_true")]
    pub plots: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { plots: true }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config parse error: {e}")))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self)
            .map_err(|e| CliError::Usage(format!("config serialize error: {e}")))
    }

    /// Structural checks beyond what serde enforces, with field names in
    /// the message.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.run.jobs == 0 {
            return Err(CliError::Usage(
                "run.jobs must be ≥ 1 (worker threads)".into(),
            ));
        }
        if self.dataset.source == SourceKind::Load && self.dataset.path.is_none() {
            return Err(CliError::Usage(
                "dataset.path is required when dataset.source = \"load\" (a dataset CSV path)"
                    .into(),
            ));
        }
        if !(self.dataset.dt > 0.0 && self.dataset.t_max > 0.0) {
            return Err(CliError::Usage(format!(
                "dataset.dt and dataset.t_max must be positive, got {} and {}",
                self.dataset.dt, self.dataset.t_max
            )));
        }
        if self.dataset.noisy && !matches!(self.scenario, ScenarioConfig::CrGate { .. }) {
            return Err(CliError::Usage(
                "dataset.noisy = true requires scenario.kind = \"cr_gate\" (the only scenario \
                 with a noise model)"
                    .into(),
            ));
        }
        match &self.study {
            Some(StudyConfig::Drift { .. }) => {
                if !matches!(self.scenario, ScenarioConfig::Drift { .. }) {
                    return Err(CliError::Usage(
                        "study.kind = \"drift\" requires scenario.kind = \"drift\"".into(),
                    ));
                }
            }
            Some(StudyConfig::Cr { .. }) => {
                if !matches!(self.scenario, ScenarioConfig::CrGate { .. }) {
                    return Err(CliError::Usage(
                        "study.kind = \"cr\" requires scenario.kind = \"cr_gate\"".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}
