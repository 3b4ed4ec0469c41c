//! Experiment drivers: query-scaling sweeps, time-resolution studies,
//! collocation-point saturation, drift tracking, and cross-resonance
//! gate calibration.
//!
//! Every driver is deterministic given its seeds: datasets come from the
//! counter-based generator, training from seeded ChaCha streams.

use std::collections::HashMap;

use hamlearn_core::query::{generate_dataset, group_dataset};
use hamlearn_core::{
    measurement_probs, DatasetEntry, Gate, GateKey, HamiltonianModel, LocalUnitary, NoiseConfig,
    QueryGrid, StateVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hamlearn_autodiff::{AdamState, ParamStore, Tape};

use crate::dnn::{dnn_train, DnnConfig};
use crate::frechet::{apply_gates_raw, ThetaFitContext};
use crate::ipinn::{ipinn_train, LrSchedule, TrainConfig};
use crate::losses::{
    depolarization_node, depolarize_node, readout_node, readout_q_node, weighted_sum,
    LOG_CLAMP_FLOOR,
};
use crate::metrics::mse;
use crate::nnqs::preps_from_dataset;
use crate::scenarios::{build_cr_gate, cr_c_from_theta, CrGateSpec};
use crate::LearnError;

/// Result of regressing ln(MSE) = ln(A) − ℓ·ln(N).
#[derive(Clone, Copy, Debug)]
pub struct PowerLawFit {
    /// The scaling exponent ℓ (positive when error shrinks with N).
    pub ell: f64,
    /// ln(A), the log-amplitude at N = 1.
    pub amplitude_log: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

/// Least-squares power-law fit through (N, MSE) points.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, LearnError> {
    if points.len() < 2 {
        return Err(LearnError::InvalidConfig {
            reason: format!("power-law fit needs ≥2 points, got {}", points.len()),
        });
    }
    for &(n, m) in points {
        if !(n > 0.0 && m > 0.0) {
            return Err(LearnError::InvalidConfig {
                reason: format!("power-law fit needs positive points, got ({n}, {m})"),
            });
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LearnError::InvalidConfig {
            reason: "power-law fit needs at least two distinct N values".into(),
        });
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    Ok(PowerLawFit {
        ell: -slope,
        amplitude_log: intercept,
        residual: (ss_res / k).sqrt(),
    })
}

/// Which estimator a driver runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Learner {
    Ipinn,
    Dnn,
}

/// A fully specified simulated experiment: the ground-truth model, the
/// measurement settings and times of the query grid, optional noise,
/// and the natural-parameter vector MSEs are taken against (θ, plus
/// q and μ when noise is fitted).
#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub model: HamiltonianModel,
    pub settings: Vec<(LocalUnitary, LocalUnitary)>,
    pub times: Vec<f64>,
    pub noise: Option<NoiseConfig>,
    pub truth: Vec<f64>,
}

impl ScenarioRun {
    /// Noiseless scenario; truth defaults to the model's θ.
    pub fn noiseless(
        model: HamiltonianModel,
        settings: Vec<(LocalUnitary, LocalUnitary)>,
        times: Vec<f64>,
    ) -> Self {
        let truth = model.theta().to_vec();
        Self {
            model,
            settings,
            times,
            noise: None,
            truth,
        }
    }
}

fn uniform_gate(n: usize, g: Gate) -> Result<LocalUnitary, LearnError> {
    Ok(LocalUnitary::new(vec![g; n])?)
}

fn staggered_gate(n: usize, even: Gate, odd: Gate) -> Result<LocalUnitary, LearnError> {
    let gates = (0..n)
        .map(|q| if q % 2 == 0 { even } else { odd })
        .collect();
    Ok(LocalUnitary::new(gates)?)
}

/// The standard setting ensemble for diagonal-coupling chains: uniform
/// |+⟩/|+i⟩ products, plus two staggered preparations, crossed with Z,
/// X and Y readout bases (duplicates deduplicated). The staggered
/// preparations break the coupling-sign degeneracy that purely uniform
/// product settings leave: under J → −J the uniform-prep outcome
/// distributions are exactly invariant on a Z-coupled ring.
pub fn standard_settings(n: usize) -> Result<Vec<(LocalUnitary, LocalUnitary)>, LearnError> {
    let preps = [
        uniform_gate(n, Gate::H)?,
        uniform_gate(n, Gate::Sh)?,
        staggered_gate(n, Gate::H, Gate::I)?,
        staggered_gate(n, Gate::Sh, Gate::H)?,
    ];
    let meas = [
        uniform_gate(n, Gate::I)?,
        uniform_gate(n, Gate::H)?,
        uniform_gate(n, Gate::Hsdg)?,
    ];
    let mut settings: Vec<(LocalUnitary, LocalUnitary)> = Vec::new();
    for p in &preps {
        for m in &meas {
            let dup = settings.iter().any(|(sp, sm)| {
                sp.factors().iter().map(Gate::key).collect::<Vec<_>>()
                    == p.factors().iter().map(Gate::key).collect::<Vec<_>>()
                    && sm.factors().iter().map(Gate::key).collect::<Vec<_>>()
                        == m.factors().iter().map(Gate::key).collect::<Vec<_>>()
            });
            if !dup {
                settings.push((p.clone(), m.clone()));
            }
        }
    }
    Ok(settings)
}

/// A leaner four-setting ensemble (X/Y readout only) for wide systems
/// where the Z basis carries no phase information.
pub fn phase_settings(n: usize) -> Result<Vec<(LocalUnitary, LocalUnitary)>, LearnError> {
    let preps = [uniform_gate(n, Gate::H)?, uniform_gate(n, Gate::Sh)?];
    let meas = [uniform_gate(n, Gate::H)?, uniform_gate(n, Gate::Hsdg)?];
    let mut settings = Vec::with_capacity(4);
    for p in &preps {
        for m in &meas {
            settings.push((p.clone(), m.clone()));
        }
    }
    Ok(settings)
}

/// Shots per (setting, time) cell for a requested total query count.
pub fn shots_for(total: usize, num_settings: usize, num_times: usize) -> usize {
    let cells = (num_settings * num_times).max(1);
    ((total as f64 / cells as f64).round() as usize).max(1)
}

fn train_once(
    scenario: &ScenarioRun,
    learner: Learner,
    data: &[DatasetEntry],
    run_seed: u64,
    ipinn_cfg: &TrainConfig,
    dnn_cfg: &DnnConfig,
) -> Result<f64, LearnError> {
    match learner {
        Learner::Ipinn => {
            let mut cfg = ipinn_cfg.clone();
            cfg.seed = run_seed;
            let r = ipinn_train(&scenario.model, data, &cfg, Some(&scenario.truth), None)?;
            Ok(r.final_mse.expect("truth supplied"))
        }
        Learner::Dnn => {
            let mut cfg = dnn_cfg.clone();
            cfg.seed = run_seed;
            let r = dnn_train(&scenario.model, data, &cfg, Some(&scenario.truth), None)?;
            Ok(r.final_mse.expect("truth supplied"))
        }
    }
}

/// Query-scaling sweep: one point per requested total count, averaged
/// over dataset/training seeds, with the fitted decay exponent.
#[derive(Clone, Debug)]
pub struct ScalingRun {
    pub requested: Vec<usize>,
    /// Realized totals N({x}) after rounding shots to integers.
    pub actual_n: Vec<usize>,
    /// `per_seed_mse[i][k]` is count i, seed k.
    pub per_seed_mse: Vec<Vec<f64>>,
    pub mean_mse: Vec<f64>,
    pub fit: PowerLawFit,
}

/// The default total-count sweep.
pub const DEFAULT_COUNTS: [usize; 5] = [1_000, 3_000, 10_000, 30_000, 100_000];

pub fn run_scaling_experiment(
    scenario: &ScenarioRun,
    learner: Learner,
    counts: &[usize],
    seeds: &[u64],
    ipinn_cfg: &TrainConfig,
    dnn_cfg: &DnnConfig,
) -> Result<ScalingRun, LearnError> {
    if counts.is_empty() || seeds.is_empty() {
        return Err(LearnError::InvalidConfig {
            reason: "scaling experiment needs at least one count and one seed".into(),
        });
    }
    let mut actual_n = Vec::with_capacity(counts.len());
    let mut per_seed = Vec::with_capacity(counts.len());
    let mut mean = Vec::with_capacity(counts.len());
    for &count in counts {
        let shots = shots_for(count, scenario.settings.len(), scenario.times.len());
        let grid = QueryGrid::new(scenario.settings.clone(), scenario.times.clone(), shots)?;
        actual_n.push(grid.num_entries());
        let mut row = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let data = generate_dataset(&scenario.model, scenario.noise.as_ref(), &grid, seed)?;
            row.push(train_once(
                scenario, learner, &data, seed, ipinn_cfg, dnn_cfg,
            )?);
        }
        mean.push(row.iter().sum::<f64>() / row.len() as f64);
        per_seed.push(row);
    }
    let points: Vec<(f64, f64)> = actual_n
        .iter()
        .map(|&n| n as f64)
        .zip(mean.iter().copied())
        .collect();
    let fit = fit_power_law(&points)?;
    Ok(ScalingRun {
        requested: counts.to_vec(),
        actual_n,
        per_seed_mse: per_seed,
        mean_mse: mean,
        fit,
    })
}

/// Time-resolution study at a fixed experimental-cost budget: the
/// number of (setting, shot) pairs #(U,M) is held constant while the
/// time grid {kΔt} refines, multiplying the dataset's total size.
#[derive(Clone, Debug)]
pub struct DtStudy {
    pub dt_values: Vec<f64>,
    /// Realized #(U,M) = settings × shots.
    pub actual_um: usize,
    pub per_seed_mse: Vec<Vec<f64>>,
    pub mean_mse: Vec<f64>,
}

pub fn run_dt_study(
    scenario: &ScenarioRun,
    learner: Learner,
    dt_values: &[f64],
    um_budget: usize,
    t_max: f64,
    seeds: &[u64],
    ipinn_cfg: &TrainConfig,
    dnn_cfg: &DnnConfig,
) -> Result<DtStudy, LearnError> {
    if dt_values.is_empty() || seeds.is_empty() {
        return Err(LearnError::InvalidConfig {
            reason: "Δt study needs at least one Δt and one seed".into(),
        });
    }
    let shots = shots_for(um_budget, scenario.settings.len(), 1);
    let actual_um = shots * scenario.settings.len();
    let mut per_seed = Vec::with_capacity(dt_values.len());
    let mut mean = Vec::with_capacity(dt_values.len());
    for &dt in dt_values {
        let times = QueryGrid::uniform_times(dt, t_max);
        let grid = QueryGrid::new(scenario.settings.clone(), times, shots)?;
        let mut row = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let data = generate_dataset(&scenario.model, scenario.noise.as_ref(), &grid, seed)?;
            row.push(train_once(
                scenario, learner, &data, seed, ipinn_cfg, dnn_cfg,
            )?);
        }
        mean.push(row.iter().sum::<f64>() / row.len() as f64);
        per_seed.push(row);
    }
    Ok(DtStudy {
        dt_values: dt_values.to_vec(),
        actual_um,
        per_seed_mse: per_seed,
        mean_mse: mean,
    })
}

/// Successive fractional improvements and the saturation point: the
/// first grid value whose improvement over its predecessor falls below
/// `threshold`.
pub fn saturation_point(
    p_values: &[usize],
    mean_mse: &[f64],
    threshold: f64,
) -> (Vec<f64>, Option<usize>) {
    let mut improvements = Vec::with_capacity(mean_mse.len().saturating_sub(1));
    let mut saturation = None;
    for i in 1..mean_mse.len() {
        let imp = (mean_mse[i - 1] - mean_mse[i]) / mean_mse[i - 1];
        improvements.push(imp);
        if saturation.is_none() && imp < threshold {
            saturation = Some(p_values[i]);
        }
    }
    (improvements, saturation)
}

/// Collocation-grid saturation study: same data, growing P.
#[derive(Clone, Debug)]
pub struct PConstraintStudy {
    pub p_values: Vec<usize>,
    pub mean_mse: Vec<f64>,
    pub improvements: Vec<f64>,
    pub saturation_p: Option<usize>,
}

pub fn run_constraint_point_study(
    scenario: &ScenarioRun,
    p_values: &[usize],
    total_queries: usize,
    seeds: &[u64],
    ipinn_cfg: &TrainConfig,
    threshold: f64,
) -> Result<PConstraintStudy, LearnError> {
    if p_values.len() < 2 {
        return Err(LearnError::InvalidConfig {
            reason: "saturation study needs at least two P values".into(),
        });
    }
    if p_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LearnError::InvalidConfig {
            reason: "P values must be strictly increasing".into(),
        });
    }
    let shots = shots_for(total_queries, scenario.settings.len(), scenario.times.len());
    let grid = QueryGrid::new(scenario.settings.clone(), scenario.times.clone(), shots)?;
    let datasets: Vec<Vec<DatasetEntry>> = seeds
        .iter()
        .map(|&s| generate_dataset(&scenario.model, scenario.noise.as_ref(), &grid, s))
        .collect::<Result<_, _>>()?;
    let mut mean = Vec::with_capacity(p_values.len());
    for &p in p_values {
        let mut cfg = ipinn_cfg.clone();
        cfg.p_points = p;
        let mut acc = 0.0;
        for (k, data) in datasets.iter().enumerate() {
            cfg.seed = seeds[k];
            let r = ipinn_train(&scenario.model, data, &cfg, Some(&scenario.truth), None)?;
            acc += r.final_mse.expect("truth supplied");
        }
        mean.push(acc / datasets.len() as f64);
    }
    let (improvements, saturation_p) = saturation_point(p_values, &mean, threshold);
    Ok(PConstraintStudy {
        p_values: p_values.to_vec(),
        mean_mse: mean,
        improvements,
        saturation_p,
    })
}

/// Online drift tracking: pretrain on the before-change distribution,
/// then keep training as fresh post-change batches of ΔN queries
/// accumulate, recording the MSE against the post-change parameters.
#[derive(Clone, Debug)]
pub struct DriftTrace {
    /// MSE against the *before* parameters after pretraining.
    pub pre_mse: f64,
    /// MSE against the *after* parameters following each batch.
    pub batch_mse: Vec<f64>,
    /// 1-based index of the first batch meeting the threshold.
    pub first_hit: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_drift_experiment(
    before: &HamiltonianModel,
    after: &HamiltonianModel,
    settings: &[(LocalUnitary, LocalUnitary)],
    times: &[f64],
    pretrain_total: usize,
    delta_n: usize,
    batches: usize,
    epochs_per_batch: usize,
    threshold: f64,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<DriftTrace, LearnError> {
    if before.num_params() != after.num_params() {
        return Err(LearnError::InvalidConfig {
            reason: "before/after models must share a parameter layout".into(),
        });
    }
    let pre_shots = shots_for(pretrain_total, settings.len(), times.len());
    let pre_grid = QueryGrid::new(settings.to_vec(), times.to_vec(), pre_shots)?;
    let pre_data = generate_dataset(before, None, &pre_grid, seed)?;

    let preps = preps_from_dataset(&pre_data);
    let mut run_cfg = cfg.clone();
    run_cfg.seed = seed;
    let (mut trainer, probe_rows) =
        crate::ipinn::ipinn_probe_select(before, preps, &pre_data, &run_cfg, Some(before.theta()))?;
    let remaining = run_cfg.epochs - probe_rows.len();
    let mut pre_rows = probe_rows;
    pre_rows.extend(trainer.train_on(&pre_data, remaining, Some(before.theta()), None)?);
    let pre_mse = pre_rows
        .last()
        .and_then(|r| r.mse)
        .expect("truth supplied and ≥1 epoch");

    let batch_shots = shots_for(delta_n, settings.len(), times.len());
    let mut accumulated: Vec<DatasetEntry> = Vec::new();
    let mut batch_mse = Vec::with_capacity(batches);
    let mut first_hit = None;
    for b in 1..=batches {
        let grid = QueryGrid::new(settings.to_vec(), times.to_vec(), batch_shots)?;
        let batch_seed = seed
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(b as u64));
        accumulated.extend(generate_dataset(after, None, &grid, batch_seed)?);
        let rows = trainer.train_on(&accumulated, epochs_per_batch, Some(after.theta()), None)?;
        let m = rows.last().and_then(|r| r.mse).expect("truth supplied");
        batch_mse.push(m);
        if first_hit.is_none() && m < threshold {
            first_hit = Some(b);
        }
    }
    Ok(DriftTrace {
        pre_mse,
        batch_mse,
        first_hit,
    })
}

/// One (preparation, time) block of a calibration problem with its
/// measurement groups: (rotation, per-outcome weights, weight total).
struct CrBlock {
    psi0: StateVector,
    t: f64,
    groups: Vec<(LocalUnitary, Vec<f64>)>,
}

/// Result of a cross-resonance calibration run. Gains are reported in
/// natural units (c = 2θ).
#[derive(Clone, Debug)]
pub struct CrCalibration {
    pub c_hat: Vec<f64>,
    pub q_hat: Option<f64>,
    pub mu_hat: Option<f64>,
    /// MSE against the true (c, …) vector: gains alone for the
    /// distribution-level fit, gains + q + μ for the sampled noisy fit.
    pub mse: f64,
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
}

/// The 9 two-qubit preparation patterns {I,H,Sh}⊗{I,H,Sh}.
fn cr_preps() -> Result<Vec<LocalUnitary>, LearnError> {
    let menu = [Gate::I, Gate::H, Gate::Sh];
    let mut out = Vec::with_capacity(9);
    for a in menu {
        for b in menu {
            out.push(LocalUnitary::new(vec![a, b])?);
        }
    }
    Ok(out)
}

/// The 9 two-qubit measurement patterns {I,H,Hsdg}⊗{I,H,Hsdg}.
fn cr_meas() -> Result<Vec<LocalUnitary>, LearnError> {
    let menu = [Gate::I, Gate::H, Gate::Hsdg];
    let mut out = Vec::with_capacity(9);
    for a in menu {
        for b in menu {
            out.push(LocalUnitary::new(vec![a, b])?);
        }
    }
    Ok(out)
}

/// Core CR fit: maximum likelihood over measurement groups, with exact
/// evolution and eigenbasis gradients for θ and — when `noise` carries
/// (t0, literal_exp) — tape-differentiated channel parameters (a, b).
#[allow(clippy::too_many_arguments)]
fn cr_fit(
    model: &HamiltonianModel,
    blocks: &[CrBlock],
    noise: Option<(f64, bool)>,
    epochs: usize,
    lr: f64,
    theta_box: f64,
    restarts: usize,
    seed: u64,
    ab_init: (f64, f64),
) -> Result<(Vec<f64>, f64, Vec<f64>), LearnError> {
    if blocks.is_empty() || blocks.iter().all(|b| b.groups.is_empty()) {
        return Err(LearnError::EmptyDataset);
    }
    if epochs == 0 || restarts == 0 {
        return Err(LearnError::InvalidConfig {
            reason: "CR fit needs at least one epoch and one restart".into(),
        });
    }
    let num_theta = model.num_params();
    let num_params = num_theta + if noise.is_some() { 2 } else { 0 };
    let dim = model.dim();
    let n = model.num_qubits();
    let total_weight: f64 = blocks
        .iter()
        .flat_map(|b| &b.groups)
        .map(|(_, w)| w.iter().sum::<f64>())
        .sum();
    let mut ctx = ThetaFitContext::new(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = LrSchedule::CosineTo(0.01);

    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for _ in 0..restarts {
        let mut params: Vec<f64> = (0..num_theta)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * theta_box)
            .collect();
        if noise.is_some() {
            params.push(ab_init.0);
            params.push(ab_init.1);
        }
        let mut adam = AdamState::with_hyperparams(num_params, lr, 0.9, 0.999, 1e-8);
        let mut trace = Vec::with_capacity(epochs);
        let mut last = f64::INFINITY;
        for epoch in 0..epochs {
            ctx.set_theta(&params[..num_theta])?;
            let mut loss = 0.0;
            let mut grad = vec![0.0; num_params];
            for block in blocks {
                let (psi_t, dpsi) = ctx.evolve_with_grad(&block.psi0, block.t)?;
                for (meas, weights) in &block.groups {
                    let r = apply_gates_raw(meas, &psi_t);
                    let p: Vec<f64> = r.iter().map(|a| a.norm_sqr()).collect();
                    // ∂p_y/∂θ_s through the rotated amplitudes.
                    let dp: Vec<Vec<f64>> = dpsi
                        .iter()
                        .map(|d| {
                            let dr = apply_gates_raw(meas, d);
                            r.iter()
                                .zip(&dr)
                                .map(|(ry, dry)| 2.0 * (ry.conj() * dry).re)
                                .collect()
                        })
                        .collect();
                    match noise {
                        None => {
                            for y in 0..dim {
                                let w = weights[y];
                                if w == 0.0 {
                                    continue;
                                }
                                let clamped = p[y].max(LOG_CLAMP_FLOOR);
                                loss -= w * clamped.ln();
                                if p[y] > LOG_CLAMP_FLOOR {
                                    for s in 0..num_theta {
                                        grad[s] -= w * dp[s][y] / clamped;
                                    }
                                }
                            }
                        }
                        Some((t0, literal)) => {
                            // Push the exact probabilities through the
                            // differentiable noise chain on a scratch tape;
                            // its backward pass yields ∂L/∂p, ∂L/∂a, ∂L/∂b.
                            let mut store = ParamStore::new();
                            let mut next = 0usize;
                            let p_off = store.register("p", dim, 1, || {
                                let v = p[next];
                                next += 1;
                                v
                            });
                            let a_val = params[num_theta];
                            let a_off = store.register("a", 1, 1, || a_val);
                            let b_val = params[num_theta + 1];
                            let b_off = store.register("b", 1, 1, || b_val);
                            let mut tape = Tape::new();
                            let p_node = tape.param(&store, p_off, dim, 1);
                            let a_node = tape.scalar_param(&store, a_off);
                            let b_node = tape.scalar_param(&store, b_off);
                            let q_node = readout_q_node(&mut tape, a_node);
                            let pd = depolarization_node(&mut tape, b_node, block.t, t0, literal);
                            let mixed = depolarize_node(&mut tape, p_node, pd);
                            let observed = readout_node(&mut tape, mixed, q_node, n);
                            let lg = tape.log_clamped(observed, LOG_CLAMP_FLOOR);
                            let ws = weighted_sum(&mut tape, lg, weights);
                            let nl = tape.scale(ws, -1.0);
                            loss += tape.scalar_value(nl);
                            let g = tape.backward(nl, store.len())?;
                            for s in 0..num_theta {
                                for y in 0..dim {
                                    grad[s] += g[p_off + y] * dp[s][y];
                                }
                            }
                            grad[num_theta] += g[a_off];
                            grad[num_theta + 1] += g[b_off];
                        }
                    }
                }
            }
            loss /= total_weight;
            for g in &mut grad {
                *g /= total_weight;
            }
            if !loss.is_finite() {
                return Err(LearnError::NonFiniteLoss {
                    component: "calibration",
                    epoch,
                });
            }
            adam.step_scaled(&mut params, &grad, schedule.factor(epoch, epochs))?;
            trace.push(loss);
            last = loss;
        }
        if best.as_ref().map_or(true, |(b, _, _)| last < *b) {
            best = Some((last, params, trace));
        }
    }
    let (final_loss, params, trace) = best.expect("at least one restart ran");
    Ok((params, final_loss, trace))
}

/// Distribution-level calibration of the noiseless gate variant: the
/// targets are exact outcome distributions (the infinite-query limit
/// with perfect readout), and only the seven gains are estimated.
pub fn run_cr_calibration(
    spec: &CrGateSpec,
    times: &[f64],
    epochs: usize,
    lr: f64,
    restarts: usize,
    seed: u64,
) -> Result<CrCalibration, LearnError> {
    let model = build_cr_gate(spec)?;
    let zero = StateVector::zero_state(2)?;
    let meas = cr_meas()?;
    let mut blocks = Vec::new();
    for prep in cr_preps()? {
        let psi0 = prep.apply(&zero)?;
        for &t in times {
            let psi_t = model.evolve(&psi0, t)?;
            let groups = meas
                .iter()
                .map(|m| Ok((m.clone(), measurement_probs(&psi_t, m)?)))
                .collect::<Result<Vec<_>, LearnError>>()?;
            blocks.push(CrBlock {
                psi0: psi0.clone(),
                t,
                groups,
            });
        }
    }
    let (theta, final_loss, trace) = cr_fit(
        &model,
        &blocks,
        None,
        epochs,
        lr,
        2.0,
        restarts,
        seed,
        (0.0, 0.0),
    )?;
    let c_hat = cr_c_from_theta(&theta);
    let err = mse(&c_hat, &spec.c)?;
    Ok(CrCalibration {
        c_hat,
        q_hat: None,
        mu_hat: None,
        mse: err,
        final_loss,
        loss_trace: trace,
    })
}

/// Sampled calibration under measurement noise: finite query budget,
/// and the readout fidelity and depolarization constant are estimated
/// jointly with the gains (9 parameters).
#[allow(clippy::too_many_arguments)]
pub fn run_cr_calibration_noisy(
    spec: &CrGateSpec,
    times: &[f64],
    total_queries: usize,
    epochs: usize,
    lr: f64,
    restarts: usize,
    seed: u64,
    ab_init: (f64, f64),
) -> Result<CrCalibration, LearnError> {
    let model = build_cr_gate(spec)?;
    let noise = spec.noise()?;
    let grid = QueryGrid::product(
        cr_preps()?,
        cr_meas()?,
        times.to_vec(),
        shots_for(total_queries, 81, times.len()),
    )?;
    let data = generate_dataset(&model, Some(&noise), &grid, seed)?;
    let grouped = group_dataset(&data);

    let zero = StateVector::zero_state(2)?;
    let mut blocks: Vec<CrBlock> = Vec::new();
    let mut index: HashMap<(Vec<GateKey>, u64), usize> = HashMap::new();
    for g in &grouped.groups {
        let key: Vec<GateKey> = g.prep.factors().iter().map(|f| f.key()).collect();
        let at = *index.entry((key, g.t.to_bits())).or_insert_with(|| {
            blocks.push(CrBlock {
                psi0: g.prep.apply(&zero).expect("valid preparation"),
                t: g.t,
                groups: Vec::new(),
            });
            blocks.len() - 1
        });
        let mut weights = vec![0.0; 4];
        for &(y, c) in &g.outcomes {
            weights[y] += c as f64;
        }
        blocks[at].groups.push((g.meas.clone(), weights));
    }

    let (params, final_loss, trace) = cr_fit(
        &model,
        &blocks,
        Some((spec.t0, false)),
        epochs,
        lr,
        2.0,
        restarts,
        seed,
        ab_init,
    )?;
    let c_hat = cr_c_from_theta(&params[..7]);
    let a = params[7];
    let b = params[8];
    let q_hat = 0.5 + 0.5 / (1.0 + (-a).exp());
    let mu_hat = b.exp();
    let mut estimate = c_hat.clone();
    estimate.push(q_hat);
    estimate.push(mu_hat);
    let mut truth = spec.c.to_vec();
    truth.push(spec.q);
    truth.push(spec.mu);
    let err = mse(&estimate, &truth)?;
    Ok(CrCalibration {
        c_hat,
        q_hat: Some(q_hat),
        mu_hat: Some(mu_hat),
        mse: err,
        final_loss,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_fit_is_exact_on_exact_data() {
        let a = 0.37;
        let ell = 1.5;
        let points: Vec<(f64, f64)> = [1e3, 3e3, 1e4, 3e4, 1e5]
            .iter()
            .map(|&n: &f64| (n, a * n.powf(-ell)))
            .collect();
        let fit = fit_power_law(&points).unwrap();
        assert!((fit.ell - ell).abs() < 1e-10, "ℓ = {}", fit.ell);
        assert!((fit.amplitude_log - a.ln()).abs() < 1e-10);
        assert!(fit.residual < 1e-10);
    }

    #[test]
    fn power_law_fit_rejects_degenerate_inputs() {
        assert!(fit_power_law(&[(10.0, 0.1)]).is_err());
        assert!(fit_power_law(&[(10.0, 0.1), (20.0, 0.0)]).is_err());
        assert!(fit_power_law(&[(10.0, 0.1), (10.0, 0.2)]).is_err());
    }

    #[test]
    fn shot_allocation_rounds_and_floors() {
        assert_eq!(shots_for(10_000, 4, 1), 2500);
        assert_eq!(shots_for(1_000, 6, 10), 17);
        assert_eq!(shots_for(3, 6, 10), 1);
    }

    #[test]
    fn standard_settings_cover_three_bases() {
        let s = standard_settings(3).unwrap();
        // Four distinct preparations, each measured in three bases.
        assert_eq!(s.len(), 12);
        assert_eq!(s[0].0, s[1].0);
        assert_ne!(s[0].0, s[3].0);
        let preps: Vec<_> = s.iter().map(|(p, _)| p.clone()).collect();
        assert!(preps.windows(2).filter(|w| w[0] != w[1]).count() >= 3);
        // Single-qubit staggered preparations collapse onto the uniform
        // ones and are deduplicated away.
        assert_eq!(standard_settings(1).unwrap().len(), 6);
        let p4 = phase_settings(2).unwrap();
        assert_eq!(p4.len(), 4);
    }

    #[test]
    fn saturation_detects_the_first_small_improvement() {
        let p = [10, 50, 100, 200];
        // 80% improvement, then 50%, then 3%.
        let mse = [1.0, 0.2, 0.1, 0.097];
        let (imps, sat) = saturation_point(&p, &mse, 0.05);
        assert_eq!(imps.len(), 3);
        assert!((imps[0] - 0.8).abs() < 1e-12);
        assert_eq!(sat, Some(200));
        // Monotone big improvements → no saturation inside the grid.
        let (_, none) = saturation_point(&p, &[1.0, 0.5, 0.2, 0.05], 0.05);
        assert_eq!(none, None);
    }

    #[test]
    fn cr_target_distributions_are_normalized() {
        let spec = CrGateSpec::default();
        let model = build_cr_gate(&spec).unwrap();
        let zero = StateVector::zero_state(2).unwrap();
        for prep in cr_preps().unwrap() {
            let psi0 = prep.apply(&zero).unwrap();
            let psi_t = model.evolve(&psi0, 1.0).unwrap();
            for m in cr_meas().unwrap() {
                let p = measurement_probs(&psi_t, &m).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
