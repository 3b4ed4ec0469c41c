//! The two-stage baseline learner.
//!
//! Stage one reconstructs, for every distinct (preparation, time) pair,
//! the evolved pure state from its measurement statistics with a small
//! unconstrained network (bits in, one complex amplitude out), trained
//! by maximum likelihood. Stage two fits θ by pushing the exactly
//! evolved model state towards each reconstruction, minimizing the
//! phase-insensitive infidelity Σ_k (2 − 2|⟨φ_k|e^{−iH(θ)t_k}|ψ₀ₖ⟩|)
//! with analytic gradients from the eigenbasis Fréchet derivative.

use std::collections::HashMap;
use std::time::Instant;

use hamlearn_autodiff::{AdamState, Mlp, MlpSpec, ParamStore, Tape};
use hamlearn_core::query::group_dataset;
use hamlearn_core::{DatasetEntry, HamiltonianModel, LocalUnitary, StateVector};
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frechet::ThetaFitContext;
use crate::ipinn::{EpochRow, EstimationResult, LrSchedule};
use crate::losses::{tape_gates, weighted_sum, LOG_CLAMP_FLOOR};
use crate::metrics::mse;
use crate::LearnError;

/// Overlaps below this are treated as having no usable phase direction;
/// their gradient contribution is dropped (a valid subgradient).
const OVERLAP_FLOOR: f64 = 1e-12;

/// Hyperparameters of the baseline learner.
#[derive(Clone, Debug, PartialEq)]
pub struct DnnConfig {
    /// Hidden widths of each reconstruction network.
    pub recon_hidden: Vec<usize>,
    pub recon_epochs: usize,
    pub recon_lr: f64,
    pub theta_epochs: usize,
    pub theta_lr: f64,
    /// θ initializer box: uniform in [−theta_box, theta_box].
    pub theta_box: f64,
    /// Independent θ-fit starts; the lowest final loss wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for DnnConfig {
    fn default() -> Self {
        Self {
            recon_hidden: vec![32, 32],
            recon_epochs: 800,
            recon_lr: 1e-2,
            theta_epochs: 2500,
            theta_lr: 1e-2,
            theta_box: 2.0,
            restarts: 3,
            seed: 0,
        }
    }
}

/// One reconstructed data point for the θ-fit: the preparation, the
/// state the reconstruction produced, and the evolution time.
#[derive(Clone, Debug)]
pub struct ReconRecord {
    pub prep_state: StateVector,
    pub target: StateVector,
    pub t: f64,
}

/// ±1 bit encoding of every basis index, qubit 0 (MSB) in column 0.
fn bit_inputs(n: usize) -> Array2<f64> {
    let dim = 1usize << n;
    let mut x = Array2::zeros((dim, n));
    for m in 0..dim {
        for q in 0..n {
            let bit = (m >> (n - 1 - q)) & 1;
            x[(m, q)] = if bit == 1 { 1.0 } else { -1.0 };
        }
    }
    x
}

/// Maximum-likelihood reconstruction of one evolved state from the
/// outcome counts of its measurement settings. `t` labels the group in
/// error reports. Returns the normalized state and the number of
/// probability-floor clamps encountered.
pub fn dnn_reconstruct(
    n: usize,
    t: f64,
    groups: &[(LocalUnitary, Vec<f64>)],
    hidden: &[usize],
    epochs: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(StateVector, u64), LearnError> {
    let dim = 1usize << n;
    let mut total = 0.0;
    for (_, counts) in groups {
        if counts.len() != dim {
            return Err(LearnError::LengthMismatch {
                expected: dim,
                got: counts.len(),
            });
        }
        total += counts.iter().sum::<f64>();
    }
    if groups.is_empty() || total <= 0.0 {
        return Err(LearnError::EmptyDataset);
    }

    let inputs = bit_inputs(n);
    let mut clamps = 0u64;
    for attempt in 0..2 {
        let mut store = ParamStore::new();
        let net = Mlp::register(
            MlpSpec::new(n, hidden.to_vec(), 2),
            &mut store,
            rng,
            "recon",
        );
        // A tanh net with zero biases is an odd function, and the ±1 bit
        // inputs come in negated pairs, so the initial amplitudes would be
        // exactly antisymmetric — a parity the gradient flow preserves.
        // Small random biases break that symmetry.
        let bias_spans: Vec<(usize, usize)> = store
            .blocks()
            .iter()
            .filter(|b| b.label.starts_with("recon/b"))
            .map(|b| (b.offset, b.len()))
            .collect();
        for (offset, len) in bias_spans {
            for v in &mut store.data_mut()[offset..offset + len] {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
        let mut adam = AdamState::with_hyperparams(store.len(), lr, 0.9, 0.999, 1e-8);
        for epoch in 0..epochs {
            let mut tape = Tape::new();
            let x = tape.input(inputs.clone(), None);
            let psi = net.forward(&mut tape, &store, x)?;
            let sq_z = tape.abs_sq_rows(psi);
            let norm = tape.sum(sq_z);
            let inv_norm = tape.recip(norm);
            let mut acc = None;
            for (meas, counts) in groups {
                let rotated = tape.local_unitary(psi, tape_gates(meas));
                let sq = tape.abs_sq_rows(rotated);
                let p = tape.scalar_mul(inv_norm, sq);
                let lg = tape.log_clamped(p, LOG_CLAMP_FLOOR);
                let ws = weighted_sum(&mut tape, lg, counts);
                acc = Some(match acc {
                    Some(a) => tape.add(a, ws),
                    None => ws,
                });
            }
            let loss = tape.scale(acc.expect("nonempty groups"), -1.0 / total);
            if !tape.scalar_value(loss).is_finite() {
                return Err(LearnError::NonFiniteLoss {
                    component: "reconstruction",
                    epoch,
                });
            }
            let grads = tape.backward(loss, store.len())?;
            adam.step(store.data_mut(), &grads)?;
            clamps += tape.clamp_events();
        }
        // Read the final amplitudes off one last forward pass.
        let mut tape = Tape::new();
        let x = tape.input(inputs.clone(), None);
        let psi = net.forward(&mut tape, &store, x)?;
        let value = tape.value(psi);
        let amps: Vec<Complex64> = (0..dim)
            .map(|y| Complex64::new(value[(y, 0)], value[(y, 1)]))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm >= 1e-6 {
            return Ok((StateVector::from_amplitudes(n, amps)?, clamps));
        }
        if attempt == 1 {
            break;
        }
        // Degenerate solution: reinitialize once with fresh weights.
    }
    Err(LearnError::DegenerateReconstruction { t })
}

/// The θ-fit objective Σ_k (2 − 2|⟨φ_k|ψ(t_k)⟩|) and its gradient at
/// the context's current θ.
pub fn dnn_data_loss(
    ctx: &ThetaFitContext,
    records: &[ReconRecord],
) -> Result<(f64, Vec<f64>), LearnError> {
    if records.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; ctx.num_slots()];
    for rec in records {
        let (psi_t, dpsi) = ctx.evolve_with_grad(&rec.prep_state, rec.t)?;
        let phi = rec.target.amplitudes();
        let z: Complex64 = phi
            .iter()
            .zip(&psi_t)
            .map(|(f, p)| f.conj() * p)
            .sum();
        let mag = z.norm();
        loss += 2.0 - 2.0 * mag;
        if mag < OVERLAP_FLOOR {
            continue;
        }
        for (s, d) in dpsi.iter().enumerate() {
            let dz: Complex64 = phi.iter().zip(d).map(|(f, p)| f.conj() * p).sum();
            grad[s] -= 2.0 * (z.conj() * dz).re / mag;
        }
    }
    Ok((loss, grad))
}

/// Stage two alone: fit θ to already-reconstructed states. Exposed so
/// exact states can be injected to isolate the fit from reconstruction
/// error.
pub fn dnn_fit_theta(
    model: &HamiltonianModel,
    records: &[ReconRecord],
    config: &DnnConfig,
    truth: Option<&[f64]>,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRow)>,
) -> Result<EstimationResult, LearnError> {
    if config.restarts == 0 || config.theta_epochs == 0 {
        return Err(LearnError::InvalidConfig {
            reason: "θ-fit needs at least one restart and one epoch".into(),
        });
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut ctx = ThetaFitContext::new(model)?;
    let num_params = model.num_params();
    let schedule = LrSchedule::CosineTo(0.01);

    let mut best: Option<(f64, Vec<f64>, Vec<EpochRow>)> = None;
    for _ in 0..config.restarts {
        let mut theta: Vec<f64> = (0..num_params)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * config.theta_box)
            .collect();
        let mut adam =
            AdamState::with_hyperparams(num_params, config.theta_lr, 0.9, 0.999, 1e-8);
        let mut trace = Vec::with_capacity(config.theta_epochs);
        let mut last_loss = f64::INFINITY;
        for epoch in 0..config.theta_epochs {
            ctx.set_theta(&theta)?;
            let (loss, grad) = dnn_data_loss(&ctx, records)?;
            if !loss.is_finite() {
                return Err(LearnError::NonFiniteLoss {
                    component: "theta-fit",
                    epoch,
                });
            }
            let factor = schedule.factor(epoch, config.theta_epochs);
            adam.step_scaled(&mut theta, &grad, factor)?;
            last_loss = loss;
            trace.push(EpochRow {
                epoch,
                l_data: loss,
                l_physics: 0.0,
                l_initial: 0.0,
                total: loss,
                mse: truth.map(|tr| mse(&theta, tr)).transpose()?,
                params: theta.clone(),
            });
        }
        if best.as_ref().map_or(true, |(b, _, _)| last_loss < *b) {
            best = Some((last_loss, theta, trace));
        }
    }
    let (_, theta_hat, trace) = best.expect("at least one restart ran");
    if let Some(cb) = on_epoch.as_deref_mut() {
        for row in &trace {
            cb(row);
        }
    }
    let final_mse = trace.last().and_then(|r| r.mse);
    Ok(EstimationResult {
        theta_hat,
        q_hat: None,
        mu_hat: None,
        trace,
        final_mse,
        clamp_events: 0,
        wall: started.elapsed(),
    })
}

/// Algorithm entry point: group the dataset by setting, reconstruct one
/// state per (preparation, time), then fit θ to the reconstructions.
pub fn dnn_train(
    model: &HamiltonianModel,
    dataset: &[DatasetEntry],
    config: &DnnConfig,
    truth: Option<&[f64]>,
    on_epoch: Option<&mut dyn FnMut(&EpochRow)>,
) -> Result<EstimationResult, LearnError> {
    let started = Instant::now();
    if dataset.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let n = model.num_qubits();
    let dim = model.dim();
    let grouped = group_dataset(dataset);

    // Gather measurement groups per (preparation, time), in first
    // appearance order.
    struct Task {
        prep: LocalUnitary,
        t: f64,
        groups: Vec<(LocalUnitary, Vec<f64>)>,
    }
    let mut tasks: Vec<Task> = Vec::new();
    let mut index: HashMap<(Vec<hamlearn_core::GateKey>, u64), usize> = HashMap::new();
    for g in &grouped.groups {
        let key: Vec<hamlearn_core::GateKey> =
            g.prep.factors().iter().map(|f| f.key()).collect();
        let at = *index.entry((key, g.t.to_bits())).or_insert_with(|| {
            tasks.push(Task {
                prep: g.prep.clone(),
                t: g.t,
                groups: Vec::new(),
            });
            tasks.len() - 1
        });
        let mut counts = vec![0.0; dim];
        for &(y, c) in &g.outcomes {
            counts[y] += c as f64;
        }
        tasks[at].groups.push((g.meas.clone(), counts));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(tasks.len());
    let mut clamp_events = 0u64;
    for task in &tasks {
        let (state, clamps) = dnn_reconstruct(
            n,
            task.t,
            &task.groups,
            &config.recon_hidden,
            config.recon_epochs,
            config.recon_lr,
            &mut rng,
        )?;
        clamp_events += clamps;
        let zero = StateVector::zero_state(n)?;
        records.push(ReconRecord {
            prep_state: task.prep.apply(&zero)?,
            target: state,
            t: task.t,
        });
    }

    let mut result = dnn_fit_theta(model, &records, config, truth, on_epoch)?;
    result.clamp_events = clamp_events;
    result.wall = started.elapsed();
    Ok(result)
}
