//! Tape-level builders for the three training losses and the noisy
//! likelihood channel.
//!
//! All builders operate on amplitude nodes of shape `[B, 2]` (or
//! `[P·B, 2]` for batched collocation points), so they compose with both
//! ensemble networks and injected amplitude leaves (which is how the
//! exact-solution tests drive them).

use hamlearn_autodiff::{NodeId, Tape};
use hamlearn_core::{Gate, HamiltonianModel, LocalUnitary, PauliAction};
use ndarray::Array2;
use num_complex::Complex64;

use crate::LearnError;

/// Sparse Pauli actions of every Hamiltonian term, grouped by parameter
/// slot (tied terms share a slot).
pub struct SlotActions {
    dim: usize,
    per_slot: Vec<Vec<PauliAction>>,
}

impl SlotActions {
    pub fn new(model: &HamiltonianModel) -> Self {
        let per_slot = model
            .terms_by_slot()
            .into_iter()
            .map(|idxs| {
                idxs.into_iter()
                    .map(|j| model.terms()[j].0.action_table())
                    .collect()
            })
            .collect();
        Self {
            dim: model.dim(),
            per_slot,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_slots(&self) -> usize {
        self.per_slot.len()
    }
}

/// Replicates one Pauli action block-diagonally over `blocks` stacked
/// amplitude vectors.
fn extended_action(action: &PauliAction, blocks: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let dim = action.dim();
    let mut src = Vec::with_capacity(dim * blocks);
    let mut re = Vec::with_capacity(dim * blocks);
    let mut im = Vec::with_capacity(dim * blocks);
    for p in 0..blocks {
        for y in 0..dim {
            src.push(p * dim + action.src[y]);
            re.push(action.phase[y].re);
            im.push(action.phase[y].im);
        }
    }
    (src, re, im)
}

/// Records H(θ)Ψ = Σ_s θ_s Σ_{terms in slot s} P_term Ψ for a stacked
/// `[blocks·dim, 2]` amplitude node.
pub fn apply_hamiltonian(
    tape: &mut Tape,
    psi: NodeId,
    theta: &[NodeId],
    actions: &SlotActions,
    blocks: usize,
) -> NodeId {
    let mut total: Option<NodeId> = None;
    for (s, acts) in actions.per_slot.iter().enumerate() {
        let mut slot_sum: Option<NodeId> = None;
        for action in acts {
            let (src, re, im) = extended_action(action, blocks);
            let node = tape.phase_permute(psi, src, re, im);
            slot_sum = Some(match slot_sum {
                Some(acc) => tape.add(acc, node),
                None => node,
            });
        }
        if let Some(ss) = slot_sum {
            let scaled = tape.scalar_mul(theta[s], ss);
            total = Some(match total {
                Some(acc) => tape.add(acc, scaled),
                None => scaled,
            });
        }
    }
    total.unwrap_or_else(|| tape.constant(Array2::zeros((actions.dim * blocks, 2))))
}

/// The Schrödinger-residual loss Σ_rows |i·dΨ/dt − H(θ)Ψ|² over a
/// stacked collocation node carrying a time tangent. Summed — not
/// averaged — over all basis states and collocation points.
pub fn physics_residual_loss(
    tape: &mut Tape,
    psi: NodeId,
    theta: &[NodeId],
    actions: &SlotActions,
    blocks: usize,
) -> Result<NodeId, LearnError> {
    let dpsi = tape.tangent_of(psi)?;
    let idpsi = tape.mul_by_i(dpsi);
    let psi_v = tape.stop_tangent(psi);
    let hpsi = apply_hamiltonian(tape, psi_v, theta, actions, blocks);
    let residual = tape.sub(idpsi, hpsi);
    let sq = tape.abs_sq_rows(residual);
    Ok(tape.sum(sq))
}

/// Packs complex amplitudes into the `[B, 2]` column layout.
pub fn amps_to_columns(amps: &[Complex64]) -> Array2<f64> {
    let mut out = Array2::zeros((amps.len(), 2));
    for (r, a) in amps.iter().enumerate() {
        out[(r, 0)] = a.re;
        out[(r, 1)] = a.im;
    }
    out
}

/// The initial-condition mismatch for one member:
/// (1/K) Σ_m |⟨m|Ψ(0)⟩ − Ψ_w(0, m)|² with K = 2ⁿ.
pub fn initial_mismatch_loss(tape: &mut Tape, psi0: NodeId, target: &[Complex64]) -> NodeId {
    let k = target.len();
    let tgt = tape.constant(amps_to_columns(target));
    let diff = tape.sub(psi0, tgt);
    let sq = tape.abs_sq_rows(diff);
    let total = tape.sum(sq);
    tape.scale(total, 1.0 / k as f64)
}

/// Per-qubit gate matrices for a tape-level measurement rotation;
/// identity factors collapse to `None`.
pub fn tape_gates(u: &LocalUnitary) -> Vec<Option<[Complex64; 4]>> {
    u.factors()
        .iter()
        .map(|g| match g {
            Gate::I => None,
            other => {
                let m = other.matrix();
                Some([m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]])
            }
        })
        .collect()
}

/// |⟨y|M Ψ⟩|² for every outcome y: rotate by the measurement unitary,
/// then take squared moduli per row.
pub fn measured_abs_sq(tape: &mut Tape, psi: NodeId, meas: &LocalUnitary) -> NodeId {
    let rotated = tape.local_unitary(psi, tape_gates(meas));
    tape.abs_sq_rows(rotated)
}

/// Σ_y w_y · v_y over a `[B, 1]` node.
pub fn weighted_sum(tape: &mut Tape, values: NodeId, weights: &[f64]) -> NodeId {
    let w = Array2::from_shape_vec((weights.len(), 1), weights.to_vec())
        .expect("weight vector shape");
    let prod = tape.mul_const(values, w);
    tape.sum(prod)
}

/// The probability floor inside logarithms of the noisy likelihood.
pub const LOG_CLAMP_FLOOR: f64 = 1e-12;

/// Reparameterized readout fidelity node: q = 0.5 + 0.5·sigmoid(a).
pub fn readout_q_node(tape: &mut Tape, a: NodeId) -> NodeId {
    let sig = tape.sigmoid(a);
    let half = tape.scale(sig, 0.5);
    tape.add_const(half, 0.5)
}

/// Depolarization weight node at time `t` from the reparameterized time
/// constant μ = exp(b): p_d = 1 − exp(−(t−t0)/μ), or the literal
/// exponential exp(−(t−t0)/μ) behind the alternate-form switch.
pub fn depolarization_node(
    tape: &mut Tape,
    b: NodeId,
    t: f64,
    t0: f64,
    literal_exp: bool,
) -> NodeId {
    let neg_b = tape.neg(b);
    let inv_mu = tape.exp(neg_b);
    let scaled = tape.scale(inv_mu, -(t - t0));
    let decay = tape.exp(scaled);
    if literal_exp {
        decay
    } else {
        let neg = tape.neg(decay);
        tape.add_const(neg, 1.0)
    }
}

/// Applies the depolarizing mixture to a `[B, 1]` probability node:
/// (1 − p_d)·p + p_d/B.
pub fn depolarize_node(tape: &mut Tape, p: NodeId, p_d: NodeId) -> NodeId {
    let b_dim = tape.value(p).nrows();
    let neg_pd = tape.neg(p_d);
    let keep = tape.add_const(neg_pd, 1.0);
    let kept = tape.scalar_mul(keep, p);
    let unif_weight = tape.scale(p_d, 1.0 / b_dim as f64);
    let ones = tape.constant(Array2::from_elem((b_dim, 1), 1.0));
    let uniform = tape.scalar_mul(unif_weight, ones);
    tape.add(kept, uniform)
}

/// Applies the symmetric per-qubit readout bit-flip channel to a
/// `[2ⁿ, 1]` probability node: per qubit, p ← q·p + (1−q)·p_flipped.
pub fn readout_node(tape: &mut Tape, p: NodeId, q: NodeId, n: usize) -> NodeId {
    let dim = tape.value(p).nrows();
    debug_assert_eq!(dim, 1 << n);
    let one_minus_q = {
        let neg = tape.neg(q);
        tape.add_const(neg, 1.0)
    };
    let mut current = p;
    for qubit in 0..n {
        let mask = 1usize << (n - 1 - qubit);
        let perm: Vec<usize> = (0..dim).map(|y| y ^ mask).collect();
        let flipped = tape.permute_rows(current, perm);
        let kept = tape.scalar_mul(q, current);
        let crossed = tape.scalar_mul(one_minus_q, flipped);
        current = tape.add(kept, crossed);
    }
    current
}

/// Normalizes a `[B, 1]` nonnegative node to sum 1 (the explicit
/// normalization of the probability model).
pub fn normalize_probs(tape: &mut Tape, p: NodeId) -> NodeId {
    let total = tape.sum(p);
    let inv = tape.recip(total);
    tape.scalar_mul(inv, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hamlearn_autodiff::ParamStore;
    use hamlearn_core::pauli::Axis;
    use hamlearn_core::{PauliString, StateVector};

    fn z_model(theta: f64) -> HamiltonianModel {
        HamiltonianModel::new(
            1,
            vec![(PauliString::single(1, 0, Axis::Z).unwrap(), 0)],
            vec![0],
            vec![theta],
        )
        .unwrap()
    }

    fn x_model(theta: f64) -> HamiltonianModel {
        HamiltonianModel::new(
            1,
            vec![(PauliString::single(1, 0, Axis::X).unwrap(), 0)],
            vec![0],
            vec![theta],
        )
        .unwrap()
    }

    /// Injects amplitudes (+ tangent) for P stacked points.
    fn inject(
        tape: &mut Tape,
        amps: &[Complex64],
        tangent: Option<&[Complex64]>,
    ) -> NodeId {
        let value = amps_to_columns(amps);
        let tan = tangent.map(amps_to_columns);
        tape.input(value, tan)
    }

    #[test]
    fn exact_eigenstate_annihilates_the_physics_residual() {
        // H = 0.7·Z, eigenstate |1⟩ with E = −0.7: Ψ(t) = e^{+0.7it}|1⟩.
        let model = z_model(0.7);
        let actions = SlotActions::new(&model);
        let mut store = ParamStore::new();
        store.register("theta", 1, 1, || 0.7);
        let mut tape = Tape::new();
        let times = [0.3, 0.9, 1.4];
        let mut amps = Vec::new();
        let mut tans = Vec::new();
        for &t in &times {
            let phase = Complex64::from_polar(1.0, 0.7 * t);
            amps.extend_from_slice(&[Complex64::new(0.0, 0.0), phase]);
            tans.extend_from_slice(&[
                Complex64::new(0.0, 0.0),
                phase * Complex64::new(0.0, 0.7),
            ]);
        }
        let psi = inject(&mut tape, &amps, Some(&tans));
        let theta = vec![tape.scalar_param(&store, 0)];
        let loss =
            physics_residual_loss(&mut tape, psi, &theta, &actions, times.len()).unwrap();
        assert!(tape.scalar_value(loss) < 1e-10);
    }

    #[test]
    fn pinned_zero_state_under_sigma_x_costs_one_per_point() {
        // Time-constant Ψ ≡ |0⟩ with H = σ_x: residual per point is
        // ‖−σ_x|0⟩‖² = 1, so the summed loss equals P.
        let model = x_model(1.0);
        let actions = SlotActions::new(&model);
        let mut store = ParamStore::new();
        store.register("theta", 1, 1, || 1.0);
        for p_points in [1usize, 4, 17] {
            let mut tape = Tape::new();
            let mut amps = Vec::new();
            let mut tans = Vec::new();
            for _ in 0..p_points {
                amps.extend_from_slice(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
                tans.extend_from_slice(&[Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)]);
            }
            let psi = inject(&mut tape, &amps, Some(&tans));
            let theta = vec![tape.scalar_param(&store, 0)];
            let loss =
                physics_residual_loss(&mut tape, psi, &theta, &actions, p_points).unwrap();
            assert!((tape.scalar_value(loss) - p_points as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_theta_and_constant_state_give_zero_loss() {
        let model = x_model(0.0);
        let actions = SlotActions::new(&model);
        let mut store = ParamStore::new();
        store.register("theta", 1, 1, || 0.0);
        let mut tape = Tape::new();
        let amps = [Complex64::new(0.6, 0.2), Complex64::new(-0.3, 0.5)];
        let tans = [Complex64::new(0.0, 0.0); 2];
        let psi = inject(&mut tape, &amps, Some(&tans));
        let theta = vec![tape.scalar_param(&store, 0)];
        let loss = physics_residual_loss(&mut tape, psi, &theta, &actions, 1).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn initial_loss_k2_worked_example() {
        // |Ψ(0)⟩ = |0⟩ but the network outputs the amplitudes of |1⟩:
        // (|1−0|² + |0−1|²)/2 = 1.
        let mut tape = Tape::new();
        let net_out = inject(
            &mut tape,
            &[Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
            None,
        );
        let target = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let loss = initial_mismatch_loss(&mut tape, net_out, &target);
        assert!((tape.scalar_value(loss) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_network_initial_loss_is_one_over_k() {
        for n in 1..=3usize {
            let k = 1 << n;
            let psi0 = StateVector::basis_state(n, k - 1).unwrap();
            let mut tape = Tape::new();
            let net_out = inject(&mut tape, &vec![Complex64::new(0.0, 0.0); k], None);
            let loss = initial_mismatch_loss(&mut tape, net_out, psi0.amplitudes());
            assert!((tape.scalar_value(loss) - 1.0 / k as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_initial_amplitudes_give_zero() {
        let prep = LocalUnitary::new(vec![Gate::Sh, Gate::H]).unwrap();
        let psi0 = prep.apply(&StateVector::zero_state(2).unwrap()).unwrap();
        let mut tape = Tape::new();
        let net_out = inject(&mut tape, psi0.amplitudes(), None);
        let loss = initial_mismatch_loss(&mut tape, net_out, psi0.amplitudes());
        assert!(tape.scalar_value(loss) < 1e-30);
    }

    #[test]
    fn measured_abs_sq_matches_simulator_probabilities() {
        let prep = LocalUnitary::new(vec![Gate::Sh, Gate::X]).unwrap();
        let meas = LocalUnitary::new(vec![Gate::Hsdg, Gate::H]).unwrap();
        let psi = prep.apply(&StateVector::zero_state(2).unwrap()).unwrap();
        let expected = hamlearn_core::measurement_probs(&psi, &meas).unwrap();
        let mut tape = Tape::new();
        let node = inject(&mut tape, psi.amplitudes(), None);
        let sq = measured_abs_sq(&mut tape, node, &meas);
        for (y, want) in expected.iter().enumerate() {
            assert!((tape.value(sq)[(y, 0)] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn data_loss_worked_examples() {
        // N=1, |Ψ(t₁, y₁)| = 1 → −1; amplitude 0 at the outcome → 0; two
        // entries with squared magnitudes 1 and 0 → −0.5.
        let meas = LocalUnitary::identity(1).unwrap();
        let mut tape = Tape::new();
        let psi = inject(
            &mut tape,
            &[Complex64::new(0.0, 1.0), Complex64::new(0.0, 0.0)],
            None,
        );
        let sq = measured_abs_sq(&mut tape, psi, &meas);

        let single_hit = weighted_sum(&mut tape, sq, &[1.0, 0.0]);
        let loss1 = tape.scale(single_hit, -1.0);
        assert!((tape.scalar_value(loss1) - (-1.0)).abs() < 1e-15);

        let single_miss = weighted_sum(&mut tape, sq, &[0.0, 1.0]);
        let loss2 = tape.scale(single_miss, -1.0);
        assert_eq!(tape.scalar_value(loss2), 0.0);

        let both = weighted_sum(&mut tape, sq, &[1.0, 1.0]);
        let loss3 = tape.scale(both, -1.0 / 2.0);
        assert!((tape.scalar_value(loss3) - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn total_loss_weighting_example() {
        // Components (−0.5, 2.0, 0.1) with λ₁ = λ₂ = 1 → 1.6; and with
        // λ₁ = λ₂ = 0 the total equals the data term exactly.
        let mut tape = Tape::new();
        let data = tape.constant(Array2::from_elem((1, 1), -0.5));
        let physics = tape.constant(Array2::from_elem((1, 1), 2.0));
        let initial = tape.constant(Array2::from_elem((1, 1), 0.1));
        let weighted = |tape: &mut Tape, l1: f64, l2: f64| {
            let p = tape.scale(physics, l1);
            let i = tape.scale(initial, l2);
            let dp = tape.add(data, p);
            tape.add(dp, i)
        };
        let total = weighted(&mut tape, 1.0, 1.0);
        assert!((tape.scalar_value(total) - 1.6).abs() < 1e-15);
        let data_only = weighted(&mut tape, 0.0, 0.0);
        assert_eq!(tape.scalar_value(data_only), -0.5);
        let double_l1 = weighted(&mut tape, 2.0, 1.0);
        assert!((tape.scalar_value(double_l1) - (1.6 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn noisy_channel_nodes_match_core_channels() {
        // 1 qubit, pure p(0)=1, p_d=0.5, q=0.9 → p_obs(0) = 0.70; and the
        // tape pipeline must agree with the core channel arithmetic on a
        // random 2-qubit distribution.
        let mut store = ParamStore::new();
        // a = logit((0.9−0.5)/0.5) so that q = 0.9 exactly.
        let a_val = (0.8f64 / 0.2).ln();
        store.register("a", 1, 1, || a_val);
        // b chosen so p_d(t=1, t0=0) = 0.5: 1/μ = −ln(0.5) → b = −ln(ln 2).
        let b_val = -((2f64).ln().ln());
        store.register("b", 1, 1, || b_val);

        let mut tape = Tape::new();
        let p = tape.constant(Array2::from_shape_vec((2, 1), vec![1.0, 0.0]).unwrap());
        let a = tape.scalar_param(&store, 0);
        let b = tape.scalar_param(&store, 1);
        let q = readout_q_node(&mut tape, a);
        let pd = depolarization_node(&mut tape, b, 1.0, 0.0, false);
        assert!((tape.scalar_value(q) - 0.9).abs() < 1e-12);
        assert!((tape.scalar_value(pd) - 0.5).abs() < 1e-12);
        let mixed = depolarize_node(&mut tape, p, pd);
        let observed = readout_node(&mut tape, mixed, q, 1);
        assert!((tape.value(observed)[(0, 0)] - 0.70).abs() < 1e-12);

        let p2 = vec![0.4, 0.3, 0.2, 0.1];
        let mixed2 = hamlearn_core::noise::depolarize_probs(&p2, 0.5, 2).unwrap();
        let expected = hamlearn_core::noise::readout_channel(&mixed2, 0.9).unwrap();
        let node = tape.constant(Array2::from_shape_vec((4, 1), p2).unwrap());
        let m = depolarize_node(&mut tape, node, pd);
        let o = readout_node(&mut tape, m, q, 2);
        for (y, want) in expected.iter().enumerate() {
            assert!((tape.value(o)[(y, 0)] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn depolarization_node_literal_form() {
        let mut store = ParamStore::new();
        store.register("b", 1, 1, || 0.0); // μ = 1
        let mut tape = Tape::new();
        let b = tape.scalar_param(&store, 0);
        let literal = depolarization_node(&mut tape, b, 2.0, 0.5, true);
        assert!((tape.scalar_value(literal) - (-1.5f64).exp()).abs() < 1e-15);
        let standard = depolarization_node(&mut tape, b, 2.0, 0.5, false);
        assert!((tape.scalar_value(standard) - (1.0 - (-1.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn normalization_node_sums_to_one() {
        let mut tape = Tape::new();
        let p = tape.constant(Array2::from_shape_vec((3, 1), vec![0.2, 0.5, 1.3]).unwrap());
        let normed = normalize_probs(&mut tape, p);
        let total: f64 = (0..3).map(|r| tape.value(normed)[(r, 0)]).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!((tape.value(normed)[(2, 0)] - 1.3 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn no_data_and_zero_weights_give_zero_gradient_everywhere() {
        // λ₁ = λ₂ = 0 and no data entries: nothing receives gradient.
        let mut store = ParamStore::new();
        store.register("theta", 3, 1, || 0.4);
        let mut tape = Tape::new();
        let zero = tape.constant(Array2::zeros((1, 1)));
        // Touch the parameters so they are on the tape, scaled by λ = 0.
        let th = tape.param(&store, 0, 3, 1);
        let sq = tape.square(th);
        let s = tape.sum(sq);
        let weighted = tape.scale(s, 0.0);
        let total = tape.add(zero, weighted);
        let grads = tape.backward(total, store.len()).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }
}
