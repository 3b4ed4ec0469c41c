//! The neural-quantum-state ensemble: one network per initial state,
//! sharing a single Hamiltonian-parameter vector (and, when noise is
//! fitted, the reparameterized readout/depolarization scalars).

use hamlearn_autodiff::{
    amplitude_input_tangent, amplitude_inputs, Mlp, MlpSpec, NodeId, ParamStore, Tape,
};
use hamlearn_core::{DatasetEntry, HamiltonianModel, LocalUnitary, StateVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::LearnError;

/// Offsets of the smoothly reparameterized noise scalars inside the
/// parameter store: q = 0.5 + 0.5·sigmoid(a), μ = exp(b).
#[derive(Clone, Copy, Debug)]
pub struct NoiseSlots {
    pub a_offset: usize,
    pub b_offset: usize,
}

/// One MLP per initial quantum state, with the physical parameters θ
/// registered ahead of all network weights in a shared flat store, so a
/// single optimizer updates everything jointly.
pub struct NnqsEnsemble {
    n: usize,
    theta_len: usize,
    noise: Option<NoiseSlots>,
    nets: Vec<Mlp>,
    preps: Vec<LocalUnitary>,
    initial_amps: Vec<Vec<Complex64>>,
    t_scale: f64,
}

impl NnqsEnsemble {
    /// Registers θ (uniform in ±`theta_box`), optional noise scalars, and
    /// one network per preparation into `store`. θ always occupies
    /// offsets `0..num_params`.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        model: &HamiltonianModel,
        preps: Vec<LocalUnitary>,
        hidden: &[usize],
        t_scale: f64,
        noise_init: Option<(f64, f64)>,
        theta_box: f64,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, LearnError> {
        if preps.is_empty() {
            return Err(LearnError::EmptyDataset);
        }
        if t_scale <= 0.0 || !t_scale.is_finite() {
            return Err(LearnError::InvalidConfig {
                reason: format!("time scale must be positive, got {t_scale}"),
            });
        }
        let n = model.num_qubits();
        let theta_len = model.num_params();
        let offset = store.register("theta", theta_len, 1, || {
            rng.gen_range(-theta_box..=theta_box)
        });
        debug_assert_eq!(offset, 0, "theta must come first in the store");

        let noise = match noise_init {
            Some((a0, b0)) => {
                let a_offset = store.register("noise/a", 1, 1, || a0);
                let b_offset = store.register("noise/b", 1, 1, || b0);
                Some(NoiseSlots { a_offset, b_offset })
            }
            None => None,
        };

        let zero = StateVector::zero_state(n)?;
        let mut nets = Vec::with_capacity(preps.len());
        let mut initial_amps = Vec::with_capacity(preps.len());
        for (l, prep) in preps.iter().enumerate() {
            if prep.num_qubits() != n {
                return Err(LearnError::Core(
                    hamlearn_core::CoreError::DimensionMismatch {
                        expected: n,
                        got: prep.num_qubits(),
                    },
                ));
            }
            initial_amps.push(prep.apply(&zero)?.amplitudes().to_vec());
            let spec = MlpSpec::new(n + 1, hidden.to_vec(), 2);
            // Start each network near zero output: the summed Schrödinger
            // residual over all collocation rows is otherwise so stiff at
            // initialization that the fastest descent collapses every
            // amplitude to the zero-network stationary point.
            nets.push(Mlp::register_with_output_scale(
                spec,
                store,
                rng,
                &format!("net{l}"),
                0.1,
            ));
        }
        Ok(Self {
            n,
            theta_len,
            noise,
            nets,
            preps,
            initial_amps,
            t_scale,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn num_members(&self) -> usize {
        self.nets.len()
    }

    pub fn theta_len(&self) -> usize {
        self.theta_len
    }

    pub fn noise_slots(&self) -> Option<NoiseSlots> {
        self.noise
    }

    pub fn t_scale(&self) -> f64 {
        self.t_scale
    }

    pub fn preps(&self) -> &[LocalUnitary] {
        &self.preps
    }

    /// Target amplitudes of member `l` at t=0 (the prepared state).
    pub fn initial_amplitudes(&self, l: usize) -> &[Complex64] {
        &self.initial_amps[l]
    }

    /// The ensemble member trained for this preparation.
    pub fn member_index(&self, prep: &LocalUnitary) -> Option<usize> {
        self.preps.iter().position(|p| p == prep)
    }

    /// One scalar node per θ slot, for assembling H(θ)Ψ on a tape.
    pub fn theta_nodes(&self, tape: &mut Tape, store: &ParamStore) -> Vec<NodeId> {
        (0..self.theta_len)
            .map(|s| tape.scalar_param(store, s))
            .collect()
    }

    /// Records Ψ_w^{(l)} over all basis states at each of `times`,
    /// batched as one `[len(times)·2ⁿ, 2]` node carrying the time
    /// tangent — the physics-loss input.
    pub fn forward_collocation(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        l: usize,
        times: &[f64],
    ) -> Result<NodeId, LearnError> {
        let dim = self.dim();
        let basis: Vec<usize> = (0..dim).collect();
        let mut value = ndarray::Array2::zeros((times.len() * dim, self.n + 1));
        for (p, &t) in times.iter().enumerate() {
            let block = amplitude_inputs(&basis, self.n, t, self.t_scale);
            value
                .slice_mut(ndarray::s![p * dim..(p + 1) * dim, ..])
                .assign(&block);
        }
        let tangent = amplitude_input_tangent(times.len() * dim, self.n, self.t_scale);
        let x = tape.input(value, Some(tangent));
        Ok(self.nets[l].forward(tape, store, x)?)
    }

    /// Records Ψ_w^{(l)} over all basis states at a single time, without
    /// a tangent — the data/initial-loss input.
    pub fn forward_at(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        l: usize,
        t: f64,
    ) -> Result<NodeId, LearnError> {
        let basis: Vec<usize> = (0..self.dim()).collect();
        let x = tape.input(amplitude_inputs(&basis, self.n, t, self.t_scale), None);
        Ok(self.nets[l].forward(tape, store, x)?)
    }

    /// Runs member `l`'s network on an already-recorded input node —
    /// for callers that batch several times into one forward pass.
    pub fn net_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        l: usize,
        x: NodeId,
    ) -> Result<NodeId, LearnError> {
        Ok(self.nets[l].forward(tape, store, x)?)
    }
}

/// Distinct preparations of a dataset in order of first appearance — the
/// ensemble index set.
pub fn preps_from_dataset(entries: &[DatasetEntry]) -> Vec<LocalUnitary> {
    let mut preps: Vec<LocalUnitary> = Vec::new();
    for e in entries {
        if !preps.iter().any(|p| p == &e.query.prep) {
            preps.push(e.query.prep.clone());
        }
    }
    preps
}

#[cfg(test)]
mod tests {
    use super::*;
    use hamlearn_core::pauli::Axis;
    use hamlearn_core::{Gate, PauliString};
    use rand::SeedableRng;

    fn toy_model() -> HamiltonianModel {
        HamiltonianModel::new(
            1,
            vec![(PauliString::single(1, 0, Axis::Z).unwrap(), 0)],
            vec![0],
            vec![0.5],
        )
        .unwrap()
    }

    #[test]
    fn theta_occupies_the_store_head() {
        let model = toy_model();
        let preps = vec![
            LocalUnitary::new(vec![Gate::H]).unwrap(),
            LocalUnitary::new(vec![Gate::Sh]).unwrap(),
        ];
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ens = NnqsEnsemble::build(
            &model, preps, &[8, 8], 1.0, None, 2.0, &mut store, &mut rng,
        )
        .unwrap();
        assert_eq!(ens.theta_len(), 1);
        assert_eq!(store.blocks()[0].label, "theta");
        assert_eq!(store.blocks()[0].offset, 0);
        assert!(store.data()[0].abs() <= 2.0);
        assert_eq!(ens.num_members(), 2);
    }

    #[test]
    fn member_lookup_and_initial_amplitudes() {
        let model = toy_model();
        let h = LocalUnitary::new(vec![Gate::H]).unwrap();
        let sh = LocalUnitary::new(vec![Gate::Sh]).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ens = NnqsEnsemble::build(
            &model,
            vec![h.clone(), sh.clone()],
            &[4],
            1.0,
            None,
            2.0,
            &mut store,
            &mut rng,
        )
        .unwrap();
        assert_eq!(ens.member_index(&h), Some(0));
        assert_eq!(ens.member_index(&sh), Some(1));
        let inv = 1.0 / 2f64.sqrt();
        // |+i⟩ = (|0⟩ + i|1⟩)/√2.
        let amps = ens.initial_amplitudes(1);
        assert!((amps[0] - Complex64::new(inv, 0.0)).norm() < 1e-12);
        assert!((amps[1] - Complex64::new(0.0, inv)).norm() < 1e-12);
    }

    #[test]
    fn collocation_batch_has_tangent_and_expected_shape() {
        let model = toy_model();
        let preps = vec![LocalUnitary::new(vec![Gate::H]).unwrap()];
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ens = NnqsEnsemble::build(
            &model, preps, &[6], 2.0, None, 2.0, &mut store, &mut rng,
        )
        .unwrap();
        let mut tape = Tape::new();
        let psi = ens
            .forward_collocation(&mut tape, &store, 0, &[0.1, 0.9, 1.7])
            .unwrap();
        assert_eq!(tape.value(psi).dim(), (3 * 2, 2));
        assert!(tape.tangent(psi).is_some());
        let mut tape2 = Tape::new();
        let at = ens.forward_at(&mut tape2, &store, 0, 0.0).unwrap();
        assert_eq!(tape2.value(at).dim(), (2, 2));
        assert!(tape2.tangent(at).is_none());
    }

    #[test]
    fn noise_slots_follow_theta() {
        let model = toy_model();
        let preps = vec![LocalUnitary::new(vec![Gate::H]).unwrap()];
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ens = NnqsEnsemble::build(
            &model,
            preps,
            &[4],
            1.0,
            Some((1.5, 0.7)),
            2.0,
            &mut store,
            &mut rng,
        )
        .unwrap();
        let slots = ens.noise_slots().unwrap();
        assert_eq!(slots.a_offset, 1);
        assert_eq!(slots.b_offset, 2);
        assert_eq!(store.data()[1], 1.5);
        assert_eq!(store.data()[2], 0.7);
    }
}
