//! The four benchmark model families.
//!
//! Each builder returns a [`HamiltonianModel`] whose θ layout is fixed
//! and documented, so learners, dataset generators, and metrics all
//! agree on parameter order.

use hamlearn_core::pauli::Axis;
use hamlearn_core::{
    DepolarizationModel, HamiltonianModel, NoiseConfig, PauliString, ReadoutNoise,
};

use crate::LearnError;

fn invalid(reason: String) -> LearnError {
    LearnError::InvalidConfig { reason }
}

/// Periodic Ising-type chain: H = Σ_{i=1..N} J_i Z_i Z_{i+1} + Σ_i ω_i Z_i
/// with couplings repeating with period s (s divides N). θ layout:
/// [J_1..J_s, ω_1..ω_s], 2s free parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinChainSpec {
    pub n: usize,
    /// Translation period of the couplings; `s = 1` is the uniform ring.
    pub s: usize,
    pub j: Vec<f64>,
    pub omega: Vec<f64>,
}

impl SpinChainSpec {
    pub fn uniform(n: usize, j: f64, omega: f64) -> Self {
        Self {
            n,
            s: 1,
            j: vec![j],
            omega: vec![omega],
        }
    }
}

pub fn build_spin_chain(spec: &SpinChainSpec) -> Result<HamiltonianModel, LearnError> {
    let SpinChainSpec { n, s, j, omega } = spec;
    let (n, s) = (*n, *s);
    if n < 2 {
        return Err(invalid(format!("chain needs at least 2 sites, got {n}")));
    }
    if s == 0 || n % s != 0 {
        return Err(invalid(format!("period {s} does not divide chain length {n}")));
    }
    if j.len() != s || omega.len() != s {
        return Err(invalid(format!(
            "period {s} requires {s} couplings and {s} fields, got {} and {}",
            j.len(),
            omega.len()
        )));
    }
    let mut terms = Vec::with_capacity(2 * n);
    let mut tying = Vec::with_capacity(2 * n);
    // Bonds (i, i+1 mod N), 1-based sites; bond i draws J_{((i−1) mod s)+1}.
    for i in 1..=n {
        let a = i - 1;
        let b = i % n;
        terms.push((PauliString::two_site(n, a, Axis::Z, b, Axis::Z)?, terms.len()));
        tying.push((i - 1) % s);
    }
    // Fields ω on each site, same periodicity, slots offset by s.
    for i in 1..=n {
        terms.push((PauliString::single(n, i - 1, Axis::Z)?, terms.len()));
        tying.push(s + (i - 1) % s);
    }
    let mut theta = j.clone();
    theta.extend_from_slice(omega);
    Ok(HamiltonianModel::new(n, terms, tying, theta)?)
}

/// Effective cross-resonance gate Hamiltonian on (control, target):
/// H = Σ_k (c_k/2)·P_k over P = (ZI, ZX, ZY, ZZ, IX, IY, IZ). The model's
/// θ slots store c_k/2; convert with [`cr_c_from_theta`].
#[derive(Clone, Debug, PartialEq)]
pub struct CrGateSpec {
    pub c: [f64; 7],
    /// Readout fidelity of the accompanying noise model.
    pub q: f64,
    /// Depolarization time constant.
    pub mu: f64,
    pub t0: f64,
}

impl Default for CrGateSpec {
    fn default() -> Self {
        Self {
            c: [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1],
            q: 0.995,
            mu: 5.0,
            t0: 0.0,
        }
    }
}

/// The CR Pauli strings in slot order.
pub const CR_PAULIS: [&str; 7] = ["ZI", "ZX", "ZY", "ZZ", "IX", "IY", "IZ"];

pub fn cr_theta_from_c(c: &[f64; 7]) -> Vec<f64> {
    c.iter().map(|v| v / 2.0).collect()
}

pub fn cr_c_from_theta(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|v| v * 2.0).collect()
}

pub fn build_cr_gate(spec: &CrGateSpec) -> Result<HamiltonianModel, LearnError> {
    let mut terms = Vec::with_capacity(7);
    let mut tying = Vec::with_capacity(7);
    for (k, p) in CR_PAULIS.iter().enumerate() {
        terms.push((PauliString::parse(p)?, k));
        tying.push(k);
    }
    Ok(HamiltonianModel::new(2, terms, tying, cr_theta_from_c(&spec.c))?)
}

impl CrGateSpec {
    /// The measurement-noise model paired with this gate.
    pub fn noise(&self) -> Result<NoiseConfig, LearnError> {
        Ok(NoiseConfig {
            readout: ReadoutNoise::new(self.q)?,
            depolarization: DepolarizationModel::with_form(
                self.mu,
                self.t0,
                hamlearn_core::DepolarizationForm::OneMinusExp,
            )?,
        })
    }
}

/// All-to-all crosstalk: for every pair i<j,
/// η_ij (X_iX_j + Y_iY_j) + ε_ij Z_iZ_j. θ layout: the n(n−1)/2 values
/// η_ij in lexicographic pair order, then the ε_ij likewise — n(n−1)
/// free parameters total.
#[derive(Clone, Debug, PartialEq)]
pub struct CrosstalkSpec {
    pub n: usize,
    /// Symmetric n×n with zero diagonal.
    pub eta: Vec<Vec<f64>>,
    /// Symmetric n×n with zero diagonal.
    pub epsilon: Vec<Vec<f64>>,
}

fn check_coupling_matrix(name: &str, n: usize, m: &[Vec<f64>]) -> Result<(), LearnError> {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(invalid(format!("{name} must be {n}×{n}")));
    }
    for i in 0..n {
        if m[i][i] != 0.0 {
            return Err(invalid(format!(
                "{name} has nonzero diagonal entry at ({i},{i}); qubits do not couple to themselves"
            )));
        }
        for j in 0..i {
            if m[i][j] != m[j][i] {
                return Err(invalid(format!(
                    "{name} must be symmetric; ({i},{j}) disagrees with ({j},{i})"
                )));
            }
        }
    }
    Ok(())
}

pub fn build_crosstalk(spec: &CrosstalkSpec) -> Result<HamiltonianModel, LearnError> {
    let n = spec.n;
    if n < 2 {
        return Err(invalid(format!("crosstalk needs at least 2 qubits, got {n}")));
    }
    check_coupling_matrix("eta", n, &spec.eta)?;
    check_coupling_matrix("epsilon", n, &spec.epsilon)?;
    let num_pairs = n * (n - 1) / 2;
    let mut terms = Vec::new();
    let mut tying = Vec::new();
    let mut theta = vec![0.0; 2 * num_pairs];
    let mut pair = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let eta_slot = pair;
            let eps_slot = num_pairs + pair;
            theta[eta_slot] = spec.eta[i][j];
            theta[eps_slot] = spec.epsilon[i][j];
            // XX and YY share the same η slot.
            terms.push((PauliString::two_site(n, i, Axis::X, j, Axis::X)?, terms.len()));
            tying.push(eta_slot);
            terms.push((PauliString::two_site(n, i, Axis::Y, j, Axis::Y)?, terms.len()));
            tying.push(eta_slot);
            terms.push((PauliString::two_site(n, i, Axis::Z, j, Axis::Z)?, terms.len()));
            tying.push(eps_slot);
            pair += 1;
        }
    }
    Ok(HamiltonianModel::new(n, terms, tying, theta)?)
}

/// Two-qubit drift model H = ω₁ Z₁ + ω₂ Z₂ + ε Z₁Z₂; θ = (ω₁, ω₂, ε).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftSpec {
    pub omega1: f64,
    pub omega2: f64,
    pub epsilon: f64,
}

pub fn build_drift(spec: &DriftSpec) -> Result<HamiltonianModel, LearnError> {
    Ok(HamiltonianModel::new(
        2,
        vec![
            (PauliString::parse("ZI")?, 0),
            (PauliString::parse("IZ")?, 1),
            (PauliString::parse("ZZ")?, 2),
        ],
        vec![0, 1, 2],
        vec![spec.omega1, spec.omega2, spec.epsilon],
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    /// Basis-index image under a cyclic qubit shift by `k`.
    fn shift_perm(n: usize, k: usize) -> Vec<usize> {
        let dim = 1usize << n;
        (0..dim)
            .map(|m| {
                let mut out = 0usize;
                for q in 0..n {
                    let bit = (m >> (n - 1 - q)) & 1;
                    let dest = (q + k) % n;
                    out |= bit << (n - 1 - dest);
                }
                out
            })
            .collect()
    }

    fn conjugation_invariant(model: &HamiltonianModel, k: usize) -> bool {
        let h = model.build_dense().unwrap();
        let perm = shift_perm(model.num_qubits(), k);
        let dim = h.nrows();
        for x in 0..dim {
            for y in 0..dim {
                if (h[(perm[x], perm[y])] - h[(x, y)]).norm() > 1e-12 {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn chain_slots_follow_the_period() {
        let model = build_spin_chain(&SpinChainSpec {
            n: 4,
            s: 2,
            j: vec![1.0, 0.3],
            omega: vec![0.5, -0.2],
        })
        .unwrap();
        assert_eq!(model.num_params(), 4);
        assert_eq!(model.num_terms(), 8);
        // Bonds 1 and 3 share J_1; bonds 2 and 4 share J_2; same for fields.
        assert_eq!(
            model.terms_by_slot(),
            vec![vec![0, 2], vec![1, 3], vec![4, 6], vec![5, 7]]
        );
        assert_eq!(model.theta(), &[1.0, 0.3, 0.5, -0.2]);
    }

    #[test]
    fn chain_validation_rejects_bad_periods() {
        let bad = SpinChainSpec {
            n: 4,
            s: 3,
            j: vec![1.0; 3],
            omega: vec![0.5; 3],
        };
        assert!(matches!(
            build_spin_chain(&bad),
            Err(LearnError::InvalidConfig { .. })
        ));
        let short = SpinChainSpec {
            n: 4,
            s: 2,
            j: vec![1.0],
            omega: vec![0.5, 0.5],
        };
        assert!(build_spin_chain(&short).is_err());
        assert!(build_spin_chain(&SpinChainSpec::uniform(1, 1.0, 0.5)).is_err());
    }

    #[test]
    fn two_site_ring_doubles_the_single_bond() {
        // On N=2 the periodic bonds (1,2) and (2,1) coincide, so the
        // effective coupling is 2J.
        let model = build_spin_chain(&SpinChainSpec::uniform(2, 1.0, 0.0)).unwrap();
        let h = model.build_dense().unwrap();
        let want = [2.0, -2.0, -2.0, 2.0];
        for (i, w) in want.iter().enumerate() {
            assert!((h[(i, i)] - Complex64::new(*w, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn uniform_ring_is_shift_invariant_and_period_two_is_not() {
        let s1 = build_spin_chain(&SpinChainSpec::uniform(4, 0.8, 0.3)).unwrap();
        assert!(conjugation_invariant(&s1, 1));
        let s2 = build_spin_chain(&SpinChainSpec {
            n: 4,
            s: 2,
            j: vec![1.0, 0.25],
            omega: vec![0.5, -0.1],
        })
        .unwrap();
        assert!(conjugation_invariant(&s2, 2));
        assert!(!conjugation_invariant(&s2, 1));
    }

    #[test]
    fn cr_gate_matches_hand_built_matrix() {
        // c = (1, 0, …, 0) → H = Z⊗I / 2.
        let model = build_cr_gate(&CrGateSpec {
            c: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            ..CrGateSpec::default()
        })
        .unwrap();
        let h = model.build_dense().unwrap();
        let want = [0.5, 0.5, -0.5, -0.5];
        for (i, w) in want.iter().enumerate() {
            assert!((h[(i, i)] - Complex64::new(*w, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn cr_gate_has_seven_traceless_slots() {
        let model = build_cr_gate(&CrGateSpec::default()).unwrap();
        assert_eq!(model.num_params(), 7);
        let h = model.build_dense().unwrap();
        let trace: Complex64 = (0..4).map(|i| h[(i, i)]).sum();
        assert!(trace.norm() < 1e-14);
        // Round trip between natural gains and θ slots.
        let c = CrGateSpec::default().c;
        let back = cr_c_from_theta(&cr_theta_from_c(&c));
        for (a, b) in c.iter().zip(&back) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((model.theta()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn crosstalk_flip_flop_spectrum() {
        // Single pair with η = 1, ε = 0: XX + YY swaps |01⟩ and |10⟩ with
        // weight 2, leaving |00⟩ and |11⟩ alone → eigenvalues {2, −2, 0, 0}.
        let model = build_crosstalk(&CrosstalkSpec {
            n: 2,
            eta: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            epsilon: vec![vec![0.0; 2]; 2],
        })
        .unwrap();
        let eig = model.eigendecomposition().unwrap();
        let mut e = eig.energies.clone();
        e.sort_by(f64::total_cmp);
        let want = [-2.0, 0.0, 0.0, 2.0];
        for (a, b) in e.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "spectrum {e:?}");
        }
    }

    #[test]
    fn crosstalk_parameter_count_and_tying() {
        let n = 3;
        let eta = vec![
            vec![0.0, 0.1, 0.2],
            vec![0.1, 0.0, 0.3],
            vec![0.2, 0.3, 0.0],
        ];
        let eps = vec![
            vec![0.0, -0.1, -0.2],
            vec![-0.1, 0.0, -0.3],
            vec![-0.2, -0.3, 0.0],
        ];
        let model = build_crosstalk(&CrosstalkSpec {
            n,
            eta: eta.clone(),
            epsilon: eps,
        })
        .unwrap();
        assert_eq!(model.num_params(), n * (n - 1));
        assert_eq!(model.num_terms(), 3 * n * (n - 1) / 2);
        // Each η slot feeds exactly two terms (XX and YY).
        let by_slot = model.terms_by_slot();
        for slot in 0..3 {
            assert_eq!(by_slot[slot].len(), 2, "η slot {slot}");
        }
        for slot in 3..6 {
            assert_eq!(by_slot[slot].len(), 1, "ε slot {slot}");
        }
        assert_eq!(model.theta()[..3], [0.1, 0.2, 0.3]);
    }

    #[test]
    fn crosstalk_validation_rejects_malformed_matrices() {
        let asym = CrosstalkSpec {
            n: 2,
            eta: vec![vec![0.0, 1.0], vec![0.5, 0.0]],
            epsilon: vec![vec![0.0; 2]; 2],
        };
        assert!(build_crosstalk(&asym).is_err());
        let diag = CrosstalkSpec {
            n: 2,
            eta: vec![vec![0.1, 1.0], vec![1.0, 0.0]],
            epsilon: vec![vec![0.0; 2]; 2],
        };
        assert!(build_crosstalk(&diag).is_err());
    }

    #[test]
    fn drift_model_layout() {
        let model = build_drift(&DriftSpec {
            omega1: 0.5,
            omega2: 0.5,
            epsilon: 1.0,
        })
        .unwrap();
        assert_eq!(model.num_params(), 3);
        let h = model.build_dense().unwrap();
        let want = [2.0, -1.0, -1.0, 0.0];
        for (i, w) in want.iter().enumerate() {
            assert!((h[(i, i)] - Complex64::new(*w, 0.0)).norm() < 1e-14);
        }
    }
}
