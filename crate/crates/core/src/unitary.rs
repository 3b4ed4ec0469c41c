//! Product (tensor-factor) unitaries for state preparation and measurement
//! rotations.
//!
//! The query model only permits product operations: each qubit is prepared
//! and measured independently. A [`LocalUnitary`] is therefore a list of n
//! single-qubit gates. The standard preparation menu maps |0⟩ to one of
//! {|0⟩, |1⟩, |+⟩, |+i⟩}, and the measurement menu rotates the X/Y/Z bases
//! onto the computational (Z) readout basis.

use nalgebra::{DVector, Matrix2};
use num_complex::Complex64;

use crate::state::StateVector;
use crate::CoreError;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// A single-qubit gate, either from the named menu or a custom 2×2 unitary.
///
/// Named gates beyond the generators: [`Gate::Sh`] is the composition S·H
/// (prepares |+i⟩ from |0⟩) and [`Gate::Hsdg`] is H·S† (rotates a Y-basis
/// measurement onto the computational basis).
#[derive(Clone, Copy, Debug)]
pub enum Gate {
    I,
    X,
    H,
    S,
    Sdg,
    Sh,
    Hsdg,
    Custom(Matrix2<Complex64>),
}

impl Gate {
    /// The gate's 2×2 matrix.
    pub fn matrix(&self) -> Matrix2<Complex64> {
        let s = FRAC_1_SQRT_2;
        match self {
            Gate::I => Matrix2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)),
            Gate::X => Matrix2::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)),
            Gate::H => Matrix2::new(c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)),
            Gate::S => Matrix2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 1.0)),
            Gate::Sdg => Matrix2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, -1.0)),
            // S·H: |0⟩ ↦ (|0⟩ + i|1⟩)/√2.
            Gate::Sh => Matrix2::new(c(s, 0.0), c(s, 0.0), c(0.0, s), c(0.0, -s)),
            // H·S†: rows are the Y-basis bra vectors ⟨±i|.
            Gate::Hsdg => Matrix2::new(c(s, 0.0), c(0.0, -s), c(s, 0.0), c(0.0, s)),
            Gate::Custom(m) => *m,
        }
    }

    /// Largest absolute deviation of U†U from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        let m = self.matrix();
        let gram = m.adjoint() * m;
        let mut dev: f64 = 0.0;
        for r in 0..2 {
            for col in 0..2 {
                let want = if r == col { c(1.0, 0.0) } else { c(0.0, 0.0) };
                dev = dev.max((gram[(r, col)] - want).norm());
            }
        }
        dev
    }

    /// Stable identity used for grouping and serialization; custom gates
    /// compare by exact bit pattern.
    pub fn key(&self) -> GateKey {
        match self {
            Gate::I => GateKey::Named(0),
            Gate::X => GateKey::Named(1),
            Gate::H => GateKey::Named(2),
            Gate::S => GateKey::Named(3),
            Gate::Sdg => GateKey::Named(4),
            Gate::Sh => GateKey::Named(5),
            Gate::Hsdg => GateKey::Named(6),
            Gate::Custom(m) => {
                let mut bits = [0u64; 8];
                for (i, entry) in m.iter().enumerate() {
                    bits[2 * i] = entry.re.to_bits();
                    bits[2 * i + 1] = entry.im.to_bits();
                }
                GateKey::Custom(bits)
            }
        }
    }
}

/// Hashable identity of a [`Gate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GateKey {
    Named(u8),
    Custom([u64; 8]),
}

impl PartialEq for Gate {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Gate {}
impl std::hash::Hash for Gate {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

/// The four standard preparation gates: |0⟩, |1⟩, |+⟩, |+i⟩.
pub const PREP_MENU: [Gate; 4] = [Gate::I, Gate::X, Gate::H, Gate::Sh];
/// The three standard measurement rotations: Z, X, Y bases.
pub const MEAS_MENU: [Gate; 3] = [Gate::I, Gate::H, Gate::Hsdg];

/// A tensor product of single-qubit gates, one per qubit (qubit 0 leftmost).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LocalUnitary {
    factors: Vec<Gate>,
}

impl LocalUnitary {
    /// Builds a product unitary, validating each factor to 1e-10.
    pub fn new(factors: Vec<Gate>) -> Result<Self, CoreError> {
        if factors.is_empty() {
            return Err(CoreError::EmptySystem);
        }
        for g in &factors {
            let dev = g.unitarity_deviation();
            if dev > 1e-10 {
                return Err(CoreError::NotUnitary { deviation: dev });
            }
        }
        Ok(Self { factors })
    }

    /// The identity on `n` qubits.
    pub fn identity(n: usize) -> Result<Self, CoreError> {
        Self::new(vec![Gate::I; n])
    }

    pub fn num_qubits(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Gate] {
        &self.factors
    }

    /// Applies the unitary factor by factor: for qubit k, amplitudes at
    /// basis pairs differing only in bit k are mixed by the 2×2 matrix.
    pub fn apply(&self, psi: &StateVector) -> Result<StateVector, CoreError> {
        let n = psi.num_qubits();
        if n != self.num_qubits() {
            return Err(CoreError::DimensionMismatch {
                expected: self.num_qubits(),
                got: n,
            });
        }
        let mut amps: DVector<Complex64> = psi.vector().clone();
        for (qubit, gate) in self.factors.iter().enumerate() {
            if matches!(gate, Gate::I) {
                continue;
            }
            let m = gate.matrix();
            let mask = 1usize << (n - 1 - qubit);
            for b in 0..amps.len() {
                if b & mask == 0 {
                    let hi = b | mask;
                    let a0 = amps[b];
                    let a1 = amps[hi];
                    amps[b] = m[(0, 0)] * a0 + m[(0, 1)] * a1;
                    amps[hi] = m[(1, 0)] * a0 + m[(1, 1)] * a1;
                }
            }
        }
        Ok(StateVector::from_normalized(n, amps))
    }
}

/// Outcome probabilities p(y) = |⟨y|M|ψ⟩|² of a computational-basis readout
/// after the measurement rotation `m`. Sums to 1 within 1e-10.
pub fn measurement_probs(psi: &StateVector, m: &LocalUnitary) -> Result<Vec<f64>, CoreError> {
    Ok(m.apply(psi)?.probabilities())
}
