//! Pauli strings applied as signed basis permutations.
//!
//! Every n-qubit Pauli string maps a computational-basis state to exactly
//! one basis state with a phase from {±1, ±i}: X flips a bit, Z contributes
//! (−1)^bit, and Y flips the bit with phase i·(−1)^bit. Applying a string to
//! a basis index is therefore O(n) bit arithmetic, and applying it to a full
//! state vector is O(2ⁿ) — no dense operator is ever materialized.

use num_complex::Complex64;

use crate::CoreError;

/// Single-qubit Pauli factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    I,
    X,
    Y,
    Z,
}

impl Axis {
    fn as_char(self) -> char {
        match self {
            Axis::I => 'I',
            Axis::X => 'X',
            Axis::Y => 'Y',
            Axis::Z => 'Z',
        }
    }
}

/// An n-qubit Pauli string, e.g. `ZZI` or `IXY`.
///
/// Qubit 0 is the leftmost factor and corresponds to the most significant
/// bit of a basis index.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString {
    axes: Vec<Axis>,
}

/// Phases i^k for k = 0..4.
const QUARTER_TURNS: [Complex64; 4] = [
    Complex64::new(1.0, 0.0),
    Complex64::new(0.0, 1.0),
    Complex64::new(-1.0, 0.0),
    Complex64::new(0.0, -1.0),
];

impl PauliString {
    /// Builds a string from explicit factors. Fails on an empty list.
    pub fn new(axes: Vec<Axis>) -> Result<Self, CoreError> {
        if axes.is_empty() {
            return Err(CoreError::EmptySystem);
        }
        Ok(Self { axes })
    }

    /// The identity string on `n` qubits.
    pub fn identity(n: usize) -> Result<Self, CoreError> {
        Self::new(vec![Axis::I; n])
    }

    /// Parses a string such as `"XIZ"`.
    pub fn parse(s: &str) -> Result<Self, CoreError> {
        let axes = s
            .chars()
            .map(|c| match c {
                'I' => Ok(Axis::I),
                'X' => Ok(Axis::X),
                'Y' => Ok(Axis::Y),
                'Z' => Ok(Axis::Z),
                other => Err(CoreError::InvalidModel {
                    reason: format!("invalid Pauli character '{other}'"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(axes)
    }

    /// A string with a single non-identity factor at `qubit` (0-based).
    pub fn single(n: usize, qubit: usize, axis: Axis) -> Result<Self, CoreError> {
        if qubit >= n {
            return Err(CoreError::BasisIndexOutOfRange { index: qubit, n });
        }
        let mut axes = vec![Axis::I; n];
        axes[qubit] = axis;
        Self::new(axes)
    }

    /// A string with non-identity factors at two distinct qubits.
    pub fn two_site(
        n: usize,
        qubit_a: usize,
        axis_a: Axis,
        qubit_b: usize,
        axis_b: Axis,
    ) -> Result<Self, CoreError> {
        if qubit_a >= n || qubit_b >= n {
            return Err(CoreError::BasisIndexOutOfRange {
                index: qubit_a.max(qubit_b),
                n,
            });
        }
        if qubit_a == qubit_b {
            return Err(CoreError::InvalidModel {
                reason: format!("two-site term repeats qubit {qubit_a}"),
            });
        }
        let mut axes = vec![Axis::I; n];
        axes[qubit_a] = axis_a;
        axes[qubit_b] = axis_b;
        Self::new(axes)
    }

    pub fn num_qubits(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn is_identity(&self) -> bool {
        self.axes.iter().all(|a| *a == Axis::I)
    }

    /// Applies the string to a basis state: `P|b⟩ = phase · |b'⟩`.
    ///
    /// The returned phase always has unit modulus exactly (it is one of
    /// ±1, ±i).
    pub fn apply(&self, basis_index: usize) -> Result<(usize, Complex64), CoreError> {
        let n = self.num_qubits();
        let dim = 1usize << n;
        if basis_index >= dim {
            return Err(CoreError::BasisIndexOutOfRange {
                index: basis_index,
                n,
            });
        }
        let mut out = basis_index;
        let mut turns = 0usize; // phase = i^turns
        for (qubit, axis) in self.axes.iter().enumerate() {
            let mask = 1usize << (n - 1 - qubit);
            let bit = basis_index & mask != 0;
            match axis {
                Axis::I => {}
                Axis::X => out ^= mask,
                Axis::Z => {
                    if bit {
                        turns += 2;
                    }
                }
                Axis::Y => {
                    // σ_y|0⟩ = i|1⟩, σ_y|1⟩ = −i|0⟩.
                    turns += if bit { 3 } else { 1 };
                    out ^= mask;
                }
            }
        }
        Ok((out, QUARTER_TURNS[turns % 4]))
    }

    /// Precomputes the full action as per-output-row tables, suitable for
    /// vectorized application: `out[y] = phase[y] · in[src[y]]`.
    pub fn action_table(&self) -> PauliAction {
        let n = self.num_qubits();
        let dim = 1usize << n;
        let mut src = vec![0usize; dim];
        let mut phase = vec![Complex64::new(0.0, 0.0); dim];
        for b in 0..dim {
            let (img, ph) = self.apply(b).expect("index in range by construction");
            src[img] = b;
            phase[img] = ph;
        }
        PauliAction { src, phase }
    }
}

impl std::fmt::Display for PauliString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for a in &self.axes {
            write!(f, "{}", a.as_char())?;
        }
        Ok(())
    }
}

/// Precomputed signed-permutation action of a Pauli string.
///
/// For every output basis index `y`, `src[y]` is the source index whose
/// amplitude lands on `y` and `phase[y]` the attached unit phase.
#[derive(Clone, Debug)]
pub struct PauliAction {
    pub src: Vec<usize>,
    pub phase: Vec<Complex64>,
}

impl PauliAction {
    pub fn dim(&self) -> usize {
        self.src.len()
    }

    /// Applies the action to a dense amplitude vector.
    pub fn apply_to(&self, amps: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim())
            .map(|y| self.phase[y] * amps[self.src[y]])
            .collect()
    }
}
