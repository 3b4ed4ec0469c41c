//! Parameterized Hamiltonian models H(θ) = Σ_j θ_{tying(j)} P_j and exact
//! time evolution.
//!
//! A model owns a list of Pauli-string terms, each pointing at a
//! coefficient index, and a tying map from coefficient indices to free
//! parameter slots. Tying encodes symmetry constraints (e.g. translation
//! invariance on a spin ring) without changing the term structure.
//!
//! Evolution uses the Hermitian eigendecomposition of the dense matrix:
//! e^{−iHt}|ψ⟩ = V e^{−iΛt} V† |ψ⟩, which is exact for time-independent H
//! and reusable across arbitrarily many times t. The decomposition is
//! cached per parameter vector behind a read-write lock so concurrent
//! readers share it.

use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::pauli::PauliString;
use crate::state::StateVector;
use crate::CoreError;

/// Default refusal threshold for materializing dense operators.
pub const DEFAULT_DENSE_CAP: usize = 10;

/// Hermitian eigendecomposition H = V diag(energies) V†.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub energies: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

impl EigenDecomposition {
    /// Applies e^{−iHt} to raw amplitudes.
    pub fn evolve_amplitudes(
        &self,
        amps: &DVector<Complex64>,
        t: f64,
    ) -> DVector<Complex64> {
        let mut coeffs = self.vectors.adjoint() * amps;
        for (k, e) in self.energies.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, -e * t);
            coeffs[k] *= phase;
        }
        &self.vectors * coeffs
    }
}

#[derive(Debug)]
struct EigenCache {
    key: Vec<u64>,
    eigen: Arc<EigenDecomposition>,
}

/// A Pauli-sum Hamiltonian with tied coefficients.
#[derive(Debug)]
pub struct HamiltonianModel {
    n: usize,
    terms: Vec<(PauliString, usize)>,
    tying: Vec<usize>,
    theta: Vec<f64>,
    dense_cap: usize,
    cache: RwLock<Option<EigenCache>>,
}

impl Clone for HamiltonianModel {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            terms: self.terms.clone(),
            tying: self.tying.clone(),
            theta: self.theta.clone(),
            dense_cap: self.dense_cap,
            cache: RwLock::new(None),
        }
    }
}

impl HamiltonianModel {
    /// Builds a model from terms `(P_j, coefficient index)`, a tying map
    /// `coefficient index → parameter slot`, and initial parameters θ.
    pub fn new(
        n: usize,
        terms: Vec<(PauliString, usize)>,
        tying: Vec<usize>,
        theta: Vec<f64>,
    ) -> Result<Self, CoreError> {
        if n == 0 {
            return Err(CoreError::EmptySystem);
        }
        for (p, coeff) in &terms {
            if p.num_qubits() != n {
                return Err(CoreError::InvalidModel {
                    reason: format!(
                        "term {p} acts on {} qubits, model has {n}",
                        p.num_qubits()
                    ),
                });
            }
            if *coeff >= tying.len() {
                return Err(CoreError::InvalidModel {
                    reason: format!("coefficient index {coeff} outside tying map"),
                });
            }
        }
        for slot in &tying {
            if *slot >= theta.len() {
                return Err(CoreError::InvalidModel {
                    reason: format!("tying target {slot} outside θ of length {}", theta.len()),
                });
            }
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { context: "theta" });
        }
        Ok(Self {
            n,
            terms,
            tying,
            theta,
            dense_cap: DEFAULT_DENSE_CAP,
            cache: RwLock::new(None),
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1usize << self.n
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Replaces θ, invalidating the cached eigendecomposition.
    pub fn set_theta(&mut self, theta: &[f64]) -> Result<(), CoreError> {
        if theta.len() != self.theta.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.theta.len(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { context: "theta" });
        }
        self.theta.copy_from_slice(theta);
        *self.cache.write().expect("cache lock poisoned") = None;
        Ok(())
    }

    /// A copy with different parameter values (shares structure).
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self, CoreError> {
        let mut m = self.clone();
        m.set_theta(theta)?;
        Ok(m)
    }

    /// Overrides the dense-materialization cap.
    pub fn set_dense_cap(&mut self, cap: usize) {
        self.dense_cap = cap;
    }

    pub fn terms(&self) -> &[(PauliString, usize)] {
        &self.terms
    }

    /// The parameter slot feeding term `j`.
    pub fn term_slot(&self, j: usize) -> usize {
        self.tying[self.terms[j].1]
    }

    /// The current numeric coefficient of term `j`.
    pub fn term_coefficient(&self, j: usize) -> f64 {
        self.theta[self.term_slot(j)]
    }

    /// Term indices grouped by parameter slot, in slot order.
    pub fn terms_by_slot(&self) -> Vec<Vec<usize>> {
        let mut by_slot = vec![Vec::new(); self.theta.len()];
        for j in 0..self.terms.len() {
            by_slot[self.term_slot(j)].push(j);
        }
        by_slot
    }

    /// Dense 2ⁿ×2ⁿ matrix Σ_j θ_{tying(j)} P_j. Refuses above the cap.
    pub fn build_dense(&self) -> Result<DMatrix<Complex64>, CoreError> {
        if self.n > self.dense_cap {
            return Err(CoreError::DenseCapExceeded {
                n: self.n,
                cap: self.dense_cap,
            });
        }
        let dim = self.dim();
        let mut h = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
        for j in 0..self.terms.len() {
            let coeff = self.term_coefficient(j);
            if coeff == 0.0 {
                continue;
            }
            let action = self.terms[j].0.action_table();
            for y in 0..dim {
                h[(y, action.src[y])] += coeff * action.phase[y];
            }
        }
        Ok(h)
    }

    /// The eigendecomposition of the current dense matrix, cached per θ.
    pub fn eigendecomposition(&self) -> Result<Arc<EigenDecomposition>, CoreError> {
        let key: Vec<u64> = self.theta.iter().map(|v| v.to_bits()).collect();
        if let Some(cached) = self.cache.read().expect("cache lock poisoned").as_ref() {
            if cached.key == key {
                return Ok(Arc::clone(&cached.eigen));
            }
        }
        let h = self.build_dense()?;
        // Pauli sums with real coefficients are Hermitian by construction;
        // verify numerically anyway since evolution correctness hinges on it.
        let dev = hermiticity_deviation(&h);
        if !dev.is_finite() || dev > 1e-9 {
            return Err(CoreError::NonFinite {
                context: "dense Hamiltonian (not Hermitian)",
            });
        }
        let decomp = h.symmetric_eigen();
        if decomp.eigenvalues.iter().any(|e| !e.is_finite())
            || decomp.eigenvectors.iter().any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(CoreError::NonFinite {
                context: "eigendecomposition",
            });
        }
        let eigen = Arc::new(EigenDecomposition {
            energies: decomp.eigenvalues.iter().copied().collect(),
            vectors: decomp.eigenvectors,
        });
        *self.cache.write().expect("cache lock poisoned") = Some(EigenCache {
            key,
            eigen: Arc::clone(&eigen),
        });
        Ok(eigen)
    }

    /// e^{−iHt}|ψ₀⟩ via the cached eigendecomposition.
    pub fn evolve(&self, psi0: &StateVector, t: f64) -> Result<StateVector, CoreError> {
        if psi0.num_qubits() != self.n {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: psi0.dim(),
            });
        }
        if !t.is_finite() {
            return Err(CoreError::NonFinite { context: "time" });
        }
        let eigen = self.eigendecomposition()?;
        let amps = eigen.evolve_amplitudes(psi0.vector(), t);
        Ok(StateVector::from_normalized(self.n, amps))
    }
}

fn hermiticity_deviation(h: &DMatrix<Complex64>) -> f64 {
    let mut dev: f64 = 0.0;
    for r in 0..h.nrows() {
        for c in 0..h.ncols() {
            dev = dev.max((h[(r, c)] - h[(c, r)].conj()).norm());
        }
    }
    dev
}
