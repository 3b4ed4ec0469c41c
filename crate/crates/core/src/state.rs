//! Pure n-qubit state vectors.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::CoreError;

/// A normalized pure state on `n` qubits, stored as 2ⁿ complex amplitudes
/// in computational-basis order (qubit 0 = most significant bit).
///
/// Constructors normalize, so the norm is 1 to machine precision after
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: DVector<Complex64>,
}

impl StateVector {
    /// The all-zeros basis state |0…0⟩.
    pub fn zero_state(n: usize) -> Result<Self, CoreError> {
        Self::basis_state(n, 0)
    }

    /// The computational-basis state |index⟩.
    pub fn basis_state(n: usize, index: usize) -> Result<Self, CoreError> {
        if n == 0 {
            return Err(CoreError::EmptySystem);
        }
        let dim = 1usize << n;
        if index >= dim {
            return Err(CoreError::BasisIndexOutOfRange { index, n });
        }
        let mut amps = DVector::from_element(dim, Complex64::new(0.0, 0.0));
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self { n, amps })
    }

    /// Builds a state from raw amplitudes, normalizing them. Fails if the
    /// vector has the wrong length, contains non-finite entries, or has
    /// (near-)zero norm.
    pub fn from_amplitudes(n: usize, amps: Vec<Complex64>) -> Result<Self, CoreError> {
        if n == 0 {
            return Err(CoreError::EmptySystem);
        }
        let dim = 1usize << n;
        if amps.len() != dim {
            return Err(CoreError::DimensionMismatch {
                expected: dim,
                got: amps.len(),
            });
        }
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(CoreError::NonFinite {
                context: "state amplitudes",
            });
        }
        let mut v = DVector::from_vec(amps);
        let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(CoreError::ZeroNorm);
        }
        v /= Complex64::new(norm, 0.0);
        Ok(Self { n, amps: v })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        self.amps.as_slice()
    }

    pub fn amp(&self, index: usize) -> Complex64 {
        self.amps[index]
    }

    pub(crate) fn vector(&self) -> &DVector<Complex64> {
        &self.amps
    }

    /// Internal constructor for amplitudes already known to be normalized
    /// (evolution and unitary application preserve the norm).
    pub(crate) fn from_normalized(n: usize, amps: DVector<Complex64>) -> Self {
        Self { n, amps }
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Inner product ⟨self|other⟩.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Computational-basis outcome probabilities |⟨y|ψ⟩|².
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_has_unit_amplitude_at_index_zero() {
        let psi = StateVector::zero_state(3).unwrap();
        assert_eq!(psi.dim(), 8);
        assert_eq!(psi.amp(0), Complex64::new(1.0, 0.0));
        assert_eq!(psi.probabilities()[0], 1.0);
    }

    #[test]
    fn construction_normalizes() {
        let psi = StateVector::from_amplitudes(
            1,
            vec![Complex64::new(3.0, 0.0), Complex64::new(0.0, 4.0)],
        )
        .unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-15);
        assert!((psi.probabilities()[0] - 0.36).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_is_rejected() {
        let err = StateVector::from_amplitudes(1, vec![Complex64::default(); 2]);
        assert!(matches!(err, Err(CoreError::ZeroNorm)));
    }

    #[test]
    fn inner_product_is_conjugate_linear_in_first_argument() {
        let a = StateVector::from_amplitudes(
            1,
            vec![Complex64::new(0.0, 1.0), Complex64::new(1.0, 0.0)],
        )
        .unwrap();
        let b = StateVector::basis_state(1, 0).unwrap();
        let ip = a.inner(&b);
        assert!((ip - Complex64::new(0.0, -1.0 / 2f64.sqrt())).norm() < 1e-15);
    }
}
