//! Estimation-quality metrics.

use crate::LearnError;

/// Mean squared error between an estimate and the ground truth,
/// componentwise over all estimated parameters (Hamiltonian coefficients
/// and, when fitted, noise parameters).
pub fn mse(estimate: &[f64], truth: &[f64]) -> Result<f64, LearnError> {
    if estimate.len() != truth.len() {
        return Err(LearnError::LengthMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    if estimate.is_empty() {
        return Err(LearnError::LengthMismatch {
            expected: 1,
            got: 0,
        });
    }
    let sum: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / estimate.len() as f64)
}
