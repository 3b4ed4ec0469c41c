//! Classical measurement-noise channels applied to outcome distributions.
//!
//! Noise never touches state vectors. A readout bit-flip channel convolves
//! the outcome distribution with independent symmetric per-qubit flips, and
//! a depolarization model mixes it toward the uniform distribution with a
//! time-dependent weight p_d(t). For computational-basis readout after the
//! measurement rotation, acting on the distribution is exactly equivalent
//! to the corresponding quantum channels acting on the state.

use crate::CoreError;

/// Symmetric per-qubit readout noise: each measured bit is reported
/// faithfully with probability `q ∈ [0.5, 1]`, identically across qubits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReadoutNoise {
    q: f64,
}

impl ReadoutNoise {
    pub fn new(q: f64) -> Result<Self, CoreError> {
        if !(0.5..=1.0).contains(&q) || !q.is_finite() {
            return Err(CoreError::ReadoutOutOfRange { q });
        }
        Ok(Self { q })
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

/// Functional form of the depolarization weight p_d(t).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DepolarizationForm {
    /// p_d(t) = 1 − exp(−(t−t0)/μ): no depolarization at the start of the
    /// experiment, saturating toward the uniform distribution. Default.
    #[default]
    OneMinusExp,
    /// p_d(t) = exp(−(t−t0)/μ): full depolarization at t = t0, decaying.
    /// Physically backwards, but retained behind this switch for
    /// faithfulness to the printed formula it mirrors.
    LiteralExp,
}

/// Time-dependent depolarization with Poisson time constant μ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepolarizationModel {
    pub mu: f64,
    pub t0: f64,
    pub form: DepolarizationForm,
}

impl DepolarizationModel {
    /// Default form with t0 = 0.
    pub fn new(mu: f64) -> Result<Self, CoreError> {
        Self::with_form(mu, 0.0, DepolarizationForm::OneMinusExp)
    }

    pub fn with_form(mu: f64, t0: f64, form: DepolarizationForm) -> Result<Self, CoreError> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(CoreError::InvalidTimeConstant { mu });
        }
        Ok(Self { mu, t0, form })
    }
}

/// The mixing weight p_d(t) ∈ [0, 1] toward the uniform distribution.
pub fn depolarization_weight(model: &DepolarizationModel, t: f64) -> Result<f64, CoreError> {
    if t < model.t0 {
        return Err(CoreError::TimeBeforeStart { t, t0: model.t0 });
    }
    let decay = (-(t - model.t0) / model.mu).exp();
    Ok(match model.form {
        DepolarizationForm::OneMinusExp => 1.0 - decay,
        DepolarizationForm::LiteralExp => decay,
    })
}

/// Convolves per-qubit independent symmetric bit-flips into an outcome
/// distribution: p̃(ỹ) = Σ_y Π_i [q if ỹᵢ=yᵢ else 1−q] p(y).
///
/// Factorizes over qubits, so it is applied one qubit at a time in
/// O(n·2ⁿ).
pub fn readout_channel(p_true: &[f64], q: f64) -> Result<Vec<f64>, CoreError> {
    if !(0.5..=1.0).contains(&q) || !q.is_finite() {
        return Err(CoreError::ReadoutOutOfRange { q });
    }
    let n = qubit_count(p_true.len())?;
    let mut p = p_true.to_vec();
    let flip = 1.0 - q;
    for qubit in 0..n {
        let mask = 1usize << (n - 1 - qubit);
        for b in 0..p.len() {
            if b & mask == 0 {
                let hi = b | mask;
                let lo_val = p[b];
                let hi_val = p[hi];
                p[b] = q * lo_val + flip * hi_val;
                p[hi] = q * hi_val + flip * lo_val;
            }
        }
    }
    Ok(p)
}

/// Mixes a distribution toward uniform: (1−p_d)·p + p_d/2ⁿ.
pub fn depolarize_probs(p_pure: &[f64], p_d: f64, n: usize) -> Result<Vec<f64>, CoreError> {
    if !(0.0..=1.0).contains(&p_d) || !p_d.is_finite() {
        return Err(CoreError::DepolarizationOutOfRange { p_d });
    }
    let dim = 1usize << n;
    if p_pure.len() != dim {
        return Err(CoreError::DimensionMismatch {
            expected: dim,
            got: p_pure.len(),
        });
    }
    let uniform = p_d / dim as f64;
    Ok(p_pure.iter().map(|p| (1.0 - p_d) * p + uniform).collect())
}

fn qubit_count(dim: usize) -> Result<usize, CoreError> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(CoreError::DimensionMismatch {
            expected: 2,
            got: dim,
        });
    }
    Ok(dim.trailing_zeros() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn faithful_readout_is_identity() {
        let p = vec![0.25, 0.1, 0.45, 0.2];
        let out = readout_channel(&p, 1.0).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn single_qubit_readout_worked_value() {
        let out = readout_channel(&[1.0, 0.0], 0.9).unwrap();
        assert!((out[0] - 0.9).abs() < 1e-15);
        assert!((out[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn two_qubit_readout_worked_value() {
        // p(00)=1, q=0.995 → p̃(00) = 0.995² = 0.990025 exactly.
        let out = readout_channel(&[1.0, 0.0, 0.0, 0.0], 0.995).unwrap();
        assert!((out[0] - 0.990025).abs() <= 1e-12);
        assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn readout_factorizes_over_qubits() {
        // Channel on a product distribution equals the product of
        // single-qubit channels.
        let pa = [0.3, 0.7];
        let pb = [0.85, 0.15];
        let q = 0.9;
        let joint: Vec<f64> = (0..4).map(|b| pa[b >> 1] * pb[b & 1]).collect();
        let out = readout_channel(&joint, q).unwrap();
        let ca = readout_channel(&pa, q).unwrap();
        let cb = readout_channel(&pb, q).unwrap();
        for b in 0..4 {
            assert!((out[b] - ca[b >> 1] * cb[b & 1]).abs() < 1e-14);
        }
    }

    #[test]
    fn out_of_range_q_is_rejected() {
        assert!(readout_channel(&[1.0, 0.0], 0.4).is_err());
        assert!(readout_channel(&[1.0, 0.0], 1.1).is_err());
        assert!(ReadoutNoise::new(0.49).is_err());
    }

    #[test]
    fn depolarization_weight_default_form() {
        let m = DepolarizationModel::new(5.0).unwrap();
        assert_eq!(depolarization_weight(&m, 0.0).unwrap(), 0.0);
        let at_mu = depolarization_weight(&m, 5.0).unwrap();
        assert!((at_mu - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn depolarization_weight_literal_form() {
        let m = DepolarizationModel::with_form(2.0, 0.5, DepolarizationForm::LiteralExp).unwrap();
        assert_eq!(depolarization_weight(&m, 0.5).unwrap(), 1.0);
        assert!(depolarization_weight(&m, 0.4).is_err());
    }

    #[test]
    fn depolarize_endpoints_are_exact() {
        let p = vec![0.6, 0.1, 0.1, 0.2];
        assert_eq!(depolarize_probs(&p, 0.0, 2).unwrap(), p);
        let uniform = depolarize_probs(&p, 1.0, 2).unwrap();
        assert!(uniform.iter().all(|v| (*v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn depolarize_worked_value() {
        // n=2, p(00)=1, p_d=0.5 → p(00)=0.625, others 0.125.
        let out = depolarize_probs(&[1.0, 0.0, 0.0, 0.0], 0.5, 2).unwrap();
        assert!((out[0] - 0.625).abs() <= 1e-12);
        for v in &out[1..] {
            assert!((*v - 0.125).abs() <= 1e-12);
        }
    }

    #[test]
    fn composed_channels_worked_value() {
        // 1 qubit, pure p(0)=1, depolarize p_d=0.5 then readout q=0.9:
        // p_obs(0) = 0.9·0.75 + 0.1·0.25 = 0.70.
        let depol = depolarize_probs(&[1.0, 0.0], 0.5, 1).unwrap();
        let obs = readout_channel(&depol, 0.9).unwrap();
        assert!((obs[0] - 0.70).abs() <= 1e-12);
    }

    #[test]
    fn channels_preserve_total_probability() {
        let p = vec![0.05, 0.2, 0.3, 0.05, 0.1, 0.1, 0.15, 0.05];
        let a = readout_channel(&p, 0.87).unwrap();
        let b = depolarize_probs(&a, 0.33, 3).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
