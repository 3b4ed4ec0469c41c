//! Adam optimizer over a flat parameter vector.

use crate::AdError;

/// Bias-corrected Adam state. One instance drives the entire joint
/// parameter vector (network weights and physical parameters alike).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    eta: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    /// Defaults: η=1e-3, β₁=0.9, β₂=0.999, ε=1e-8.
    pub fn new(param_len: usize) -> Self {
        Self::with_hyperparams(param_len, 1e-3, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(
        param_len: usize,
        eta: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        Self {
            eta,
            beta1,
            beta2,
            eps,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            t: 0,
        }
    }

    /// Rebuilds a state from checkpointed raw fields.
    pub fn from_raw(
        eta: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self, AdError> {
        if m.len() != v.len() {
            return Err(AdError::ShapeMismatch {
                context: "adam moments",
                expected: m.len().to_string(),
                got: v.len().to_string(),
            });
        }
        Ok(Self {
            eta,
            beta1,
            beta2,
            eps,
            m,
            v,
            t,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn set_eta(&mut self, eta: f64) {
        self.eta = eta;
    }

    pub fn hyperparams(&self) -> (f64, f64, f64, f64) {
        (self.eta, self.beta1, self.beta2, self.eps)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn param_len(&self) -> usize {
        self.m.len()
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One Adam update in place. A non-finite gradient component aborts
    /// before touching any state, so the caller can skip the step and
    /// report it.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), AdError> {
        self.step_scaled(params, grads, 1.0)
    }

    /// [`AdamState::step`] with the learning rate multiplied by
    /// `lr_factor` for this step only (for schedules).
    pub fn step_scaled(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr_factor: f64,
    ) -> Result<(), AdError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(AdError::ShapeMismatch {
                context: "adam step",
                expected: self.m.len().to_string(),
                got: format!("params {} / grads {}", params.len(), grads.len()),
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(AdError::NonFiniteGradient { index });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let lr = self.eta * lr_factor;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_advances_counter() {
        let mut adam = AdamState::new(3);
        let mut params = vec![0.4, -0.2, 1.1];
        adam.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, vec![0.4, -0.2, 1.1]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_has_magnitude_eta_up_to_eps() {
        let mut adam = AdamState::new(2);
        let mut params = vec![1.0, 1.0];
        adam.step(&mut params, &[0.37, -421.0]).unwrap();
        // Bias correction cancels exactly at step one: m̂/√v̂ = g/|g|.
        for (p, sign) in params.iter().zip([1.0, -1.0]) {
            let update = 1.0 - p;
            assert!((update - sign * 1e-3).abs() < 1e-6, "update {update}");
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_state_change() {
        let mut adam = AdamState::new(2);
        let mut params = vec![0.5, 0.5];
        adam.step(&mut params, &[1.0, 1.0]).unwrap();
        let snapshot = (adam.clone(), params.clone());
        let err = adam.step(&mut params, &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, AdError::NonFiniteGradient { index: 1 }));
        assert_eq!(adam, snapshot.0);
        assert_eq!(params, snapshot.1);
    }

    #[test]
    fn identical_runs_give_identical_trajectories() {
        let run = || {
            let mut adam = AdamState::new(2);
            let mut params = vec![0.3, -0.8];
            for k in 0..50 {
                let g = [params[0] - 0.1 * k as f64, params[1] * 2.0];
                adam.step(&mut params, &g).unwrap();
            }
            (params[0].to_bits(), params[1].to_bits())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut adam = AdamState::new(3);
        let mut params = vec![0.0; 2];
        assert!(matches!(
            adam.step(&mut params, &[0.0; 3]),
            Err(AdError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn lr_factor_scales_the_first_update() {
        let mut a = AdamState::new(1);
        let mut pa = vec![1.0];
        a.step_scaled(&mut pa, &[2.0], 0.25).unwrap();
        let mut b = AdamState::new(1);
        let mut pb = vec![1.0];
        b.step(&mut pb, &[2.0]).unwrap();
        let (ua, ub) = (1.0 - pa[0], 1.0 - pb[0]);
        assert!((ua - 0.25 * ub).abs() < 1e-15);
    }
}
