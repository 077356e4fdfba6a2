//! Adam with bias correction and decoupled weight decay.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update. Rejects non-finite gradients without touching any state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(Error::dim(self.m.len(), grads.len(), "adam gradient"));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("adam gradient".into()));
        }
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps))
                + self.lr * self.weight_decay * params[i];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_params_by_about_lr() {
        let mut adam = AdamState::new(3, 1e-3, 0.0);
        let mut p = vec![1.0, 2.0, -0.5];
        adam.step(&mut p, &[1.0, 1.0, 1.0]).unwrap();
        for (pi, orig) in p.iter().zip([1.0, 2.0, -0.5]) {
            let delta = orig - pi;
            assert!((delta - 1e-3).abs() < 1e-7, "delta {delta}");
        }
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut adam = AdamState::new(2, 1e-3, 0.0);
        let mut p = vec![0.7, -0.3];
        for _ in 0..5 {
            adam.step(&mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, vec![0.7, -0.3]);
    }

    #[test]
    fn rejects_non_finite_grads() {
        let mut adam = AdamState::new(1, 1e-3, 0.0);
        let mut p = vec![1.0];
        let err = adam.step(&mut p, &[f64::INFINITY]);
        assert!(err.is_err());
        assert_eq!(p, vec![1.0]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn converges_on_quadratic() {
        // minimize (p - 3)^2 from p = 0
        let mut adam = AdamState::new(1, 0.05, 0.0);
        let mut p = vec![0.0];
        for _ in 0..200 {
            let g = 2.0 * (p[0] - 3.0);
            adam.step(&mut p, &[g]).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 0.05, "p = {}", p[0]);
    }
}
