use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer state for one flat parameter
/// vector.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter shape mismatch");
        assert_eq!(grads.len(), self.m.len(), "optimizer/gradient shape mismatch");
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::one() - T::lit(c.beta1.powi(self.t as i32));
        let bc2 = T::one() - T::lit(c.beta2.powi(self.t as i32));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Adam::<f64>::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            opt.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut opt = Adam::<f64>::new(2, AdamConfig::with_lr(1e-2));
        let mut p = vec![0.0, 0.0];
        for _ in 0..100 {
            opt.step(&mut p, &[3.0, -0.5]);
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // loss = 0.5 * sum(c_i * p_i^2), started away from the minimum
        let curv = [1.0, 4.0, 0.5];
        let mut p = vec![1.0, -1.0, 2.0];
        let loss = |p: &[f64]| -> f64 { p.iter().zip(&curv).map(|(x, c)| 0.5 * c * x * x).sum() };
        let initial = loss(&p);
        let mut opt = Adam::<f64>::new(3, AdamConfig::with_lr(1e-2));
        let mut history = vec![initial];
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().zip(&curv).map(|(x, c)| c * x).collect();
            opt.step(&mut p, &g);
            history.push(loss(&p));
        }
        assert!(*history.last().unwrap() < 1e-3 * initial, "{}", history.last().unwrap());
        // monotone once momentum has built up
        for w in history[..50].windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}
