use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers are allocated on the first step
/// and must keep matching the parameter list afterwards.
#[derive(Debug, Clone)]
pub struct Adam<F = f32> {
    config: AdamConfig,
    step_count: u64,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step_count: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<F>]) -> Result<(), TensorError> {
        for p in params.iter() {
            match p.grad() {
                None => return Err(TensorError::Contract("adam step on a parameter without gradient".into())),
                Some(g) if g.iter().any(|x| !x.is_finite()) => return Err(TensorError::NonFinite("adam gradient")),
                _ => {}
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| alloc::vec![F::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(TensorError::Contract("adam moment buffers do not match the parameter list".into()));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bc1 = F::one() - F::lit(libm::pow(c.beta1, t as f64));
        let bc2 = F::one() - F::lit(libm::pow(c.beta2, t as f64));
        let (lr, eps) = (F::lit(c.lr), F::lit(c.eps));

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = p.grad().expect("checked above").to_vec();
            for (((x, g), mi), vi) in p.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (F::one() - b1) * g;
                *vi = b2 * *vi + (F::one() - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x = *x - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn param(x: f32) -> Tensor<f32> {
        Tensor::new(vec![1], vec![x]).unwrap().trainable()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = param(0.75);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            p.set_grad(vec![0.0]).unwrap();
            adam.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.data(), &[0.75]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 -> delta = lr * g / (|g| + eps)
        let mut p = param(1.0);
        p.set_grad(vec![1.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(0.001));
        adam.step(&mut [&mut p]).unwrap();
        let expected = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] as f64 - expected).abs() < 1e-7);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn identical_params_update_identically() {
        let (mut a, mut b) = (param(0.3), param(0.3));
        let mut adam = Adam::new(AdamConfig::default());
        for i in 0..5 {
            let g = (i as f32 * 0.7).sin();
            a.set_grad(vec![g]).unwrap();
            b.set_grad(vec![g]).unwrap();
            adam.step(&mut [&mut a, &mut b]).unwrap();
        }
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut p = param(0.0);
        let mut adam = Adam::<f32>::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut [&mut p]), Err(TensorError::Contract(_))));
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = param(0.0);
        p.set_grad(vec![f32::NAN]).unwrap();
        let mut adam = Adam::<f32>::new(AdamConfig::default());
        assert_eq!(adam.step(&mut [&mut p]), Err(TensorError::NonFinite("adam gradient")));
        assert_eq!(p.data(), &[0.0]);
    }
}
