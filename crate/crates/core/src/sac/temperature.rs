use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;
use crate::tensor::{Adam, Module, Tensor, TensorError};

/// Entropy temperature `alpha = exp(log_alpha)`, tuned toward a target
/// entropy.
#[derive(Debug, Clone)]
pub struct Temperature<F = f32> {
    log_alpha: Tensor<F>,
    target_entropy: F,
}

impl<F: Real> Temperature<F> {
    pub fn new(alpha: F, target_entropy: F) -> Result<Self, TensorError> {
        if !(alpha > F::zero()) || !alpha.is_finite() {
            return Err(TensorError::Contract(alloc::format!("initial temperature {alpha} must be positive")));
        }
        Ok(Self { log_alpha: Tensor::scalar(alpha.ln()).trainable(), target_entropy })
    }

    pub fn alpha(&self) -> F {
        self.log_alpha.data()[0].exp()
    }

    pub fn log_alpha(&self) -> F {
        self.log_alpha.data()[0]
    }

    pub fn target_entropy(&self) -> F {
        self.target_entropy
    }

    pub fn set_target_entropy(&mut self, h: F) {
        self.target_entropy = h;
    }

    /// Minimizes `-log_alpha * (mean_log_prob + target_entropy)`; returns the
    /// loss before the step.
    pub fn update(&mut self, adam: &mut Adam<F>, mean_log_prob: F) -> Result<F, TensorError> {
        let drive = mean_log_prob + self.target_entropy;
        if !drive.is_finite() {
            return Err(TensorError::NonFinite("temperature objective"));
        }
        let loss = -self.log_alpha() * drive;
        self.log_alpha.set_grad(vec![-drive])?;
        adam.step(&mut [&mut self.log_alpha])?;
        Ok(loss)
    }

    pub fn cast<G: Real>(&self) -> Temperature<G> {
        Temperature { log_alpha: self.log_alpha.cast(), target_entropy: G::lit(self.target_entropy.to_f64().unwrap()) }
    }
}

crate::persist_via_module!(Temperature);

impl<F: Real> Module<F> for Temperature<F> {
    fn params(&self) -> Vec<&Tensor<F>> {
        vec![&self.log_alpha]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        vec![&mut self.log_alpha]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["log_alpha".into()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::AdamConfig;

    #[test]
    fn low_entropy_raises_alpha() {
        // Entropy -log_prob = -1 is below the target 0.5.
        let mut t = Temperature::<f64>::new(0.1, 0.5).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(1e-2));
        let before = t.alpha();
        t.update(&mut adam, 1.0).unwrap();
        assert!(t.alpha() > before);
    }

    #[test]
    fn high_entropy_lowers_alpha_and_stays_positive() {
        let mut t = Temperature::<f32>::new(0.1, -3.0).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(0.5));
        let before = t.alpha();
        for _ in 0..200 {
            t.update(&mut adam, -10.0).unwrap();
        }
        assert!(t.alpha() < before);
        assert!(t.alpha() > 0.0);
    }

    #[test]
    fn non_positive_alpha_is_rejected() {
        assert!(Temperature::<f32>::new(0.0, -1.0).is_err());
    }
}
