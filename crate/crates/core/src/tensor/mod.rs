//! Dense tensors, a reverse-mode tape, MLPs and Adam.

mod adam;
mod gradcheck;
mod mlp;
mod tape;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

pub use adam::{Adam, AdamConfig};
pub use gradcheck::finite_diff_check;
pub use mlp::{Activation, Layer, Mlp};
pub use tape::{Gradients, Tape, Var};


use crate::real::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    Dimension { op: &'static str, expected: usize, found: usize },
    #[error("shape {shape:?} does not match {len} elements")]
    Shape { shape: Vec<usize>, len: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Row-major dense tensor with an optional gradient buffer.
///
/// Every tensor carries a process-unique id; graph leaves created from a
/// tensor remember that id so gradients can be routed back to it.
#[derive(Debug)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
    requires_grad: bool,
    id: u64,
}

impl<F: Clone> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: self.grad.clone(),
            requires_grad: self.requires_grad,
            id: fresh_id(),
        }
    }
}

impl<F: PartialEq> PartialEq for Tensor<F> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, TensorError> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(TensorError::Shape { shape, len: data.len() });
        }
        Ok(Self { shape, data, grad: None, requires_grad: false, id: fresh_id() })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![F::zero(); len]).expect("consistent by construction")
    }

    pub fn scalar(x: F) -> Self {
        Self::new(vec![1], vec![x]).expect("scalar")
    }

    /// Marks the tensor as a trainable parameter.
    pub fn trainable(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Width of the trailing dimension (1 for rank-0/1-element tensors).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1).max(1)
    }

    pub fn rows(&self) -> usize {
        if self.data.is_empty() {
            0
        } else {
            self.data.len() / self.cols()
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<F>) -> Result<(), TensorError> {
        if grad.len() != self.data.len() {
            return Err(TensorError::Dimension { op: "set_grad", expected: self.data.len(), found: grad.len() });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Element-wise cast, e.g. to run f64 gradient checks on an f32 network.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        let data = self.data.iter().map(|&x| G::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or(G::nan())).collect();
        let mut t = Tensor::new(self.shape.clone(), data).expect("same shape");
        t.requires_grad = self.requires_grad;
        t
    }

    /// Overwrites values from another tensor of the same shape.
    pub fn copy_from(&mut self, other: &Tensor<F>) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::Dimension { op: "copy_from", expected: self.len(), found: other.len() });
        }
        self.data.copy_from_slice(&other.data);
        Ok(())
    }
}

/// A group of trainable tensors: anything that can be optimized, checkpointed
/// or gradient-checked.
pub trait Module<F: Real> {
    fn params(&self) -> Vec<&Tensor<F>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<F>>;
    /// Stable names used for checkpoint entries.
    fn param_names(&self) -> Vec<String>;

    /// Copies gradients for this module's parameters out of `grads`;
    /// parameters the loss never reached get an all-zero gradient.
    fn load_grads(&mut self, grads: &Gradients<F>) {
        for p in self.params_mut() {
            let g = grads.param(p.id()).map(|g| g.to_vec()).unwrap_or_else(|| vec![F::zero(); p.len()]);
            p.set_grad(g).expect("gradient length matches parameter");
        }
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Everything that must be saved to restore a component, by stable name.
/// Unlike [`Module::params`] this includes non-trainable state such as
/// target networks.
pub trait Persist<F: Real> {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)>;
}

#[macro_export]
#[doc(hidden)]
macro_rules! persist_via_module {
    ($t:ident) => {
        impl<F: $crate::Real> $crate::tensor::Persist<F> for $t<F> {
            fn tensors(&self) -> alloc::vec::Vec<(alloc::string::String, &$crate::Tensor<F>)> {
                let names = $crate::Module::param_names(self);
                names.into_iter().zip($crate::Module::params(self)).collect()
            }

            fn tensors_mut(&mut self) -> alloc::vec::Vec<(alloc::string::String, &mut $crate::Tensor<F>)> {
                let names = $crate::Module::param_names(self);
                names.into_iter().zip($crate::Module::params_mut(self)).collect()
            }
        }
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_cover_data() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!((t.rows(), t.cols()), (2, 3));
    }

    #[test]
    fn clone_gets_fresh_identity() {
        let a = Tensor::<f32>::zeros(&[2]);
        let b = a.clone();
        assert_eq!(a, b);
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn set_grad_checks_length() {
        let mut t = Tensor::<f32>::zeros(&[3]);
        assert!(t.set_grad(vec![0.0; 2]).is_err());
        assert!(t.set_grad(vec![0.0; 3]).is_ok());
    }
}
