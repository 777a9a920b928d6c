//! Minimal layer library with hand-written backward passes.
//!
//! Every layer has two forward paths: `forward_train` uses batch statistics
//! and caches what its `backward` needs, `forward_eval` is a pure function of
//! `&self`. Gradients accumulate into [`Param::grad`] until cleared.

mod activation;
mod block;
mod conv;
mod im2col;
pub mod init;
mod norm;

use ndarray::{ArrayD, IxDyn};

use crate::Scalar;

pub use activation::{sigmoid, Activation};
pub use block::{Block, Resample};
pub use conv::{Conv2d, ConvTranspose2d};
pub use norm::BatchNorm2d;

/// Learnable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Param {
            value: ArrayD::zeros(IxDyn(shape)),
            grad: ArrayD::zeros(IxDyn(shape)),
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Param {
            value: ArrayD::from_elem(IxDyn(shape), v),
            grad: ArrayD::zeros(IxDyn(shape)),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    /// Optimised by gradient descent.
    Parameter,
    /// State that is not learned by gradients (normalisation running stats).
    Buffer,
}

/// Named access to the tensors of a network, in a fixed order.
pub trait Module<T: Scalar> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn visit_tensors(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &ArrayD<T>));

    fn visit_tensors_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut ArrayD<T>));

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }

    fn num_parameters(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
