//! Alignment and regularization losses. Each returns its value together
//! with the analytic gradient for every differentiable input, so the
//! training loop can record it on the tape with [`LossValue::record`].

mod classify;
mod discrepancy;
mod vat;

pub use classify::{
    bce_logits, conditional_entropy, cross_entropy, domain_discriminator_loss, entropy_logits,
    kl_logits, mse,
};
pub use discrepancy::{coral, homm, lmmd, mmd, weighted_mmd, Kernel, KernelBank};
pub use vat::{vat_loss, VatConfig};

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// One gradient per differentiable input, in argument order.
    pub grads: Vec<Tensor>,
    /// Set when no term contributed (e.g. LMMD with every class vacuous).
    pub vacuous: bool,
}

impl LossValue {
    pub(crate) fn new(value: f64, grads: Vec<Tensor>) -> Self {
        Self {
            value,
            grads,
            vacuous: false,
        }
    }

    pub fn has_grad(&self) -> bool {
        !self.grads.is_empty()
    }

    /// Puts the loss on `g` as a function of `inputs` (one per gradient).
    pub fn record(self, g: &mut Graph, inputs: &[Var]) -> Result<Var> {
        g.scalar_op(inputs, self.value, self.grads)
    }
}

pub(crate) fn check_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.ndim() != 2 {
        return Err(crate::error::invalid(format!(
            "{what} must be (N, D), got {:?}",
            t.shape()
        )));
    }
    Ok((t.dim(0), t.dim(1)))
}
