//! Parameter storage, layers and the optimizer shared by every network in
//! the crate (backbones, classifier heads, discriminators, kernel nets).

mod adam;
mod layers;

pub use adam::{Adam, AdamConfig};
pub use layers::{BatchNorm1d, Conv1d, Linear, Mlp, MlpActivation};

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Var};
use crate::tensor::Tensor;

/// Handle to a tensor inside a [`TensorStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot(pub(crate) usize);

/// Ordered, named tensors. Order is creation order and is what checkpoints
/// and optimizers rely on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TensorStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> Slot {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate tensor {name}");
        self.names.push(name);
        self.tensors.push(t);
        Slot(self.tensors.len() - 1)
    }

    pub fn get(&self, s: Slot) -> &Tensor {
        &self.tensors[s.0]
    }

    pub fn get_mut(&mut self, s: Slot) -> &mut Tensor {
        &mut self.tensors[s.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn find(&self, name: &str) -> Option<Slot> {
        self.names.iter().position(|n| n == name).map(Slot)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Puts every tensor on `g`, as variables if `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.variable(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Binding { vars }
    }

    /// `self = decay * self + (1 - decay) * other`, element-wise.
    pub fn ema_from(&mut self, other: &TensorStore, decay: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = decay * *x + (1.0 - decay) * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Graph variables for one [`TensorStore`], indexed by [`Slot`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Index<Slot> for Binding {
    type Output = Var;

    fn index(&self, s: Slot) -> &Var {
        &self.vars[s.0]
    }
}

impl Binding {
    /// Gradients in store order; `None` for tensors the loss did not reach.
    pub fn collect(&self, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|v| grads.get(*v).cloned()).collect()
    }
}

/// How batch norm layers behave during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Batch statistics, running statistics left alone (auxiliary passes).
    TrainNoTrack,
    /// Running statistics.
    Eval,
}

/// State threaded through a network's forward pass.
pub struct Forward<'a> {
    pub g: &'a mut Graph,
    pub params: &'a Binding,
    pub buffers: &'a TensorStore,
    pub mode: Mode,
    /// Pending running-statistic writes, applied by [`Forward::commit`].
    pub updates: Vec<(Slot, Tensor)>,
}

impl<'a> Forward<'a> {
    pub fn new(g: &'a mut Graph, params: &'a Binding, buffers: &'a TensorStore, mode: Mode) -> Self {
        Self {
            g,
            params,
            buffers,
            mode,
            updates: Vec::new(),
        }
    }

    pub fn p(&self, s: Slot) -> Var {
        self.params[s]
    }

    /// Returns the running-statistic updates gathered during the pass.
    pub fn finish(self) -> Vec<(Slot, Tensor)> {
        self.updates
    }
}

/// Writes collected running statistics into `buffers`.
pub fn commit(buffers: &mut TensorStore, updates: Vec<(Slot, Tensor)>) {
    for (s, t) in updates {
        *buffers.get_mut(s) = t;
    }
}
