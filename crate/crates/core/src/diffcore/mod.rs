//! Minimal reverse-mode differentiable computation on dense 2-D tensors.
//!
//! Everything here is f64 and single-threaded: forward passes record a tape,
//! [`Tape::backward`] walks it in reverse, and [`Adam`] applies the updates.
//! [`gradcheck`] provides the central-finite-difference verifier the model
//! tests run against.

mod adam;
mod dense;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::Adam;
pub use dense::{Activation, DenseLayer, WeightInit};
pub use tape::{Tape, Var};
pub use tensor::{sigmoid, softmax_into, softmax_rows, softplus, Tensor2};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("backward requires a scalar (1x1) loss node, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("loss is not finite: {value}")]
    NonFiniteLoss { value: f64 },
    #[error("non-finite gradient in parameter '{param}' at index {index}: {value}")]
    NonFiniteGradient {
        param: String,
        index: usize,
        value: f64,
    },
}

/// Identifier of a tensor registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Owns model parameters and their gradient accumulators.
///
/// Save order (and therefore checkpoint blob order) is registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    value: Tensor2,
    grad: Tensor2,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor2) -> ParamId {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.entries[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}
