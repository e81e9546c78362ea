//! Dense reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] is a tape: every op evaluates eagerly and records its inputs,
//! so nodes are stored in topological order and [`Graph::backward`] is a
//! single reverse sweep. Parameters live in a [`ParamStore`] outside the tape
//! and are bound per graph with [`Graph::param`].

mod check;
mod graph;
mod optim;
mod tensor;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use check::{gradcheck, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub(crate) use graph::sigmoid;
pub use optim::{cosine_lr, Adam};
pub use tensor::Tensor;
pub(crate) use tensor::gemm;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("slice [{start}, {start}+{len}) out of range on axis {axis} of {shape:?}")]
    InvalidSlice {
        shape: Vec<usize>,
        axis: usize,
        start: usize,
        len: usize,
    },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named learnable tensors, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Result<ParamId, AutodiffError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(ParamId)
            .ok_or_else(|| AutodiffError::UnknownParam(name.into()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }
}
