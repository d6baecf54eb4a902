//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only tape. Tensors created through
//! [`Graph::param`] are leaves; every operation that touches a tensor
//! carrying a graph node records itself on that tape. Tensors without a
//! node (constants, or the output of [`Tensor::detach`]) never record
//! anything, so gradients cannot flow through them.
//!
//! ```
//! use dbloss_core::tensor::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let w = g.param(&Tensor::from_vec(vec![1.0, -2.0]));
//! let loss = w.square().unwrap().mean().unwrap();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(&w).unwrap(), &[1.0, -2.0]);
//! ```

mod graph;
mod ops;

pub use graph::{Gradients, Graph};

use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use graph::NodeRef;

/// Smallest divisor magnitude accepted by division.
pub const MIN_DIVISOR: f64 = 1e-300;

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Rc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl Tensor {
    /// Builds a constant tensor, validating the element count and finiteness.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {i}",
                values[i]
            )));
        }
        Ok(Self {
            shape,
            values: Rc::new(values),
            node: None,
        })
    }

    /// A rank-1 constant. Panics on non-finite input.
    pub fn from_vec(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new(vec![n], values).expect("finite values")
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(vec![], vec![value]).expect("finite scalar")
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: Rc::new(vec![0.0; n]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.values[0])
    }

    /// Whether this tensor participates in a graph.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn graph(&self) -> Option<&Graph> {
        self.node.as_ref().map(|n| &n.graph)
    }

    /// Same values, no graph node. Gradients never flow back through the result.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: Rc::clone(&self.values),
            node: None,
        }
    }

    /// Reverse-mode sweep from a single-element root.
    pub fn backward(&self) -> Result<Gradients> {
        graph::backward(self)
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("values", &self.values)
            .field("node", &self.node_id())
            .finish()
    }
}
