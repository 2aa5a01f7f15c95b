//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! already a topological order, so `backward` is a single reverse sweep.
//! Parameters live in a [`ParamStore`] and are bound into a graph per forward
//! pass; after `backward` their gradients are accumulated back into the store.

mod backward;
pub mod gradcheck;
mod ops;
mod param;

use std::collections::HashMap;

pub use param::{ParamId, ParamStore, Parameter};

use crate::error::{Result, TecoError};
use crate::tensor::{Real, Tensor};

/// Train/eval switch for stochastic layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulScalar(NodeId, NodeId),
    Affine(NodeId, T),
    Concat(Vec<NodeId>, usize),
    Narrow {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Transpose(NodeId),
    Reshape(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId, usize),
    MeanAxis(NodeId, usize),
    Sum(NodeId),
    L2Norm(NodeId),
    ClampMax(NodeId, T),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        x_hat: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout(NodeId, Vec<T>),
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    bound: HashMap<ParamId, NodeId>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    /// Free-standing differentiable input.
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, true)
    }

    /// Bind a stored parameter into this graph. Binding the same parameter
    /// twice returns the same node, so repeated uses accumulate gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&node) = self.bound.get(&id) {
            return node;
        }
        let node = self.leaf(store.get(id).value.clone(), true);
        self.bound.insert(id, node);
        node
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `id`; `None` when
    /// the node was unreachable from the loss or does not require grad.
    pub fn grad(&self, id: NodeId) -> Option<Tensor<T>> {
        self.grads[id.0].as_ref().map(|g| {
            Tensor::new(self.nodes[id.0].value.shape().to_vec(), g.clone())
                .expect("gradient matches value shape")
        })
    }

    /// Reverse sweep from a one-element loss node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TecoError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.vjp(i, &gy);
            self.grads[i] = Some(gy);
            for (input, delta) in contributions {
                self.accumulate(input, delta);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: Vec<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a = *a + d),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Add this graph's parameter gradients into `store`. Parameters that
    /// were bound but unreachable contribute nothing.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for (&pid, &node) in &self.bound {
            if let Some(g) = &self.grads[node.0] {
                let target = store.get_mut(pid).grad.data_mut();
                target.iter_mut().zip(g).for_each(|(a, &d)| *a = *a + d);
            }
        }
    }
}
