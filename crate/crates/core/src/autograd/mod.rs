//! Minimal reverse-mode automatic differentiation over dense `ndarray` tensors.
//!
//! Every [`Var`] records the operation that produced it. Calling
//! [`Var::backward`] walks the recorded graph in reverse creation order and
//! returns gradients for every leaf that requires them. Graphs built only
//! from constants record nothing, so inference pays no tape overhead.

mod conv;
mod ops;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::ArrayD;

use crate::scalar::Scalar;

pub use ops::sum_to_shape;

/// Dense n-dimensional tensor storage.
pub type Tensor<S> = ArrayD<S>;

type BackwardFn<S> = Box<dyn Fn(&Tensor<S>) -> Vec<Option<Tensor<S>>>>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

struct Node<S: Scalar> {
    id: u64,
    value: Tensor<S>,
    requires_grad: bool,
    parents: Vec<Var<S>>,
    backward: Option<BackwardFn<S>>,
}

/// A tensor-valued node in a computation graph.
pub struct Var<S: Scalar>(Rc<Node<S>>);

impl<S: Scalar> Clone for Var<S> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<S: Scalar> fmt::Debug for Var<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<S: Scalar> Var<S> {
    /// A value that never receives gradients.
    pub fn constant(value: Tensor<S>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// A trainable leaf.
    pub fn leaf(value: Tensor<S>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn scalar(x: S) -> Self {
        Self::constant(ArrayD::from_elem(ndarray::IxDyn(&[]), x))
    }

    /// Records a custom differentiable operation.
    ///
    /// `backward` receives the gradient of the output and returns one optional
    /// gradient per parent, each shaped like that parent's value.
    pub fn from_op<F>(value: Tensor<S>, parents: Vec<Var<S>>, backward: F) -> Self
    where
        F: Fn(&Tensor<S>) -> Vec<Option<Tensor<S>>> + 'static,
    {
        if !parents.iter().any(Var::requires_grad) {
            return Self::constant(value);
        }
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            parents,
            backward: Some(Box::new(backward)),
        }))
    }

    pub fn value(&self) -> &Tensor<S> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.0.value.len(), 1, "item() on a tensor with {} elements", self.0.value.len());
        *self.0.value.iter().next().unwrap()
    }

    /// Backpropagates from a single-element output.
    pub fn backward(&self) -> Gradients<S> {
        assert_eq!(self.0.value.len(), 1, "backward() needs a scalar output");
        self.backward_with(ArrayD::from_elem(self.0.value.raw_dim(), S::one()))
    }

    pub fn backward_with(&self, seed: Tensor<S>) -> Gradients<S> {
        assert_eq!(seed.shape(), self.shape(), "seed shape must match output shape");
        let mut grads: HashMap<u64, Tensor<S>> = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads };
        }

        // Creation order is a topological order, so descending ids visit
        // every node after all of its consumers.
        let mut nodes: Vec<Var<S>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            for p in &v.0.parents {
                stack.push(p.clone());
            }
            nodes.push(v);
        }
        nodes.sort_by(|a, b| b.id().cmp(&a.id()));

        grads.insert(self.id(), seed);
        for node in &nodes {
            let Some(backward) = &node.0.backward else {
                continue;
            };
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            let parent_grads = backward(&g);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.shape(), parent.shape(), "gradient shape mismatch");
                match grads.get_mut(&parent.id()) {
                    Some(acc) => *acc += &pg,
                    None => {
                        grads.insert(parent.id(), pg);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

/// Gradients of leaves, keyed by node identity.
#[derive(Debug, Default)]
pub struct Gradients<S> {
    grads: HashMap<u64, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: &Var<S>) -> Option<&Tensor<S>> {
        self.grads.get(&v.id())
    }

    /// Gradient of `v`, or zeros when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: &Var<S>) -> Tensor<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(v.value().raw_dim()))
    }
}
