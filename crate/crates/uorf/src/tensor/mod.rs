//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle: unique id, shape, shared immutable data
//! buffer, an optional graph node (see [`graph`]) and, for leaves created
//! with [`Tensor::requires_grad`], a shared gradient accumulator. Clones
//! alias the same logical tensor. Values are immutable after construction —
//! "updating" a parameter means building a new leaf (see `nets::Param`).
//!
//! Precision is a type parameter (`f32` for training, `f64` for gradient
//! audits); [`Tensor::cast`] converts between them.

pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod matmul;
pub mod ops;
pub mod resize;
pub mod shape;

use std::sync::{Arc, Mutex};

use crate::real::Real;
use graph::{fresh_id, grad_enabled, BackFn, Node};

pub use graph::{grad_of, no_grad, NoGradGuard};

pub struct Tensor<T: Real = f32> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    node: Option<Arc<Node<T>>>,
    grad_cell: Option<Arc<Mutex<Vec<T>>>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            id: self.id,
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: self.node.clone(),
            grad_cell: self.grad_cell.clone(),
        }
    }
}

impl<T: Real> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor<{}>(shape={:?}, id={}{}{})",
            T::DTYPE,
            self.shape,
            self.id,
            if self.node.is_some() { ", op" } else { "" },
            if self.grad_cell.is_some() { ", leaf+grad" } else { "" },
        )
    }
}

// ---------------------------------------------------------------- creation

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape::numel(shape),
            data.len(),
            "shape {:?} wants {} elements, got {}",
            shape,
            shape::numel(shape),
            data.len()
        );
        Tensor {
            id: fresh_id(),
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
            grad_cell: None,
        }
    }

    pub fn from_f64_vec(shape: &[usize], data: &[f64]) -> Self {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_vec(shape, vec![v; shape::numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Rank-0 scalar.
    pub fn scalar(v: T) -> Self {
        Self::from_vec(&[], vec![v])
    }

    pub fn scalar_f64(v: f64) -> Self {
        Self::scalar(T::from_f64(v))
    }

    /// Mark this (leaf) tensor as a gradient target; gives it a `.grad`
    /// accumulator initialized to zeros.
    pub fn requires_grad(mut self) -> Self {
        assert!(
            self.node.is_none(),
            "requires_grad is for leaves; this tensor already has a graph node"
        );
        if self.grad_cell.is_none() {
            self.grad_cell = Some(Arc::new(Mutex::new(vec![T::zero(); self.numel()])));
        }
        self
    }

    /// Same data, fresh identity, no graph attachment: gradients do not flow
    /// through a detached handle.
    pub fn detach(&self) -> Self {
        Tensor {
            id: fresh_id(),
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
            grad_cell: None,
        }
    }

    /// Convert precision elementwise (always detached).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_vec(
            &self.shape,
            self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        )
    }
}

// --------------------------------------------------------------- accessors

impl<T: Real> Tensor<T> {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    /// Value of a rank-anything single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    /// Element at a full n-d index (for tests and small reads).
    pub fn at(&self, idx: &[usize]) -> T {
        assert_eq!(idx.len(), self.rank(), "index rank mismatch");
        let strides = shape::strides_of(&self.shape);
        let mut off = 0usize;
        for (i, &ix) in idx.iter().enumerate() {
            assert!(ix < self.shape[i], "index {:?} out of shape {:?}", idx, self.shape);
            off += ix * strides[i];
        }
        self.data[off]
    }

    pub fn is_finite_all(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn node(&self) -> Option<Arc<Node<T>>> {
        self.node.clone()
    }

    /// Participates in gradient flow (leaf target or op output on a tracked
    /// path).
    pub fn tracked(&self) -> bool {
        self.node.is_some() || self.grad_cell.is_some()
    }

    pub fn is_leaf(&self) -> bool {
        self.node.is_none()
    }

    /// Accumulated gradient of a leaf, as a constant tensor. Zeros until a
    /// backward pass has deposited something.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.grad_cell
            .as_ref()
            .map(|c| Tensor::from_vec(&self.shape, c.lock().unwrap().clone()))
    }

    pub fn zero_grad(&self) {
        if let Some(c) = &self.grad_cell {
            c.lock().unwrap().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub(crate) fn add_to_grad_cell(&self, g: &Tensor<T>) {
        if let Some(c) = &self.grad_cell {
            let mut cell = c.lock().unwrap();
            debug_assert_eq!(cell.len(), g.numel());
            for (acc, gv) in cell.iter_mut().zip(g.data().iter()) {
                *acc += *gv;
            }
        }
    }
}

// ---------------------------------------------------------------- backward

impl<T: Real> Tensor<T> {
    /// Reverse sweep from a scalar loss; accumulates into the `.grad` cells
    /// of every reachable leaf. Gradient of the loss w.r.t. itself is 1.
    ///
    /// The graph this walk visits is freed when the owning tensors drop;
    /// a training step drops its loss (and intermediates) at the end of the
    /// step, which is what bounds memory across steps.
    pub fn backward(&self) {
        assert_eq!(
            self.numel(),
            1,
            "backward() expects a scalar loss, got shape {:?}",
            self.shape
        );
        self.backward_seeded(&Tensor::ones(&self.shape));
    }

    /// Reverse sweep with an explicit output cotangent (for non-scalar
    /// outputs, e.g. chunked pipelines that checkpoint at an intermediate
    /// tensor). Accumulates into leaf `.grad` cells.
    pub fn backward_seeded(&self, seed: &Tensor<T>) {
        graph::run_backward(&[(self, seed.clone())], &[], false, true);
    }
}

/// Construct an op output: fresh tensor, plus a graph node when recording is
/// on and any input is tracked. `back` maps (output cotangent, inputs) to
/// input cotangents and must express them via tensor ops so that higher-order
/// passes stay differentiable.
pub(crate) fn op_result<T: Real>(
    op: &'static str,
    shape: Vec<usize>,
    data: Vec<T>,
    inputs: &[&Tensor<T>],
    back: impl Fn(&Tensor<T>, &[Tensor<T>]) -> Vec<Option<Tensor<T>>> + Send + Sync + 'static,
) -> Tensor<T> {
    op_result_arc(op, shape, Arc::new(data), inputs, back)
}

/// Like [`op_result`] but sharing an existing buffer (used by views such as
/// reshape that must not copy).
pub(crate) fn op_result_arc<T: Real>(
    op: &'static str,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    inputs: &[&Tensor<T>],
    back: impl Fn(&Tensor<T>, &[Tensor<T>]) -> Vec<Option<Tensor<T>>> + Send + Sync + 'static,
) -> Tensor<T> {
    debug_assert_eq!(shape::numel(&shape), data.len(), "op {op}: bad output buffer");
    let mut out = Tensor {
        id: fresh_id(),
        shape,
        data,
        node: None,
        grad_cell: None,
    };
    if grad_enabled() && inputs.iter().any(|i| i.tracked()) {
        let node = Node {
            seq: out.id,
            op,
            inputs: inputs.iter().map(|&i| i.clone()).collect(),
            back: Box::new(back) as BackFn<T>,
        };
        out.node = Some(Arc::new(node));
    }
    out
}
