//! Reverse-mode tape.
//!
//! Every differentiable op attaches a [`Node`] to its output tensor. A node
//! owns its input tensors (which keeps the upstream graph alive) and a
//! backward closure that maps the output cotangent to input cotangents.
//! Closures build those cotangents *out of tensor ops*, recomputing whatever
//! they need from the inputs instead of capturing the op's output — that
//! avoids reference cycles and makes the backward pass itself recordable,
//! which is what `create_graph = true` (double backward, used by the R1
//! gradient penalty) relies on.
//!
//! Nodes carry a monotonically increasing sequence number assigned at
//! creation; the backward walk processes reachable nodes in strictly
//! descending sequence order, i.e. exact reverse execution order. Graph
//! construction is single-threaded by design (kernels may parallelize
//! internally), so the order — and therefore every gradient bit — is
//! deterministic.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::Tensor;
use crate::real::Real;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Fresh tensor id; doubles as the tape sequence number of the node that
/// produced the tensor.
pub(crate) fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

thread_local! {
    static GRAD_PAUSED: Cell<bool> = const { Cell::new(false) };
}

/// True while ops should record nodes.
pub fn grad_enabled() -> bool {
    GRAD_PAUSED.with(|c| !c.get())
}

/// RAII guard pausing recording on this thread.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        let prev = GRAD_PAUSED.with(|c| c.replace(true));
        NoGradGuard { prev }
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_PAUSED.with(|c| c.set(prev));
    }
}

/// Run `f` with gradient recording paused.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = NoGradGuard::new();
    f()
}

/// Backward closure: (output cotangent, op inputs) -> per-input cotangents
/// (`None` for inputs that don't need one).
pub(crate) type BackFn<T> =
    Box<dyn Fn(&Tensor<T>, &[Tensor<T>]) -> Vec<Option<Tensor<T>>> + Send + Sync>;

pub(crate) struct Node<T: Real> {
    /// Tape position == id of the output tensor.
    pub seq: u64,
    pub op: &'static str,
    pub inputs: Vec<Tensor<T>>,
    pub back: BackFn<T>,
}

/// Core reverse sweep. `seeds` are (output, cotangent) pairs; returns the
/// cotangents of `wrt` in order. When `accumulate_leaves` is set, cotangents
/// reaching leaf tensors are also added into their `.grad` cells.
pub(crate) fn run_backward<T: Real>(
    seeds: &[(&Tensor<T>, Tensor<T>)],
    wrt: &[&Tensor<T>],
    create_graph: bool,
    accumulate_leaves: bool,
) -> Vec<Option<Tensor<T>>> {
    // Accumulation arithmetic runs through regular ops; pause recording
    // unless the caller wants a differentiable backward pass.
    let guard = if create_graph {
        None
    } else {
        Some(NoGradGuard::new())
    };

    let wrt_ids: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();

    // Collect reachable nodes.
    let mut seen: HashSet<u64> = HashSet::new();
    let mut order: Vec<Arc<Node<T>>> = Vec::new();
    let mut stack: Vec<Arc<Node<T>>> = Vec::new();
    for (out, _) in seeds {
        if let Some(n) = out.node() {
            if seen.insert(n.seq) {
                stack.push(n);
            }
        }
    }
    while let Some(n) = stack.pop() {
        for inp in &n.inputs {
            if let Some(m) = inp.node() {
                if seen.insert(m.seq) {
                    stack.push(m);
                }
            }
        }
        order.push(n);
    }
    order.sort_by(|a, b| b.seq.cmp(&a.seq));

    // Cotangents by tensor id.
    let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
    for (out, seed) in seeds {
        assert_eq!(
            out.shape(),
            seed.shape(),
            "backward seed shape {:?} must match output shape {:?}",
            seed.shape(),
            out.shape()
        );
        accumulate(&mut grads, out.id(), seed.clone());
        if accumulate_leaves && out.node().is_none() {
            out.add_to_grad_cell(seed);
        }
    }

    for node in &order {
        let g = match grads.get(&node.seq) {
            Some(g) => g.clone(),
            None => continue, // not on a path from any seed
        };
        if !wrt_ids.contains(&node.seq) {
            grads.remove(&node.seq);
        }
        let input_grads = (node.back)(&g, &node.inputs);
        debug_assert_eq!(
            input_grads.len(),
            node.inputs.len(),
            "op {} returned {} cotangents for {} inputs",
            node.op,
            input_grads.len(),
            node.inputs.len()
        );
        for (inp, gi) in node.inputs.iter().zip(input_grads) {
            let Some(gi) = gi else { continue };
            assert_eq!(
                gi.shape(),
                inp.shape(),
                "op {}: cotangent shape {:?} != input shape {:?}",
                node.op,
                gi.shape(),
                inp.shape()
            );
            if !inp.tracked() {
                continue;
            }
            if accumulate_leaves && inp.node().is_none() {
                inp.add_to_grad_cell(&gi);
            }
            if inp.node().is_some() || wrt_ids.contains(&inp.id()) {
                accumulate(&mut grads, inp.id(), gi);
            }
        }
    }

    drop(guard);
    wrt.iter().map(|t| grads.remove(&t.id())).collect()
}

fn accumulate<T: Real>(grads: &mut HashMap<u64, Tensor<T>>, id: u64, g: Tensor<T>) {
    match grads.remove(&id) {
        Some(prev) => {
            grads.insert(id, prev.add(&g));
        }
        None => {
            grads.insert(id, g);
        }
    }
}

/// Cotangents of `output` (a scalar) with respect to `wrt`, as new tensors;
/// `.grad` cells are untouched. With `create_graph` the returned tensors are
/// themselves differentiable, enabling second-order terms.
///
/// Pure and repeatable: calling twice on the same graph yields bit-identical
/// results.
pub fn grad_of<T: Real>(
    output: &Tensor<T>,
    wrt: &[&Tensor<T>],
    create_graph: bool,
) -> Vec<Option<Tensor<T>>> {
    assert_eq!(
        output.numel(),
        1,
        "grad_of expects a scalar output, got shape {:?}",
        output.shape()
    );
    let seed = Tensor::ones(output.shape());
    run_backward(&[(output, seed)], wrt, create_graph, false)
}
