//! Dense single-precision tensors with a dynamically recorded
//! reverse-mode differentiation graph.
//!
//! Every operation that consumes a tensor with `requires_grad` set records
//! a node holding its inputs and a gradient rule. [`Tensor::backward`]
//! walks the recorded graph in reverse topological order and accumulates
//! gradients into the leaves. Intermediate gradients live only for the
//! duration of one backward pass; the graph itself is released when the
//! last handle to the loss is dropped.

mod conv;
mod gradcheck;
mod loss;
mod ops;
mod optim;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use conv::reflect_index;
pub use gradcheck::{check_gradients, GradCheckReport};
pub use loss::DICE_SMOOTH;
pub use optim::{adam_update, Adam, AdamState};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Disables graph recording on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Runs `f` without recording any operations.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let _guard = NoGradGuard::new();
    f()
}

/// Gradient rule of a recorded operation: maps the output gradient to one
/// optional gradient per input (in input order).
pub(crate) type BackwardFn = Box<dyn Fn(&[f32]) -> Vec<Option<Vec<f32>>>>;

pub(crate) struct Op {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f32>>>,
    op: Option<Op>,
}

/// Shared handle to a tensor node. Cloning is cheap and preserves identity.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(|o| o.name))
            .finish()
    }
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, op: Option<Op>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            op,
        }))
    }

    /// Creates a constant (non-differentiable) tensor.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        validate_shape(shape, data.len())?;
        Ok(Tensor::build(shape.to_vec(), data, false, None))
    }

    /// Creates a differentiable leaf.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        validate_shape(shape, data.len())?;
        Ok(Tensor::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::build(shape.to_vec(), vec![0.0; n], false, None)
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        let n = shape.iter().product();
        Tensor::build(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::build(vec![1], vec![value], false, None)
    }

    /// Records the result of an operation. When gradients are disabled or no
    /// input requires them, the result is a plain constant.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f32>,
        name: &'static str,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        if grad_enabled() && inputs.iter().any(Tensor::requires_grad) {
            let op = Op {
                name,
                inputs,
                backward,
            };
            Tensor::build(shape, data, true, Some(op))
        } else {
            Tensor::build(shape, data, false, None)
        }
    }

    /// Same data and shape, cut from any graph; never requires grad.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.shape().to_vec(), self.to_vec(), false, None)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|o| o.name)
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.0.data.borrow()
    }

    /// Mutable access to leaf storage (used by optimizers and checkpoint loading).
    pub fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        assert!(self.is_leaf(), "only leaf tensors may be modified in place");
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor with {} elements", d.len());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    /// Back-propagates from this scalar, accumulating into every leaf that
    /// requires grad.
    pub fn backward(&self) -> Result<()> {
        Graph::trace(self)?.backward();
        Ok(())
    }
}

fn validate_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::shape("tensor", format!("zero dimension in {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::shape(
            "tensor",
            format!("shape {shape:?} holds {n} values but data has {len}"),
        ));
    }
    Ok(())
}

/// Operations reachable from a root, in topological order.
pub struct Graph {
    root: Tensor,
    order: Vec<Tensor>,
}

impl Graph {
    pub fn trace(root: &Tensor) -> Result<Graph> {
        if root.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.shape()
            )));
        }
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        // iterative post-order DFS
        let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.op {
                for inp in op.inputs.iter().rev() {
                    if inp.requires_grad() && !seen.contains(&inp.id()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        Ok(Graph {
            root: root.clone(),
            order,
        })
    }

    /// Nodes in topological order: every node appears after all of its inputs.
    pub fn nodes(&self) -> &[Tensor] {
        &self.order
    }

    pub fn num_ops(&self) -> usize {
        self.order.iter().filter(|t| !t.is_leaf()).count()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Tensor> {
        self.order.iter().filter(|t| t.is_leaf())
    }

    /// Runs the reverse pass; returns how many operations were visited.
    pub fn backward(&self) -> usize {
        if !self.root.requires_grad() {
            return 0;
        }
        let mut grads: HashMap<u64, Vec<f32>> = HashMap::new();
        grads.insert(self.root.id(), vec![1.0; self.root.numel()]);
        let mut visited = 0;
        for node in self.order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            match &node.0.op {
                None => node.accumulate_grad(&g),
                Some(op) => {
                    visited += 1;
                    let input_grads = (op.backward)(&g);
                    debug_assert_eq!(input_grads.len(), op.inputs.len(), "op {}", op.name);
                    for (inp, ig) in op.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), inp.numel(), "op {}", op.name);
                        match grads.get_mut(&inp.id()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(inp.id(), ig);
                            }
                        }
                    }
                }
            }
        }
        visited
    }
}
