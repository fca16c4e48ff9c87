use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::real::Real;
use super::runtime;
use super::tensor::{numel, Tensor};
use crate::error::{FastError, Result};

/// Maps the gradient flowing into a node's output to one optional gradient
/// per parent, in parent order.
pub type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Real> {
    shape: Vec<usize>,
    value: Arc<Vec<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    param_id: Option<u64>,
    op: &'static str,
}

/// Records a computation so it can be differentiated in reverse. Nodes are
/// appended in evaluation order, which is already a topological order.
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<u64, usize>>,
    grad_enabled: bool,
    bytes: RefCell<usize>,
    last_record: RefCell<Option<std::time::Instant>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            grad_enabled: true,
            bytes: RefCell::new(0),
            last_record: RefCell::new(None),
        }
    }

    /// A tape that never records backward closures (inference).
    pub fn no_grad() -> Self {
        let mut t = Self::new();
        t.grad_enabled = false;
        t
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a constant or leaf. Gradients are tracked when the tensor has
    /// `requires_grad` set.
    pub fn leaf(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push_node(Node {
            shape: t.shape().to_vec(),
            value: t.shared_data(),
            requires_grad: t.requires_grad() && self.grad_enabled,
            parents: Vec::new(),
            backward: None,
            param_id: Some(t.id()),
            op: "leaf",
        })
    }

    /// Like [`leaf`](Self::leaf) but reuses the node if this tensor was already
    /// recorded, so repeated uses of one parameter share a gradient slot.
    pub fn param(&self, t: &Tensor<T>) -> Var<'_, T> {
        if let Some(&id) = self.params.borrow().get(&t.id()) {
            return Var { tape: self, id };
        }
        let v = self.leaf(t);
        self.params.borrow_mut().insert(t.id(), v.id);
        v
    }

    pub fn constant(&self, shape: &[usize], data: Vec<T>) -> Result<Var<'_, T>> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    /// Records the result of an operation. `backward` is dropped when no parent
    /// needs a gradient.
    pub fn record(
        &self,
        op: &'static str,
        parents: &[Var<'_, T>],
        shape: Vec<usize>,
        value: impl Into<Arc<Vec<T>>>,
        backward: BackwardFn<T>,
    ) -> Result<Var<'_, T>> {
        if runtime::profiling() {
            let now = std::time::Instant::now();
            if let Some(prev) = self.last_record.replace(Some(now)) {
                runtime::profile_add(op, (now - prev).as_secs_f64(), 0.0);
            }
        }
        let value: Arc<Vec<T>> = value.into();
        debug_assert_eq!(numel(&shape), value.len(), "{op}: value/shape mismatch");
        if let Some(pos) = value.iter().position(|v| !v.is_finite()) {
            return Err(FastError::Numeric(format!(
                "{op} produced a non-finite value at flat index {pos}"
            )));
        }
        let parent_ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = self.grad_enabled && {
            let nodes = self.nodes.borrow();
            parent_ids.iter().any(|&p| nodes[p].requires_grad)
        };
        Ok(self.push_node(Node {
            shape,
            value,
            requires_grad,
            parents: if requires_grad { parent_ids } else { Vec::new() },
            backward: if requires_grad { Some(backward) } else { None },
            param_id: None,
            op,
        }))
    }

    /// Records a value that shares storage with an existing one (reshape).
    pub(crate) fn record_shared(
        &self,
        parent: Var<'_, T>,
        shape: Vec<usize>,
        value: Arc<Vec<T>>,
    ) -> Var<'_, T> {
        let requires_grad = self.grad_enabled && self.nodes.borrow()[parent.id].requires_grad;
        let backward: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(|g: &[T]| vec![Some(g.to_vec())]))
        } else {
            None
        };
        let node = Node {
            shape,
            value,
            requires_grad,
            parents: if requires_grad {
                vec![parent.id]
            } else {
                Vec::new()
            },
            backward,
            param_id: None,
            op: "reshape",
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let bytes = node.value.len() * std::mem::size_of::<T>();
        runtime::track_alloc(bytes);
        *self.bytes.borrow_mut() += bytes;
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(FastError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.id + 1);
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![T::one()]);

        let mut out = Gradients {
            by_param: HashMap::new(),
            by_node: HashMap::new(),
        };
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(bw) = &node.backward {
                let t0 = runtime::profiling().then(std::time::Instant::now);
                let parent_grads = bw(&g);
                if let Some(t0) = t0 {
                    runtime::profile_add(node.op, 0.0, t0.elapsed().as_secs_f64());
                }
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), nodes[p].value.len());
                    match &mut grads[p] {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            // only leaves keep their gradient; intermediates are freed here
            if node.parents.is_empty() && node.requires_grad {
                if let Some(pid) = node.param_id {
                    match out.by_param.get_mut(&pid) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                        None => {
                            out.by_param.insert(pid, g.clone());
                        }
                    }
                }
                out.by_node.insert(id, g);
            }
        }
        Ok(out)
    }

    fn node_shape(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    fn node_value(&self, id: usize) -> Arc<Vec<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn node_requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

impl<T: Real> Drop for Tape<T> {
    fn drop(&mut self) {
        runtime::track_free(*self.bytes.borrow());
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.node_shape(self.id)
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn value(&self) -> Arc<Vec<T>> {
        self.tape.node_value(self.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.node_requires_grad(self.id)
    }

    /// Copies the value out as a standalone tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_parts(self.shape(), self.value())
    }

    pub fn item(&self) -> T {
        self.value()[0]
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T: Real> {
    by_param: HashMap<u64, Vec<T>>,
    by_node: HashMap<usize, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a tensor that entered the tape via `leaf`/`param`.
    pub fn of(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.by_param.get(&t.id()).map(Vec::as_slice)
    }

    /// Gradient with respect to a leaf recorded on the tape.
    pub fn wrt(&self, v: &Var<'_, T>) -> Option<&[T]> {
        self.by_node.get(&v.id()).map(Vec::as_slice)
    }
}
