//! Operation recording and reverse-mode gradient propagation.
//!
//! A [`Tape`] owns every value produced during one forward pass. Handles to
//! those values are [`Var`]s, which are cheap to copy. Calling
//! [`Tape::backward`] walks the recorded operations in reverse execution
//! order, visiting each node once.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::scalar::Float;
use crate::tensor::{numel, Tensor};

pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, batched: bool },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: T },
    Concat { inputs: Vec<usize>, axis: usize },
    Sum { a: usize, axis: usize },
    Mean { a: usize, axis: usize },
    SumAll { a: usize },
    LeakyRelu { a: usize, slope: T },
    Conv1d { x: usize, w: usize, stride: usize, padding: usize, groups: usize },
    AvgPool1d { a: usize, kernel: usize, stride: usize },
    Dropout { a: usize, mask: Vec<T> },
    GatherRows { a: usize, indices: Vec<usize> },
    MaskedSoftmax { a: usize, mask: Vec<bool>, axis: usize },
    Reshape { a: usize },
    Focal { logits: usize, targets: Vec<usize>, mask: Vec<bool>, gamma: T },
}

pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<T>>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Records one forward computation. Single-threaded by construction.
pub struct Tape<T: Float> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Float> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf value; gradients are tracked when `requires_grad` is set.
    pub fn leaf(&self, tensor: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let shape = tensor.shape().to_vec();
        let data = tensor.into_data();
        self.push_unchecked(shape, data, Op::Leaf, requires_grad)
    }

    pub fn param(&self, tensor: &Tensor<T>) -> Var<'_, T> {
        self.leaf(tensor.clone(), true)
    }

    pub fn constant(&self, tensor: Tensor<T>) -> Var<'_, T> {
        self.leaf(tensor, false)
    }

    fn push_unchecked(
        &self,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        needs_grad: bool,
    ) -> Var<'_, T> {
        debug_assert_eq!(numel(&shape), data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data: Rc::new(data),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn push(
        &self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        needs_grad: bool,
    ) -> Result<Var<'_, T>> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        Ok(self.push_unchecked(shape, data, op, needs_grad))
    }

    pub(crate) fn needs_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    pub(crate) fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    pub(crate) fn data_of(&self, id: usize) -> Rc<Vec<T>> {
        self.nodes.borrow()[id].data.clone()
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if numel(&root.shape) != 1 {
            return Err(TensorError::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else {
                continue;
            };
            crate::ops::backward_node(&nodes, id, &grad, &mut grads);
            grads[id] = Some(grad);
        }
        let shapes = nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient for `var`; zero when `var` does not influence the loss.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.wrt_id(var.id)
    }

    pub fn wrt_id(&self, id: usize) -> Tensor<T> {
        let shape = self.shapes[id].clone();
        match self.grads.get(id).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn is_reached(&self, var: Var<'_, T>) -> bool {
        self.grads.get(var.id).is_some_and(|g| g.is_some())
    }
}

impl<'t, T: Float> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn data(&self) -> Rc<Vec<T>> {
        self.tape.data_of(self.id)
    }

    pub fn value(&self) -> Tensor<T> {
        Tensor::new(self.shape(), self.data().as_ref().clone()).expect("recorded shape")
    }

    pub fn item(&self) -> T {
        self.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs_grad(self.id)
    }
}

/// Adds `src` into the gradient slot `slot`, allocating it on first use.
pub(crate) fn accumulate<T: Float>(grads: &mut [Option<Vec<T>>], slot: usize, src: &[T]) {
    match &mut grads[slot] {
        Some(g) => {
            for (d, s) in g.iter_mut().zip(src) {
                *d += *s;
            }
        }
        None => grads[slot] = Some(src.to_vec()),
    }
}

/// Mutable gradient buffer for `slot`, zero-initialised when absent.
pub(crate) fn grad_buf<T: Float>(
    grads: &mut [Option<Vec<T>>],
    slot: usize,
    len: usize,
) -> &mut Vec<T> {
    grads[slot].get_or_insert_with(|| vec![T::zero(); len])
}
