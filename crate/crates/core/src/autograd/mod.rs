//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation eagerly; [`Graph::backward`] walks the
//! tape in reverse. Parameters enter the tape through [`Graph::param`], which
//! tags the leaf with its [`ParamStore`](crate::nn::ParamStore) so gradients
//! can be routed back to the owning model. A graph built with
//! [`Graph::no_grad`] records values only.

mod kernels;
mod ops;

pub use kernels::{col2im, conv_out_size, im2col};

use std::cell::{Ref, RefCell};

use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(grad_out, inputs, output, needs_grad) -> grad per input`
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<(u64, usize)>,
}

pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

/// Handle to a node of a [`Graph`].
pub struct Var<'g, T> {
    g: &'g Graph<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: true }
    }

    /// A graph that stores values but never records backward functions.
    pub fn no_grad() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: false }
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

    /// Constant input; gradients are not tracked.
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false, None)
    }

    /// Input whose gradient should be reported by [`Graph::backward`].
    pub fn variable(&self, value: Tensor<T>) -> Var<'_, T> {
        let rg = self.grad_enabled;
        self.leaf(value, rg, None)
    }

    /// Bind parameter `index` of `store`. Frozen stores bind as constants.
    pub fn param(&self, store: &ParamStore<T>, index: usize) -> Var<'_, T> {
        let rg = self.grad_enabled && !store.is_frozen();
        self.leaf(store.get(index).clone(), rg, Some((store.id(), index)))
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool, param: Option<(u64, usize)>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents: Vec::new(), backward: None, requires_grad, param });
        Var { g: self, id: nodes.len() - 1 }
    }

    pub(crate) fn push(&self, value: Tensor<T>, parents: &[usize], backward: BackwardFn<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.grad_enabled && parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value,
            parents: parents.to_vec(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            param: None,
        });
        Var { g: self, id: nodes.len() - 1 }
    }

    pub(crate) fn value_ref(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let root = &nodes[loss.id];
        assert_eq!(root.value.len(), 1, "backward() needs a scalar loss");
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(gout) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|&p| &nodes[p].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let pgrads = bw(&gout, &inputs, &node.value, &needs);
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(pgrads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.axpy(T::one(), &pg).expect("gradient shape"),
                    slot => *slot = Some(pg),
                }
            }
        }
        let params = nodes.iter().map(|n| n.param).collect();
        Gradients { grads, params }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.g
    }

    pub fn value(&self) -> Tensor<T> {
        self.g.value_ref(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.g.value_ref(self.id).shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> T {
        self.g.value_ref(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.g.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        self.g.input(self.value())
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<Option<(u64, usize)>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf created by [`Graph::variable`].
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Per-parameter gradients of `store`, summed over every binding.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = (0..store.len()).map(|_| None).collect();
        for (g, p) in self.grads.iter().zip(&self.params) {
            let (Some(g), Some((sid, idx))) = (g, p) else { continue };
            if *sid != store.id() {
                continue;
            }
            match &mut out[*idx] {
                Some(acc) => acc.axpy(T::one(), g).expect("gradient shape"),
                slot => *slot = Some(g.clone()),
            }
        }
        out
    }
}
