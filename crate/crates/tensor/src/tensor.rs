use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::Real;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Inputs handed to a backward closure.
pub struct BackwardCtx<'a, T: Real> {
    pub parents: &'a [Tensor<T>],
    /// Forward output values.
    pub out: &'a [T],
    /// Gradient of the loss with respect to the output.
    pub grad: &'a [T],
}

/// Per-parent gradient contributions, `None` where a parent takes no gradient.
pub type ParentGrads<T> = Vec<Option<Vec<T>>>;

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> ParentGrads<T>>;

struct Node<T: Real> {
    id: u64,
    data: Vec<T>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// An immutable n-dimensional array that records the operations producing it.
///
/// Cloning is cheap (reference counted). Creation order doubles as a
/// topological order of the graph, which [`Tensor::backward`] relies on.
pub struct Tensor<T: Real> {
    node: Rc<Node<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self { node: Rc::clone(&self.node) }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    fn leaf(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length does not match shape {shape:?}"
        );
        Self {
            node: Rc::new(Node {
                id: next_id(),
                data,
                shape,
                requires_grad,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// A constant (no gradient).
    pub fn new(data: Vec<T>, shape: &[usize]) -> Self {
        Self::leaf(data, shape.to_vec(), false)
    }

    /// A trainable leaf whose gradient accumulates across backward passes.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Self {
        Self::leaf(data, shape.to_vec(), true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(vec![T::zero(); n], shape)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::new(vec![value; n], shape)
    }

    pub fn scalar(value: T) -> Self {
        Self::new(vec![value], &[1])
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Self {
        Self::new(data.iter().map(|&v| T::c(v)).collect(), shape)
    }

    /// Builds the output of a custom differentiable operation.
    ///
    /// `backward` receives the output gradient and must return one entry per
    /// parent, each either `None` or a gradient with the parent's length. It is
    /// only retained when at least one parent requires a gradient.
    pub fn from_op<F>(data: Vec<T>, shape: Vec<usize>, parents: Vec<Tensor<T>>, backward: F) -> Self
    where
        F: Fn(&BackwardCtx<'_, T>) -> ParentGrads<T> + 'static,
    {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "op output length does not match shape {shape:?}"
        );
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let (parents, backward): (Vec<Tensor<T>>, Option<BackwardFn<T>>) = if requires_grad {
            (parents, Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        Self {
            node: Rc::new(Node {
                id: next_id(),
                data,
                shape,
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        }
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.node.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::new(self.node.data.clone(), &self.node.shape)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub fn all_finite(&self) -> bool {
        self.node.data.iter().all(|v| v.is_finite())
    }

    fn accumulate_leaf(&self, g: &[T]) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Backpropagates from a one-element tensor with seed gradient 1.
    pub fn backward(&self) {
        assert_eq!(self.numel(), 1, "backward() needs a scalar, got {:?}", self.shape());
        self.backward_with(vec![T::one()]);
    }

    /// Backpropagates an explicit output gradient.
    pub fn backward_with(&self, seed: Vec<T>) {
        assert_eq!(seed.len(), self.numel());
        if !self.requires_grad() {
            return;
        }
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            for p in &t.node.parents {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(t);
        }
        order.sort_by_key(|t| std::cmp::Reverse(t.id()));

        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), seed);
        for t in &order {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.node.backward {
                None => t.accumulate_leaf(&g),
                Some(f) => {
                    let ctx = BackwardCtx { parents: &t.node.parents, out: &t.node.data, grad: &g };
                    let grads = f(&ctx);
                    debug_assert_eq!(grads.len(), t.node.parents.len());
                    for (p, pg) in t.node.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match pending.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                            None => {
                                pending.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
    }
}
