//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The graph is built define-by-run: every op that sees an input requiring
//! gradients records a [`GradFn`] holding handles to its inputs. Calling
//! [`Tensor::backward`] on a scalar walks the graph in reverse topological
//! order. Only leaves keep their gradients; interior gradients live for the
//! duration of one backward pass, so repeated calls accumulate on leaves
//! exactly once per call.

mod conv;
mod gemm;
mod loss;
mod norm;
mod ops;
mod optim;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub use conv::conv2d;
pub use loss::{bce_with_logits, cross_entropy};
pub use norm::{batch_norm, spectral_normalize, BatchNormMode, SpectralNormOutput, SpectralNormState};
pub use ops::{
    activation, add, global_avg_pool, linear, mul, relu, reshape, sum, tanh, upsample_nearest2x,
    Activation,
};
pub use optim::{adam_update, Adam, AdamConfig};

pub(crate) use gemm::gemm;
pub(crate) use loss::softmax_rows;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any gradient graph.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Backward rule of a recorded op.
pub(crate) trait GradFn {
    fn inputs(&self) -> &[Tensor];
    /// Gradients with respect to each input, aligned with [`GradFn::inputs`].
    /// `None` means the op contributes nothing to that input.
    fn backward(&self, grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<Box<dyn GradFn>>,
}

/// Shared handle to a node of the gradient graph. Cloning is cheap.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        grad_fn: Option<Box<dyn GradFn>>,
    ) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::new", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::param", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; shape.iter().product()], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::build(shape.to_vec(), vec![value; shape.iter().product()], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Samples a trainable leaf from N(0, std²).
    pub fn randn_param(shape: &[usize], std: f64, rng: &mut crate::rng::Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| normal.sample(rng))
            .collect();
        Self::build(shape.to_vec(), data, true, None)
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut crate::rng::Rng) -> Self {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.random_range(lo..hi))
            .collect();
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Output of an op. The graph edge is recorded only when gradient mode is
    /// on and at least one input requires gradients.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, grad_fn: impl GradFn + 'static) -> Self {
        let track = grad_enabled() && grad_fn.inputs().iter().any(Tensor::requires_grad);
        if track {
            Self::build(shape, data, true, Some(Box::new(grad_fn)))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable view of the values, for optimizer updates and weight loading.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on a non-scalar tensor");
        d[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Accumulates gradients of this scalar into every reachable leaf that
    /// requires them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Usage(
                "backward root does not depend on any tensor requiring gradients".into(),
            ));
        }

        // Iterative post-order DFS.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashMap<*const Node, ()> = HashMap::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if visited.insert(t.key(), ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(f) = &t.0.grad_fn {
                for inp in f.inputs() {
                    if inp.requires_grad() && !visited.contains_key(&inp.key()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }

        let mut grads: HashMap<*const Node, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            match &t.0.grad_fn {
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(f) => {
                    let outs = f.backward(&g);
                    for (inp, og) in f.inputs().iter().zip(outs) {
                        let Some(og) = og else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(og.len(), inp.numel());
                        match grads.get_mut(&inp.key()) {
                            Some(acc) => acc.iter_mut().zip(&og).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(inp.key(), og);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
