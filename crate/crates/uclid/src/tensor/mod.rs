//! Minimal dense tensor engine with reverse-mode automatic differentiation.
//!
//! Define-by-run: every op builds a fresh node referencing its parents, and
//! `backward` on a scalar loss walks the recorded graph once in reverse
//! topological order. Parameters are long-lived tensors with
//! `requires_grad = true`; everything derived from them joins the tape.
//!
//! The whole engine is generic over the scalar type: training runs in `f32`,
//! gradient checking re-runs the identical code paths in `f64`.

mod adam;
mod conv;
mod ops;
mod sample;

pub use adam::AdamState;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

/// Scalar type the engine is generic over (`f32` or `f64`).
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + fmt::Debug + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape")]
    TapeConsumed,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

struct BackOp<T: Scalar> {
    parents: Vec<Tensor<T>>,
    /// Receives the output node's gradient and distributes it to the parents.
    back: Box<dyn Fn(&[T], &[Tensor<T>])>,
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    op: RefCell<Option<BackOp<T>>>,
    consumed: Cell<bool>,
}

/// Dense n-dimensional array, row-major, cheaply clonable (shared node).
pub struct Tensor<T: Scalar> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { node: Rc::clone(&self.node) }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.node.shape)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![T::zero(); n], false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![v; n], false, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::build(vec![1], vec![v], false, None)
    }

    /// Trainable parameter: participates in every tape built on top of it.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        // Rc is unique here, but we rebuild rather than mutate.
        Ok(Self::build(
            t.node.shape.clone(),
            t.node.data.borrow().clone(),
            true,
            None,
        ))
    }

    fn build(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        op: Option<BackOp<T>>,
    ) -> Self {
        Tensor {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op: RefCell::new(op),
                consumed: Cell::new(false),
            }),
        }
    }

    /// Internal constructor for ops: output requires grad iff any parent does.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        back: Box<dyn Fn(&[T], &[Tensor<T>])>,
    ) -> Self {
        let rg = parents.iter().any(|p| p.node.requires_grad);
        let op = if rg { Some(BackOp { parents, back }) } else { None };
        Self::build(shape, data, rg, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.data.borrow().len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn data(&self) -> std::cell::Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.node.data.borrow()[0]
    }

    /// Overwrite the stored values (optimizer step on parameters).
    pub fn set_data(&self, new: &[T]) -> Result<()> {
        let mut d = self.node.data.borrow_mut();
        if d.len() != new.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "set_data: {} vs {}",
                d.len(),
                new.len()
            )));
        }
        d.copy_from_slice(new);
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[T]) {
        if !self.node.requires_grad {
            return;
        }
        let mut g = self.node.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (b, c) in buf.iter_mut().zip(contrib) {
                    *b += *c;
                }
            }
            None => *g = Some(contrib.to_vec()),
        }
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.node.data.borrow().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(what.to_string()));
        }
        Ok(())
    }

    /// Deep copy with no tape participation.
    pub fn detach(&self) -> Tensor<T> {
        Self::build(self.node.shape.clone(), self.to_vec(), false, None)
    }

    /// Reverse pass from a scalar loss. Consumes the tape: a second call on
    /// the same recording is an error.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.node.shape.clone()));
        }
        if self.node.consumed.get() {
            return Err(TensorError::TapeConsumed);
        }
        self.node.consumed.set(true);

        // Post-order DFS for topological order (iterative, graphs get deep).
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<*const Node<T>> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            let ptr = Rc::as_ptr(&t.node);
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(ptr) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = t.node.op.borrow().as_ref() {
                for p in &op.parents {
                    if p.node.requires_grad && !visited.contains(&Rc::as_ptr(&p.node)) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        self.accumulate_grad(&[T::one()]);
        for t in order.iter().rev() {
            let op = t.node.op.borrow_mut().take();
            if let Some(op) = op {
                let g = t.node.grad.borrow().clone();
                if let Some(g) = g {
                    (op.back)(&g, &op.parents);
                }
            }
        }
        Ok(())
    }
}
