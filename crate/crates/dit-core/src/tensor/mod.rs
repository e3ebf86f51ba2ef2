//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation whose inputs touch it, in execution
//! order (which is a topological order of the graph). [`Tape::backward`]
//! walks the record once in reverse, accumulating vector-Jacobian products
//! into each input's gradient slot. Tensors not created on a tape are
//! constants: they never receive gradients and ops on constants alone are
//! not recorded.
//!
//! Values are immutable after construction; a graph is confined to one
//! thread (handles are `Rc`-based). Shapes are explicit everywhere — there
//! is no implicit broadcasting.

mod adam;
mod gradcheck;
mod ops;
mod store;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, grad_check_sampled};
pub use ops::LAYER_NORM_EPS;
pub(crate) use ops::custom_op;
pub use store::{ModelParams, ParamEntry};

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({details})")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: axis is empty")]
    EmptyAxis { op: &'static str },
    #[error("backward requires a scalar, got {0} elements")]
    NonScalarBackward(usize),
    #[error("backward requires a tensor recorded on a tape")]
    NoGraph,
    #[error("backward was already run on this tape")]
    BackwardTwice,
    #[error("{op}: index {index} out of range ({bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("operands belong to different tapes")]
    MixedTapes,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

struct TensorData {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: RefCell<Option<Vec<f64>>>,
    // Weak: the tape's recorded steps hold strong tensor handles, so a
    // strong back-edge here would leak every graph as a reference cycle.
    tape: Option<std::rc::Weak<TapeInner>>,
}

/// A dense row-major f64 tensor, optionally attached to a gradient tape.
#[derive(Clone)]
pub struct Tensor {
    data: Rc<TensorData>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.data.shape)
            .field("values", &self.data.values)
            .finish()
    }
}

struct BackStep {
    out: Tensor,
    pull: Box<dyn Fn(&[f64])>,
}

struct TapeInner {
    steps: RefCell<Vec<BackStep>>,
    consumed: Cell<bool>,
}

/// Records operations for one reverse pass.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            inner: Rc::new(TapeInner {
                steps: RefCell::new(Vec::new()),
                consumed: Cell::new(false),
            }),
        }
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.inner.steps.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn record(&self, out: &Tensor, pull: impl Fn(&[f64]) + 'static) {
        self.inner.steps.borrow_mut().push(BackStep {
            out: out.clone(),
            pull: Box::new(pull),
        });
    }

    /// Runs the reverse pass from a scalar output, accumulating gradients
    /// into every tensor on this tape that the output depends on.
    ///
    /// Each recorded operation is visited exactly once; a tape supports a
    /// single backward pass.
    pub fn backward(&self, output: &Tensor) -> Result<(), TensorError> {
        if output.len() != 1 {
            return Err(TensorError::NonScalarBackward(output.len()));
        }
        match output.data.tape.as_ref().and_then(|w| w.upgrade()) {
            Some(t) if Rc::ptr_eq(&t, &self.inner) => {}
            _ => return Err(TensorError::NoGraph),
        }
        if self.inner.consumed.replace(true) {
            return Err(TensorError::BackwardTwice);
        }
        output.accumulate_grad(&[1.0]);
        let steps = self.inner.steps.borrow();
        for step in steps.iter().rev() {
            let grad = step.out.data.grad.borrow().clone();
            if let Some(g) = grad {
                (step.pull)(&g);
            }
        }
        Ok(())
    }
}

impl Tensor {
    /// A constant tensor: not attached to any tape, never receives gradients.
    pub fn constant(shape: &[usize], values: Vec<f64>) -> Tensor {
        assert_eq!(
            values.len(),
            shape.iter().product::<usize>(),
            "value count must match shape"
        );
        Tensor {
            data: Rc::new(TensorData {
                shape: shape.to_vec(),
                values,
                grad: RefCell::new(None),
                tape: None,
            }),
        }
    }

    /// A scalar constant (rank 0).
    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(&[], vec![v])
    }

    /// A differentiable leaf registered on `tape`.
    pub fn leaf(tape: &Tape, shape: &[usize], values: Vec<f64>) -> Tensor {
        assert_eq!(
            values.len(),
            shape.iter().product::<usize>(),
            "value count must match shape"
        );
        Tensor {
            data: Rc::new(TensorData {
                shape: shape.to_vec(),
                values,
                grad: RefCell::new(None),
                tape: Some(Rc::downgrade(&tape.inner)),
            }),
        }
    }

    fn from_op(tape: Option<Tape>, shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        Tensor {
            data: Rc::new(TensorData {
                shape,
                values,
                grad: RefCell::new(None),
                tape: tape.map(|t| Rc::downgrade(&t.inner)),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.data.shape
    }

    pub fn rank(&self) -> usize {
        self.data.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data.values
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() requires a single-element tensor");
        self.data.values[0]
    }

    pub fn has_graph(&self) -> bool {
        self.data
            .tape
            .as_ref()
            .is_some_and(|w| w.strong_count() > 0)
    }

    /// Accumulated gradient, if backward reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.data.grad.borrow().clone()
    }

    fn accumulate_grad(&self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.len());
        let mut slot = self.data.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Resolves the tape an op result should record to. Errors when operands
    /// come from different (live) tapes.
    fn joint_tape(inputs: &[&Tensor]) -> Result<Option<Tape>, TensorError> {
        let mut found: Option<Tape> = None;
        for t in inputs {
            if let Some(inner) = t.data.tape.as_ref().and_then(|w| w.upgrade()) {
                match &found {
                    None => found = Some(Tape { inner }),
                    Some(existing) if Rc::ptr_eq(&existing.inner, &inner) => {}
                    Some(_) => return Err(TensorError::MixedTapes),
                }
            }
        }
        Ok(found)
    }
}

/// Neumaier-compensated sum; keeps axis reductions stable against
/// reordering of the summands.
pub(crate) fn stable_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_accumulates_over_shared_node() {
        // y = x·x + x  (x feeds two consumers) — hand-derived: dy/dx = 2x + 1
        let tape = Tape::new();
        let x = Tensor::leaf(&tape, &[3], vec![1.0, 2.0, 3.0]);
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum().unwrap();
        tape.backward(&y).unwrap();
        let g = x.grad().unwrap();
        assert_eq!(g, vec![3.0, 5.0, 7.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_constants() {
        let tape = Tape::new();
        let x = Tensor::leaf(&tape, &[2], vec![1.0, 2.0]);
        let y = x.relu().unwrap();
        assert!(matches!(
            tape.backward(&y),
            Err(TensorError::NonScalarBackward(2))
        ));
        let c = Tensor::scalar(4.0);
        assert!(matches!(tape.backward(&c), Err(TensorError::NoGraph)));
    }

    #[test]
    fn backward_twice_is_rejected() {
        let tape = Tape::new();
        let x = Tensor::leaf(&tape, &[2], vec![1.0, 2.0]);
        let y = x.sum().unwrap();
        tape.backward(&y).unwrap();
        assert!(matches!(tape.backward(&y), Err(TensorError::BackwardTwice)));
    }

    #[test]
    fn square_gradient_is_two_x() {
        let tape = Tape::new();
        let x = Tensor::leaf(&tape, &[], vec![3.0]);
        let y = x.mul(&x).unwrap();
        tape.backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        // sum(softmax(x)) is constant 1, so the gradient vanishes
        let tape = Tape::new();
        let x = Tensor::leaf(&tape, &[4], vec![0.3, -1.2, 2.0, 0.0]);
        let y = x.softmax(0).unwrap().sum().unwrap();
        tape.backward(&y).unwrap();
        for g in x.grad().unwrap() {
            assert!(g.abs() < 1e-15);
        }
    }

    #[test]
    fn constants_never_get_gradients() {
        let tape = Tape::new();
        let x = Tensor::leaf(&tape, &[2], vec![1.0, 2.0]);
        let c = Tensor::constant(&[2], vec![5.0, 6.0]);
        let y = x.mul(&c).unwrap().sum().unwrap();
        tape.backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0, 6.0]);
        assert!(c.grad().is_none());
    }

    #[test]
    fn mixed_tapes_are_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = Tensor::leaf(&t1, &[2], vec![1.0, 2.0]);
        let b = Tensor::leaf(&t2, &[2], vec![3.0, 4.0]);
        assert!(matches!(a.add(&b), Err(TensorError::MixedTapes)));
    }

    #[test]
    fn stable_sum_matches_exact_on_adversarial_order() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(stable_sum(vals.iter().copied()), 2.0);
    }
}
