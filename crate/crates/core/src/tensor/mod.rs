//! Dense `f32` tensors with reverse-mode automatic differentiation.
//!
//! Every operation that receives at least one input with `requires_grad`
//! records a node holding its parents and whatever it saved for the backward
//! pass. [`Tensor::backward`] walks that graph once in reverse topological
//! order and accumulates adjoints into every reachable tensor that requires
//! a gradient.
//!
//! Tensor data is never mutated after construction. Only the gradient buffer
//! is interior-mutable, which keeps tensors `Send + Sync`.

mod ops;
mod shape;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub use ops::{elementwise, matmul, BinaryOp};
pub use shape::Shape;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operation graph on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of a recorded operation.
pub(crate) trait GradFn: Send + Sync {
    fn name(&self) -> &'static str;

    fn parents(&self) -> &[Tensor];

    /// Returns one gradient per parent, `None` where `needs[i]` is false.
    fn backward(&self, grad_out: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>>;
}

struct Inner {
    id: u64,
    shape: Shape,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f32>>>,
    grad_fn: Option<Box<dyn GradFn>>,
    consumed: AtomicBool,
}

/// Reference-counted handle to an immutable tensor node.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl Tensor {
    fn from_parts(
        shape: Shape,
        data: Vec<f32>,
        requires_grad: bool,
        grad_fn: Option<Box<dyn GradFn>>,
    ) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
            consumed: AtomicBool::new(false),
        }))
    }

    /// Leaf tensor that does not require a gradient.
    pub fn new(data: Vec<f32>, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != data.len() {
            return Err(Error::DataLength {
                len: data.len(),
                shape: dims.to_vec(),
            });
        }
        Ok(Self::from_parts(shape, data, false, None))
    }

    /// Leaf tensor that requires a gradient (a trainable parameter).
    pub fn param(data: Vec<f32>, dims: &[usize]) -> Result<Self> {
        Ok(Self::new(data, dims)?.with_requires_grad(true))
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_parts(Shape::scalar(), vec![value], false, None)
    }

    pub fn full(dims: &[usize], value: f32) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        let data = vec![value; shape.numel()];
        Ok(Self::from_parts(shape, data, false, None))
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 1.0)
    }

    /// Output of a recorded operation. The node is only kept when gradient
    /// recording is enabled and some parent requires a gradient.
    pub(crate) fn from_op(shape: Shape, data: Vec<f32>, grad_fn: impl GradFn + 'static) -> Self {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite output from {}",
            grad_fn.name()
        );
        let record = is_grad_enabled() && grad_fn.parents().iter().any(Tensor::requires_grad);
        if record {
            Self::from_parts(shape, data, true, Some(Box::new(grad_fn)))
        } else {
            Self::from_parts(shape, data, false, None)
        }
    }

    /// Same data as a fresh leaf with the given `requires_grad` flag.
    pub fn with_requires_grad(self, requires_grad: bool) -> Self {
        match Arc::try_unwrap(self.0) {
            Ok(inner) => Self::from_parts(inner.shape, inner.data, requires_grad, None),
            Err(shared) => Self::from_parts(
                shared.shape.clone(),
                shared.data.clone(),
                requires_grad,
                None,
            ),
        }
    }

    /// Copy of the data as a leaf cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &Shape {
        &self.0.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.0.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f32> {
        (self.0.data.len() == 1).then(|| self.0.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Accumulated gradient, if backward has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    /// Removes and returns the accumulated gradient.
    pub fn take_grad(&self) -> Option<Vec<f32>> {
        self.0.grad.lock().expect("grad lock poisoned").take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Allows [`Tensor::backward`] to run again from this root.
    pub fn reset_backward(&self) {
        self.0.consumed.store(false, Ordering::SeqCst);
    }

    fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self) -> Result<()> {
        if !self.shape().is_scalar() {
            return Err(Error::NonScalarLoss(self.dims().to_vec()));
        }
        if !self.requires_grad() {
            return Err(Error::NotRecorded);
        }
        if self.0.consumed.swap(true, Ordering::SeqCst) {
            return Err(Error::BackwardTwice);
        }

        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<f32>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            node.accumulate_grad(&grad);
            let Some(grad_fn) = node.0.grad_fn.as_ref() else {
                continue;
            };
            let parents = grad_fn.parents();
            let needs: Vec<bool> = parents.iter().map(Tensor::requires_grad).collect();
            let parent_grads = grad_fn.backward(&grad, &needs);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for (parent, pg) in parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                debug_assert_eq!(pg.len(), parent.numel(), "{} grad length", grad_fn.name());
                match pending.get_mut(&parent.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(parent.id(), pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes requiring a gradient, parents before children.
    fn topological_order(&self) -> Vec<&Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(&Tensor, bool)> = vec![(self, false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node, true));
            if let Some(grad_fn) = node.0.grad_fn.as_ref() {
                for parent in grad_fn.parents() {
                    if parent.requires_grad() && !visited.contains(&parent.id()) {
                        stack.push((parent, false));
                    }
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", self.shape());
        if self.numel() <= 16 {
            s.field("data", &self.data());
        }
        if let Some(grad_fn) = self.0.grad_fn.as_ref() {
            s.field("grad_fn", &grad_fn.name());
        }
        s.field("requires_grad", &self.requires_grad()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_length_checked() {
        assert!(Tensor::new(vec![1.0, 2.0], &[3]).is_err());
    }

    #[test]
    fn square_sum_gradient() {
        let x = Tensor::param(vec![3.0], &[1]).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn independent_input_gets_zero_grad() {
        let x = Tensor::param(vec![1.0, -2.0], &[2]).unwrap();
        let y = Tensor::param(vec![0.5, 4.0], &[2]).unwrap();
        // x contributes through a zero multiplier only.
        let loss = y
            .mul(&y)
            .unwrap()
            .add(&x.mul(&Tensor::zeros(&[2]).unwrap()).unwrap())
            .unwrap()
            .sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn fan_out_sums_contributions() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let loss = x.add(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_errors() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.mul(&x).unwrap();
        assert!(matches!(y.backward(), Err(Error::NonScalarLoss(_))));
        let loss = y.sum();
        loss.backward().unwrap();
        assert!(matches!(loss.backward(), Err(Error::BackwardTwice)));
        loss.reset_backward();
        loss.backward().unwrap();
        // Second sweep accumulates.
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
        let plain = Tensor::scalar(1.0);
        assert!(matches!(plain.backward(), Err(Error::NotRecorded)));
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::param(vec![1.0], &[1]).unwrap();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
    }

    #[test]
    fn tensors_are_send_sync() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Tensor>();
    }
}
