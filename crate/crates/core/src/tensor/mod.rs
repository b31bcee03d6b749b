//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable after creation; gradients accumulate into a side
//! cell and the optimizer is the only writer of parameter data. Each forward
//! pass builds a fresh acyclic graph, so distinct graphs can live on distinct
//! threads. Inference code wraps calls in [`no_grad`] and allocates no
//! backprop records at all.

mod adam;
mod checkpoint;
mod ops;
mod scalar;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use ops::Mask;
pub use scalar::Scalar;

use crate::error::{Error, Result};
use crate::rng::Rng;
use std::cell::Cell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording backprop nodes (inference mode).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Given the output data and the output gradient, produce per-parent
/// gradient contributions (aligned with the node's parent list).
type BackwardFn<T> = Box<dyn Fn(&[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T: Scalar> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    node: Option<Node<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    inner: Arc<Inner<T>>,
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn new_inner(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        node: Option<Node<T>>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                requires_grad,
                grad: Mutex::new(None),
                node,
            }),
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self::new_inner(shape.to_vec(), data, false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(shape, vec![T::ZERO; numel(shape)])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_vec(shape, vec![value; numel(shape)])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(&[], vec![value])
    }

    /// Gaussian init with the given std, drawn from an explicit stream.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::from_f64(rng.normal() * std))
            .collect();
        Self::from_vec(shape, data)
    }

    /// Mark a leaf tensor as a trainable parameter.
    pub fn requires_grad(self) -> Self {
        assert!(
            self.inner.node.is_none(),
            "requires_grad may only be set on leaf tensors"
        );
        Self::new_inner(
            self.inner.shape.clone(),
            self.inner.data.read().unwrap().clone(),
            true,
            None,
        )
    }

    pub fn param(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        Self::randn(shape, std, rng).requires_grad()
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn is_requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when this tensor carries a backprop record.
    pub fn has_node(&self) -> bool {
        self.inner.node.is_some()
    }

    fn tracked(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.inner.data.read().unwrap()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() requires a 1-element tensor");
        d[0]
    }

    /// Replace the underlying data (optimizer updates). Shape must match.
    pub fn set_data(&self, new: Vec<T>) {
        let mut d = self.inner.data.write().unwrap();
        assert_eq!(d.len(), new.len(), "set_data length mismatch");
        *d = new;
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn take_grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().take()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut cell = self.inner.grad.lock().unwrap();
        match cell.as_mut() {
            Some(existing) => {
                for (e, &x) in existing.iter_mut().zip(g) {
                    *e += x;
                }
            }
            None => *cell = Some(g.to_vec()),
        }
    }

    /// Copy of this tensor cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::new_inner(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    /// Build an op result, recording a backprop node when tracking is on and
    /// any input participates in a graph.
    pub(crate) fn result_of(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.tracked());
        let node = if track {
            Some(Node {
                parents,
                backward: Box::new(backward),
            })
        } else {
            None
        };
        Self::new_inner(shape, data, false, node)
    }

    /// Reverse-mode sweep from a scalar loss. Fills the grad cell of every
    /// tensor with `requires_grad` reachable from `self`; gradients from
    /// multiple uses (and multiple backward calls) accumulate additively.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }

        // Iterative post-order DFS; last element is `self`.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashMap<u64, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        while let Some((t, child_idx)) = stack.pop() {
            if child_idx == 0 && visited.contains_key(&t.inner.id) {
                continue;
            }
            let n_parents = t.inner.node.as_ref().map_or(0, |n| n.parents.len());
            if child_idx < n_parents {
                let parent = t.inner.node.as_ref().unwrap().parents[child_idx].clone();
                stack.push((t, child_idx + 1));
                if !visited.contains_key(&parent.inner.id) {
                    stack.push((parent, 0));
                }
            } else {
                visited.insert(t.inner.id, ());
                order.push(t);
            }
        }

        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.inner.id, vec![T::ONE]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.inner.id) else {
                continue;
            };
            if t.inner.requires_grad {
                t.accumulate_grad(&g);
            }
            if let Some(node) = &t.inner.node {
                let parent_grads = (node.backward)(&t.data(), &g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    debug_assert_eq!(pg.len(), parent.numel());
                    match grads.get_mut(&parent.inner.id) {
                        Some(acc) => {
                            for (a, x) in acc.iter_mut().zip(&pg) {
                                *a += *x;
                            }
                        }
                        None => {
                            grads.insert(parent.inner.id, pg);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::<f64>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).requires_grad();
        let loss = x.sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 0.5]).requires_grad();
        let loss = x.mul(&x).sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn grads_accumulate_across_uses() {
        let x = Tensor::<f64>::from_vec(&[2], vec![3.0, 5.0]).requires_grad();
        // loss = sum(x) + sum(x) -> grad = 2
        let loss = x.sum_all().add(&x.sum_all());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).requires_grad();
        assert!(x.mul(&x).backward().is_err());
    }

    #[test]
    fn no_grad_allocates_no_nodes() {
        let x = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).requires_grad();
        let y = no_grad(|| x.mul(&x).add(&x));
        assert!(!y.has_node());
        let tracked = x.mul(&x);
        assert!(tracked.has_node());
    }

    #[test]
    fn detach_cuts_graph() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).requires_grad();
        let y = x.mul(&x).detach();
        let loss = y.sum_all();
        loss.backward().unwrap();
        assert!(x.grad().is_none());
    }
}
