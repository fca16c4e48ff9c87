use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::real::Real;
use super::tape::Gradients;
use crate::error::{FastError, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Dense row-major array. Values are shared copy-on-write so a [`Tape`](super::Tape)
/// can reference parameters without copying them.
#[derive(Debug)]
pub struct Tensor<T: Real = f32> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Real> Clone for Tensor<T> {
    /// Clones get a fresh identity; gradients recorded against the original do
    /// not route to the clone.
    fn clone(&self) -> Self {
        Tensor {
            id: fresh_id(),
            shape: self.shape.clone(),
            data: Arc::new(self.data.as_ref().clone()),
            grad: self.grad.clone(),
            requires_grad: self.requires_grad,
        }
    }
}

impl<T: Real> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(FastError::Shape(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        if numel(shape) != data.len() {
            return Err(FastError::Shape(format!(
                "shape {shape:?} holds {} values, data has {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), Arc::new(data)))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<T>>) -> Self {
        Tensor {
            id: fresh_id(),
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_parts(shape.to_vec(), Arc::new(vec![value; numel(shape)]))
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], Arc::new(vec![value]))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::c(v)).collect())
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }

    /// Mutable access to values; copies first if a live tape still shares them.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn add_to_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.numel() {
            return Err(FastError::Shape(format!(
                "gradient of length {} for tensor of shape {:?}",
                g.len(),
                self.shape
            )));
        }
        let n = self.numel();
        let buf = self.grad.get_or_insert_with(|| vec![T::zero(); n]);
        buf.iter_mut().zip(g).for_each(|(b, &v)| *b += v);
        Ok(())
    }

    /// Pulls this tensor's gradient out of a backward pass, if it took part.
    pub fn accumulate_grad(&mut self, grads: &Gradients<T>) -> Result<()> {
        if let Some(g) = grads.of(self) {
            let g = g.to_vec();
            self.add_to_grad(&g)?;
        }
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(FastError::Dimension {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), self.shared_data()))
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let data = self
            .data
            .iter()
            .map(|&v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
            .collect();
        let mut out = Tensor::from_parts(self.shape.clone(), Arc::new(data));
        out.requires_grad = self.requires_grad;
        out
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row-major element lookup.
    pub fn at(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            debug_assert!(i < e);
            off = off * e + i;
        }
        self.data[off]
    }
}
