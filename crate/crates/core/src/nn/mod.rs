//! Minimal differentiable toolkit: parameter storage, dense layers, an
//! optimizer, finite-difference verification and checkpoint I/O.
//!
//! Everything is `f64`. Batched tensors are row-major [`ndarray::Array2`]
//! values where each row is one sample.

pub mod checkpoint;
mod dense;
mod gradcheck;
mod optim;

pub use dense::{Activation, DenseCache, DenseLayer, Mlp, MlpCache};
pub use gradcheck::{central_difference, grad_check, GradCheckReport};
pub use optim::{OptimizerKind, OptimizerState};

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

use crate::error::{config_err, Result};

/// A named, shaped array of values with a paired gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBlock {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl ParameterBlock {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::filled(name, shape, 0.0)
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![value; len],
            grads: vec![0.0; len],
        }
    }

    /// Uniform initialization in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let mut block = Self::zeros(name, shape);
        for v in &mut block.values {
            *v = rng.random_range(-bound..=bound);
        }
        block
    }

    pub fn from_values(name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let len: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(config_err(format!("block `{name}` has a zero dimension: {shape:?}")));
        }
        if values.len() != len {
            return Err(config_err(format!(
                "block `{name}` expects {len} values for shape {shape:?}, got {}",
                values.len()
            )));
        }
        Ok(Self {
            name,
            shape: shape.to_vec(),
            grads: vec![0.0; len],
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    /// Simultaneous access to values (read) and grads (write).
    pub fn split_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.grads)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Values as a matrix; the block must be two-dimensional.
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        debug_assert_eq!(self.shape.len(), 2);
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.values)
            .expect("2-D parameter block")
    }

    pub fn grad_matrix_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        debug_assert_eq!(self.shape.len(), 2);
        ArrayViewMut2::from_shape((self.shape[0], self.shape[1]), &mut self.grads)
            .expect("2-D parameter block")
    }
}

/// Anything that owns trainable parameter blocks.
pub trait Parameterized {
    fn blocks(&self) -> Vec<&ParameterBlock>;

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock>;

    fn zero_grad(&mut self) {
        for b in self.blocks_mut() {
            b.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// True when every gradient entry is exactly zero.
    fn grads_are_zero(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.grads().iter().all(|&g| g == 0.0))
    }
}

impl Parameterized for ParameterBlock {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        vec![self]
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        vec![self]
    }
}

impl<T: Parameterized> Parameterized for Option<T> {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        self.as_ref().map(|p| p.blocks()).unwrap_or_default()
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        self.as_mut().map(|p| p.blocks_mut()).unwrap_or_default()
    }
}

/// Copies values from `src` into `dst` block by block.
pub fn copy_values<P: Parameterized + ?Sized, Q: Parameterized + ?Sized>(
    src: &P,
    dst: &mut Q,
) -> Result<()> {
    let src = src.blocks();
    let mut dst = dst.blocks_mut();
    if src.len() != dst.len() {
        return Err(config_err("parameter block count mismatch in copy"));
    }
    for (s, d) in src.iter().zip(dst.iter_mut()) {
        if s.shape() != d.shape() {
            return Err(config_err(format!(
                "shape mismatch copying `{}` into `{}`",
                s.name(),
                d.name()
            )));
        }
        d.values_mut().copy_from_slice(s.values());
    }
    Ok(())
}
