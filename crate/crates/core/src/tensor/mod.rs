//! Dense row-major `f64` arrays and a linear reverse-mode tape.
//!
//! A [`Tensor`] is a plain value: it carries its data, its shape and, when
//! it was produced by a [`Tape`], the id of the node that holds it. Tensors
//! are `Send` and can be moved across threads; a tape is used from one
//! thread at a time.
//!
//! ```
//! use armot::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(&Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let y = tape.mul(&x, &x).unwrap();
//! let loss = tape.sum(&y);
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod check;
pub mod focal;
mod tape;

pub use check::{finite_diff_check, relative_error, FdOptions, GradReport, ParamGrad, FD_STEP};
pub use tape::{Gradients, NodeId, OpKind, Tape};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {:?} needs {} values, got {}", shape, expected, data.len()),
            ));
        }
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::shape(
                "Tensor::new",
                format!("rank must be 1..=3, got {}", shape.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::vector(vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            node: None,
        }
    }

    /// Builds a `[rows.len(), cols]` matrix; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("Tensor::from_rows", "ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// Marks the tensor as a trainable leaf. Only takes effect once it is
    /// registered on a tape with [`Tape::param`] or [`Tape::leaf`].
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// Copy with no tape identity and no gradient flag.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: false,
            node: None,
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "Tensor::item",
                format!("tensor of shape {:?} is not a scalar", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    /// Element `(i, j)` of a rank-2 tensor.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn on_tape(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: NodeId) -> Self {
        Self {
            shape,
            data,
            requires_grad,
            node: Some(node),
        }
    }
}
