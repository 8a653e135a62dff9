//! Dense f64 tensors with a reverse-mode tape.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Trainable
//! values live in a [`ParamStore`] that the tape reads by reference, so a
//! forward pass never copies parameters. Calling [`Tape::backward`] walks the
//! recorded nodes in reverse and returns a [`Gradients`] buffer indexed by
//! parameter.
//!
//! ```
//! use xmtc_core::tensor::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let x = store.add("x", Tensor::scalar(3.0), true);
//! let mut tape = Tape::new(&store);
//! let xv = tape.param(x);
//! let loss = tape.mul(xv, xv).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    Length {
        op: &'static str,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable is not recorded on this tape")]
    Detached,
    #[error("index {index} out of range for {op} of size {size}")]
    Index {
        op: &'static str,
        index: usize,
        size: usize,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense row-major array of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Length {
                op: "tensor",
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
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

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Number of rows of a matrix (the leading dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of columns of a matrix, or the length of a vector.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
