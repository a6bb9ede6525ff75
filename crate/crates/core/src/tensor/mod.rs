//! Dense f64 tensors with a per-pass reverse-mode tape and an AdamW step.

mod graph;
mod optim;

pub use graph::{grad_check, Graph, Var};
pub use optim::{AdamState, AdamW};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub type TensorResult<T> = Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Two operand shapes cannot be combined by `op`.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Buffer length disagrees with the product of the shape.
    DataLength { expected: usize, got: usize },
    InvalidAxis { axis: usize, rank: usize },
    /// Normalization over a zero-length axis.
    EmptyAxis { op: &'static str },
    /// A class index at or past the number of classes.
    TargetOutOfRange { index: usize, classes: usize },
    /// An embedding id at or past the table size.
    IdOutOfRange { id: usize, table: usize },
    NonScalarLoss { shape: Vec<usize> },
    /// backward() called twice on the same recorded pass.
    TapeConsumed,
    /// NaN/Inf surfaced while the finite-check mode was on.
    NonFinite { op: &'static str },
    InvalidArgument(String),
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch {left:?} vs {right:?}")
            }
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::InvalidAxis { axis, rank } => {
                write!(f, "axis {axis} invalid for rank-{rank} tensor")
            }
            TensorError::EmptyAxis { op } => write!(f, "{op}: zero-length axis"),
            TensorError::TargetOutOfRange { index, classes } => {
                write!(f, "target index {index} out of range for {classes} classes")
            }
            TensorError::IdOutOfRange { id, table } => {
                write!(f, "id {id} out of range for table of {table} rows")
            }
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward needs a scalar loss, got shape {shape:?}")
            }
            TensorError::TapeConsumed => {
                write!(f, "backward already ran on this tape; record a new forward pass")
            }
            TensorError::NonFinite { op } => write!(f, "{op} produced a non-finite value"),
            TensorError::InvalidArgument(msg) => write!(f, "{msg}"),
        }
    }
}

/// Row-major dense tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Err on the first NaN or Inf; the error state is detectable, never silent.
    pub fn validate_finite(&self, context: &'static str) -> TensorResult<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op: context })
        }
    }
}

/// Plain triple-loop matrix product on raw buffers: A[m×k] · B[k×n].
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}
