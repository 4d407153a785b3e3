use crate::error::{Error, Result};

/// Dense row-major `f32` array of rank at most 3.
///
/// Time-major activations are stored as `[T, D]`; convolution kernels as
/// `[K, D_in, D_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub const MAX_RANK: usize = 3;

    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.len() > Self::MAX_RANK {
            return Err(Error::dim(
                "tensor",
                format!("rank {} exceeds {}", shape.len(), Self::MAX_RANK),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, expected, data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// A vector of length `n`.
    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// `[rows, width]` matrix; `data.len()` must be a multiple of `width`.
    pub fn matrix(width: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 {
            return if data.is_empty() {
                Ok(Self {
                    shape: vec![0, 0],
                    data,
                })
            } else {
                Err(Error::dim("matrix", "zero width with non-empty data"))
            };
        }
        if data.len() % width != 0 {
            return Err(Error::dim(
                "matrix",
                format!("{} values do not divide into rows of {}", data.len(), width),
            ));
        }
        Ok(Self {
            shape: vec![data.len() / width, width],
            data,
        })
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Leading dimension (time for activations). A scalar has one row.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all trailing dimensions.
    pub fn row_width(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.row_width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let w = self.row_width();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.len() > Self::MAX_RANK {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let w = self.row_width();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * w..end * w].to_vec(),
        }
    }

    /// Stacks two tensors along the leading dimension.
    pub fn concat_rows(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape[1..] != other.shape[1..] {
            return Err(Error::dim(
                "concat_rows",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        let mut shape = self.shape.clone();
        shape[0] += other.shape[0];
        Ok(Tensor { shape, data })
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if self.rank() != 2 || row.len() != self.shape[1] {
            return Err(Error::dim(
                "push_row",
                format!("row of {} into {:?}", row.len(), self.shape),
            ));
        }
        self.data.extend_from_slice(row);
        self.shape[0] += 1;
        Ok(())
    }

    pub fn map(mut self, f: impl Fn(f32) -> f32) -> Tensor {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, other: &Tensor, scale: f32) -> Result<Tensor> {
        self.zip_with(other, "add_scaled", |a, b| a + scale * b)
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Largest elementwise absolute difference; `f32::INFINITY` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        if self.shape != other.shape {
            return f32::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()))
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite values in {what}")))
        }
    }
}
