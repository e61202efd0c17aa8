//! Dense row-major tensor of 64-bit reals.

use crate::error::{Error, Result};

/// A dense tensor with row-major storage.
///
/// Invariant: `shape.iter().product() == data.len()` and every entry is
/// finite. Constructors and mutating operations uphold both.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                context: "tensor construction".into(),
                expected,
                actual: data.len(),
            });
        }
        let t = Tensor { shape, data };
        t.check_finite("tensor construction")?;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    /// 2-D tensor from rows. All rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::Dimension {
                    context: "tensor rows".into(),
                    expected: d,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![n, d], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Borrow row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.cols();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.cols();
        &mut self.data[i * d..(i + 1) * d]
    }

    /// New 2-D tensor keeping only the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let d = self.cols();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![indices.len(), d],
            data,
        }
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite value in {context}")))
        }
    }
}
