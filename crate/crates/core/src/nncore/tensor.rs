use super::scalar::Real;
use crate::{Error, Result};

/// Dense `batch x time x channels` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub batch: usize,
    pub time: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(batch: usize, time: usize, channels: usize) -> Self {
        Tensor3 {
            batch,
            time,
            channels,
            data: vec![T::zero(); batch * time * channels],
        }
    }

    pub fn from_vec(batch: usize, time: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if batch == 0 || time == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "tensor dimensions must be positive, got {batch}x{time}x{channels}"
            )));
        }
        if data.len() != batch * time * channels {
            return Err(Error::Shape(format!(
                "{} values for a {batch}x{time}x{channels} tensor",
                data.len()
            )));
        }
        Ok(Tensor3 {
            batch,
            time,
            channels,
            data,
        })
    }

    /// Rows of the `(batch * time) x channels` view.
    pub fn rows(&self) -> usize {
        self.batch * self.time
    }

    pub fn at(&self, b: usize, t: usize, c: usize) -> T {
        self.data[(b * self.time + t) * self.channels + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}
