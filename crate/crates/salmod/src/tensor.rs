//! Dense row-major tensors over f64.
//!
//! Storage is a single contiguous `Vec<f64>`; the last axis varies fastest.
//! Everything at desk scale favors exactness and simplicity: no views, no
//! broadcasting, no SIMD intrinsics — hot loops in `layers` index the flat
//! slice directly.

use crate::error::{Error, Result};

/// Dense row-major tensor. Shape `[]` is not used; scalars are shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Tensor of zeros with the given shape.
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel_of(shape)],
        }
    }

    /// Tensor with every element set to `value`.
    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel_of(shape)],
        }
    }

    /// Scalar tensor (shape `[1]`).
    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Wrap a flat row-major buffer. Errors if the element count does not
    /// match the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n = numel_of(shape);
        if data.len() != n {
            return Err(Error::shape(format!(
                "buffer holds {} elements but shape {:?} needs {}",
                data.len(),
                shape,
                n
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-major flat offset of a multi-index. Errors on rank mismatch or an
    /// out-of-range coordinate.
    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::shape(format!(
                "index rank {} does not match tensor rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut flat = 0usize;
        for (axis, (&i, &extent)) in index.iter().zip(&self.shape).enumerate() {
            if i >= extent {
                return Err(Error::shape(format!(
                    "index {} out of range for axis {} with extent {}",
                    i, axis, extent
                )));
            }
            flat = flat * extent + i;
        }
        Ok(flat)
    }

    /// Checked element read.
    pub fn at(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.flat_index(index)?])
    }

    /// Checked element write.
    pub fn set_at(&mut self, index: &[usize], value: f64) -> Result<()> {
        let flat = self.flat_index(index)?;
        self.data[flat] = value;
        Ok(())
    }

    /// Reinterpret the same buffer under a new shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    /// max |x| over all elements (0 for the empty tensor).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    /// Elementwise `self += other`, used by gradient accumulation.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "add_assign shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().fold(1usize, |acc, &d| {
        acc.checked_mul(d).expect("tensor shape product overflows usize")
    })
}
