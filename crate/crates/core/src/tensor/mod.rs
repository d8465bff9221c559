//! Dense row-major tensors and the group layout of a weight matrix.

mod layout;
pub mod pten;

pub use layout::{Group, GroupLayout};

use crate::error::{PotError, Result};
use crate::fp16::Half;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F16,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F16 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F16),
            t => Err(PotError::UnknownDType(t)),
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F16(Vec<Half>),
}

/// An immutable dense tensor. The element count always equals the product of
/// `dims`, every dimension is positive and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

fn check_dims(dims: &[usize], len: usize) -> Result<()> {
    if dims.is_empty() {
        return Err(PotError::InvalidShape("empty dims list".into()));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(PotError::InvalidShape(format!("dimension {pos} is zero")));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| PotError::InvalidShape("element count overflows".into()))?;
    if count != len {
        return Err(PotError::InvalidShape(format!(
            "dims {dims:?} imply {count} elements, got {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn from_f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_dims(&dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(PotError::NonFinite(i));
        }
        Ok(Tensor {
            dims,
            data: TensorData::F32(data),
        })
    }

    pub fn from_f16(dims: Vec<usize>, data: Vec<Half>) -> Result<Self> {
        check_dims(&dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(PotError::NonFinite(i));
        }
        Ok(Tensor {
            dims,
            data: TensorData::F16(data),
        })
    }

    /// Builds an `f32` tensor from `f64` values, rounding each to `f32`.
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::from_f32(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::F16(_) => DType::F16,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn shape2(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(PotError::DimensionMismatch(format!(
                "expected a 2-D tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    /// Element at flat row-major index `idx`, widened to `f64`.
    #[inline]
    pub fn get_flat(&self, idx: usize) -> f64 {
        match &self.data {
            TensorData::F32(v) => v[idx] as f64,
            TensorData::F16(v) => v[idx].decode(),
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::F16(v) => v.iter().map(|h| h.to_f32()).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get_flat(i)).collect()
    }

    /// Same data under new dims with an equal element count.
    pub fn reshape(&self, dims: Vec<usize>) -> Result<Tensor> {
        check_dims(&dims, self.len())?;
        Ok(Tensor {
            dims,
            data: self.data.clone(),
        })
    }
}
