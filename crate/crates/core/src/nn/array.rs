use crate::error::{Error, Result};

use super::Real;

/// Row-major dense array of rank 1 to 3.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseArray<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > 3 {
        return Err(Error::InvalidArgument(format!(
            "array rank must be 1..=3, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "array dims must be positive, got {dims:?}"
        )));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidArgument(format!("array dims overflow: {dims:?}")))
}

impl<T: Real> DenseArray<T> {
    /// Zero-filled array. Panics on an invalid shape; use [`DenseArray::from_vec`]
    /// for untrusted dimensions.
    pub fn zeros(dims: &[usize]) -> Self {
        let n = check_dims(dims).expect("invalid array shape");
        DenseArray {
            dims: dims.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_dims(dims)?;
        if n != data.len() {
            return Err(Error::InvalidArgument(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(DenseArray {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<T>) -> Self {
        let n = data.len();
        Self::from_vec(&[n], data).expect("vector must be non-empty")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Row `r` of a rank-2 array.
    pub fn row(&self, r: usize) -> &[T] {
        let cols = self.dims[self.dims.len() - 1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let cols = self.dims[self.dims.len() - 1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> DenseArray<U> {
        DenseArray {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}
