//! Dense row-major `f32` tensors and the fixed-order reductions used by the
//! training engine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Number of elements spanned by one step along `axis`.
    fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    /// Keeps only the listed positions along `axis`, in the given order.
    pub fn select(&self, axis: usize, keep: &[usize]) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::shape(
                "Tensor::select",
                format!("axis {axis} out of range for rank {}", self.rank()),
            ));
        }
        let extent = self.shape[axis];
        if let Some(bad) = keep.iter().find(|&&i| i >= extent) {
            return Err(Error::shape(
                "Tensor::select",
                format!("index {bad} out of range for axis {axis} of extent {extent}"),
            ));
        }
        let inner = self.stride(axis);
        let outer: usize = self.shape[..axis].iter().product();
        let mut data = Vec::with_capacity(outer * keep.len() * inner);
        for o in 0..outer {
            let base = o * extent * inner;
            for &k in keep {
                let start = base + k * inner;
                data.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = keep.len();
        Ok(Self { shape, data })
    }

    /// Removes the listed positions along `axis`; duplicates are ignored.
    pub fn remove(&self, axis: usize, drop: &[usize]) -> Result<Self> {
        let extent = *self.shape.get(axis).ok_or_else(|| {
            Error::shape(
                "Tensor::remove",
                format!("axis {axis} out of range for rank {}", self.rank()),
            )
        })?;
        if let Some(bad) = drop.iter().find(|&&i| i >= extent) {
            return Err(Error::shape(
                "Tensor::remove",
                format!("index {bad} out of range for axis {axis} of extent {extent}"),
            ));
        }
        let mut dropped = vec![false; extent];
        for &i in drop {
            dropped[i] = true;
        }
        let keep: Vec<usize> = (0..extent).filter(|&i| !dropped[i]).collect();
        self.select(axis, &keep)
    }

    /// Copies out the sub-tensor at position `index` of `axis` (that axis is dropped).
    pub fn slice_axis(&self, axis: usize, index: usize) -> Result<Self> {
        let picked = self.select(axis, &[index])?;
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(Self {
            shape,
            data: picked.data,
        })
    }
}

/// Pairwise (tree) summation of a slice. The association order depends only
/// on the length, so results are reproducible regardless of how the inputs
/// were produced.
pub fn pairwise_sum(values: &[f32]) -> f32 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        let mut acc = 0.0f32;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Element-wise pairwise-tree sum of equally sized buffers.
pub fn pairwise_sum_buffers(mut parts: Vec<Vec<f32>>) -> Vec<f32> {
    match parts.len() {
        0 => Vec::new(),
        1 => parts.pop().unwrap_or_default(),
        n => {
            let right = parts.split_off(n / 2);
            let mut left = pairwise_sum_buffers(parts);
            let right = pairwise_sum_buffers(right);
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            left
        }
    }
}
