use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Examples `[n, c, h, w]` with one class label each; every head of a
/// network is trained against the same label.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.rank() != 4 || inputs.dim(0) != labels.len() {
            return Err(Error::shape(
                "Batch::new",
                format!(
                    "inputs {:?} do not match {} labels",
                    inputs.shape(),
                    labels.len()
                ),
            ));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn check_labels(&self, classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l >= classes) {
            Some(&label) => Err(Error::InvalidLabel { label, classes }),
            None => Ok(()),
        }
    }

    /// Gathers the listed examples in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            inputs: self.inputs.select(0, indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Contiguous chunks of at most `size` examples.
    pub fn chunks(&self, size: usize) -> Result<Vec<Self>> {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(|start| {
                let idx: Vec<usize> = (start..(start + size).min(self.len())).collect();
                self.subset(&idx)
            })
            .collect()
    }
}

/// Per-channel affine normalization applied at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Batch,
    pub val: Batch,
    pub test: Batch,
    pub classes: usize,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    /// `[channels, height, width]` of one example.
    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.train.example_shape();
        [s[0], s[1], s[2]]
    }
}
