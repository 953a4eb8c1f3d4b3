//! Parameter, multiply-add and storage accounting.
//!
//! Conv layers cost `c_out * c_in * k^2` weights and `c_out * c_in * k^2 *
//! h_out * w_out` multiply-adds; fc and head layers cost `d_out * d_in` of
//! each. Pass-through layers are free. Storage assumes 4-byte floats with
//! biases included, and megabytes are decimal (10^6 bytes).

use serde::{Deserialize, Serialize};

use super::spec::{LayerKind, NetworkSpec};
use crate::error::Result;

pub const BYTES_PER_PARAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub per_layer: Vec<LayerCount>,
    pub total: u64,
}

impl Counts {
    fn from_layers(per_layer: Vec<LayerCount>) -> Self {
        let total = per_layer.iter().map(|c| c.count).sum();
        Self { per_layer, total }
    }

    pub fn get(&self, layer: &str) -> Option<u64> {
        self.per_layer
            .iter()
            .find(|c| c.layer == layer)
            .map(|c| c.count)
    }
}

pub fn count_params(spec: &NetworkSpec, include_bias: bool) -> Result<Counts> {
    let per_layer = spec
        .param_shapes()?
        .into_iter()
        .map(|(layer, shape, bias)| {
            let w: u64 = shape.iter().map(|d| *d as u64).product();
            LayerCount {
                layer,
                count: w + if include_bias { bias as u64 } else { 0 },
            }
        })
        .collect();
    Ok(Counts::from_layers(per_layer))
}

pub fn count_flops(spec: &NetworkSpec) -> Result<Counts> {
    let ins = spec.input_shapes()?;
    let outs = spec.output_shapes()?;
    let mut per_layer = Vec::new();
    for ((layer, inp), out) in spec.layers.iter().zip(&ins).zip(&outs) {
        let count = match layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                ..
            } => (out_channels * inp[0] * kernel * kernel * out[1] * out[2]) as u64,
            LayerKind::Fc { out_features } => (out_features * inp[0]) as u64,
            LayerKind::Head { classes } => (classes * inp.iter().product::<usize>()) as u64,
            _ => continue,
        };
        per_layer.push(LayerCount {
            layer: layer.name.clone(),
            count,
        });
    }
    Ok(Counts::from_layers(per_layer))
}

pub fn model_size_bytes(spec: &NetworkSpec) -> Result<u64> {
    Ok(BYTES_PER_PARAM * count_params(spec, true)?.total)
}

pub fn bytes_to_mb(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

/// Output filters (conv), neurons (fc) or classes (head) per parameterised layer.
pub fn filter_counts(spec: &NetworkSpec) -> Vec<(String, usize)> {
    spec.param_layers()
        .filter_map(|l| l.kind.outputs().map(|n| (l.name.clone(), n)))
        .collect()
}
