use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which stage of the compression pipeline a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightTag {
    /// Trained on the task loss only.
    Theta,
    /// After training with the L1 penalty.
    ThetaL1,
    /// `ThetaL1` with small weights in a layer set zeroed.
    ThetaL1Th,
    /// After structural pruning.
    ThetaC,
}

impl WeightTag {
    pub fn code(self) -> u8 {
        match self {
            WeightTag::Theta => 0,
            WeightTag::ThetaL1 => 1,
            WeightTag::ThetaL1Th => 2,
            WeightTag::ThetaC => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => WeightTag::Theta,
            1 => WeightTag::ThetaL1,
            2 => WeightTag::ThetaL1Th,
            3 => WeightTag::ThetaC,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }
}

/// Per-layer tensors keyed by layer name. Also used for gradients.
pub type ParamMap = BTreeMap<String, LayerParams>;

/// Layer set and cut-off a thresholded parameter set was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub layers: Vec<String>,
    pub threshold: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub tag: WeightTag,
    pub layers: ParamMap,
    pub threshold: Option<ThresholdRecord>,
}

impl WeightSet {
    /// Fan-in scaled uniform init, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = ParamMap::new();
        for (name, shape, bias) in spec.param_shapes()? {
            let fan_in: usize = shape[1..].iter().product();
            let bound = (6.0 / fan_in.max(1) as f32).sqrt();
            let weight = Tensor::from_fn(&shape, |_| rng.random_range(-bound..bound));
            layers.insert(
                name,
                LayerParams {
                    weight,
                    bias: Tensor::zeros(&[bias]),
                },
            );
        }
        Ok(Self {
            tag: WeightTag::Theta,
            layers,
            threshold: None,
        })
    }

    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        let layers = spec
            .param_shapes()?
            .into_iter()
            .map(|(name, shape, bias)| {
                (
                    name,
                    LayerParams {
                        weight: Tensor::zeros(&shape),
                        bias: Tensor::zeros(&[bias]),
                    },
                )
            })
            .collect();
        Ok(Self {
            tag: WeightTag::Theta,
            layers,
            threshold: None,
        })
    }

    pub fn with_tag(mut self, tag: WeightTag) -> Self {
        self.tag = tag;
        if tag != WeightTag::ThetaL1Th {
            self.threshold = None;
        }
        self
    }

    pub fn get(&self, layer: &str) -> Result<&LayerParams> {
        self.layers
            .get(layer)
            .ok_or_else(|| Error::MissingWeights(layer.to_string()))
    }

    pub fn get_mut(&mut self, layer: &str) -> Result<&mut LayerParams> {
        self.layers
            .get_mut(layer)
            .ok_or_else(|| Error::MissingWeights(layer.to_string()))
    }

    /// Every layer in `spec` has tensors of the right shape and nothing extra exists.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.param_shapes()?;
        for (name, shape, bias) in &shapes {
            let p = self.get(name)?;
            if p.weight.shape() != shape.as_slice() || p.bias.shape() != [*bias] {
                return Err(Error::shape(
                    "WeightSet::check",
                    format!(
                        "layer `{name}` expects weight {shape:?} / bias [{bias}], found {:?} / {:?}",
                        p.weight.shape(),
                        p.bias.shape()
                    ),
                ));
            }
        }
        if let Some(extra) = self
            .layers
            .keys()
            .find(|k| !shapes.iter().any(|(n, _, _)| n == *k))
        {
            return Err(Error::InvalidNetwork(format!(
                "weights contain `{extra}`, which the network does not define"
            )));
        }
        if let (WeightTag::ThetaL1Th, Some(rec)) = (self.tag, &self.threshold) {
            for layer in &rec.layers {
                let w = self.get(layer)?;
                if w.weight
                    .data()
                    .iter()
                    .any(|v| *v != 0.0 && v.abs() < rec.threshold)
                {
                    return Err(Error::InvalidArgument(format!(
                        "layer `{layer}` holds weights below the recorded threshold {}",
                        rec.threshold
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn nonzero_weights(&self, layer: &str) -> Result<usize> {
        Ok(self.get(layer)?.weight.count_nonzero())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .values()
            .all(|p| p.weight.is_finite() && p.bias.is_finite())
    }

    pub fn zeros_like(&self) -> ParamMap {
        self.layers
            .iter()
            .map(|(k, v)| (k.clone(), v.zeros_like()))
            .collect()
    }
}
