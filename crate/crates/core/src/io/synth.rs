//! Seeded template-plus-noise classification data.
//!
//! Each class owns a fixed template drawn uniformly from `[-1, 1]`; an example
//! is its class template plus i.i.d. Gaussian noise. The same configuration
//! always yields the same bytes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub classes: usize,
    /// Training examples per class; validation and test get half as many.
    pub per_class: usize,
    pub size: usize,
    pub channels: usize,
    pub noise: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            classes: 10,
            per_class: 100,
            size: 16,
            channels: 3,
            noise: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn eval_per_class(&self) -> usize {
        (self.per_class / 2).max(1)
    }
}

/// Class templates, `[classes, channels, size, size]`.
pub fn templates(cfg: &SynthConfig) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Tensor::from_fn(&[cfg.classes, cfg.channels, cfg.size, cfg.size], |_| {
        rng.random_range(-1.0f32..1.0)
    })
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.size < 8 {
        return Err(Error::InvalidArgument(format!(
            "synthetic images must be at least 8x8, got {}",
            cfg.size
        )));
    }
    if cfg.classes == 0 || cfg.per_class == 0 || cfg.channels == 0 {
        return Err(Error::InvalidArgument(
            "synthetic dataset needs at least one class, channel and example".into(),
        ));
    }
    if !(cfg.noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise must be non-negative, got {}",
            cfg.noise
        )));
    }
    let tmpl = templates(cfg);
    let example_len = cfg.channels * cfg.size * cfg.size;
    // a separate stream so that changing split sizes does not move the templates
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let normal = Normal::new(0.0f32, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut split = |per_class: usize| -> Result<Batch> {
        let n = per_class * cfg.classes;
        let mut data = Vec::with_capacity(n * example_len);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..per_class {
            for class in 0..cfg.classes {
                let t = &tmpl.data()[class * example_len..(class + 1) * example_len];
                data.extend(t.iter().map(|v| v + cfg.noise * normal.sample(&mut rng)));
                labels.push(class);
            }
        }
        Batch::new(
            Tensor::new(vec![n, cfg.channels, cfg.size, cfg.size], data)?,
            labels,
        )
    };
    let train = split(cfg.per_class)?;
    let val = split(cfg.eval_per_class())?;
    let test = split(cfg.eval_per_class())?;
    Ok(Dataset {
        train,
        val,
        test,
        classes: cfg.classes,
        normalization: None,
    })
}
