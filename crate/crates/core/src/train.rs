//! Minibatch training loop shared by baseline training, sparsity induction and
//! retraining.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::network::{loss_and_grad, NetworkSpec, WeightSet};
use crate::optim::Sgd;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 6,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            lr_decay: 0.85,
            seed: 42,
        }
    }
}

/// The `alpha * sum |W_l|` term over a set of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Penalty {
    pub alpha: f32,
    pub layers: BTreeSet<String>,
}

impl L1Penalty {
    pub fn new<S: AsRef<str>>(alpha: f32, layers: &[S]) -> Self {
        Self {
            alpha,
            layers: layers.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    /// Value of the penalty at `weights`.
    pub fn value(&self, weights: &WeightSet) -> Result<f64> {
        let mut sum = 0.0f64;
        for layer in &self.layers {
            sum += weights
                .get(layer)?
                .weight
                .data()
                .iter()
                .map(|w| w.abs() as f64)
                .sum::<f64>();
        }
        Ok(self.alpha as f64 * sum)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean task loss (without the penalty) per epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn train(
    spec: &NetworkSpec,
    weights: &mut WeightSet,
    data: &Batch,
    cfg: &TrainConfig,
    l1: Option<&L1Penalty>,
) -> Result<TrainReport> {
    if cfg.epochs == 0 {
        return Ok(TrainReport::default());
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty batch".into(),
        ));
    }
    weights.check(spec)?;
    let empty = BTreeSet::new();
    let (alpha, l1_layers) = match l1 {
        Some(p) => {
            for layer in &p.layers {
                weights.get(layer)?;
            }
            (p.alpha, &p.layers)
        }
        None => (0.0, &empty),
    };
    let mut opt = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for idx in order.chunks(cfg.batch_size.max(1)) {
            let mb = data.subset(idx)?;
            let (loss, grads) = loss_and_grad(spec, weights, &mb)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss as f64 * idx.len() as f64;
            opt.step(weights, &grads, alpha, l1_layers)?;
        }
        if !weights.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let mean = total / data.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.5} (alpha {alpha})");
        report.epoch_losses.push(mean);
        opt.set_lr(opt.lr() * cfg.lr_decay);
    }
    Ok(report)
}
