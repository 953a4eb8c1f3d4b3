//! Sparsity induction with an L1 penalty and set-wise magnitude thresholding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::network::{accuracy, LayerKind, NetworkSpec, ThresholdRecord, WeightSet, WeightTag};
use crate::train::{train, L1Penalty, TrainConfig, TrainReport};

/// Number of candidate thresholds, spaced `0.05 * sigma` apart.
pub const THRESHOLD_STEPS: usize = 40;
pub const THRESHOLD_STEP: f64 = 0.05;

pub const DEFAULT_EPS1: f64 = 2.5;
pub const DEFAULT_EPS2: f64 = 6.0;

/// Eight log-spaced L1 strengths from 1e-6 to 1e-2, ascending.
pub fn alpha_grid() -> Vec<f32> {
    (0..8)
        .map(|i| 10f64.powf(-6.0 + 4.0 * i as f64 / 7.0) as f32)
        .collect()
}

/// Checks that `layers` is a non-empty run of consecutive conv/fc layers.
/// Heads are skipped when judging adjacency.
pub fn check_layer_set(spec: &NetworkSpec, layers: &[String]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config("layer set is empty".into()));
    }
    let order: Vec<&str> = spec
        .layers
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Conv { .. } | LayerKind::Fc { .. }))
        .map(|l| l.name.as_str())
        .collect();
    let mut prev: Option<usize> = None;
    for name in layers {
        let pos = order.iter().position(|n| n == name).ok_or_else(|| {
            Error::Config(format!("`{name}` is not a conv or fc layer of the network"))
        })?;
        if let Some(p) = prev {
            if pos != p + 1 {
                return Err(Error::Config(format!(
                    "layer set is not a consecutive run (`{name}` does not follow `{}`)",
                    order[p]
                )));
            }
        }
        prev = Some(pos);
    }
    Ok(())
}

/// Fine-tunes `weights` on `C + alpha * sum_{l in layers} |W_l|_1`.
pub fn train_l1(
    spec: &NetworkSpec,
    weights: &WeightSet,
    data: &Batch,
    layers: &[String],
    alpha: f32,
    cfg: &TrainConfig,
) -> Result<(WeightSet, TrainReport)> {
    let mut out = weights.clone().with_tag(WeightTag::ThetaL1);
    let penalty = L1Penalty::new(alpha, layers);
    let report = train(spec, &mut out, data, cfg, Some(&penalty))?;
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTrial {
    pub alpha: f32,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub alpha: f32,
    pub reference_metric: f64,
    /// False when no candidate met the tolerance and the smallest was used.
    pub satisfied: bool,
    /// Candidates in the order they were evaluated.
    pub trials: Vec<AlphaTrial>,
}

/// Largest `alpha` in `grid` whose L1-trained model stays within `eps1`
/// points of the input model's validation accuracy. Candidates are tried from
/// the largest down, stopping at the first that qualifies. Returns the
/// trained weights for the chosen strength.
#[allow(clippy::too_many_arguments)]
pub fn select_alpha(
    spec: &NetworkSpec,
    weights: &WeightSet,
    train_data: &Batch,
    val: &Batch,
    layers: &[String],
    eps1: f64,
    grid: &[f32],
    cfg: &TrainConfig,
) -> Result<(AlphaSearch, WeightSet)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("alpha grid is empty".into()));
    }
    if grid.iter().any(|a| !(*a >= 0.0)) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "alpha grid must be ascending and non-negative".into(),
        ));
    }
    if !(eps1 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps1 must be >= 0, got {eps1}"
        )));
    }
    let reference = accuracy(spec, weights, val)?;
    let mut trials = Vec::new();
    let mut last = None;
    for &alpha in grid.iter().rev() {
        let (w, _) = train_l1(spec, weights, train_data, layers, alpha, cfg)?;
        let metric = accuracy(spec, &w, val)?;
        log::info!("alpha {alpha:.3e}: val {metric:.2} (reference {reference:.2})");
        trials.push(AlphaTrial {
            alpha,
            val_metric: metric,
        });
        if metric >= reference - eps1 {
            let search = AlphaSearch {
                alpha,
                reference_metric: reference,
                satisfied: true,
                trials,
            };
            return Ok((search, w));
        }
        last = Some((alpha, w));
    }
    let (alpha, w) = last.expect("grid is non-empty");
    log::warn!("no alpha within {eps1} points of {reference:.2}; using the smallest, {alpha:.3e}");
    Ok((
        AlphaSearch {
            alpha,
            reference_metric: reference,
            satisfied: false,
            trials,
        },
        w,
    ))
}

/// Zeroes every weight (not bias) of `layers` with `|w| < t`.
pub fn apply_threshold(weights: &WeightSet, layers: &[String], t: f32) -> Result<WeightSet> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be >= 0, got {t}"
        )));
    }
    let mut out = weights.clone();
    for layer in layers {
        for w in out.get_mut(layer)?.weight.data_mut() {
            if w.abs() < t {
                *w = 0.0;
            }
        }
    }
    out.tag = WeightTag::ThetaL1Th;
    out.threshold = Some(ThresholdRecord {
        layers: layers.to_vec(),
        threshold: t,
    });
    Ok(out)
}

/// Population standard deviation of all weights of `layers`, pooled.
pub fn pooled_std(weights: &WeightSet, layers: &[String]) -> Result<f64> {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    for layer in layers {
        let w = weights.get(layer)?.weight.data();
        n += w.len();
        sum += w.iter().map(|&v| v as f64).sum::<f64>();
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mean = sum / n as f64;
    let mut sq = 0.0f64;
    for layer in layers {
        sq += weights
            .get(layer)?
            .weight
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>();
    }
    Ok((sq / n as f64).sqrt())
}

/// `{0.05, 0.10, ..., 2.00} * sigma`, ascending.
pub fn threshold_grid(sigma: f64) -> Vec<f32> {
    (1..=THRESHOLD_STEPS)
        .map(|k| (k as f64 * THRESHOLD_STEP * sigma) as f32)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub t: f32,
    pub nonzero_count: usize,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub threshold: f32,
    pub sigma: f64,
    pub reference_metric: f64,
    /// False when even the smallest grid point broke the tolerance.
    pub satisfied: bool,
    pub sweep: Vec<SweepPoint>,
}

fn nonzeros(weights: &WeightSet, layers: &[String]) -> Result<usize> {
    layers.iter().map(|l| weights.nonzero_weights(l)).sum()
}

/// Single global threshold for `layers`: the largest grid point whose
/// thresholded model stays within `eps2` points of `weights` itself.
pub fn search_threshold(
    spec: &NetworkSpec,
    weights: &WeightSet,
    layers: &[String],
    val: &Batch,
    eps2: f64,
) -> Result<ThresholdSearch> {
    if !(eps2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps2 must be >= 0, got {eps2}"
        )));
    }
    let reference = accuracy(spec, weights, val)?;
    let sigma = pooled_std(weights, layers)?;
    let mut sweep = Vec::with_capacity(THRESHOLD_STEPS);
    for t in threshold_grid(sigma) {
        let th = apply_threshold(weights, layers, t)?;
        sweep.push(SweepPoint {
            t,
            nonzero_count: nonzeros(&th, layers)?,
            val_metric: accuracy(spec, &th, val)?,
        });
    }
    let best = sweep
        .iter()
        .rev()
        .find(|p| p.val_metric >= reference - eps2)
        .map(|p| p.t);
    if best.is_none() {
        log::warn!("every threshold for {layers:?} loses more than {eps2} points; using 0");
    }
    Ok(ThresholdSearch {
        threshold: best.unwrap_or(0.0),
        sigma,
        reference_metric: reference,
        satisfied: best.is_some(),
        sweep,
    })
}

/// Runs [`search_threshold`] for each layer on its own, for comparison with
/// the set-wise search.
pub fn layerwise_thresholds(
    spec: &NetworkSpec,
    weights: &WeightSet,
    layers: &[String],
    val: &Batch,
    eps2: f64,
) -> Result<BTreeMap<String, ThresholdSearch>> {
    layers
        .iter()
        .map(|l| {
            let one = std::slice::from_ref(l);
            Ok((l.clone(), search_threshold(spec, weights, one, val, eps2)?))
        })
        .collect()
}

/// Applies a per-layer threshold map.
pub fn apply_layerwise(
    weights: &WeightSet,
    thresholds: &BTreeMap<String, f32>,
) -> Result<WeightSet> {
    let mut out = weights.clone();
    for (layer, &t) in thresholds {
        out = apply_threshold(&out, std::slice::from_ref(layer), t)?;
    }
    // a single record cannot describe several cut-offs
    out.threshold = None;
    Ok(out)
}
