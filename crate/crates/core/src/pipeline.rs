//! Multi-phase compression: L1 training, thresholding, filter selection,
//! surgery and retraining, phase after phase.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::network::{
    accuracy, count_flops, count_params, filter_counts, LayerKind, NetworkSpec, WeightSet,
    WeightTag,
};
use crate::prune::{
    drop_tail_layers, prune_fc_neurons, prune_filters, random_prune, select_filters, PruneDecision,
    SelectOptions, SelectionThresholds,
};
use crate::sparsify::{
    alpha_grid, apply_layerwise, apply_threshold, check_layer_set, layerwise_thresholds,
    search_threshold, select_alpha, train_l1, AlphaSearch, AlphaTrial, ThresholdSearch,
    DEFAULT_EPS1, DEFAULT_EPS2,
};
use crate::train::{train, TrainConfig};

pub const DEFAULT_SEED: u64 = 42;
pub const HISTOGRAM_BINS: usize = 100;

fn default_eps1() -> f64 {
    DEFAULT_EPS1
}

fn default_eps2() -> f64 {
    DEFAULT_EPS2
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropTail {
    pub after: String,
    /// Class count of a fresh head attached to `after`, if one is wanted.
    #[serde(default)]
    pub replacement_classes: Option<usize>,
}

/// One induce / select / prune / retrain pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub name: String,
    /// Conv layers that are L1-trained, thresholded and pruned.
    pub layers: Vec<String>,
    /// Fc layers that are L1-trained and thresholded along with `layers`,
    /// then pruned neuron by neuron.
    #[serde(default)]
    pub fc_layers: Vec<String>,
    /// Fixed L1 strength; searched over `alpha_grid` when absent.
    #[serde(default)]
    pub alpha: Option<f32>,
    #[serde(default)]
    pub alpha_grid: Option<Vec<f32>>,
    #[serde(default = "default_eps1")]
    pub eps1: f64,
    #[serde(default = "default_eps2")]
    pub eps2: f64,
    /// Fixed threshold; searched when absent.
    #[serde(default)]
    pub threshold: Option<f32>,
    #[serde(default)]
    pub selection: SelectionThresholds,
    #[serde(default)]
    pub select: SelectOptions,
    /// Schedule for sparsity induction. Its seed is replaced by one derived
    /// from the plan seed.
    #[serde(default)]
    pub train: TrainConfig,
    /// Defaults to `train.epochs`.
    #[serde(default)]
    pub retrain_epochs: Option<usize>,
    #[serde(default)]
    pub drop_tail: Option<DropTail>,
}

impl PhaseConfig {
    pub fn new<S: AsRef<str>>(name: &str, layers: &[S]) -> Self {
        Self {
            name: name.to_string(),
            layers: layers.iter().map(|s| s.as_ref().to_string()).collect(),
            fc_layers: Vec::new(),
            alpha: None,
            alpha_grid: None,
            eps1: DEFAULT_EPS1,
            eps2: DEFAULT_EPS2,
            threshold: None,
            selection: SelectionThresholds::default(),
            select: SelectOptions::default(),
            train: TrainConfig::default(),
            retrain_epochs: None,
            drop_tail: None,
        }
    }

    /// `layers` followed by `fc_layers`.
    pub fn sparsity_set(&self) -> Vec<String> {
        self.layers.iter().chain(&self.fc_layers).cloned().collect()
    }

    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        check_layer_set(spec, &self.sparsity_set())?;
        for l in &self.layers {
            if !matches!(spec.layer(l)?.kind, LayerKind::Conv { .. }) {
                return Err(Error::Config(format!(
                    "phase `{}`: `{l}` is listed under layers but is not a conv layer",
                    self.name
                )));
            }
        }
        for l in &self.fc_layers {
            if !matches!(spec.layer(l)?.kind, LayerKind::Fc { .. }) {
                return Err(Error::Config(format!(
                    "phase `{}`: `{l}` is listed under fc_layers but is not an fc layer",
                    self.name
                )));
            }
        }
        if !(self.eps1 >= 0.0 && self.eps2 >= 0.0) {
            return Err(Error::Config(format!(
                "phase `{}`: tolerances must be non-negative",
                self.name
            )));
        }
        if self.alpha.is_some_and(|a| !(a >= 0.0)) || self.threshold.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::Config(format!(
                "phase `{}`: alpha and threshold must be non-negative",
                self.name
            )));
        }
        self.selection.validate()?;
        if let Some(d) = &self.drop_tail {
            spec.layer(&d.after)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePlan {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, rename = "phase")]
    pub phases: Vec<PhaseConfig>,
}

impl Default for PhasePlan {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            phases: Vec::new(),
        }
    }
}

impl PhasePlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Schedule used for the desk-scale baseline.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    }
}

/// Two overlapping phases over the desk network: the first conv block up to
/// the first head, then the rest of the convs together with the fc layers.
pub fn desk_plan() -> PhasePlan {
    let schedule = TrainConfig {
        epochs: 8,
        ..TrainConfig::default()
    };
    let mut first = PhaseConfig::new(
        "front",
        &["conv1", "conv2", "conv3", "conv4", "conv5", "conv6"],
    );
    first.train = schedule.clone();
    let mut second = PhaseConfig::new("back", &["conv6", "conv7", "conv8"]);
    second.fc_layers = vec!["fc1".into(), "fc2".into()];
    second.train = schedule;
    PhasePlan {
        seed: DEFAULT_SEED,
        phases: vec![first, second],
    }
}

/// Weight histograms of one layer before and after L1 training, over a
/// shared range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub layer: String,
    pub min: f32,
    pub max: f32,
    pub pre: Vec<u64>,
    pub post: Vec<u64>,
}

impl Histogram {
    pub fn new(layer: &str, pre: &[f32], post: &[f32], bins: usize) -> Self {
        let (min, max) = pre
            .iter()
            .chain(post)
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let mut h = Self {
            layer: layer.to_string(),
            min,
            max,
            pre: vec![0; bins],
            post: vec![0; bins],
        };
        for &v in pre {
            let b = h.bin(v);
            h.pre[b] += 1;
        }
        for &v in post {
            let b = h.bin(v);
            h.post[b] += 1;
        }
        h
    }

    pub fn bins(&self) -> usize {
        self.pre.len()
    }

    /// Bin holding `v`; the top edge belongs to the last bin.
    pub fn bin(&self, v: f32) -> usize {
        let n = self.bins();
        let width = self.max as f64 - self.min as f64;
        if !(width > 0.0) {
            return 0;
        }
        let b = ((v as f64 - self.min as f64) / width * n as f64).floor();
        (b.max(0.0) as usize).min(n - 1)
    }

    /// Lower and upper edge of bin `b`.
    pub fn edges(&self, b: usize) -> (f64, f64) {
        let width = (self.max as f64 - self.min as f64) / self.bins() as f64;
        (
            self.min as f64 + b as f64 * width,
            self.min as f64 + (b + 1) as f64 * width,
        )
    }

    pub fn zero_bin(&self) -> Option<usize> {
        (self.min <= 0.0 && 0.0 <= self.max).then(|| self.bin(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonzeroRow {
    pub layer: String,
    /// Nonzero weights entering the phase.
    pub original: usize,
    /// After L1 training.
    pub before: usize,
    /// After thresholding.
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCount {
    pub layer: String,
    pub count: usize,
}

fn filters_of(spec: &NetworkSpec) -> Vec<FilterCount> {
    filter_counts(spec)
        .into_iter()
        .map(|(layer, count)| FilterCount { layer, count })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub name: String,
    pub seed: u64,
    pub metric_before: f64,
    pub alpha: AlphaSearch,
    pub metric_l1: f64,
    pub threshold: ThresholdSearch,
    pub metric_thresholded: f64,
    pub nonzeros: Vec<NonzeroRow>,
    pub histograms: Vec<Histogram>,
    pub decisions: Vec<PruneDecision>,
    pub filters_before: Vec<FilterCount>,
    pub filters_after: Vec<FilterCount>,
    pub params_before: u64,
    pub params_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
    /// Accuracy right after surgery, before retraining.
    pub metric_pruned: f64,
    pub retrain_losses: Vec<f64>,
    pub metric_after: f64,
    pub wall_seconds: f64,
}

impl PhaseRecord {
    pub fn filters_removed(&self) -> usize {
        self.decisions.iter().map(|d| d.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub dataset: String,
    pub normalization: Option<Normalization>,
    pub original_spec: NetworkSpec,
    pub final_spec: NetworkSpec,
    pub baseline_metric: f64,
    pub final_metric: f64,
    pub original_params: u64,
    pub final_params: u64,
    pub phases: Vec<PhaseRecord>,
}

impl RunLog {
    pub fn compression(&self) -> f64 {
        self.original_params as f64 / self.final_params.max(1) as f64
    }

    pub fn param_reduction(&self) -> f64 {
        1.0 - self.final_params as f64 / self.original_params.max(1) as f64
    }

    /// `compression=<X>x params=<n> val_acc=<float>`.
    pub fn final_line(&self) -> String {
        final_line(self.compression(), self.final_params, self.final_metric)
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Machine-readable result line shared by every compressing command.
pub fn final_line(compression: f64, params: u64, val_acc: f64) -> String {
    format!(
        "compression={:?}x params={params} val_acc={:?}",
        round2(compression),
        round2(val_acc)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub epoch_losses: Vec<f64>,
    pub train_metric: f64,
    pub val_metric: f64,
}

/// Trains a fresh model on the task loss alone.
pub fn train_baseline(
    spec: &NetworkSpec,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(WeightSet, BaselineReport)> {
    data.train.check_labels(data.classes)?;
    let mut w = WeightSet::init(spec, cfg.seed)?;
    let report = train(spec, &mut w, &data.train, cfg, None)?;
    let train_metric = accuracy(spec, &w, &data.train)?;
    let val_metric = accuracy(spec, &w, &data.val)?;
    log::info!("baseline: train {train_metric:.2} val {val_metric:.2}");
    Ok((
        w,
        BaselineReport {
            epoch_losses: report.epoch_losses,
            train_metric,
            val_metric,
        },
    ))
}

fn nonzero_rows(
    layers: &[String],
    original: &WeightSet,
    l1: &WeightSet,
    th: &WeightSet,
) -> Result<Vec<NonzeroRow>> {
    layers
        .iter()
        .map(|l| {
            Ok(NonzeroRow {
                layer: l.clone(),
                original: original.nonzero_weights(l)?,
                before: l1.nonzero_weights(l)?,
                after: th.nonzero_weights(l)?,
            })
        })
        .collect()
}

/// Runs one phase. Conv layers in `already_pruned` are still L1-trained and
/// thresholded but are not selected from again.
pub fn run_phase(
    spec: &NetworkSpec,
    weights: &WeightSet,
    data: &Dataset,
    phase: &PhaseConfig,
    seed: u64,
    already_pruned: &BTreeSet<String>,
) -> Result<(NetworkSpec, WeightSet, PhaseRecord)> {
    let start = Instant::now();
    phase.validate(spec)?;
    weights.check(spec)?;
    let set = phase.sparsity_set();
    let mut cfg = phase.train.clone();
    cfg.seed = seed;
    let metric_before = accuracy(spec, weights, &data.val)?;
    log::info!("phase `{}`: start at val {metric_before:.2}", phase.name);

    let (alpha, theta_l1) = match phase.alpha {
        Some(alpha) => {
            let (w, _) = train_l1(spec, weights, &data.train, &set, alpha, &cfg)?;
            let metric = accuracy(spec, &w, &data.val)?;
            let search = AlphaSearch {
                alpha,
                reference_metric: metric_before,
                satisfied: metric >= metric_before - phase.eps1,
                trials: vec![AlphaTrial {
                    alpha,
                    val_metric: metric,
                }],
            };
            (search, w)
        }
        None => {
            let grid = phase.alpha_grid.clone().unwrap_or_else(alpha_grid);
            select_alpha(
                spec,
                weights,
                &data.train,
                &data.val,
                &set,
                phase.eps1,
                &grid,
                &cfg,
            )?
        }
    };
    let metric_l1 = accuracy(spec, &theta_l1, &data.val)?;

    let threshold = match phase.threshold {
        Some(t) => ThresholdSearch {
            threshold: t,
            sigma: crate::sparsify::pooled_std(&theta_l1, &set)?,
            reference_metric: metric_l1,
            satisfied: true,
            sweep: Vec::new(),
        },
        None => search_threshold(spec, &theta_l1, &set, &data.val, phase.eps2)?,
    };
    let theta_th = apply_threshold(&theta_l1, &set, threshold.threshold)?;
    let metric_thresholded = accuracy(spec, &theta_th, &data.val)?;
    log::info!(
        "phase `{}`: alpha {:.3e} -> val {metric_l1:.2}; t {:.4} -> val {metric_thresholded:.2}",
        phase.name,
        alpha.alpha,
        threshold.threshold
    );

    let nonzeros = nonzero_rows(&set, weights, &theta_l1, &theta_th)?;
    let histograms = set
        .iter()
        .map(|l| {
            Ok(Histogram::new(
                l,
                weights.get(l)?.weight.data(),
                theta_l1.get(l)?.weight.data(),
                HISTOGRAM_BINS,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let selectable: Vec<String> = phase
        .layers
        .iter()
        .filter(|l| !already_pruned.contains(*l))
        .cloned()
        .collect();
    let mut decisions = if selectable.is_empty() {
        Vec::new()
    } else {
        select_filters(
            spec,
            &theta_th,
            &selectable,
            &phase.selection,
            &phase.select,
        )?
    };
    let (mut new_spec, mut new_w) = prune_filters(spec, &theta_l1, &decisions)?;
    if !phase.fc_layers.is_empty() {
        let (_, th_pruned) = prune_filters(spec, &theta_th, &decisions)?;
        let (s, w, fc_decisions) =
            prune_fc_neurons(&new_spec, &th_pruned, &new_w, &phase.fc_layers)?;
        new_spec = s;
        new_w = w;
        decisions.extend(fc_decisions);
    }
    if let Some(d) = &phase.drop_tail {
        let (s, w) = drop_tail_layers(&new_spec, &new_w, &d.after, d.replacement_classes)?;
        new_spec = s;
        new_w = w;
    }
    let new_w = new_w.with_tag(WeightTag::ThetaC);
    let metric_pruned = accuracy(&new_spec, &new_w, &data.val)?;

    let mut retrained = new_w;
    let retrain_cfg = TrainConfig {
        epochs: phase.retrain_epochs.unwrap_or(cfg.epochs),
        seed: seed.wrapping_add(1),
        ..cfg
    };
    let report = train(&new_spec, &mut retrained, &data.train, &retrain_cfg, None)?;
    let metric_after = accuracy(&new_spec, &retrained, &data.val)?;
    let removed: usize = decisions.iter().map(|d| d.len()).sum();
    log::info!(
        "phase `{}`: removed {removed} units, val {metric_pruned:.2} -> {metric_after:.2} after retraining",
        phase.name
    );

    let record = PhaseRecord {
        name: phase.name.clone(),
        seed,
        metric_before,
        alpha,
        metric_l1,
        threshold,
        metric_thresholded,
        nonzeros,
        histograms,
        decisions,
        filters_before: filters_of(spec),
        filters_after: filters_of(&new_spec),
        params_before: count_params(spec, true)?.total,
        params_after: count_params(&new_spec, true)?.total,
        flops_before: count_flops(spec)?.total,
        flops_after: count_flops(&new_spec)?.total,
        metric_pruned,
        retrain_losses: report.epoch_losses,
        metric_after,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((new_spec, retrained, record))
}

/// Seed for phase `index` of a plan.
pub fn phase_seed(plan_seed: u64, index: usize) -> u64 {
    plan_seed.wrapping_add(1000 * (index as u64 + 1))
}

/// Runs every phase in order, calling `on_phase` after each one.
pub fn run_plan_with(
    spec: &NetworkSpec,
    weights: &WeightSet,
    data: &Dataset,
    plan: &PhasePlan,
    mut on_phase: impl FnMut(&PhaseRecord, &NetworkSpec, &WeightSet) -> Result<()>,
) -> Result<(NetworkSpec, WeightSet, RunLog)> {
    let baseline_metric = accuracy(spec, weights, &data.val)?;
    let mut cur_spec = spec.clone();
    let mut cur_w = weights.clone();
    let mut pruned = BTreeSet::new();
    let mut phases = Vec::new();
    for (i, phase) in plan.phases.iter().enumerate() {
        let (s, w, rec) = run_phase(
            &cur_spec,
            &cur_w,
            data,
            phase,
            phase_seed(plan.seed, i),
            &pruned,
        )?;
        pruned.extend(phase.layers.iter().cloned());
        on_phase(&rec, &s, &w)?;
        phases.push(rec);
        cur_spec = s;
        cur_w = w;
    }
    let final_metric = match phases.last() {
        Some(p) => p.metric_after,
        None => baseline_metric,
    };
    let log = RunLog {
        seed: plan.seed,
        dataset: String::new(),
        normalization: data.normalization.clone(),
        original_spec: spec.clone(),
        final_spec: cur_spec.clone(),
        baseline_metric,
        final_metric,
        original_params: count_params(spec, true)?.total,
        final_params: count_params(&cur_spec, true)?.total,
        phases,
    };
    Ok((cur_spec, cur_w, log))
}

pub fn run_plan(
    spec: &NetworkSpec,
    weights: &WeightSet,
    data: &Dataset,
    plan: &PhasePlan,
) -> Result<(NetworkSpec, WeightSet, RunLog)> {
    run_plan_with(spec, weights, data, plan, |_, _, _| Ok(()))
}

/// Outcome of set-wise against layer-wise thresholding on the same model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdComparison {
    pub layers: Vec<String>,
    pub eps2: f64,
    pub setwise_threshold: f32,
    pub setwise_metric: f64,
    pub setwise_selected: usize,
    pub layerwise_thresholds: BTreeMap<String, f32>,
    pub layerwise_metric: f64,
    pub layerwise_selected: usize,
}

/// Thresholds `theta_l1` both ways and counts the filters each would remove.
pub fn compare_thresholding(
    spec: &NetworkSpec,
    theta_l1: &WeightSet,
    data: &Dataset,
    layers: &[String],
    eps2: f64,
    selection: &SelectionThresholds,
    opts: &SelectOptions,
) -> Result<ThresholdComparison> {
    let count = |th: &WeightSet| -> Result<usize> {
        Ok(select_filters(spec, th, layers, selection, opts)?
            .iter()
            .map(|d| d.len())
            .sum())
    };
    let set = search_threshold(spec, theta_l1, layers, &data.val, eps2)?;
    let set_th = apply_threshold(theta_l1, layers, set.threshold)?;
    let per_layer: BTreeMap<String, f32> =
        layerwise_thresholds(spec, theta_l1, layers, &data.val, eps2)?
            .into_iter()
            .map(|(l, s)| (l, s.threshold))
            .collect();
    let layer_th = apply_layerwise(theta_l1, &per_layer)?;
    let cmp = ThresholdComparison {
        layers: layers.to_vec(),
        eps2,
        setwise_threshold: set.threshold,
        setwise_metric: accuracy(spec, &set_th, &data.val)?,
        setwise_selected: count(&set_th)?,
        layerwise_thresholds: per_layer,
        layerwise_metric: accuracy(spec, &layer_th, &data.val)?,
        layerwise_selected: count(&layer_th)?,
    };
    log::info!(
        "set-wise t {:.4}: {} filters at val {:.2}; layer-wise: {} filters at val {:.2}",
        cmp.setwise_threshold,
        cmp.setwise_selected,
        cmp.setwise_metric,
        cmp.layerwise_selected,
        cmp.layerwise_metric
    );
    Ok(cmp)
}

/// Conv and fc layers, the units random removal draws from.
pub fn prunable_layers(spec: &NetworkSpec) -> Vec<String> {
    spec.layers
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Conv { .. } | LayerKind::Fc { .. }))
        .map(|l| l.name.clone())
        .collect()
}

/// Parameter count after removing `floor(fraction * c)` outputs from each
/// of `layers`, without building any weights.
pub fn params_after_fraction(spec: &NetworkSpec, layers: &[String], fraction: f64) -> Result<u64> {
    let mut s = spec.clone();
    for l in layers {
        let c = s.layer(l)?.kind.outputs().unwrap_or(0);
        let n = (fraction * c as f64).floor() as usize;
        s.set_outputs(l, c - n)?;
    }
    Ok(count_params(&s, true)?.total)
}

/// Removal fraction on a 0.005 grid whose parameter count is closest to
/// `target`.
pub fn matching_fraction(spec: &NetworkSpec, layers: &[String], target: u64) -> Result<f64> {
    let mut best = (0.0, u64::MAX);
    for k in 0..200 {
        let x = k as f64 * 0.005;
        let p = params_after_fraction(spec, layers, x)?;
        let gap = p.abs_diff(target);
        if gap < best.1 {
            best = (x, gap);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrfRun {
    pub seed: u64,
    pub fraction: f64,
    pub params: u64,
    pub val_metric: f64,
}

/// Random removal of `fraction` of every layer's outputs followed by
/// retraining.
pub fn run_rrf(
    spec: &NetworkSpec,
    weights: &WeightSet,
    data: &Dataset,
    fraction: f64,
    layers: &[String],
    retrain: &TrainConfig,
) -> Result<(NetworkSpec, WeightSet, RrfRun)> {
    let (s, mut w, _) = random_prune(spec, weights, fraction, layers, retrain.seed)?;
    train(&s, &mut w, &data.train, retrain, None)?;
    let run = RrfRun {
        seed: retrain.seed,
        fraction,
        params: count_params(&s, true)?.total,
        val_metric: accuracy(&s, &w, &data.val)?,
    };
    log::info!(
        "rrf x={fraction:.3} seed {}: {} params, val {:.2}",
        run.seed,
        run.params,
        run.val_metric
    );
    Ok((s, w, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrfComparison {
    pub method_params: u64,
    pub method_metric: f64,
    pub runs: Vec<RrfRun>,
    pub rrf_mean_metric: f64,
    /// Whether every random run landed within 5% of the method's size.
    pub matched: bool,
}

/// Random-removal baselines at the parameter count the method reached.
pub fn compare_rrf(
    spec: &NetworkSpec,
    weights: &WeightSet,
    data: &Dataset,
    log: &RunLog,
    seeds: &[u64],
    retrain: &TrainConfig,
) -> Result<RrfComparison> {
    let layers = prunable_layers(spec);
    let fraction = matching_fraction(spec, &layers, log.final_params)?;
    let mut runs = Vec::new();
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..retrain.clone()
        };
        runs.push(run_rrf(spec, weights, data, fraction, &layers, &cfg)?.2);
    }
    let mean = runs.iter().map(|r| r.val_metric).sum::<f64>() / runs.len().max(1) as f64;
    let matched = runs.iter().all(|r| {
        (r.params as f64 - log.final_params as f64).abs() <= 0.05 * log.final_params as f64
    });
    Ok(RrfComparison {
        method_params: log.final_params,
        method_metric: log.final_metric,
        runs,
        rrf_mean_metric: mean,
        matched,
    })
}
