mod common;

use common::*;
use mlpk::data::Batch;
use mlpk::io::{decode_checkpoint, encode_checkpoint};
use mlpk::network::{
    count_params, filter_counts, loss, loss_and_grad, LayerSpec, NetworkSpec, INPUT,
};
use mlpk::pipeline::Histogram;
use mlpk::prune::{
    prune_filters, random_prune, select_filters, sparsity_level, FilterChoice, PruneDecision,
    Reason, SelectMode, SelectOptions, SelectionThresholds,
};
use mlpk::sparsify::apply_threshold;
use mlpk::tensor::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn convs(spec: &NetworkSpec) -> Vec<String> {
    spec.conv_layers().map(|l| l.name.clone()).collect()
}

fn prunable(spec: &NetworkSpec) -> Vec<String> {
    mlpk::pipeline::prunable_layers(spec)
}

fn random_decisions(spec: &NetworkSpec, seed: u64) -> Vec<PruneDecision> {
    let mut r = rng(seed);
    convs(spec)
        .into_iter()
        .map(|layer| {
            let c = spec.layer(&layer).unwrap().kind.outputs().unwrap();
            let n = r.random_range(0..c);
            let mut idx = rand::seq::index::sample(&mut r, c, n).into_vec();
            idx.sort_unstable();
            let filters = idx
                .into_iter()
                .map(|index| FilterChoice {
                    index,
                    reason: Reason::Cond1,
                    splevel_f: 1.0,
                    splevel_g: None,
                })
                .collect();
            PruneDecision::new(layer, filters).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn threshold_is_idempotent_and_only_zeroes_small_weights(seed in any::<u64>(), t in 0.0f32..0.6) {
        let spec = small_desk(4);
        let w = random_weights(&spec, seed);
        let layers = prunable(&spec);
        let th = apply_threshold(&w, &layers, t).unwrap();
        prop_assert_eq!(&apply_threshold(&th, &layers, t).unwrap(), &th);
        for (name, p) in &w.layers {
            let q = th.get(name).unwrap();
            prop_assert_eq!(&p.bias, &q.bias);
            for (&a, &b) in p.weight.data().iter().zip(q.weight.data()) {
                if layers.contains(name) && a.abs() < t {
                    prop_assert_eq!(b, 0.0);
                } else {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn nonzeros_never_grow_with_the_threshold(seed in any::<u64>(), a in 0.0f32..0.5, b in 0.0f32..0.5) {
        let spec = small_desk(4);
        let w = random_weights(&spec, seed);
        let layers = prunable(&spec);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let count = |t: f32| -> usize {
            let th = apply_threshold(&w, &layers, t).unwrap();
            layers.iter().map(|l| th.nonzero_weights(l).unwrap()).sum()
        };
        prop_assert!(count(hi) <= count(lo));
    }

    #[test]
    fn sparsity_is_a_fraction_and_grows_when_rows_are_zeroed(
        seed in any::<u64>(), c in 1usize..6, k in 1usize..5,
    ) {
        let mut r = rng(seed);
        let mut data: Vec<f32> = (0..c * k * k)
            .map(|_| if r.random_bool(0.3) { 0.0 } else { r.random_range(-1.0f32..1.0) })
            .collect();
        let level = |d: &[f32]| sparsity_level(&Tensor::new(vec![c, k, k], d.to_vec()).unwrap()).unwrap();
        let before = level(&data);
        prop_assert!((0.0..=1.0).contains(&before));
        let row = r.random_range(0..c * k);
        data[row * k..(row + 1) * k].fill(0.0);
        prop_assert!(level(&data) >= before);
    }

    #[test]
    fn surgery_keeps_parameter_accounting_consistent(seed in any::<u64>()) {
        let spec = small_desk(5);
        let w = random_weights(&spec, seed);
        let decisions = random_decisions(&spec, seed);
        let (ps, pw) = prune_filters(&spec, &w, &decisions).unwrap();
        let stored: u64 = pw
            .layers
            .values()
            .map(|p| (p.weight.numel() + p.bias.numel()) as u64)
            .sum();
        prop_assert_eq!(stored, count_params(&ps, true).unwrap().total);
        let before: std::collections::BTreeMap<_, _> = filter_counts(&spec).into_iter().collect();
        for (layer, n) in filter_counts(&ps) {
            let removed = decisions.iter().find(|d| d.layer == layer).map_or(0, |d| d.len());
            prop_assert_eq!(n, before[&layer] - removed);
        }
    }

    #[test]
    fn surgery_does_not_depend_on_decision_order(seed in any::<u64>()) {
        let spec = small_desk(5);
        let w = random_weights(&spec, seed);
        let decisions = random_decisions(&spec, seed);
        let mut shuffled = decisions.clone();
        shuffled.shuffle(&mut rng(seed ^ 1));
        prop_assert_eq!(prune_filters(&spec, &w, &decisions).unwrap(), prune_filters(&spec, &w, &shuffled).unwrap());
    }

    #[test]
    fn dense_filters_are_never_selected(seed in any::<u64>(), snapshot in any::<bool>()) {
        let spec = small_desk(4);
        let w = random_weights(&spec, seed);
        let opts = SelectOptions {
            mode: if snapshot { SelectMode::Snapshot } else { SelectMode::Progressive },
            keep_min: 0,
        };
        let got = select_filters(&spec, &w, &convs(&spec), &SelectionThresholds::default(), &opts).unwrap();
        prop_assert!(got.iter().all(|d| d.is_empty()));
    }

    #[test]
    fn zero_filters_are_always_selected(seed in any::<u64>(), snapshot in any::<bool>()) {
        let spec = small_desk(4);
        let mut w = random_weights(&spec, seed);
        let mut r = rng(seed);
        let layers = convs(&spec);
        let mut planted = Vec::new();
        for layer in &layers {
            let t = &mut w.get_mut(layer).unwrap().weight;
            let i = r.random_range(0..t.dim(0));
            let per = t.numel() / t.dim(0);
            t.data_mut()[i * per..(i + 1) * per].fill(0.0);
            planted.push(i);
        }
        let opts = SelectOptions {
            mode: if snapshot { SelectMode::Snapshot } else { SelectMode::Progressive },
            keep_min: 0,
        };
        let got = select_filters(&spec, &w, &layers, &SelectionThresholds::default(), &opts).unwrap();
        for (d, i) in got.iter().zip(planted) {
            let f = d.filters.iter().find(|f| f.index == i);
            prop_assert!(f.is_some_and(|f| f.reason == Reason::Cond1));
        }
    }

    #[test]
    fn keep_min_leaves_filters_in_every_layer(seed in any::<u64>(), keep in 1usize..3) {
        let spec = small_desk(4);
        let w = mlpk::network::WeightSet::zeros(&spec).unwrap();
        let opts = SelectOptions { mode: SelectMode::Progressive, keep_min: keep };
        let layers = convs(&spec);
        let got = select_filters(&spec, &w, &layers, &SelectionThresholds::default(), &opts).unwrap();
        let (ps, _) = prune_filters(&spec, &random_weights(&spec, seed), &got).unwrap();
        for (layer, n) in filter_counts(&ps) {
            if layers.contains(&layer) {
                prop_assert_eq!(n, keep);
            }
        }
    }

    #[test]
    fn histogram_counts_every_value_once(
        pre in prop::collection::vec(-2.0f32..2.0, 1..200),
        post in prop::collection::vec(-2.0f32..2.0, 1..200),
        bins in 1usize..50,
    ) {
        let h = Histogram::new("l", &pre, &post, bins);
        prop_assert_eq!(h.pre.iter().sum::<u64>(), pre.len() as u64);
        prop_assert_eq!(h.post.iter().sum::<u64>(), post.len() as u64);
        if let Some(b) = h.zero_bin() {
            let (lo, hi) = h.edges(b);
            prop_assert!(lo <= 0.0 && (0.0 < hi || b == bins - 1));
        }
    }

    #[test]
    fn random_removal_takes_the_floor_fraction(seed in any::<u64>(), fraction in 0.0f64..0.9) {
        let spec = small_desk(5);
        let w = random_weights(&spec, seed);
        let layers = prunable(&spec);
        let (ps, pw, decisions) = random_prune(&spec, &w, fraction, &layers, seed).unwrap();
        for d in &decisions {
            let c = spec.layer(&d.layer).unwrap().kind.outputs().unwrap();
            prop_assert_eq!(d.len(), (fraction * c as f64).floor() as usize);
            prop_assert!(d.filters.iter().all(|f| f.reason == Reason::RandomBaseline));
        }
        let again = random_prune(&spec, &w, fraction, &layers, seed).unwrap();
        prop_assert_eq!((ps, pw), (again.0, again.1));
    }

    #[test]
    fn corrupt_checkpoints_are_rejected(seed in any::<u64>(), cut in any::<bool>()) {
        let spec = small_desk(2);
        let bytes = encode_checkpoint(&spec, &random_weights(&spec, seed)).unwrap();
        let mut r = rng(seed);
        let bad = if cut {
            bytes[..r.random_range(0..bytes.len())].to_vec()
        } else {
            let mut b = bytes.clone();
            let at = r.random_range(0..b.len());
            b[at] = b[at].wrapping_add(r.random_range(1..=255));
            b
        };
        prop_assert!(decode_checkpoint(&bad).is_err());
    }
}

/// Two heads, one on a conv map and one after an fc layer.
fn tiny_net() -> NetworkSpec {
    NetworkSpec::new(
        [2, 4, 4],
        vec![
            LayerSpec::conv("c1", INPUT, 3, 3, 1),
            LayerSpec::new("r1", "c1", mlpk::network::LayerKind::Relu),
            LayerSpec::head("h1", "r1", 3),
            LayerSpec::new("p1", "r1", mlpk::network::LayerKind::MaxPool),
            LayerSpec::conv("c2", "p1", 2, 3, 1),
            LayerSpec::new("flat", "c2", mlpk::network::LayerKind::Flatten),
            LayerSpec::fc("f1", "flat", 5),
            LayerSpec::new("r2", "f1", mlpk::network::LayerKind::Relu),
            LayerSpec::head("h2", "r2", 3),
        ],
    )
    .unwrap()
}

/// Checks every parameter coordinate of a two-head network. Where a ReLU or
/// pooling kink lies inside the step, the one-sided slopes disagree; there the
/// analytic value must lie between them.
#[test]
fn network_gradient_matches_finite_differences() {
    let spec = tiny_net();
    let h = 1e-3f32;
    let tol = |a: f64, b: f64| 2e-2 * a.abs().max(b.abs()).max(1e-2);
    let (mut total, mut kinks, mut bad) = (0, 0, Vec::new());
    for seed in 0..5u64 {
        let mut r = rng(seed);
        let w = random_weights(&spec, seed);
        let batch = Batch::new(random_inputs(&mut r, &spec, 3), vec![0, 1, 2]).unwrap();
        let (_, grads) = loss_and_grad(&spec, &w, &batch).unwrap();
        let base = loss(&spec, &w, &batch).unwrap() as f64;
        for (name, g) in &grads {
            for (which, analytic) in [(0, &g.weight), (1, &g.bias)] {
                for i in 0..analytic.numel() {
                    let eval = |delta: f32| {
                        let mut p = w.clone();
                        let lp = p.get_mut(name).unwrap();
                        let t = if which == 0 {
                            &mut lp.weight
                        } else {
                            &mut lp.bias
                        };
                        t.data_mut()[i] += delta;
                        loss(&spec, &p, &batch).unwrap() as f64
                    };
                    let a = analytic.data()[i] as f64;
                    let up = (eval(h) - base) / h as f64;
                    let down = (base - eval(-h)) / h as f64;
                    let central = 0.5 * (up + down);
                    total += 1;
                    let ok = if (up - down).abs() <= tol(up, down) {
                        (a - central).abs() <= tol(a, central)
                    } else {
                        kinks += 1;
                        a >= up.min(down) - tol(a, up) && a <= up.max(down) + tol(a, down)
                    };
                    if !ok {
                        bad.push(format!(
                            "seed {seed} {name}[{which}][{i}]: {a} vs {up}/{down}"
                        ));
                    }
                }
            }
        }
    }
    assert!(bad.is_empty(), "{bad:#?}");
    assert!(
        kinks * 10 < total,
        "{kinks} of {total} coordinates straddle a kink"
    );
}
