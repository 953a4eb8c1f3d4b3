use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sparsity_level, FilterChoice, PruneDecision, Reason};
use crate::error::{Error, Result};
use crate::network::{
    LayerKind, LayerParams, LayerSpec, NetworkSpec, SliceRule, WeightSet, WeightTag,
};
use crate::tensor::Tensor;

fn consumer_columns(rule: SliceRule, idx: &[usize]) -> Vec<usize> {
    match rule {
        SliceRule::InputChannel => idx.to_vec(),
        SliceRule::ColumnBlock { width } => idx
            .iter()
            .flat_map(|&i| i * width..(i + 1) * width)
            .collect(),
    }
}

fn output_count(spec: &NetworkSpec, layer: &str) -> Result<usize> {
    match spec.layer(layer)?.kind {
        LayerKind::Conv { out_channels, .. } => Ok(out_channels),
        LayerKind::Fc { out_features } => Ok(out_features),
        ref k => Err(Error::InvalidArgument(format!(
            "cannot prune outputs of `{layer}`, a {} layer",
            k.tag()
        ))),
    }
}

/// Deletes the chosen filters (or fc neurons) and every weight slice that
/// reads them. Surviving values are copied from `theta_l1`.
pub fn prune_filters(
    spec: &NetworkSpec,
    theta_l1: &WeightSet,
    decisions: &[PruneDecision],
) -> Result<(NetworkSpec, WeightSet)> {
    theta_l1.check(spec)?;
    let mut spec = spec.clone();
    let mut w = theta_l1.clone().with_tag(WeightTag::ThetaC);
    let mut seen = BTreeSet::new();
    for d in decisions.iter().filter(|d| !d.is_empty()) {
        if !seen.insert(d.layer.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "more than one decision for `{}`",
                d.layer
            )));
        }
        let c = output_count(&spec, &d.layer)?;
        let idx = d.indices();
        if let Some(bad) = idx.iter().find(|&&i| i >= c) {
            return Err(Error::InvalidArgument(format!(
                "filter {bad} out of range for `{}` with {c} outputs",
                d.layer
            )));
        }
        if idx.len() >= c {
            return Err(Error::EmptyLayer(d.layer.clone()));
        }
        let p = w.get_mut(&d.layer)?;
        p.weight = p.weight.remove(0, &idx)?;
        p.bias = p.bias.remove(0, &idx)?;
        for consumer in spec.consumers_of(&d.layer)? {
            let cols = consumer_columns(consumer.rule, &idx);
            let q = w.get_mut(&consumer.layer)?;
            q.weight = q.weight.remove(1, &cols)?;
        }
        spec.set_outputs(&d.layer, c - idx.len())?;
    }
    spec.validate()?;
    w.check(&spec)?;
    Ok((spec, w))
}

fn zero_fraction(values: impl Iterator<Item = f32>) -> f64 {
    let (mut zero, mut n) = (0usize, 0usize);
    for v in values {
        n += 1;
        zero += usize::from(v == 0.0);
    }
    if n == 0 {
        1.0
    } else {
        zero as f64 / n as f64
    }
}

/// Removes fc neurons whose incoming row, or whose outgoing columns in every
/// consumer, are all zero in `theta_th`. Layers are visited in order and each
/// layer's removals are applied to the working copy before the next one is
/// judged. Surviving values come from `theta_l1`.
pub fn prune_fc_neurons(
    spec: &NetworkSpec,
    theta_th: &WeightSet,
    theta_l1: &WeightSet,
    fc_layers: &[String],
) -> Result<(NetworkSpec, WeightSet, Vec<PruneDecision>)> {
    theta_th.check(spec)?;
    let mut working: BTreeMap<String, Tensor> = BTreeMap::new();
    let current = |working: &BTreeMap<String, Tensor>, name: &str| -> Result<Tensor> {
        Ok(match working.get(name) {
            Some(t) => t.clone(),
            None => theta_th.get(name)?.weight.clone(),
        })
    };
    let mut decisions = Vec::new();
    for layer in fc_layers {
        if !matches!(spec.layer(layer)?.kind, LayerKind::Fc { .. }) {
            return Err(Error::InvalidArgument(format!(
                "`{layer}` is not an fc layer"
            )));
        }
        let w = current(&working, layer)?;
        let (out, inp) = (w.dim(0), w.dim(1));
        let consumers: Vec<(String, SliceRule, Tensor)> = spec
            .consumers_of(layer)?
            .into_iter()
            .map(|c| Ok((c.layer.clone(), c.rule, current(&working, &c.layer)?)))
            .collect::<Result<_>>()?;
        let mut chosen = Vec::new();
        for j in 0..out {
            let row = &w.data()[j * inp..(j + 1) * inp];
            let incoming = zero_fraction(row.iter().copied());
            let outgoing = zero_fraction(consumers.iter().flat_map(|(_, rule, t)| {
                let cols = consumer_columns(*rule, &[j]);
                let n = t.dim(1);
                t.data()
                    .chunks_exact(n)
                    .flat_map(move |r| cols.clone().into_iter().map(move |c| r[c]))
                    .collect::<Vec<_>>()
            }));
            let reason = if incoming == 1.0 {
                Some(Reason::FcZeroIn)
            } else if !consumers.is_empty() && outgoing == 1.0 {
                Some(Reason::FcZeroOut)
            } else {
                None
            };
            if let Some(reason) = reason {
                chosen.push(FilterChoice {
                    index: j,
                    reason,
                    splevel_f: incoming,
                    splevel_g: Some(outgoing),
                });
            }
        }
        if chosen.len() >= out {
            return Err(Error::EmptyLayer(layer.clone()));
        }
        let d = PruneDecision::new(layer.clone(), chosen)?;
        if !d.is_empty() {
            let idx = d.indices();
            working.insert(layer.clone(), w.remove(0, &idx)?);
            for (name, rule, t) in consumers {
                working.insert(name, t.remove(1, &consumer_columns(rule, &idx))?);
            }
        }
        decisions.push(d);
    }
    let (spec, weights) = prune_filters(spec, theta_l1, &decisions)?;
    Ok((spec, weights, decisions))
}

/// Name for an appended head that does not clash with existing layers.
fn fresh_head_name(spec: &NetworkSpec) -> String {
    let mut name = "tail_head".to_string();
    let mut k = 1;
    while spec.index_of(&name).is_ok() {
        k += 1;
        name = format!("tail_head{k}");
    }
    name
}

/// Deletes every layer listed after `after_layer`, except heads whose
/// producer survives. With `replacement_head = Some(classes)` a zero-initialised
/// head is attached to `after_layer`.
pub fn drop_tail_layers(
    spec: &NetworkSpec,
    weights: &WeightSet,
    after_layer: &str,
    replacement_head: Option<usize>,
) -> Result<(NetworkSpec, WeightSet)> {
    let cut = spec.index_of(after_layer)?;
    let mut kept: BTreeSet<&str> = spec.layers[..=cut]
        .iter()
        .map(|l| l.name.as_str())
        .collect();
    let mut layers: Vec<LayerSpec> = spec.layers[..=cut].to_vec();
    for l in &spec.layers[cut + 1..] {
        if matches!(l.kind, LayerKind::Head { .. }) && kept.contains(l.input.as_str()) {
            kept.insert(l.name.as_str());
            layers.push(l.clone());
        }
    }
    if let Some(classes) = replacement_head {
        layers.push(LayerSpec::head(
            &fresh_head_name(spec),
            after_layer,
            classes,
        ));
    }
    if !layers
        .iter()
        .any(|l| matches!(l.kind, LayerKind::Head { .. }))
    {
        return Err(Error::InvalidNetwork(format!(
            "dropping everything after `{after_layer}` leaves no head"
        )));
    }
    let new_spec = NetworkSpec::new(spec.input_shape, layers)?;
    let mut out = weights.clone();
    out.layers.retain(|k, _| kept.contains(k.as_str()));
    for (name, shape, bias) in new_spec.param_shapes()? {
        out.layers.entry(name).or_insert_with(|| LayerParams {
            weight: Tensor::zeros(&shape),
            bias: Tensor::zeros(&[bias]),
        });
    }
    if let Some(rec) = &mut out.threshold {
        rec.layers.retain(|l| kept.contains(l.as_str()));
    }
    out.check(&new_spec)?;
    Ok((new_spec, out))
}

/// Removes `floor(fraction * c_l)` uniformly chosen outputs from each listed
/// conv or fc layer.
pub fn random_prune(
    spec: &NetworkSpec,
    weights: &WeightSet,
    fraction: f64,
    layers: &[String],
    seed: u64,
) -> Result<(NetworkSpec, WeightSet, Vec<PruneDecision>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in [0, 1), got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decisions = Vec::new();
    for layer in layers {
        let c = output_count(spec, layer)?;
        let n = (fraction * c as f64).floor() as usize;
        let mut idx = rand::seq::index::sample(&mut rng, c, n).into_vec();
        idx.sort_unstable();
        let w = &weights.get(layer)?.weight;
        let choices = idx
            .into_iter()
            .map(|i| {
                let unit = w.slice_axis(0, i)?;
                let splevel_f = if unit.rank() == 3 {
                    sparsity_level(&unit)?
                } else {
                    zero_fraction(unit.data().iter().copied())
                };
                Ok(FilterChoice {
                    index: i,
                    reason: Reason::RandomBaseline,
                    splevel_f,
                    splevel_g: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        decisions.push(PruneDecision::new(layer.clone(), choices)?);
    }
    let (spec, weights) = prune_filters(spec, weights, &decisions)?;
    Ok((spec, weights, decisions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{count_params, forward, zoo};

    fn decision(layer: &str, idx: &[usize]) -> PruneDecision {
        PruneDecision::new(
            layer,
            idx.iter()
                .map(|&index| FilterChoice {
                    index,
                    reason: Reason::Cond1,
                    splevel_f: 1.0,
                    splevel_g: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn desk() -> (NetworkSpec, WeightSet) {
        let spec = zoo::desk_net([3, 16, 16], 10).unwrap();
        let w = WeightSet::init(&spec, 5).unwrap();
        (spec, w)
    }

    #[test]
    fn empty_decisions_are_identity() {
        let (spec, w) = desk();
        let (s2, w2) = prune_filters(&spec, &w, &[decision("conv1", &[])]).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(w2.layers, w.layers);
        assert_eq!(w2.tag, WeightTag::ThetaC);
    }

    #[test]
    fn surgery_shapes_cover_every_consumer() {
        let (spec, w) = desk();
        let (s2, w2) = prune_filters(
            &spec,
            &w,
            &[decision("conv6", &[0, 5, 31]), decision("conv8", &[2])],
        )
        .unwrap();
        assert_eq!(w2.get("conv6").unwrap().weight.shape(), &[29, 32, 3, 3]);
        assert_eq!(w2.get("conv7").unwrap().weight.shape()[1], 29);
        assert_eq!(w2.get("head1").unwrap().weight.shape()[1], 29);
        // conv8 output is 2x2 after flatten: fc1 loses one 4-column block
        let fc1 = w2.get("fc1").unwrap().weight.shape().to_vec();
        assert_eq!(fc1, vec![64, 63 * 4]);
        assert!(forward(&s2, &w2, &Tensor::zeros(&[1, 3, 16, 16])).is_ok());
    }

    #[test]
    fn rejects_emptying_and_duplicates() {
        let (spec, w) = desk();
        let all: Vec<usize> = (0..16).collect();
        assert!(matches!(
            prune_filters(&spec, &w, &[decision("conv1", &all)]),
            Err(Error::EmptyLayer(_))
        ));
        assert!(prune_filters(
            &spec,
            &w,
            &[decision("conv1", &[1]), decision("conv1", &[2])]
        )
        .is_err());
        assert!(prune_filters(&spec, &w, &[decision("conv1", &[16])]).is_err());
        assert!(prune_filters(&spec, &w, &[decision("relu1", &[0])]).is_err());
    }

    #[test]
    fn random_prune_counts_and_determinism() {
        let (spec, w) = desk();
        let layers = vec!["conv7".to_string(), "conv8".to_string()];
        let (s, a, _) = random_prune(&spec, &w, 0.5, &layers, 9).unwrap();
        let (_, b, _) = random_prune(&spec, &w, 0.5, &layers, 9).unwrap();
        assert_eq!(a.layers, b.layers);
        assert_eq!(a.get("conv8").unwrap().weight.dim(0), 32);
        assert!(matches!(
            s.layer("conv7").unwrap().kind,
            LayerKind::Conv {
                out_channels: 32,
                ..
            }
        ));
        let (s0, w0, _) = random_prune(&spec, &w, 0.0, &layers, 9).unwrap();
        assert_eq!(s0, spec);
        assert_eq!(w0.layers, w.layers);
        assert!(random_prune(&spec, &w, 1.0, &layers, 9).is_err());
    }

    #[test]
    fn drop_tail_keeps_first_head() {
        let (spec, w) = desk();
        let (s2, w2) = drop_tail_layers(&spec, &w, "relu6", None).unwrap();
        assert_eq!(s2.heads().count(), 1);
        assert!(w2.get("conv7").is_err());
        let x = Tensor::from_fn(&[2, 3, 16, 16], |i| (i as f32 * 0.37).sin());
        let before = forward(&spec, &w, &x).unwrap();
        let after = forward(&s2, &w2, &x).unwrap();
        assert_eq!(before[0], after[0]);
        let total: u64 = s2
            .param_layers()
            .map(|l| count_params(&spec, true).unwrap().get(&l.name).unwrap())
            .sum();
        assert_eq!(count_params(&s2, true).unwrap().total, total);
        // unchanged when cutting after the last layer
        let last = spec.layers.last().unwrap().name.clone();
        let (s3, _) = drop_tail_layers(&spec, &w, &last, None).unwrap();
        assert_eq!(s3, spec);
    }

    #[test]
    fn drop_tail_needs_a_head() {
        let (spec, w) = desk();
        assert!(drop_tail_layers(&spec, &w, "conv3", None).is_err());
        let (s2, w2) = drop_tail_layers(&spec, &w, "relu3", Some(10)).unwrap();
        assert_eq!(s2.heads().count(), 1);
        assert_eq!(w2.get("tail_head").unwrap().weight.count_nonzero(), 0);
    }
}
