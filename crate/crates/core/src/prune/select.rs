use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{sparsity_level, FilterChoice, PruneDecision, Reason, SelectionThresholds};
use crate::error::{Error, Result};
use crate::network::{LayerKind, NetworkSpec, WeightSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    /// Selected filters (and their consumer slices) are removed from the
    /// working copy before the next layer is examined.
    #[default]
    Progressive,
    /// Every layer is judged against the unmodified input.
    Snapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectOptions {
    pub mode: SelectMode,
    /// Filters that must survive in every layer. When more would be
    /// selected, the least sparse selections are dropped. Zero disables the
    /// guard.
    pub keep_min: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            mode: SelectMode::Progressive,
            keep_min: 1,
        }
    }
}

/// `F_i` of conv layer `layer` and, if the layer has a conv successor, the
/// successor's input-channel-`i` slice `G_i`.
pub fn filter_slices(
    spec: &NetworkSpec,
    weights: &WeightSet,
    layer: &str,
    i: usize,
) -> Result<(Tensor, Option<Tensor>)> {
    let f = weights.get(layer)?.weight.slice_axis(0, i)?;
    let g = match spec.conv_successor(layer)? {
        Some(next) => Some(weights.get(&next)?.weight.slice_axis(1, i)?),
        None => None,
    };
    Ok((f, g))
}

/// Chooses filters to remove from each conv layer of `layers`, in order.
/// Non-conv entries are skipped. One decision is returned per conv layer,
/// possibly empty.
pub fn select_filters(
    spec: &NetworkSpec,
    theta_th: &WeightSet,
    layers: &[String],
    thresholds: &SelectionThresholds,
    opts: &SelectOptions,
) -> Result<Vec<PruneDecision>> {
    thresholds.validate()?;
    let mut working: BTreeMap<&str, Tensor> = BTreeMap::new();
    let mut decisions = Vec::new();
    for layer in layers {
        if !matches!(spec.layer(layer)?.kind, LayerKind::Conv { .. }) {
            continue;
        }
        let next = spec.conv_successor(layer)?;
        let w = working
            .get(layer.as_str())
            .cloned()
            .unwrap_or(theta_th.get(layer)?.weight.clone());
        let g = match &next {
            Some(n) => Some(
                working
                    .get(n.as_str())
                    .cloned()
                    .unwrap_or(theta_th.get(n)?.weight.clone()),
            ),
            None => None,
        };
        let mut chosen = Vec::new();
        for i in 0..w.dim(0) {
            let sf = sparsity_level(&w.slice_axis(0, i)?)?;
            let sg = match &g {
                Some(g) => Some(sparsity_level(&g.slice_axis(1, i)?)?),
                None => None,
            };
            let reason = if sf >= thresholds.s_f {
                Some(Reason::Cond1)
            } else if sf >= thresholds.s_f_prime && sg.is_some_and(|sg| sg >= thresholds.s_g) {
                Some(Reason::Cond2)
            } else {
                None
            };
            if let Some(reason) = reason {
                chosen.push(FilterChoice {
                    index: i,
                    reason,
                    splevel_f: sf,
                    splevel_g: sg,
                });
            }
        }
        let limit = w.dim(0).saturating_sub(opts.keep_min);
        if opts.keep_min > 0 && chosen.len() > limit {
            log::warn!(
                "`{layer}`: {} of {} filters qualify; keeping {}",
                chosen.len(),
                w.dim(0),
                opts.keep_min
            );
            // most sparse first, ties by index
            chosen.sort_by(|a, b| {
                b.splevel_f
                    .total_cmp(&a.splevel_f)
                    .then(a.index.cmp(&b.index))
            });
            chosen.truncate(limit);
        }
        let decision = PruneDecision::new(layer.clone(), chosen)?;
        if opts.mode == SelectMode::Progressive && !decision.is_empty() {
            let idx = decision.indices();
            working.insert(layer.as_str(), w.remove(0, &idx)?);
            if let (Some(n), Some(g)) = (&next, g) {
                let n = spec.layer(n)?.name.as_str();
                working.insert(n, g.remove(1, &idx)?);
            }
        }
        decisions.push(decision);
    }
    if decisions.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no conv layers to select from in {layers:?}"
        )));
    }
    Ok(decisions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{zoo, LayerSpec, INPUT};

    fn chain() -> NetworkSpec {
        NetworkSpec::new(
            [2, 4, 4],
            vec![
                LayerSpec::conv("c1", INPUT, 3, 3, 1),
                LayerSpec::conv("c2", "c1", 2, 3, 1),
                LayerSpec::head("h", "c2", 2),
            ],
        )
        .unwrap()
    }

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    /// Zeroes `rows` rows (of 3) in channel-row order of a 3x3 kernel stack.
    fn zero_rows(t: &mut Tensor, filter_axis: usize, i: usize, rows: usize) {
        let shape = t.shape().to_vec();
        let k = shape[3];
        let mut zeroed = 0;
        for a in 0..shape[0] {
            for b in 0..shape[1] {
                let hit = if filter_axis == 0 { a == i } else { b == i };
                if !hit {
                    continue;
                }
                for r in 0..shape[2] {
                    if zeroed == rows {
                        return;
                    }
                    let start = ((a * shape[1] + b) * shape[2] + r) * k;
                    t.data_mut()[start..start + k].fill(0.0);
                    zeroed += 1;
                }
            }
        }
    }

    #[test]
    fn cond1_and_cond2_and_neither() {
        let spec = chain();
        let mut w = WeightSet::init(&spec, 1).unwrap();
        // c1 filters span 2*3 = 6 rows; c2 slices span 2*3 = 6 rows
        {
            let c1 = &mut w.get_mut("c1").unwrap().weight;
            zero_rows(c1, 0, 0, 6); // 1.0
            zero_rows(c1, 0, 1, 5); // 0.833
            zero_rows(c1, 0, 2, 5);
        }
        zero_rows(&mut w.get_mut("c2").unwrap().weight, 1, 1, 6);
        let t = SelectionThresholds::new(0.9, 0.8, 0.95).unwrap();
        let opts = SelectOptions {
            keep_min: 0,
            ..Default::default()
        };
        let d = select_filters(&spec, &w, &names(&["c1"]), &t, &opts).unwrap();
        assert_eq!(d.len(), 1);
        let got: Vec<(usize, Reason)> = d[0].filters.iter().map(|f| (f.index, f.reason)).collect();
        assert_eq!(got, vec![(0, Reason::Cond1), (1, Reason::Cond2)]);
    }

    #[test]
    fn dense_weights_select_nothing() {
        let spec = zoo::desk_net([3, 16, 16], 10).unwrap();
        let w = WeightSet::init(&spec, 3).unwrap();
        let layers: Vec<String> = spec.conv_layers().map(|l| l.name.clone()).collect();
        let d =
            select_filters(&spec, &w, &layers, &Default::default(), &Default::default()).unwrap();
        assert!(d.iter().all(|d| d.is_empty()));
    }

    #[test]
    fn last_layer_uses_cond1_only() {
        let spec = chain();
        let mut w = WeightSet::init(&spec, 1).unwrap();
        zero_rows(&mut w.get_mut("c2").unwrap().weight, 0, 0, 8); // 8/9
        let t = SelectionThresholds::new(0.95, 0.5, 0.0).unwrap();
        let d = select_filters(&spec, &w, &names(&["c2"]), &t, &Default::default()).unwrap();
        assert!(d[0].is_empty());
        assert_eq!(
            select_filters(
                &spec,
                &w,
                &names(&["c2"]),
                &SelectionThresholds::new(0.85, 0.5, 0.0).unwrap(),
                &Default::default()
            )
            .unwrap()[0]
                .indices(),
            vec![0]
        );
    }

    #[test]
    fn keep_min_guards_the_layer() {
        let spec = chain();
        let mut w = WeightSet::init(&spec, 1).unwrap();
        w.get_mut("c1").unwrap().weight.data_mut().fill(0.0);
        let layers = names(&["c1"]);
        let t = SelectionThresholds::default();
        let all = select_filters(
            &spec,
            &w,
            &layers,
            &t,
            &SelectOptions {
                keep_min: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(all[0].len(), 3);
        let guarded = select_filters(&spec, &w, &layers, &t, &Default::default()).unwrap();
        assert_eq!(guarded[0].indices(), vec![0, 1]);
    }

    #[test]
    fn progressive_differs_from_snapshot() {
        // removing c1's filter 0 strips the only dense rows of c2's filter 0
        let spec = chain();
        let mut w = WeightSet::init(&spec, 1).unwrap();
        let c1 = &mut w.get_mut("c1").unwrap().weight;
        zero_rows(c1, 0, 0, 6);
        let c2 = &mut w.get_mut("c2").unwrap().weight;
        zero_rows(c2, 0, 0, 9);
        // restore one row of c2 filter 0 in input channel 0
        c2.data_mut()[0] = 1.0;
        let layers = names(&["c1", "c2"]);
        let t = SelectionThresholds::new(0.9, 0.5, 1.0).unwrap();
        let snap = select_filters(
            &spec,
            &w,
            &layers,
            &t,
            &SelectOptions {
                mode: SelectMode::Snapshot,
                keep_min: 0,
            },
        )
        .unwrap();
        let prog = select_filters(
            &spec,
            &w,
            &layers,
            &t,
            &SelectOptions {
                mode: SelectMode::Progressive,
                keep_min: 0,
            },
        )
        .unwrap();
        assert!(snap[1].is_empty()); // 8/9 < 0.9
        assert_eq!(prog[1].indices(), vec![0]); // 6/6 after removal
    }
}
