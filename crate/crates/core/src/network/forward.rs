//! Forward evaluation and reverse-mode gradients over a [`NetworkSpec`].
//!
//! Layers are evaluated in list order, which is a topological order by
//! construction. The training loss is the sum of per-head mean softmax
//! cross-entropies; prediction takes the argmax of the summed per-head
//! log-probabilities.

use rayon::prelude::*;

use super::spec::{LayerKind, NetworkSpec, INPUT};
use super::weights::{LayerParams, ParamMap, WeightSet};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{pairwise_sum, Tensor};

/// Logits of one head, `[n, classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub head: String,
    pub logits: Tensor,
}

fn check_input(spec: &NetworkSpec, inputs: &Tensor) -> Result<()> {
    if inputs.rank() != 4 || inputs.shape()[1..] != spec.input_shape {
        return Err(Error::shape(
            "forward",
            format!(
                "inputs {:?} do not match network input {:?}",
                inputs.shape(),
                spec.input_shape
            ),
        ));
    }
    Ok(())
}

fn producer_output<'a>(
    spec: &NetworkSpec,
    outputs: &'a [Tensor],
    inputs: &'a Tensor,
    producer: &str,
) -> Result<&'a Tensor> {
    if producer == INPUT {
        Ok(inputs)
    } else {
        Ok(&outputs[spec.index_of(producer)?])
    }
}

/// Output of every layer, aligned with `spec.layers`.
pub fn forward_all(
    spec: &NetworkSpec,
    weights: &WeightSet,
    inputs: &Tensor,
) -> Result<Vec<Tensor>> {
    check_input(spec, inputs)?;
    let mut outputs: Vec<Tensor> = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let x = producer_output(spec, &outputs, inputs, &layer.input)?;
        let y = match layer.kind {
            LayerKind::Conv { stride, pad, .. } => {
                let p = weights.get(&layer.name)?;
                ops::conv2d(x, &p.weight, &p.bias, stride, pad)?
            }
            LayerKind::Fc { .. } | LayerKind::Head { .. } => {
                let p = weights.get(&layer.name)?;
                ops::fc(x, &p.weight, &p.bias)?
            }
            LayerKind::Relu => ops::relu(x),
            LayerKind::MaxPool => ops::maxpool2x2(x)?,
            LayerKind::Flatten => {
                let n = x.dim(0);
                let d = x.numel() / n.max(1);
                x.clone().reshape(&[n, d])?
            }
        };
        outputs.push(y);
    }
    Ok(outputs)
}

pub fn forward(
    spec: &NetworkSpec,
    weights: &WeightSet,
    inputs: &Tensor,
) -> Result<Vec<HeadOutput>> {
    let outputs = forward_all(spec, weights, inputs)?;
    Ok(heads_from(spec, outputs))
}

fn heads_from(spec: &NetworkSpec, outputs: Vec<Tensor>) -> Vec<HeadOutput> {
    spec.layers
        .iter()
        .zip(outputs)
        .filter(|(l, _)| matches!(l.kind, LayerKind::Head { .. }))
        .map(|(l, logits)| HeadOutput {
            head: l.name.clone(),
            logits,
        })
        .collect()
}

/// Per-head mean cross-entropy, in head order.
pub fn head_losses(spec: &NetworkSpec, weights: &WeightSet, batch: &Batch) -> Result<Vec<f32>> {
    forward(spec, weights, &batch.inputs)?
        .iter()
        .map(|h| ops::softmax_xent(&h.logits, &batch.labels).map(|(l, _)| l))
        .collect()
}

pub fn loss(spec: &NetworkSpec, weights: &WeightSet, batch: &Batch) -> Result<f32> {
    Ok(pairwise_sum(&head_losses(spec, weights, batch)?))
}

/// Summed head loss and its gradient with respect to every parameter.
pub fn loss_and_grad(
    spec: &NetworkSpec,
    weights: &WeightSet,
    batch: &Batch,
) -> Result<(f32, ParamMap)> {
    let outputs = forward_all(spec, weights, &batch.inputs)?;
    let mut grads: Vec<Option<Tensor>> = vec![None; spec.layers.len()];
    let mut losses = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        if let LayerKind::Head { .. } = layer.kind {
            let (l, g) = ops::softmax_xent(&outputs[i], &batch.labels)?;
            losses.push(l);
            grads[i] = Some(g);
        }
    }

    let mut param_grads = weights.zeros_like();
    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let Some(g) = grads[i].take() else {
            continue;
        };
        let x = producer_output(spec, &outputs, &batch.inputs, &layer.input)?;
        let gx = match layer.kind {
            LayerKind::Conv { stride, pad, .. } => {
                let p = weights.get(&layer.name)?;
                let cg = ops::conv2d_grad(x, &p.weight, stride, pad, &g)?;
                param_grads.insert(
                    layer.name.clone(),
                    LayerParams {
                        weight: cg.weights,
                        bias: cg.bias,
                    },
                );
                cg.input
            }
            LayerKind::Fc { .. } | LayerKind::Head { .. } => {
                let p = weights.get(&layer.name)?;
                let fg = ops::fc_grad(x, &p.weight, &g)?;
                param_grads.insert(
                    layer.name.clone(),
                    LayerParams {
                        weight: fg.weights,
                        bias: fg.bias,
                    },
                );
                fg.input
            }
            LayerKind::Relu => ops::relu_grad(x, &g)?,
            LayerKind::MaxPool => ops::maxpool2x2_grad(x, &g)?,
            LayerKind::Flatten => g.reshape(x.shape())?,
        };
        if layer.input != INPUT {
            let j = spec.index_of(&layer.input)?;
            match &mut grads[j] {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(gx.data()) {
                        *a += b;
                    }
                }
                slot => *slot = Some(gx),
            }
        }
    }
    Ok((pairwise_sum(&losses), param_grads))
}

fn log_softmax_row(row: &[f32]) -> Vec<f32> {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f32>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Argmax of the summed per-head log-probabilities.
pub fn predict(spec: &NetworkSpec, weights: &WeightSet, inputs: &Tensor) -> Result<Vec<usize>> {
    let heads = forward(spec, weights, inputs)?;
    let n = inputs.dim(0);
    let classes = heads[0].logits.dim(1);
    if heads.iter().any(|h| h.logits.dim(1) != classes) {
        return Err(Error::InvalidNetwork(
            "heads disagree on the number of classes".into(),
        ));
    }
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let mut score = vec![0.0f32; classes];
        for h in &heads {
            let row = &h.logits.data()[i * classes..(i + 1) * classes];
            for (s, v) in score.iter_mut().zip(log_softmax_row(row)) {
                *s += v;
            }
        }
        let best = score
            .iter()
            .enumerate()
            .fold(
                (0, f32::NEG_INFINITY),
                |acc, (c, &v)| if v > acc.1 { (c, v) } else { acc },
            );
        preds.push(best.0);
    }
    Ok(preds)
}

const EVAL_CHUNK: usize = 250;

/// Top-1 accuracy in percent.
pub fn accuracy(spec: &NetworkSpec, weights: &WeightSet, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let chunks = batch.chunks(EVAL_CHUNK)?;
    let correct: Vec<usize> = chunks
        .par_iter()
        .map(|c| {
            let preds = predict(spec, weights, &c.inputs)?;
            Ok(preds.iter().zip(&c.labels).filter(|(p, l)| p == l).count())
        })
        .collect::<Result<_>>()?;
    Ok(100.0 * correct.iter().sum::<usize>() as f64 / batch.len() as f64)
}

/// Mean summed-head loss over a batch evaluated in chunks.
pub fn mean_loss(spec: &NetworkSpec, weights: &WeightSet, batch: &Batch) -> Result<f64> {
    let chunks = batch.chunks(EVAL_CHUNK)?;
    let mut total = 0.0f64;
    for c in &chunks {
        total += loss(spec, weights, c)? as f64 * c.len() as f64;
    }
    Ok(total / batch.len().max(1) as f64)
}
