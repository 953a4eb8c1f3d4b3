//! SGD with an optional L1 subgradient term on selected layers.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::network::{ParamMap, WeightSet};
use crate::ops::l1_sign;

/// One plain step: `w -= lr * (g + alpha * sign(w))` on the weights of
/// `l1_layers`, `w -= lr * g` everywhere else. Biases never get the L1 term.
pub fn sgd_step_l1(
    weights: &mut WeightSet,
    grads: &ParamMap,
    lr: f32,
    alpha: f32,
    l1_layers: &BTreeSet<String>,
) -> Result<()> {
    let mut opt = Sgd::new(lr, 0.0)?;
    opt.step(weights, grads, alpha, l1_layers)
}

/// SGD with heavy-ball momentum. With `momentum == 0` a step is exactly
/// [`sgd_step_l1`].
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f32,
    momentum: f32,
    velocity: Option<ParamMap>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: None,
        })
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.lr = lr;
    }

    pub fn step(
        &mut self,
        weights: &mut WeightSet,
        grads: &ParamMap,
        alpha: f32,
        l1_layers: &BTreeSet<String>,
    ) -> Result<()> {
        if alpha < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "L1 strength must be non-negative, got {alpha}"
            )));
        }
        let (lr, mu) = (self.lr, self.momentum);
        let use_velocity = mu > 0.0;
        if use_velocity && self.velocity.is_none() {
            self.velocity = Some(weights.zeros_like());
        }
        for (name, p) in weights.layers.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::MissingWeights(name.clone()))?;
            if g.weight.shape() != p.weight.shape() || g.bias.shape() != p.bias.shape() {
                return Err(Error::shape(
                    "sgd step",
                    format!("gradient for `{name}` does not match its parameters"),
                ));
            }
            let a = if l1_layers.contains(name) { alpha } else { 0.0 };
            let vel = self.velocity.as_mut().and_then(|v| v.get_mut(name));
            match vel {
                Some(v) if use_velocity => {
                    for ((w, gw), vw) in p
                        .weight
                        .data_mut()
                        .iter_mut()
                        .zip(g.weight.data())
                        .zip(v.weight.data_mut())
                    {
                        *vw = mu * *vw + gw + a * l1_sign(*w);
                        *w -= lr * *vw;
                    }
                    for ((b, gb), vb) in p
                        .bias
                        .data_mut()
                        .iter_mut()
                        .zip(g.bias.data())
                        .zip(v.bias.data_mut())
                    {
                        *vb = mu * *vb + gb;
                        *b -= lr * *vb;
                    }
                }
                _ => {
                    for (w, gw) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                        *w -= lr * (gw + a * l1_sign(*w));
                    }
                    for (b, gb) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                        *b -= lr * gb;
                    }
                }
            }
        }
        Ok(())
    }
}
