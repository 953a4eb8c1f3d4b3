//! Filter selection from zero-row statistics and structural surgery.

mod select;
mod surgery;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use select::{filter_slices, select_filters, SelectMode, SelectOptions};
pub use surgery::{drop_tail_layers, prune_fc_neurons, prune_filters, random_prune};

/// Fraction of all-zero rows in a `[c, kh, kw]` slice, where a row is the
/// `kw` vector at a fixed channel and row index. An empty slice counts as
/// fully sparse.
pub fn sparsity_level(slice: &Tensor) -> Result<f64> {
    let [c, kh, kw] = match *slice.shape() {
        [c, kh, kw] => [c, kh, kw],
        _ => {
            return Err(Error::shape(
                "sparsity_level",
                format!("expected a [c, k, k] slice, got {:?}", slice.shape()),
            ))
        }
    };
    if kw == 0 {
        return Err(Error::shape("sparsity_level", "kernel width is zero"));
    }
    let rows = c * kh;
    if rows == 0 {
        return Ok(1.0);
    }
    let zero = slice
        .data()
        .chunks_exact(kw)
        .filter(|r| r.iter().all(|&v| v == 0.0))
        .count();
    Ok(zero as f64 / rows as f64)
}

/// `s_F`, `s'_F` and `s_G` of the selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionThresholds {
    pub s_f: f64,
    pub s_f_prime: f64,
    pub s_g: f64,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        Self {
            s_f: 0.9,
            s_f_prime: 0.85,
            s_g: 0.95,
        }
    }
}

impl SelectionThresholds {
    pub fn new(s_f: f64, s_f_prime: f64, s_g: f64) -> Result<Self> {
        let t = Self {
            s_f,
            s_f_prime,
            s_g,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("s_f", self.s_f),
            ("s_f_prime", self.s_f_prime),
            ("s_g", self.s_g),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.s_f <= self.s_f_prime {
            return Err(Error::Config(format!(
                "s_f ({}) must exceed s_f_prime ({})",
                self.s_f, self.s_f_prime
            )));
        }
        Ok(())
    }
}

/// Every valid `(s_F, s'_F, s_G)` triple over `steps` evenly spaced values
/// in `[0.70, 0.99]`.
pub fn selection_grid(steps: usize) -> Vec<SelectionThresholds> {
    let values: Vec<f64> = match steps {
        0 => vec![],
        1 => vec![0.70],
        n => (0..n)
            .map(|i| 0.70 + 0.29 * i as f64 / (n - 1) as f64)
            .collect(),
    };
    let mut out = Vec::new();
    for &s_f in &values {
        for &s_f_prime in values.iter().filter(|&&v| v < s_f) {
            for &s_g in &values {
                out.push(SelectionThresholds {
                    s_f,
                    s_f_prime,
                    s_g,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    /// The filter itself is sparse enough.
    Cond1,
    /// The filter is nearly sparse enough and its consumer slice is sparse.
    Cond2,
    RandomBaseline,
    /// Fully connected neuron with an all-zero incoming row.
    FcZeroIn,
    /// Fully connected neuron whose outgoing weights are all zero.
    FcZeroOut,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Cond1 => "cond1",
            Reason::Cond2 => "cond2",
            Reason::RandomBaseline => "random_baseline",
            Reason::FcZeroIn => "fc_zero_in",
            Reason::FcZeroOut => "fc_zero_out",
        }
    }
}

impl std::fmt::Display for Reason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Reason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cond1" => Reason::Cond1,
            "cond2" => Reason::Cond2,
            "random_baseline" => Reason::RandomBaseline,
            "fc_zero_in" => Reason::FcZeroIn,
            "fc_zero_out" => Reason::FcZeroOut,
            _ => return Err(Error::Format(format!("unknown prune reason `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterChoice {
    pub index: usize,
    pub reason: Reason,
    pub splevel_f: f64,
    /// `None` when the layer has no conv successor to read from.
    pub splevel_g: Option<f64>,
}

/// Output units of one layer to delete, indexed against the layer as it was
/// before pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    pub layer: String,
    /// Sorted by index, no duplicates.
    pub filters: Vec<FilterChoice>,
}

impl PruneDecision {
    pub fn new(layer: impl Into<String>, mut filters: Vec<FilterChoice>) -> Result<Self> {
        let layer = layer.into();
        filters.sort_by_key(|f| f.index);
        if filters.windows(2).any(|w| w[0].index == w[1].index) {
            return Err(Error::InvalidArgument(format!(
                "duplicate filter index in decision for `{layer}`"
            )));
        }
        Ok(Self { layer, filters })
    }

    pub fn indices(&self) -> Vec<usize> {
        self.filters.iter().map(|f| f.index).collect()
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }
}
