use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::conv_out_extent;

/// Producer name used by the first layer.
pub const INPUT: &str = "input";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Fc {
        out_features: usize,
    },
    Relu,
    #[serde(rename = "maxpool")]
    MaxPool,
    Flatten,
    /// Classifier output over its (flattened) input feature map.
    Head {
        classes: usize,
    },
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv { .. } | LayerKind::Fc { .. } | LayerKind::Head { .. }
        )
    }

    /// Number of output channels / features for layers that own filters.
    pub fn outputs(&self) -> Option<usize> {
        match *self {
            LayerKind::Conv { out_channels, .. } => Some(out_channels),
            LayerKind::Fc { out_features } => Some(out_features),
            LayerKind::Head { classes } => Some(classes),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Fc { .. } => "fc",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Head { .. } => "head",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    /// Producer layer name, or [`INPUT`].
    pub input: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, input: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            input: input.into(),
            kind,
        }
    }

    pub fn conv(name: &str, input: &str, out_channels: usize, kernel: usize, pad: usize) -> Self {
        Self::new(
            name,
            input,
            LayerKind::Conv {
                out_channels,
                kernel,
                stride: 1,
                pad,
            },
        )
    }

    pub fn fc(name: &str, input: &str, out_features: usize) -> Self {
        Self::new(name, input, LayerKind::Fc { out_features })
    }

    pub fn head(name: &str, input: &str, classes: usize) -> Self {
        Self::new(name, input, LayerKind::Head { classes })
    }
}

/// How a producer's output channel `i` maps onto a consumer's weight tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceRule {
    /// Position `i` along weight axis 1 (conv input channel, head or fc input).
    InputChannel,
    /// Columns `[i*width, (i+1)*width)` of a 2-D weight reading a flattened map.
    ColumnBlock { width: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Consumer {
    pub layer: String,
    pub rule: SliceRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[channels, height, width]` of one example.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            input_shape,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn layer(&self, name: &str) -> Result<&LayerSpec> {
        Ok(&self.layers[self.index_of(name)?])
    }

    pub fn heads(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Head { .. }))
    }

    pub fn param_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.kind.has_params())
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
    }

    /// Layers reading `name` directly, in list order.
    pub fn direct_consumers(&self, name: &str) -> Vec<&LayerSpec> {
        self.layers.iter().filter(|l| l.input == name).collect()
    }

    /// Structural checks plus full shape inference.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for layer in &self.layers {
            if layer.name == INPUT {
                return Err(Error::InvalidNetwork(format!(
                    "`{INPUT}` is reserved and cannot name a layer"
                )));
            }
            if layer.input != INPUT && !seen.contains(layer.input.as_str()) {
                return Err(Error::InvalidNetwork(format!(
                    "layer `{}` reads `{}`, which is not defined before it",
                    layer.name, layer.input
                )));
            }
            if !seen.insert(&layer.name) {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate layer name `{}`",
                    layer.name
                )));
            }
            if let Some(0) = layer.kind.outputs() {
                return Err(Error::InvalidNetwork(format!(
                    "layer `{}` has no outputs",
                    layer.name
                )));
            }
        }
        if self.heads().next().is_none() {
            return Err(Error::InvalidNetwork("network has no head".into()));
        }
        for head in self.heads() {
            if !self.direct_consumers(&head.name).is_empty() {
                return Err(Error::InvalidNetwork(format!(
                    "head `{}` must not feed other layers",
                    head.name
                )));
            }
        }
        self.output_shapes().map(|_| ())
    }

    /// Per-example output shape of every layer (`[c,h,w]` or `[d]`), in list order.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut by_name: HashMap<&str, Vec<usize>> = HashMap::new();
        by_name.insert(INPUT, self.input_shape.to_vec());
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let inp = by_name
                .get(layer.input.as_str())
                .ok_or_else(|| Error::UnknownLayer(layer.input.clone()))?
                .clone();
            let shape = match layer.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    let [_, h, w] = spatial(&layer.name, &inp)?;
                    let fits = conv_out_extent(h, kernel, stride, pad)
                        .zip(conv_out_extent(w, kernel, stride, pad));
                    let (ho, wo) = fits.ok_or_else(|| {
                        Error::InvalidNetwork(format!(
                            "conv `{}`: kernel {kernel} does not fit {h}x{w}",
                            layer.name
                        ))
                    })?;
                    vec![out_channels, ho, wo]
                }
                LayerKind::MaxPool => {
                    let [c, h, w] = spatial(&layer.name, &inp)?;
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::InvalidNetwork(format!(
                            "maxpool `{}` needs even spatial dims, got {h}x{w}",
                            layer.name
                        )));
                    }
                    vec![c, h / 2, w / 2]
                }
                LayerKind::Relu => inp.clone(),
                LayerKind::Flatten => vec![inp.iter().product()],
                LayerKind::Fc { out_features } => {
                    if inp.len() != 1 {
                        return Err(Error::InvalidNetwork(format!(
                            "fc `{}` needs a flat input, got {inp:?}",
                            layer.name
                        )));
                    }
                    vec![out_features]
                }
                LayerKind::Head { classes } => vec![classes],
            };
            by_name.insert(&layer.name, shape.clone());
            out.push(shape);
        }
        Ok(out)
    }

    /// Per-example input shape of every layer, in list order.
    pub fn input_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let outs = self.output_shapes()?;
        self.layers
            .iter()
            .map(|l| {
                if l.input == INPUT {
                    Ok(self.input_shape.to_vec())
                } else {
                    Ok(outs[self.index_of(&l.input)?].clone())
                }
            })
            .collect()
    }

    /// `(weight shape, bias length)` for every parameterised layer, keyed by name.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>, usize)>> {
        let ins = self.input_shapes()?;
        let mut out = Vec::new();
        for (layer, inp) in self.layers.iter().zip(&ins) {
            let shape = match layer.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    ..
                } => vec![out_channels, inp[0], kernel, kernel],
                LayerKind::Fc { out_features } => vec![out_features, inp[0]],
                LayerKind::Head { classes } => {
                    let mut s = vec![classes];
                    s.extend_from_slice(inp);
                    s
                }
                _ => continue,
            };
            let bias = shape[0];
            out.push((layer.name.clone(), shape, bias));
        }
        Ok(out)
    }

    /// Every parameterised layer whose weights index the output channels of
    /// `name`, looking through relu / maxpool / flatten.
    pub fn consumers_of(&self, name: &str) -> Result<Vec<Consumer>> {
        let layer = self.layer(name)?;
        if !matches!(layer.kind, LayerKind::Conv { .. } | LayerKind::Fc { .. }) {
            return Err(Error::InvalidArgument(format!(
                "`{name}` is a {} layer; only conv and fc outputs have consumers to slice",
                layer.kind.tag()
            )));
        }
        let outs = self.output_shapes()?;
        let mut found = Vec::new();
        self.collect_consumers(name, SliceRule::InputChannel, &outs, &mut found)?;
        Ok(found)
    }

    fn collect_consumers(
        &self,
        from: &str,
        rule: SliceRule,
        outs: &[Vec<usize>],
        found: &mut Vec<Consumer>,
    ) -> Result<()> {
        for c in self.direct_consumers(from) {
            match c.kind {
                LayerKind::Relu | LayerKind::MaxPool => {
                    self.collect_consumers(&c.name, rule, outs, found)?
                }
                LayerKind::Flatten => {
                    let src = &outs[self.index_of(from)?];
                    let width = match rule {
                        SliceRule::InputChannel => src[1..].iter().product(),
                        SliceRule::ColumnBlock { width } => width,
                    };
                    self.collect_consumers(&c.name, SliceRule::ColumnBlock { width }, outs, found)?
                }
                LayerKind::Conv { .. } | LayerKind::Fc { .. } | LayerKind::Head { .. } => {
                    let rule = match rule {
                        SliceRule::ColumnBlock { width: 1 } => SliceRule::InputChannel,
                        r => r,
                    };
                    found.push(Consumer {
                        layer: c.name.clone(),
                        rule,
                    })
                }
            }
        }
        Ok(())
    }

    /// First conv layer fed (through pass-through layers only) by `name`.
    pub fn conv_successor(&self, name: &str) -> Result<Option<String>> {
        Ok(self
            .consumers_of(name)?
            .into_iter()
            .find(|c| {
                c.rule == SliceRule::InputChannel
                    && matches!(
                        self.layer(&c.layer).map(|l| &l.kind),
                        Ok(LayerKind::Conv { .. })
                    )
            })
            .map(|c| c.layer))
    }

    /// Names of `name` and everything upstream of it.
    pub fn ancestors_inclusive(&self, name: &str) -> Result<BTreeSet<String>> {
        let mut set = BTreeSet::new();
        let mut cur = name.to_string();
        while cur != INPUT {
            let l = self.layer(&cur)?;
            set.insert(cur.clone());
            cur = l.input.clone();
        }
        Ok(set)
    }

    pub fn set_outputs(&mut self, name: &str, n: usize) -> Result<()> {
        let idx = self.index_of(name)?;
        match &mut self.layers[idx].kind {
            LayerKind::Conv { out_channels, .. } => *out_channels = n,
            LayerKind::Fc { out_features } => *out_features = n,
            LayerKind::Head { classes } => *classes = n,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "`{name}` has no output count"
                )))
            }
        }
        Ok(())
    }
}

fn spatial(layer: &str, shape: &[usize]) -> Result<[usize; 3]> {
    match *shape {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::InvalidNetwork(format!(
            "layer `{layer}` needs a [c,h,w] input, got {shape:?}"
        ))),
    }
}
