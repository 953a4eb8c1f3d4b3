//! Stock architectures.

use super::spec::{LayerKind, LayerSpec, NetworkSpec, INPUT};
use crate::error::{Error, Result};

pub const VGG16_CONV_WIDTHS: [usize; 13] = [
    64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512,
];

const VGG16_CONV_NAMES: [&str; 13] = [
    "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv4_1",
    "conv4_2", "conv4_3", "conv5_1", "conv5_2", "conv5_3",
];

/// VGG16 with 3x3 same-padded convs, five 2x2 pools and fc6 / fc7 / fc8, where
/// fc8 is the classifier head.
pub fn vgg16(input_hw: usize, conv_widths: [usize; 13], fc: [usize; 3]) -> Result<NetworkSpec> {
    let pool_after = [1usize, 3, 6, 9, 12];
    let mut layers = Vec::new();
    let mut prev = INPUT.to_string();
    for (i, (&name, &width)) in VGG16_CONV_NAMES.iter().zip(&conv_widths).enumerate() {
        layers.push(LayerSpec::conv(name, &prev, width, 3, 1));
        let relu = format!("relu{}", &name[4..]);
        layers.push(LayerSpec::new(&relu, name, LayerKind::Relu));
        prev = relu;
        if pool_after.contains(&i) {
            let pool = format!("pool{}", &name[4..5]);
            layers.push(LayerSpec::new(&pool, &prev, LayerKind::MaxPool));
            prev = pool;
        }
    }
    layers.push(LayerSpec::new("flatten", &prev, LayerKind::Flatten));
    layers.push(LayerSpec::fc("fc6", "flatten", fc[0]));
    layers.push(LayerSpec::new("relu6", "fc6", LayerKind::Relu));
    layers.push(LayerSpec::fc("fc7", "relu6", fc[1]));
    layers.push(LayerSpec::new("relu7", "fc7", LayerKind::Relu));
    layers.push(LayerSpec::head("fc8", "relu7", fc[2]));
    NetworkSpec::new([3, input_hw, input_hw], layers)
}

/// Widths of the eight conv layers of [`desk_net`].
pub const DESK_CONV_WIDTHS: [usize; 8] = [16, 16, 32, 32, 32, 32, 64, 64];

/// Eight 3x3 convs in four blocks, two fc layers and two classifier heads: one
/// reading the block-3 feature map and one after the fc stack.
///
/// ```text
/// conv1 conv2 pool1 | conv3 conv4 pool2 | conv5 conv6 -> head1
///                                       | pool3 conv7 conv8 flatten fc1 fc2 -> head2
/// ```
pub fn desk_net(input: [usize; 3], classes: usize) -> Result<NetworkSpec> {
    desk_net_with(input, classes, DESK_CONV_WIDTHS, [64, 32])
}

pub fn desk_net_with(
    input: [usize; 3],
    classes: usize,
    conv: [usize; 8],
    fc: [usize; 2],
) -> Result<NetworkSpec> {
    if !input[1].is_multiple_of(8) || !input[2].is_multiple_of(8) {
        return Err(Error::InvalidArgument(format!(
            "desk net needs spatial dims divisible by 8, got {}x{}",
            input[1], input[2]
        )));
    }
    let mut l = Vec::new();
    let relu = |n: usize, from: &str| LayerSpec::new(format!("relu{n}"), from, LayerKind::Relu);
    let pool = |n: usize, from: &str| LayerSpec::new(format!("pool{n}"), from, LayerKind::MaxPool);
    l.push(LayerSpec::conv("conv1", INPUT, conv[0], 3, 1));
    l.push(relu(1, "conv1"));
    l.push(LayerSpec::conv("conv2", "relu1", conv[1], 3, 1));
    l.push(relu(2, "conv2"));
    l.push(pool(1, "relu2"));
    l.push(LayerSpec::conv("conv3", "pool1", conv[2], 3, 1));
    l.push(relu(3, "conv3"));
    l.push(LayerSpec::conv("conv4", "relu3", conv[3], 3, 1));
    l.push(relu(4, "conv4"));
    l.push(pool(2, "relu4"));
    l.push(LayerSpec::conv("conv5", "pool2", conv[4], 3, 1));
    l.push(relu(5, "conv5"));
    l.push(LayerSpec::conv("conv6", "relu5", conv[5], 3, 1));
    l.push(relu(6, "conv6"));
    l.push(LayerSpec::head("head1", "relu6", classes));
    l.push(pool(3, "relu6"));
    l.push(LayerSpec::conv("conv7", "pool3", conv[6], 3, 1));
    l.push(relu(7, "conv7"));
    l.push(LayerSpec::conv("conv8", "relu7", conv[7], 3, 1));
    l.push(relu(8, "conv8"));
    l.push(LayerSpec::new("flatten", "relu8", LayerKind::Flatten));
    l.push(LayerSpec::fc("fc1", "flatten", fc[0]));
    l.push(relu(9, "fc1"));
    l.push(LayerSpec::fc("fc2", "relu9", fc[1]));
    l.push(relu(10, "fc2"));
    l.push(LayerSpec::head("head2", "relu10", classes));
    NetworkSpec::new(input, l)
}

/// Looks up a stock architecture by name.
pub fn builtin(name: &str, input: [usize; 3], classes: usize) -> Result<NetworkSpec> {
    match name {
        "desk" => desk_net(input, classes),
        "vgg16" => vgg16(input[1], VGG16_CONV_WIDTHS, [4096, 4096, classes]),
        other => Err(Error::InvalidArgument(format!(
            "unknown builtin network `{other}` (expected `desk` or `vgg16`)"
        ))),
    }
}
