//! Network topology, parameters, accounting and evaluation.

pub mod accounting;
pub mod forward;
pub mod spec;
pub mod weights;
pub mod zoo;

pub use accounting::{
    bytes_to_mb, count_flops, count_params, filter_counts, model_size_bytes, Counts, LayerCount,
};
pub use forward::{accuracy, forward, forward_all, loss, loss_and_grad, predict, HeadOutput};
pub use spec::{Consumer, LayerKind, LayerSpec, NetworkSpec, SliceRule, INPUT};
pub use weights::{LayerParams, ParamMap, ThresholdRecord, WeightSet, WeightTag};
