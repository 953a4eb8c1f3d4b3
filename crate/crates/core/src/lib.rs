#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod io;
pub mod network;
pub mod ops;
pub mod optim;
pub mod pipeline;
pub mod prune;
pub mod sparsify;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
