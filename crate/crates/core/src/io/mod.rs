//! Checkpoints, datasets and report files.

pub mod checkpoint;
pub mod cifar;
pub mod reports;
pub mod synth;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::{PhasePlan, RunLog};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use cifar::{load_cifar10, read_cifar_file};
pub use reports::emit_reports;
pub use synth::{synth_dataset, SynthConfig};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_plan(path: &Path) -> Result<PhasePlan> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PhasePlan::from_toml(&text)
}

pub fn save_runlog(path: &Path, log: &RunLog) -> Result<()> {
    write_bytes(path, serde_json::to_string_pretty(log)?.as_bytes())
}

pub fn load_runlog(path: &Path) -> Result<RunLog> {
    Ok(serde_json::from_slice(&read_bytes(path)?)?)
}
