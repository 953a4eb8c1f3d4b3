//! CIFAR-10 binary batches: 3073-byte records, one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixels in row-major order.

use std::path::{Path, PathBuf};

use crate::data::{Batch, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_BYTES: usize = 3073;
pub const IMAGE_BYTES: usize = 3072;
pub const CLASSES: usize = 10;
const SIDE: usize = 32;

/// Raw records of one batch file: labels and planar `u8` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CifarRecords {
    pub labels: Vec<usize>,
    pub pixels: Vec<u8>,
}

impl CifarRecords {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn parse_cifar(bytes: &[u8]) -> Result<CifarRecords> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Format(format!(
            "CIFAR-10 data must be a positive multiple of {RECORD_BYTES} bytes, got {}",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CLASSES {
            return Err(Error::Format(format!("record {i} has label {label}")));
        }
        labels.push(label);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(CifarRecords { labels, pixels })
}

pub fn read_cifar_file(path: &Path) -> Result<CifarRecords> {
    parse_cifar(&super::read_bytes(path)?).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        e => e,
    })
}

fn concat(parts: Vec<CifarRecords>) -> CifarRecords {
    let mut out = CifarRecords {
        labels: Vec::new(),
        pixels: Vec::new(),
    };
    for p in parts {
        out.labels.extend(p.labels);
        out.pixels.extend(p.pixels);
    }
    out
}

/// Per-channel mean and standard deviation of pixels scaled to `[0, 1]`.
pub fn channel_stats(pixels: &[u8]) -> Normalization {
    let mut mean = Vec::with_capacity(3);
    let mut std = Vec::with_capacity(3);
    let plane = SIDE * SIDE;
    for c in 0..3 {
        let values = || {
            pixels
                .chunks_exact(IMAGE_BYTES)
                .flat_map(move |img| img[c * plane..(c + 1) * plane].iter())
                .map(|&p| p as f64 / 255.0)
        };
        let n = values().count().max(1) as f64;
        let m = values().sum::<f64>() / n;
        let var = values().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        mean.push(m as f32);
        std.push(var.sqrt().max(1e-12) as f32);
    }
    Normalization { mean, std }
}

fn to_batch(rec: &CifarRecords, norm: Option<&Normalization>) -> Result<Batch> {
    let plane = SIDE * SIDE;
    let data = rec
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let x = p as f32 / 255.0;
            match norm {
                Some(n) => {
                    let c = (i % IMAGE_BYTES) / plane;
                    (x - n.mean[c]) / n.std[c]
                }
                None => x,
            }
        })
        .collect();
    Batch::new(
        Tensor::new(vec![rec.len(), 3, SIDE, SIDE], data)?,
        rec.labels.clone(),
    )
}

fn training_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if name.starts_with("data_batch_") && name.ends_with(".bin") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!(
            "no data_batch_*.bin files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

/// Loads `data_batch_*.bin` and `test_batch.bin` from `dir`. The last
/// `val_size` training records become the validation split. With `normalize`
/// every split is standardised with the training split's channel statistics.
pub fn load_cifar10(dir: &Path, normalize: bool, val_size: usize) -> Result<Dataset> {
    let mut all = concat(
        training_files(dir)?
            .iter()
            .map(|p| read_cifar_file(p))
            .collect::<Result<_>>()?,
    );
    if val_size >= all.len() {
        return Err(Error::InvalidArgument(format!(
            "validation split of {val_size} leaves no training data out of {}",
            all.len()
        )));
    }
    let keep = all.len() - val_size;
    let val = CifarRecords {
        labels: all.labels.split_off(keep),
        pixels: all.pixels.split_off(keep * IMAGE_BYTES),
    };
    let test = read_cifar_file(&dir.join("test_batch.bin"))?;
    let norm = normalize.then(|| channel_stats(&all.pixels));
    Ok(Dataset {
        train: to_batch(&all, norm.as_ref())?,
        val: to_batch(&val, norm.as_ref())?,
        test: to_batch(&test, norm.as_ref())?,
        classes: CLASSES,
        normalization: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, seed: usize) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..IMAGE_BYTES).map(|i| ((i * 7 + seed * 13) % 256) as u8));
        r
    }

    #[test]
    fn parses_known_record() {
        let mut bytes = record(3, 0);
        bytes.extend(record(9, 1));
        let recs = parse_cifar(&bytes).unwrap();
        assert_eq!(recs.labels, vec![3, 9]);
        let b = to_batch(&recs, None).unwrap();
        assert_eq!(b.inputs.shape(), &[2, 3, 32, 32]);
        // pixel (c=1, y=0, x=5) of record 0 is byte 1 + 1024 + 5
        let expect = (((1024 + 5) * 7) % 256) as f32 / 255.0;
        assert_eq!(b.inputs.data()[1024 + 5], expect);
    }

    #[test]
    fn rejects_bad_sizes_and_labels() {
        assert!(matches!(parse_cifar(&[0u8; 3072]), Err(Error::Format(_))));
        assert!(parse_cifar(&[]).is_err());
        assert!(parse_cifar(&record(10, 0)).is_err());
    }

    #[test]
    fn loads_directory_with_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let batch = |n: usize, off: usize| -> Vec<u8> {
            (0..n)
                .flat_map(|i| record((i % 10) as u8, i + off))
                .collect()
        };
        std::fs::write(dir.path().join("data_batch_1.bin"), batch(30, 0)).unwrap();
        std::fs::write(dir.path().join("data_batch_2.bin"), batch(20, 30)).unwrap();
        std::fs::write(dir.path().join("test_batch.bin"), batch(10, 99)).unwrap();
        let d = load_cifar10(dir.path(), true, 10).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (40, 10, 10));
        let plane = 1024;
        for c in 0..3 {
            let vals: Vec<f64> = d
                .train
                .inputs
                .data()
                .chunks_exact(IMAGE_BYTES)
                .flat_map(|img| img[c * plane..(c + 1) * plane].iter().map(|&v| v as f64))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
        }
        assert!(load_cifar10(dir.path(), false, 50).is_err());
    }
}
