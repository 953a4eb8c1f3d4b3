//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "MLPK"  magic
//! u32     format version
//! u8      parameter-set tag
//! u32 n + n bytes   network spec as JSON
//! u32 n + n bytes   threshold record as JSON (n = 0 when absent)
//! u32     tensor count
//! per tensor:
//!   u32 n + n bytes  name ("<layer>.weight" or "<layer>.bias")
//!   u8               dtype (1 = f32)
//!   u32 rank, rank x u32 dims
//!   f32 payload
//! u32     CRC32 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{LayerParams, NetworkSpec, ThresholdRecord, WeightSet, WeightTag};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MLPK";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::Format(format!("value {v} does not fit in a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) -> Result<()> {
    put_u32(out, bytes.len())?;
    out.extend_from_slice(bytes);
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    put_bytes(out, name.as_bytes())?;
    out.push(DTYPE_F32);
    put_u32(out, t.rank())?;
    for &d in t.shape() {
        put_u32(out, d)?;
    }
    out.reserve(4 * t.numel());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode_checkpoint(spec: &NetworkSpec, weights: &WeightSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(weights.tag.code());
    put_bytes(&mut out, serde_json::to_string(spec)?.as_bytes())?;
    match &weights.threshold {
        Some(rec) => put_bytes(&mut out, serde_json::to_string(rec)?.as_bytes())?,
        None => put_u32(&mut out, 0)?,
    }
    put_u32(&mut out, 2 * weights.layers.len())?;
    for (name, p) in &weights.layers {
        put_tensor(&mut out, &format!("{name}.weight"), &p.weight)?;
        put_tensor(&mut out, &format!("{name}.bias"), &p.bias)?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!("truncated: need {n} bytes at offset {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }

    fn text(&mut self) -> Result<&'a str> {
        let at = self.pos;
        std::str::from_utf8(self.bytes()?)
            .map_err(|_| Error::Format(format!("invalid UTF-8 in string at offset {at}")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetworkSpec, WeightSet)> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing MLPK magic".into()));
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes([
        bytes[body_len],
        bytes[body_len + 1],
        bytes[body_len + 2],
        bytes[body_len + 3],
    ]);
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(Error::Crc {
            offset: body_len,
            stored,
            computed,
        });
    }
    let mut r = Reader {
        buf: &bytes[..body_len],
        pos: 4,
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let code = r.u8()?;
    let tag = WeightTag::from_code(code)
        .ok_or_else(|| Error::Format(format!("unknown parameter-set tag {code}")))?;
    let spec: NetworkSpec = serde_json::from_str(r.text()?)?;
    let threshold: Option<ThresholdRecord> = match r.text()? {
        "" => None,
        s => Some(serde_json::from_str(s)?),
    };
    let count = r.len()?;
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let name = r.text()?.to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!(
                "tensor `{name}` has unknown dtype {dtype}"
            )));
        }
        let rank = r.len()?;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let data = r
            .take(numel)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if tensors
            .insert(name.clone(), Tensor::new(shape, data)?)
            .is_some()
        {
            return Err(Error::Format(format!("tensor `{name}` appears twice")));
        }
    }
    if r.pos != body_len {
        return Err(Error::Format(format!(
            "{} trailing bytes before the CRC",
            body_len - r.pos
        )));
    }
    let names: Vec<String> = tensors
        .keys()
        .filter_map(|k| k.strip_suffix(".weight").map(str::to_string))
        .collect();
    let mut layers = BTreeMap::new();
    for layer in names {
        let weight = tensors.remove(&format!("{layer}.weight"));
        let bias = tensors
            .remove(&format!("{layer}.bias"))
            .ok_or_else(|| Error::Format(format!("no bias stored for `{layer}`")))?;
        if let Some(weight) = weight {
            layers.insert(layer, LayerParams { weight, bias });
        }
    }
    if let Some(stray) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor `{stray}`")));
    }
    if !spec.layers.is_empty() {
        spec.validate()?;
    }
    let weights = WeightSet {
        tag,
        layers,
        threshold,
    };
    weights.check(&spec)?;
    Ok((spec, weights))
}

pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, weights: &WeightSet) -> Result<()> {
    super::write_bytes(path, &encode_checkpoint(spec, weights)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, WeightSet)> {
    decode_checkpoint(&super::read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::zoo;

    fn model() -> (NetworkSpec, WeightSet) {
        let spec = zoo::desk_net([3, 16, 16], 10).unwrap();
        let mut w = WeightSet::init(&spec, 11).unwrap();
        // values whose bit patterns a lossy path would disturb
        let d = w.get_mut("conv1").unwrap().weight.data_mut();
        d[0] = -0.0;
        d[1] = f32::MIN_POSITIVE / 2.0;
        d[2] = 1.0 + f32::EPSILON;
        (spec, w)
    }

    fn bits(w: &WeightSet) -> Vec<u32> {
        w.layers
            .values()
            .flat_map(|p| p.weight.data().iter().chain(p.bias.data()))
            .map(|v| v.to_bits())
            .collect()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let (spec, w) = model();
        let bytes = encode_checkpoint(&spec, &w).unwrap();
        let (s2, w2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(bits(&w2), bits(&w));
        assert_eq!(w2.tag, w.tag);
        assert_eq!(encode_checkpoint(&s2, &w2).unwrap(), bytes);
    }

    #[test]
    fn threshold_record_survives() {
        let (spec, w) = model();
        let th = crate::sparsify::apply_threshold(&w, &["conv2".to_string()], 0.05).unwrap();
        let (_, back) = decode_checkpoint(&encode_checkpoint(&spec, &th).unwrap()).unwrap();
        assert_eq!(back.tag, WeightTag::ThetaL1Th);
        assert_eq!(back.threshold, th.threshold);
    }

    #[test]
    fn flipped_payload_byte_fails_crc() {
        let (spec, w) = model();
        let mut bytes = encode_checkpoint(&spec, &w).unwrap();
        let at = bytes.len() - 100;
        bytes[at] ^= 0x01;
        match decode_checkpoint(&bytes) {
            Err(Error::Crc { offset, .. }) => assert_eq!(offset, bytes.len() - 4),
            other => panic!("expected CRC error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let (spec, w) = model();
        let mut bytes = encode_checkpoint(&spec, &w).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_checkpoint(&spec, &w).unwrap();
        bytes[4] = 9;
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Version {
                found: 9,
                expected: 1
            })
        ));
        assert!(decode_checkpoint(b"MLPK").is_err());
    }

    #[test]
    fn empty_model_roundtrips() {
        let spec = NetworkSpec {
            input_shape: [1, 1, 1],
            layers: vec![],
        };
        let w = WeightSet {
            tag: WeightTag::Theta,
            layers: BTreeMap::new(),
            threshold: None,
        };
        let (s2, w2) = decode_checkpoint(&encode_checkpoint(&spec, &w).unwrap()).unwrap();
        assert_eq!(s2, spec);
        assert!(w2.layers.is_empty());
    }

    #[test]
    fn header_layout() {
        let (spec, w) = model();
        let bytes = encode_checkpoint(&spec, &w).unwrap();
        assert_eq!(&bytes[..4], b"MLPK");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(bytes[8], 0);
        let n = u32::from_le_bytes([bytes[9], bytes[10], bytes[11], bytes[12]]) as usize;
        assert!(std::str::from_utf8(&bytes[13..13 + n])
            .unwrap()
            .starts_with('{'));
    }
}
