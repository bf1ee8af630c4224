//! `EATCKPT1` checkpoint files.
//!
//! Layout: the 8-byte magic, a little-endian `u32` header length, a UTF-8
//! JSON header, then raw little-endian `f32` tensors. Manifest offsets are
//! relative to the first data byte. Optimizer moments, when present, follow
//! the parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{Adam, AdamConfig, Moments, Real, Tensor};
use crate::error::{Error, Result};
use crate::model::{EatConfig, EatModel};

pub const MAGIC: &[u8; 8] = b"EATCKPT1";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerHeader {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First-moment tensors, then second-moment tensors, in manifest order.
    pub first_moment_offset: u64,
    pub second_moment_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub config: EatConfig,
    pub params: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: EatModel<T>,
    pub optimizer: Option<Adam<T>>,
}

fn push_tensor<T: Real>(data: &mut Vec<u8>, t: &Tensor<T>) {
    for &v in t.data() {
        data.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
}

pub fn to_bytes<T: Real>(model: &EatModel<T>, optimizer: Option<&Adam<T>>) -> Vec<u8> {
    let mut data = Vec::new();
    let mut params = Vec::with_capacity(model.store.len());
    for (_, p) in model.store.iter() {
        params.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: "f32".into(),
            offset: data.len() as u64,
        });
        push_tensor(&mut data, &p.value);
    }
    let optimizer = optimizer.map(|adam| {
        let first = data.len() as u64;
        for m in &adam.moments {
            push_tensor(&mut data, &m.m);
        }
        let second = data.len() as u64;
        for m in &adam.moments {
            push_tensor(&mut data, &m.v);
        }
        OptimizerHeader {
            step: adam.step,
            lr: adam.config.lr,
            beta1: adam.config.beta1,
            beta2: adam.config.beta2,
            eps: adam.config.eps,
            first_moment_offset: first,
            second_moment_offset: second,
        }
    });
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.cfg.clone(),
        params,
        optimizer,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

fn corrupt(offset: usize, reason: impl Into<String>) -> Error {
    Error::CorruptCheckpoint {
        offset: offset as u64,
        reason: reason.into(),
    }
}

/// Reads `count` floats at data-relative `offset`.
fn read_tensor<T: Real>(data: &[u8], base: usize, offset: u64, shape: &[usize], what: &str) -> Result<Tensor<T>> {
    let count: usize = shape.iter().product();
    let start = offset as usize;
    let end = start + count * 4;
    let bytes = data
        .get(start..end)
        .ok_or_else(|| corrupt(base + data.len(), format!("data for {what} ends early; needs bytes {}..{}", base + start, base + end)))?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::new(shape, values)
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    match bytes.get(..8) {
        Some(m) if m == MAGIC => {}
        Some(_) => return Err(corrupt(0, "bad magic")),
        None => return Err(corrupt(bytes.len(), "file shorter than the magic")),
    }
    let len_bytes = bytes
        .get(8..PREAMBLE)
        .ok_or_else(|| corrupt(bytes.len(), "missing header length"))?;
    let header_len = u32::from_le_bytes(len_bytes.try_into().expect("four bytes")) as usize;
    let json = bytes
        .get(PREAMBLE..PREAMBLE + header_len)
        .ok_or_else(|| corrupt(bytes.len(), format!("header of {header_len} bytes ends early")))?;
    let value: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| corrupt(PREAMBLE + e.column().saturating_sub(1), format!("header json: {e}")))?;
    match value.get("format_version") {
        Some(v) if v.as_u64() == Some(FORMAT_VERSION as u64) => {}
        Some(v) => {
            return Err(Error::UnsupportedVersion {
                found: v.to_string(),
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(corrupt(PREAMBLE, "header lacks format_version")),
    }
    let header: Header = serde_json::from_value(value).map_err(|e| corrupt(PREAMBLE, format!("header: {e}")))?;
    let base = PREAMBLE + header_len;
    let data = &bytes[base..];

    let mut model = EatModel::<T>::build(header.config.clone()).map_err(|e| corrupt(PREAMBLE, format!("config: {e}")))?;
    if header.params.len() != model.store.len() {
        return Err(corrupt(
            PREAMBLE,
            format!("manifest lists {} tensors, config implies {}", header.params.len(), model.store.len()),
        ));
    }
    let mut seen = vec![false; model.store.len()];
    for entry in &header.params {
        let id = model
            .store
            .id(&entry.name)
            .ok_or_else(|| corrupt(PREAMBLE, format!("unknown parameter {}", entry.name)))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(corrupt(PREAMBLE, format!("parameter {} listed twice", entry.name)));
        }
        if entry.dtype != "f32" {
            return Err(corrupt(PREAMBLE, format!("parameter {} has dtype {}", entry.name, entry.dtype)));
        }
        let expected = model.store.get(id).value.shape().to_vec();
        if entry.shape != expected {
            return Err(corrupt(
                base + entry.offset as usize,
                format!("parameter {} has shape {:?}, config implies {:?}", entry.name, entry.shape, expected),
            ));
        }
        model.store.get_mut(id).value = read_tensor(data, base, entry.offset, &entry.shape, &entry.name)?;
    }

    let optimizer = match &header.optimizer {
        None => None,
        Some(opt) => {
            let config = AdamConfig {
                lr: opt.lr,
                beta1: opt.beta1,
                beta2: opt.beta2,
                eps: opt.eps,
            };
            let mut adam = Adam::new(config, &model.store);
            adam.step = opt.step;
            let (mut first, mut second) = (opt.first_moment_offset, opt.second_moment_offset);
            for ((_, p), mom) in model.store.iter().zip(adam.moments.iter_mut()) {
                let shape = p.value.shape();
                let bytes = (p.value.numel() * 4) as u64;
                *mom = Moments {
                    m: read_tensor(data, base, first, shape, "first moment")?,
                    v: read_tensor(data, base, second, shape, "second moment")?,
                };
                first += bytes;
                second += bytes;
            }
            Some(adam)
        }
    };
    Ok(Checkpoint { model, optimizer })
}

pub fn save<T: Real>(path: &Path, model: &EatModel<T>, optimizer: Option<&Adam<T>>) -> Result<()> {
    fs::write(path, to_bytes(model, optimizer)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfc::CurveKind;

    fn small() -> EatModel<f32> {
        EatModel::build(EatConfig {
            image_size: 8,
            sfc_mode: CurveKind::SweepInSweep(4),
            slice_len: 16,
            embed_dim: 16,
            depth: 1,
            ..EatConfig::micro()
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let model = small();
        let adam = Adam::new(AdamConfig::default(), &model.store);
        let bytes = to_bytes(&model, Some(&adam));
        assert_eq!(&bytes[..8], MAGIC);
        let back = from_bytes::<f32>(&bytes).unwrap();
        let img: Vec<f32> = (0..64).map(|i| i as f32 / 64.0).collect();
        let (a, b) = (model.logits(&img).unwrap(), back.model.logits(&img).unwrap());
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.optimizer.unwrap().step, 0);
    }

    #[test]
    fn corruption_is_reported_with_offsets() {
        let bytes = to_bytes(&small(), None);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes::<f32>(&bad), Err(Error::CorruptCheckpoint { offset: 0, .. })));
        let cut = &bytes[..bytes.len() - 3];
        match from_bytes::<f32>(cut) {
            Err(Error::CorruptCheckpoint { offset, .. }) => assert_eq!(offset as usize, cut.len()),
            other => panic!("expected corruption, got {other:?}"),
        }
        assert!(matches!(from_bytes::<f32>(&bytes[..10]), Err(Error::CorruptCheckpoint { .. })));
    }

    #[test]
    fn version_mismatch() {
        let bytes = to_bytes(&small(), None);
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[12..12 + len]).unwrap().replace("\"format_version\":1", "\"format_version\":2");
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        out.extend_from_slice(&bytes[12 + len..]);
        assert!(matches!(from_bytes::<f32>(&out), Err(Error::UnsupportedVersion { expected: 1, .. })));
    }
}
