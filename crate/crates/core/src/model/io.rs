//! `QTZ1` bundle files and token JSON Lines.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"QTZ1" | u8 version=1 | u32 header_len | header JSON
//! u32 tensor_count
//! per tensor: u16 name_len | name | u8 dtype (0=f32, 1=i8, 2=i32) | u8 rank
//!             | rank × u64 dims | row-major payload
//! ```
//!
//! The header JSON holds `config`, `scheme` and `scales` (the latter two
//! nullable). A quantized weight `<layer>.weight` is stored as an integer
//! tensor with sibling f32 tensors `<layer>.weight.scale` and
//! `<layer>.weight.alpha`, one value per group. Tensors are written in name
//! order.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::ScaleTable;
use crate::error::{Error, FormatError, Result};
use crate::numerics::{DType, Payload, Tensor};
use crate::quantizer::{QuantParams, QuantizedTensor};

use super::{ModelBundle, ModelConfig, QuantScheme, QuantState};

const MAGIC: [u8; 4] = *b"QTZ1";
const VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    scheme: Option<QuantScheme>,
    scales: Option<ScaleTable>,
}

pub fn encode_bundle(m: &ModelBundle) -> Result<Vec<u8>> {
    let header = Header {
        config: m.config().clone(),
        scheme: m.quant_state().map(|q| q.scheme),
        scales: m.act_scales().cloned(),
    };
    let header = serde_json::to_vec(&header)?;

    let mut tensors: BTreeMap<String, Tensor> = m.tensors().clone();
    if let Some(q) = m.quant_state() {
        for (layer, qt) in &q.weights {
            let groups = qt.params().groups();
            tensors.insert(format!("{layer}.weight"), qt.q().clone());
            tensors.insert(
                format!("{layer}.weight.scale"),
                Tensor::from_f32(vec![groups], qt.params().scale().to_vec())?,
            );
            tensors.insert(
                format!("{layer}.weight.alpha"),
                Tensor::from_f32(vec![groups], qt.params().alpha().to_vec())?,
            );
        }
    }

    let payload_bytes: usize = tensors
        .iter()
        .map(|(n, t)| 2 + n.len() + 2 + 8 * t.rank() + t.numel() * t.dtype().size_of())
        .sum();
    let mut out = Vec::with_capacity(4 + 1 + 4 + header.len() + 4 + payload_bytes);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&u32_len(header.len(), "header")?.to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&u32_len(tensors.len(), "tensor count")?.to_le_bytes());
    for (name, t) in &tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Input(format!("tensor name {name:?} too long")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dtype().tag());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match t.payload() {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
            Payload::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Input(format!("{what} too large for the file format")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(FormatError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn header_err(msg: impl Into<String>) -> Error {
    FormatError::Header(msg.into()).into()
}

pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic).into());
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(FormatError::BadVersion(version).into());
    }
    let header_len = r.u32("header length")? as usize;
    let header: Header =
        serde_json::from_slice(r.take(header_len, "header")?).map_err(|e| header_err(e.to_string()))?;
    header.config.validate().map_err(|e| header_err(e.to_string()))?;

    let count = r.u32("tensor count")?;
    let mut raw = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| header_err("tensor name is not UTF-8"))?
            .to_string();
        let tag = r.u8("dtype")?;
        let dtype = DType::from_tag(tag).ok_or(FormatError::BadDtype(tag))?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            shape.push(usize::try_from(d).map_err(|_| header_err("dimension overflows usize"))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| header_err(format!("{name}: element count overflows")))?;
        let nbytes = numel
            .checked_mul(dtype.size_of())
            .ok_or_else(|| header_err(format!("{name}: payload size overflows")))?;
        let bytes = r.take(nbytes, "tensor payload")?;
        let payload = match dtype {
            DType::F32 => Payload::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I8 => Payload::I8(bytes.iter().map(|&b| b as i8).collect()),
            DType::I32 => Payload::I32(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        let t = Tensor::new(shape, payload).map_err(|e| header_err(format!("{name}: {e}")))?;
        if raw.insert(name.clone(), t).is_some() {
            return Err(header_err(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - r.pos).into());
    }

    let config = header.config;
    let expected = config.tensor_shapes();
    let quant = match header.scheme {
        None => None,
        Some(scheme) => {
            let mut weights = BTreeMap::new();
            for layer in config.linear_layers() {
                let key = format!("{layer}.weight");
                let mut take = |name: String| {
                    raw.remove(&name)
                        .ok_or_else(|| header_err(format!("missing tensor {name}")))
                };
                let q = take(key.clone())?;
                let scale = take(format!("{key}.scale"))?;
                let alpha = take(format!("{key}.alpha"))?;
                let shape = &expected.iter().find(|(n, _)| *n == key).unwrap().1;
                if q.shape() != shape.as_slice() {
                    return Err(FormatError::ShapeMismatch {
                        name: key,
                        expected: shape.clone(),
                        found: q.shape().to_vec(),
                    }
                    .into());
                }
                let params = QuantParams::from_parts(
                    alpha.as_f32().map_err(|e| header_err(e.to_string()))?.to_vec(),
                    scale.as_f32().map_err(|e| header_err(e.to_string()))?.to_vec(),
                    scheme.weight_bits,
                    scheme.weight_granularity,
                )
                .map_err(|e| header_err(format!("{key}: {e}")))?;
                let qt = QuantizedTensor::from_parts(q, params).map_err(|e| header_err(format!("{key}: {e}")))?;
                weights.insert(layer, qt);
            }
            Some(QuantState { scheme, weights })
        }
    };
    for (name, shape) in &expected {
        if let Some(t) = raw.get(name) {
            if t.shape() != shape.as_slice() {
                return Err(FormatError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                }
                .into());
            }
        }
    }
    ModelBundle::new(config, raw, quant, header.scales).map_err(|e| header_err(e.to_string()))
}

pub fn save_bundle(m: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bundle(m)?;
    std::fs::write(path, bytes).map_err(|e| Error::from(e).in_file(path))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_bundle(&bytes).map_err(|e| e.in_file(path))
}

/// One line of a token JSON Lines file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLine {
    pub tokens: Vec<u32>,
}

pub fn read_token_jsonl(reader: impl BufRead) -> Result<Vec<Vec<u32>>> {
    crate::jsonl::read_lines::<TokenLine>(reader).map(|lines| lines.into_iter().map(|l| l.tokens).collect())
}

pub fn write_token_jsonl(mut writer: impl Write, seqs: &[Vec<u32>]) -> Result<()> {
    for s in seqs {
        serde_json::to_writer(&mut writer, &TokenLine { tokens: s.clone() })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
