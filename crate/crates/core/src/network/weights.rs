//! Binary weight container (`.agew`).
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      4 bytes   "AGEW"
//! version    u32       currently 1
//! count      u32       number of blobs
//! blob * count:
//!   name_len u16
//!   name     name_len bytes of UTF-8, "<layer>.weight" or "<layer>.bias"
//!   rank     u8        >= 1
//!   dims     u32 * rank
//!   values   f32 * product(dims), IEEE-754, row-major
//! ```
//!
//! Blobs are written in layer order, weight before bias. The reader accepts
//! any order but rejects duplicates, unknown names and trailing bytes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::NetworkGraph;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AGEW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weight file: bad magic {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported weight format version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated weight file: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("malformed blob at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("{extra} unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("layer {layer:?}: {blob} blob has shape {found:?}, graph expects {expected:?}")]
    Shape {
        layer: String,
        blob: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("blob {0:?} does not belong to any parameterised layer")]
    UnknownBlob(String),
    #[error("blob {0:?} appears more than once")]
    DuplicateBlob(String),
    #[error("layer {0:?} has no weights")]
    MissingBlob(String),
}

pub type Result<T> = std::result::Result<T, WeightError>;

/// Serialises every weight blob of a fully weighted graph.
pub fn encode(graph: &NetworkGraph) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_weights(graph, &mut buf)?;
    Ok(buf)
}

pub fn write_weights(graph: &NetworkGraph, mut out: impl Write) -> Result<()> {
    if let Some(layer) = graph.first_unweighted() {
        return Err(WeightError::MissingBlob(layer.to_string()));
    }
    let params = graph.parameter_shapes();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&((params.len() * 2) as u32).to_le_bytes())?;
    for (layer, _, _) in params {
        let lw = graph.weights(layer).expect("checked fully weighted");
        write_blob(&mut out, &format!("{layer}.weight"), &lw.weight)?;
        write_blob(&mut out, &format!("{layer}.bias"), &lw.bias)?;
    }
    Ok(())
}

fn write_blob(out: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    out.write_all(&(name.len() as u16).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&[t.rank() as u8])?;
    for &d in t.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_weights(graph: &NetworkGraph, path: &Path) -> Result<()> {
    let bytes = encode(graph)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(WeightError::Truncated {
                offset: self.pos,
                needed: n,
                len: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses the container into named tensors without consulting any graph.
pub fn decode_blobs(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur
        .take(4)
        .map_err(|_| WeightError::BadMagic(bytes[..bytes.len().min(4)].to_vec()))?;
    if magic != MAGIC {
        return Err(WeightError::BadMagic(magic.to_vec()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(WeightError::UnsupportedVersion(version));
    }
    let count = cur.u32()?;
    let mut blobs = Vec::new();
    for _ in 0..count {
        let start = cur.pos;
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| WeightError::Malformed {
                offset: start,
                reason: format!("blob name is not UTF-8: {e}"),
            })?
            .to_string();
        let rank = cur.u8()? as usize;
        if rank == 0 {
            return Err(WeightError::Malformed {
                offset: start,
                reason: format!("blob {name:?} has rank 0"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| WeightError::Malformed {
                offset: start,
                reason: format!("blob {name:?} has invalid shape {shape:?}"),
            })?;
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| WeightError::Malformed {
            offset: start,
            reason: "blob too large".into(),
        })?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).expect("length checked above");
        blobs.push((name, tensor));
    }
    if cur.pos != bytes.len() {
        return Err(WeightError::TrailingBytes {
            offset: cur.pos,
            extra: bytes.len() - cur.pos,
        });
    }
    Ok(blobs)
}

/// Loads blobs into a copy of `spec`. Every blob is checked against the
/// graph before any weight is installed.
pub fn load_weights(spec: &NetworkGraph, bytes: &[u8]) -> Result<NetworkGraph> {
    let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, tensor) in decode_blobs(bytes)? {
        if by_name.contains_key(&name) {
            return Err(WeightError::DuplicateBlob(name));
        }
        by_name.insert(name, tensor);
    }

    let params = spec.parameter_shapes();
    let mut installs = Vec::with_capacity(params.len());
    for (layer, w_shape, b_shape) in &params {
        let mut fetch = |suffix: &str, expected: &Vec<usize>| {
            let key = format!("{layer}.{suffix}");
            let t = by_name
                .remove(&key)
                .ok_or_else(|| WeightError::MissingBlob(layer.to_string()))?;
            if t.shape() != expected.as_slice() {
                return Err(WeightError::Shape {
                    layer: layer.to_string(),
                    blob: key,
                    expected: expected.clone(),
                    found: t.shape().to_vec(),
                });
            }
            Ok(t)
        };
        let w = fetch("weight", w_shape)?;
        let b = fetch("bias", b_shape)?;
        installs.push((layer.to_string(), w, b));
    }
    if let Some(name) = by_name.into_keys().next() {
        return Err(WeightError::UnknownBlob(name));
    }

    let mut graph = spec.without_weights();
    for (layer, w, b) in installs {
        graph
            .set_weights(&layer, w, b)
            .expect("shapes validated against the same spec");
    }
    Ok(graph)
}

pub fn load_weights_file(spec: &NetworkGraph, path: &Path) -> Result<NetworkGraph> {
    let bytes = std::fs::read(path)?;
    load_weights(spec, &bytes)
}
