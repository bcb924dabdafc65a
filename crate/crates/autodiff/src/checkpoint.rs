//! Parameter checkpoints.
//!
//! Layout: `u64` little-endian header length `H`, then `H` bytes of UTF-8
//! JSON, then the concatenated tensor data as little-endian `f64`. Offsets in
//! the header count `f64` values from the start of the data section.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const FORMAT: &str = "drf-params";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(params: &ParamSet) -> Result<Vec<u8>> {
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(params.len());
    for (_, name, t) in params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel();
    }
    let header = serde_json::to_vec(&Header {
        format: FORMAT.into(),
        version: VERSION,
        tensors,
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + offset * 8);
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for t in params.tensors() {
        for x in t.data() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
    let bad = |m: &str| AutodiffError::Checkpoint(m.to_string());
    let mut cursor = bytes;
    let mut len = [0u8; 8];
    cursor.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
    let hlen = u64::from_le_bytes(len) as usize;
    if cursor.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&cursor[..hlen])?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(bad(&format!("unsupported format {} v{}", header.format, header.version)));
    }
    let data = &cursor[hlen..];
    if data.len() % 8 != 0 {
        return Err(bad("data section is not a whole number of f64 values"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut params = ParamSet::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| bad(&format!("tensor {} out of bounds", e.name)))?;
        params.add(e.name, Tensor::new(e.shape, slice.to_vec())?);
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(params)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
    from_bytes(&fs::read(path)?)
}

/// Copies values from `source` into `target` by name; every name in `target`
/// must be present with the same shape.
pub fn restore_into(target: &mut ParamSet, source: &ParamSet) -> Result<()> {
    let ids: Vec<_> = target.iter().map(|(id, n, _)| (id, n.to_string())).collect();
    for (id, name) in ids {
        let src = source
            .find(&name)
            .ok_or_else(|| AutodiffError::Checkpoint(format!("missing tensor {name}")))?;
        let t = source.get(src);
        if t.shape() != target.get(id).shape() {
            return Err(AutodiffError::Checkpoint(format!(
                "tensor {name}: shape {:?} != {:?}",
                t.shape(),
                target.get(id).shape()
            )));
        }
        target.set(id, t.clone());
    }
    Ok(())
}
