//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   b"OBBDETCK"
//! version    u32       1
//! header_len u64       length of the JSON header in bytes
//! header     JSON      {"meta": {...}, "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}]}
//! data       bytes     row-major tensor values, little-endian, at the given offsets
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Scalar;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"OBBDETCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A decoded checkpoint. Values are widened to `f64` regardless of dtype.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub entries: Vec<TensorEntry>,
    pub values: Vec<Vec<f64>>,
}

/// Writes the named tensors of every store, prefixing names with the given
/// group label (`""` for none).
pub fn write_checkpoint<T: Scalar, W: Write>(
    mut out: W,
    meta: serde_json::Value,
    groups: &[(&str, &ParamStore<T>)],
) -> Result<()> {
    let width = std::mem::size_of::<T>() as u64;
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (prefix, store) in groups {
        for (name, t) in store.iter() {
            let nbytes = t.len() as u64 * width;
            entries.push(TensorEntry {
                name: format!("{prefix}{name}"),
                dtype: T::DTYPE.to_string(),
                shape: t.shape().to_vec(),
                offset,
                nbytes,
            });
            offset += nbytes;
        }
    }
    let header = serde_json::to_vec(&Header {
        meta,
        tensors: entries,
    })?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(offset as usize);
    for (_, store) in groups {
        for (_, t) in store.iter() {
            for v in t.data() {
                match T::DTYPE {
                    "f32" => buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                    _ => buf.extend_from_slice(&v.as_f64().to_le_bytes()),
                }
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut u32b = [0u8; 4];
    input.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut u64b = [0u8; 8];
    input.read_exact(&mut u64b)?;
    let hlen = u64::from_le_bytes(u64b) as usize;
    let mut hbytes = vec![0u8; hlen];
    input.read_exact(&mut hbytes)?;
    let header: Header = serde_json::from_slice(&hbytes)?;
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let mut values = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let start = e.offset as usize;
        let end = start + e.nbytes as usize;
        if end > data.len() {
            return Err(Error::Checkpoint(format!("tensor {} truncated", e.name)));
        }
        let bytes = &data[start..end];
        let count: usize = e.shape.iter().product();
        let vals: Vec<f64> = match e.dtype.as_str() {
            "f32" => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            "f64" => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
        };
        if vals.len() != count {
            return Err(Error::Checkpoint(format!("tensor {} has wrong size", e.name)));
        }
        values.push(vals);
    }
    Ok(Checkpoint {
        meta: header.meta,
        entries: header.tensors,
        values,
    })
}

impl Checkpoint {
    /// Copies tensors named `prefix + name` into `store`, requiring every
    /// parameter to be present with an identical shape.
    pub fn load_into<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            let id = super::params::ParamId(i);
            let full = format!("{prefix}{name}");
            let k = self
                .entries
                .iter()
                .position(|e| e.name == full)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
            if self.entries[k].shape != store.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {full}: checkpoint {:?}, model {:?}",
                    self.entries[k].shape,
                    store.get(id).shape()
                )));
            }
            store.set_values(id, self.values[k].iter().map(|&v| T::of_f64(v)).collect())?;
        }
        Ok(())
    }

    pub fn has_group(&self, prefix: &str) -> bool {
        self.entries.iter().any(|e| e.name.starts_with(prefix))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::Tensor;

    #[test]
    fn roundtrip_and_mismatch() {
        let mut p = ParamStore::<f32>::new();
        p.add("conv.w", Tensor::new(&[2, 2], vec![1.5, -2.0, 3.25, 0.0]).unwrap());
        p.add("conv.b", Tensor::new(&[2], vec![0.1, 0.2]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, serde_json::json!({"epoch": 3}), &[("", &p)]).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let ck = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(ck.meta["epoch"], 3);
        let mut q = p.zeros_like();
        ck.load_into("", &mut q).unwrap();
        assert_eq!(p, q);

        let mut wrong = ParamStore::<f32>::new();
        wrong.add("conv.w", Tensor::zeros(&[3, 2]));
        assert!(ck.load_into("", &mut wrong).is_err());
    }
}
