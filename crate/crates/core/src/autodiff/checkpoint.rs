//! Named-tensor container.
//!
//! Layout: an 8-byte little-endian header length, a JSON header mapping each
//! tensor name to `{shape, dtype, offset}`, then the tensors' little-endian
//! buffers back to back. Offsets are relative to the end of the header.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use super::{AutodiffError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

pub fn save<T: Real, W: Write>(store: &ParamStore<T>, mut w: W) -> Result<()> {
    let mut header = BTreeMap::new();
    let mut body = Vec::new();
    for p in store.iter() {
        header.insert(
            p.name.clone(),
            Entry { shape: p.tensor.shape().to_vec(), dtype: T::DTYPE.to_string(), offset: body.len() as u64 },
        );
        for &x in p.tensor.data() {
            match T::DTYPE {
                "f32" => body.extend_from_slice(&(x.as_f64() as f32).to_le_bytes()),
                _ => body.extend_from_slice(&x.as_f64().to_le_bytes()),
            }
        }
    }
    let json = serde_json::to_vec(&header).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&body)?;
    Ok(())
}

/// Read every tensor, converting to `T`.
pub fn load<T: Real, R: Read>(mut r: R) -> Result<Vec<(String, Tensor<T>)>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: BTreeMap<String, Entry> =
        serde_json::from_slice(&json).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let mut out = Vec::with_capacity(header.len());
    for (name, e) in header {
        let n: usize = e.shape.iter().product();
        let width = match e.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(AutodiffError::Checkpoint(format!("{name}: unknown dtype {other}"))),
        };
        let start = e.offset as usize;
        let bytes = body
            .get(start..start + n * width)
            .ok_or_else(|| AutodiffError::Checkpoint(format!("{name}: buffer out of range")))?;
        let data: Vec<T> = bytes
            .chunks_exact(width)
            .map(|b| {
                if width == 4 {
                    T::of(f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                } else {
                    T::of(f64::from_le_bytes(b.try_into().unwrap()))
                }
            })
            .collect();
        out.push((name, Tensor::new(e.shape, data)?));
    }
    Ok(out)
}
