//! Basis files: one JSON header line, then little-endian `f64` blobs for the
//! mean (`bands`), the row-major projection (`retained × bands`) and, when
//! present, the explained variances (`retained`).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Method, ReducedBasis};
use crate::error::{Error, Result};

const MAGIC: &str = "HSIBASIS1";

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    method: Method,
    bands: usize,
    retained: usize,
    seed: Option<u64>,
    has_explained: bool,
}

pub fn encode_basis(basis: &ReducedBasis) -> Result<Vec<u8>> {
    let header = Header {
        magic: MAGIC.into(),
        method: basis.method,
        bands: basis.bands(),
        retained: basis.retained(),
        seed: basis.seed,
        has_explained: basis.explained.is_some(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    let values = basis.mean.iter().chain(basis.projection.iter()).chain(basis.explained.iter().flatten());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_basis(bytes: &[u8]) -> Result<ReducedBasis> {
    let split =
        bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format("basis file has no header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..split]).map_err(|e| Error::Format(format!("basis header: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::Format(format!("basis magic {:?}, expected {MAGIC:?}", header.magic)));
    }
    let (b, s) = (header.retained, header.bands);
    let count = s + b * s + if header.has_explained { b } else { 0 };
    let blob = &bytes[split + 1..];
    if blob.len() != count * 8 {
        return Err(Error::Format(format!(
            "basis payload holds {} bytes, expected {} for {b}×{s}",
            blob.len(),
            count * 8
        )));
    }
    let values: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mean = Array1::from_vec(values[..s].to_vec());
    let projection = Array2::from_shape_vec((b, s), values[s..s + b * s].to_vec()).expect("length checked");
    let explained = header.has_explained.then(|| Array1::from_vec(values[s + b * s..].to_vec()));
    Ok(ReducedBasis { method: header.method, mean, projection, explained, seed: header.seed })
}

pub fn write_basis(path: &Path, basis: &ReducedBasis) -> Result<()> {
    fs::write(path, encode_basis(basis)?)?;
    Ok(())
}

pub fn read_basis(path: &Path) -> Result<ReducedBasis> {
    decode_basis(&fs::read(path)?)
}
