//! Checkpoints: one JSON topology line, then every weight and bias tensor in
//! stack order as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HybridModel, LayerSummary};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "HYBRIDCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub magic: String,
    pub window: usize,
    pub bands: usize,
    pub classes: usize,
    pub dropout_rate: f64,
    pub layers: Vec<LayerSummary>,
    /// Shapes of the stored tensors, in blob order.
    pub tensors: Vec<Vec<usize>>,
    pub param_count: usize,
}

impl Topology {
    pub fn of(model: &HybridModel) -> Self {
        Self {
            magic: MAGIC.into(),
            window: model.window(),
            bands: model.bands(),
            classes: model.class_count(),
            dropout_rate: model.dropout_rate(),
            layers: model.layer_summary(),
            tensors: model.params().iter().map(|p| p.shape().to_vec()).collect(),
            param_count: model.param_count(),
        }
    }
}

pub fn encode_checkpoint(model: &HybridModel) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(&Topology::of(model))?;
    out.push(b'\n');
    for p in model.params() {
        for &v in p.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<HybridModel> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint has no topology line".into()))?;
    let topo: Topology =
        serde_json::from_slice(&bytes[..split]).map_err(|e| Error::Format(format!("checkpoint topology: {e}")))?;
    if topo.magic != MAGIC {
        return Err(Error::Format(format!("checkpoint magic {:?}, expected {MAGIC:?}", topo.magic)));
    }
    let expected = Topology::of(&HybridModel::zeros(topo.window, topo.bands, topo.classes)?);
    if topo.tensors != expected.tensors || topo.param_count != expected.param_count {
        return Err(Error::Manifest(format!(
            "checkpoint declares {} parameters in {:?}, the ({}, {}, {}) stack has {}",
            topo.param_count, topo.tensors, topo.window, topo.bands, topo.classes, expected.param_count
        )));
    }
    let blob = &bytes[split + 1..];
    if blob.len() != topo.param_count * 4 {
        return Err(Error::Format(format!(
            "checkpoint blob holds {} bytes, expected {}",
            blob.len(),
            topo.param_count * 4
        )));
    }
    let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let params: Vec<Tensor> = topo
        .tensors
        .iter()
        .map(|shape| {
            let n = shape.iter().product();
            Tensor::new(shape, values.by_ref().take(n).collect())
        })
        .collect::<Result<_>>()?;
    let mut model = HybridModel::from_params(topo.window, topo.bands, topo.classes, params)?;
    model.set_dropout_rate(topo.dropout_rate)?;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &HybridModel) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<HybridModel> {
    decode_checkpoint(&fs::read(path)?)
}

/// The model as it reads back from a checkpoint: parameters rounded to
/// `f32`, optimizer state dropped.
pub fn rounded(model: &HybridModel) -> Result<HybridModel> {
    decode_checkpoint(&encode_checkpoint(model)?)
}
