//! Cube files: `<name>.hsij` JSON header, `<name>.hsib` little-endian `f32`
//! reflectance (band-interleaved by pixel) and `<name>.hsil` little-endian
//! `u16` labels, row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HsiCube;
use crate::error::{Error, Result};

const MAGIC: &str = "HSICUBE1";

#[derive(Debug, Serialize, Deserialize)]
pub struct CubeHeader {
    pub magic: String,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    pub label_dtype: String,
    pub class_names: Vec<String>,
}

/// The header, reflectance and label paths for a cube path given with or
/// without extension.
pub fn cube_paths(path: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (path.with_extension("hsij"), path.with_extension("hsib"), path.with_extension("hsil"))
}

pub fn write_cube(path: &Path, cube: &HsiCube) -> Result<()> {
    let (hp, bp, lp) = cube_paths(path);
    let header = CubeHeader {
        magic: MAGIC.into(),
        height: cube.height(),
        width: cube.width(),
        bands: cube.bands(),
        dtype: "f32".into(),
        label_dtype: "u16".into(),
        class_names: cube.class_names().to_vec(),
    };
    fs::write(hp, serde_json::to_vec_pretty(&header)?)?;
    fs::write(bp, cube.reflectance().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>())?;
    fs::write(lp, cube.labels().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>())?;
    Ok(())
}

fn check_len(what: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() != expected {
        let detail = if bytes.len() < expected {
            format!("truncated at byte offset {}", bytes.len())
        } else {
            format!("trailing data from byte offset {expected}")
        };
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {} ({detail})",
            what.display(),
            bytes.len()
        )));
    }
    Ok(())
}

pub fn load_cube(path: &Path) -> Result<HsiCube> {
    let (hp, bp, lp) = cube_paths(path);
    let header: CubeHeader =
        serde_json::from_slice(&fs::read(&hp)?).map_err(|e| Error::Format(format!("{}: {e}", hp.display())))?;
    if header.magic != MAGIC {
        return Err(Error::Format(format!("{}: magic {:?}, expected {MAGIC:?}", hp.display(), header.magic)));
    }
    if header.dtype != "f32" {
        return Err(Error::Format(format!("{}: unsupported dtype {:?}", hp.display(), header.dtype)));
    }
    if header.label_dtype != "u16" {
        return Err(Error::Format(format!("{}: unsupported label_dtype {:?}", hp.display(), header.label_dtype)));
    }
    let pixels = header.height * header.width;
    let payload = fs::read(&bp)?;
    check_len(&bp, &payload, pixels * header.bands * 4)?;
    let label_bytes = fs::read(&lp)?;
    check_len(&lp, &label_bytes, pixels * 2)?;
    let reflectance = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let labels = label_bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    HsiCube::new(header.height, header.width, header.bands, reflectance, labels, header.class_names)
}
