//! Hyperspectral cubes, patch extraction, stratified splits and the
//! synthetic scene generator.

pub mod io;
mod patches;
mod split;
mod synth;

use crate::dimred::{ReducedBasis, SpectralMatrix};
use crate::error::{Error, Result};

pub use io::{load_cube, write_cube};
pub use patches::{extract_patches, patch_at, patch_origins, Border, PatchSet};
pub use split::{split_counts, split_labels, stratified_split, SplitPlan, FOLDS};
pub use synth::{synth_cube, Bump, ClassSignature, SynthManifest, SynthSpec};

/// A `height × width × bands` reflectance raster, band-interleaved by pixel,
/// with a label raster where 0 marks unlabeled pixels and classes run
/// `1..=class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    reflectance: Vec<f32>,
    labels: Vec<u16>,
    class_names: Vec<String>,
}

impl HsiCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        reflectance: Vec<f32>,
        labels: Vec<u16>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let pixels = height * width;
        if pixels == 0 || bands == 0 {
            return Err(Error::Dimension(format!("empty cube {height}×{width}×{bands}")));
        }
        if reflectance.len() != pixels * bands || labels.len() != pixels {
            return Err(Error::Dimension(format!(
                "cube {height}×{width}×{bands} needs {} reflectances and {pixels} labels, got {} and {}",
                pixels * bands,
                reflectance.len(),
                labels.len()
            )));
        }
        if let Some(i) = reflectance.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite reflectance at pixel ({}, {}), band {}",
                i / bands / width,
                (i / bands) % width,
                i % bands
            )));
        }
        let classes = class_names.len();
        let mut seen = vec![false; classes];
        for (i, &l) in labels.iter().enumerate() {
            if l as usize > classes {
                return Err(Error::Format(format!(
                    "label {l} at pixel ({}, {}) exceeds the {classes} declared classes",
                    i / width,
                    i % width
                )));
            }
            if l > 0 {
                seen[l as usize - 1] = true;
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("declared class {} ({:?}) has no labeled pixel", c + 1, class_names[c])));
        }
        Ok(Self { height, width, bands, reflectance, labels, class_names })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn reflectance(&self) -> &[f32] {
        &self.reflectance
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.reflectance[start..start + self.bands]
    }

    /// Labeled pixel count per class, index 0 holding class 1.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &l in self.labels.iter().filter(|&&l| l > 0) {
            counts[l as usize - 1] += 1;
        }
        counts
    }

    /// Spectra of the given pixels (row-major indices) as a matrix.
    pub fn spectra(&self, pixels: &[usize]) -> Result<SpectralMatrix> {
        let mut values = Vec::with_capacity(pixels.len() * self.bands);
        for &p in pixels {
            if p >= self.labels.len() {
                return Err(Error::Index(format!("pixel {p} outside a {}×{} cube", self.height, self.width)));
            }
            values.extend(self.reflectance[p * self.bands..(p + 1) * self.bands].iter().map(|&v| v as f64));
        }
        SpectralMatrix::from_rows(pixels.len(), self.bands, values)
    }

    /// Applies `basis` to every pixel, keeping labels and class names.
    pub fn reduce(&self, basis: &ReducedBasis) -> Result<HsiCube> {
        if basis.bands() != self.bands {
            return Err(Error::Dimension(format!("basis expects {} bands, cube has {}", basis.bands(), self.bands)));
        }
        let mut out = Vec::with_capacity(self.labels.len() * basis.retained());
        let mut row = vec![0.0; self.bands];
        for px in self.reflectance.chunks_exact(self.bands) {
            row.iter_mut().zip(px).for_each(|(d, &s)| *d = s as f64);
            out.extend(basis.transform_row(&row)?.into_iter().map(|v| v as f32));
        }
        HsiCube::new(self.height, self.width, basis.retained(), out, self.labels.clone(), self.class_names.clone())
    }
}

/// Per-band min-max scaling to `[0, 1]`; constant bands become 0.
pub fn normalize(cube: &HsiCube) -> HsiCube {
    let b = cube.bands;
    let mut lo = vec![f32::INFINITY; b];
    let mut hi = vec![f32::NEG_INFINITY; b];
    for px in cube.reflectance.chunks_exact(b) {
        for (i, &v) in px.iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    let reflectance = cube
        .reflectance
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let k = i % b;
            let range = hi[k] as f64 - lo[k] as f64;
            if range > 0.0 {
                ((v as f64 - lo[k] as f64) / range) as f32
            } else {
                0.0
            }
        })
        .collect();
    HsiCube { reflectance, ..cube.clone() }
}

/// Naming helper for generated or anonymous scenes.
pub fn default_class_names(classes: usize) -> Vec<String> {
    (1..=classes).map(|c| format!("class_{c}")).collect()
}
