use serde::{Deserialize, Serialize};

use super::HsiCube;
use crate::error::{Error, Result};

/// Which pixels may serve as patch centers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Border {
    /// Only centers whose full window lies inside the cube.
    #[default]
    Interior,
    /// Every pixel; voxels outside the cube read as 0.
    ZeroPad,
}

impl std::str::FromStr for Border {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interior" => Ok(Border::Interior),
            "zero_pad" | "zero-pad" => Ok(Border::ZeroPad),
            _ => Err(Error::Parameter(format!("unknown border policy {s:?} (interior|zero_pad)"))),
        }
    }
}

/// Labeled `window × window × bands` patches stored contiguously, each laid
/// out `(row, col, band)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    window: usize,
    bands: usize,
    classes: usize,
    values: Vec<f64>,
    labels: Vec<u16>,
    origins: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn patch_len(&self) -> usize {
        self.window * self.window * self.bands
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        let n = self.patch_len();
        &self.values[i * n..(i + 1) * n]
    }

    /// All patches back to back.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Class labels in `1..=class_count`.
    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// `(row, col)` of each patch center.
    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    /// Concatenated patches for `indices`, ready to feed as a
    /// `(n, window, window, bands, 1)` batch.
    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.patch_len());
        for &i in indices {
            out.extend_from_slice(self.patch(i));
        }
        out
    }
}

/// Writes the zero-padded patch centered on `(row, col)` into `out`.
pub fn patch_at(cube: &HsiCube, row: usize, col: usize, window: usize, out: &mut [f64]) {
    let b = cube.bands();
    let half = (window / 2) as isize;
    debug_assert_eq!(out.len(), window * window * b);
    for dr in 0..window {
        let r = row as isize + dr as isize - half;
        for dc in 0..window {
            let c = col as isize + dc as isize - half;
            let dst = &mut out[(dr * window + dc) * b..(dr * window + dc + 1) * b];
            if r < 0 || c < 0 || r >= cube.height() as isize || c >= cube.width() as isize {
                dst.fill(0.0);
            } else {
                dst.iter_mut().zip(cube.spectrum(r as usize, c as usize)).for_each(|(d, &s)| *d = s as f64);
            }
        }
    }
}

pub(crate) fn check_window(window: usize, height: usize, width: usize) -> Result<()> {
    if window.is_multiple_of(2) {
        return Err(Error::Parameter(format!("window must be odd, got {window}")));
    }
    if window > height.min(width) {
        return Err(Error::Parameter(format!("window {window} exceeds the {height}×{width} scene")));
    }
    Ok(())
}

/// Overlapping patches around every labeled center allowed by `border`, in
/// row-major order of the center.
pub fn extract_patches(cube: &HsiCube, window: usize, border: Border) -> Result<PatchSet> {
    let origins = patch_origins(cube, window, border)?;
    let patch_len = window * window * cube.bands();
    let mut values = vec![0.0; origins.len() * patch_len];
    for (&(r, c), out) in origins.iter().zip(values.chunks_exact_mut(patch_len)) {
        patch_at(cube, r, c, window, out);
    }
    let labels = origins.iter().map(|&(r, c)| cube.label(r, c)).collect();
    Ok(PatchSet { window, bands: cube.bands(), classes: cube.class_count(), values, labels, origins })
}

/// Labeled patch centers in extraction order (row-major), without building
/// the patches.
pub fn patch_origins(cube: &HsiCube, window: usize, border: Border) -> Result<Vec<(usize, usize)>> {
    check_window(window, cube.height(), cube.width())?;
    let half = window / 2;
    let (rows, cols) = match border {
        Border::Interior => (half..cube.height() - half, half..cube.width() - half),
        Border::ZeroPad => (0..cube.height(), 0..cube.width()),
    };
    Ok(rows.flat_map(|r| cols.clone().map(move |c| (r, c))).filter(|&(r, c)| cube.label(r, c) != 0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_class_names;

    fn ones(h: usize, w: usize, b: usize) -> HsiCube {
        HsiCube::new(h, w, b, vec![1.0; h * w * b], vec![1; h * w], default_class_names(1)).unwrap()
    }

    #[test]
    fn interior_count_matches_formula() {
        let p = extract_patches(&ones(86, 83, 2), 9, Border::Interior).unwrap();
        assert_eq!(p.len(), 78 * 75);
        assert_eq!(p.origins()[0], (4, 4));
    }

    #[test]
    fn unit_window_is_pixel_spectrum() {
        let values: Vec<f32> = (0..3 * 4 * 2).map(|i| i as f32).collect();
        let mut labels = vec![1u16; 12];
        labels[5] = 0;
        let cube = HsiCube::new(3, 4, 2, values, labels, default_class_names(1)).unwrap();
        let p = extract_patches(&cube, 1, Border::Interior).unwrap();
        assert_eq!(p.len(), 11);
        for (i, &(r, c)) in p.origins().iter().enumerate() {
            let expect: Vec<f64> = cube.spectrum(r, c).iter().map(|&v| v as f64).collect();
            assert_eq!(p.patch(i), expect.as_slice());
        }
    }

    #[test]
    fn zero_pad_corner_count() {
        let (w, b) = (5, 3);
        let p = extract_patches(&ones(7, 6, b), w, Border::ZeroPad).unwrap();
        assert_eq!(p.len(), 42);
        let zeros = p.patch(0).iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, (w * w - w.div_ceil(2) * w.div_ceil(2)) * b);
    }

    #[test]
    fn window_checks() {
        let cube = ones(5, 5, 1);
        assert!(matches!(extract_patches(&cube, 4, Border::Interior), Err(Error::Parameter(_))));
        assert!(matches!(extract_patches(&cube, 7, Border::Interior), Err(Error::Parameter(_))));
    }

    #[test]
    fn labels_follow_centers() {
        let labels: Vec<u16> = (0..36).map(|i| (i % 3) as u16 + 1).collect();
        let cube = HsiCube::new(6, 6, 1, vec![0.5; 36], labels, default_class_names(3)).unwrap();
        let p = extract_patches(&cube, 3, Border::Interior).unwrap();
        for (l, &(r, c)) in p.labels().iter().zip(p.origins()) {
            assert_eq!(*l, cube.label(r, c));
        }
    }
}
