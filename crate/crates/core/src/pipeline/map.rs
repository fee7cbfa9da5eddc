use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Map colors; class `c` is drawn with `PALETTE[(c − 1) % 16]`, unlabeled
/// and unpredicted pixels are black.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

pub fn class_color(class: u16) -> [u8; 3] {
    match class {
        0 => [0, 0, 0],
        c => PALETTE[(c as usize - 1) % PALETTE.len()],
    }
}

/// Per-pixel class raster, 0 meaning "no class".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    height: usize,
    width: usize,
    classes: Vec<u16>,
}

impl ClassMap {
    pub fn blank(height: usize, width: usize) -> Self {
        Self { height, width, classes: vec![0; height * width] }
    }

    pub fn from_raster(height: usize, width: usize, classes: Vec<u16>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(Error::Dimension(format!("{} classes for a {height}×{width} map", classes.len())));
        }
        Ok(Self { height, width, classes })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.classes[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: u16) {
        self.classes[row * self.width + col] = class;
    }

    pub fn classes(&self) -> &[u16] {
        &self.classes
    }

    /// Binary PPM (P6), 8 bits per channel.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.classes.len() * 3);
        for &c in &self.classes {
            out.extend_from_slice(&class_color(c));
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm())?;
        Ok(())
    }
}

/// Width, height and RGB payload of a P6 image with `maxval` 255.
pub fn read_ppm(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("PPM header ended early".into()));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Format("PPM header is not ASCII".into()))?,
        );
    }
    let bad = || Error::Format(format!("unsupported PPM header {fields:?}"));
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad());
    }
    let width: usize = fields[1].parse().map_err(|_| bad())?;
    let height: usize = fields[2].parse().map_err(|_| bad())?;
    let payload = &bytes[(pos + 1).min(bytes.len())..];
    if payload.len() != width * height * 3 {
        return Err(Error::Format(format!(
            "PPM payload holds {} bytes, expected {}",
            payload.len(),
            width * height * 3
        )));
    }
    Ok((width, height, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut map = ClassMap::blank(2, 3);
        map.set(0, 1, 1);
        map.set(1, 2, 17);
        let bytes = map.to_ppm();
        let (w, h, rgb) = read_ppm(&bytes).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(&rgb[..3], &[0, 0, 0]);
        assert_eq!(&rgb[3..6], &PALETTE[0]);
        assert_eq!(&rgb[15..18], &PALETTE[0]);
        assert!(read_ppm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn palette_colors_are_distinct_and_not_black() {
        for (i, a) in PALETTE.iter().enumerate() {
            assert_ne!(*a, [0, 0, 0]);
            assert!(PALETTE[i + 1..].iter().all(|b| a != b));
        }
    }
}
