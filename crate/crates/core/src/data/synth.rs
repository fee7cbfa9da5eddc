use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{default_class_names, HsiCube};
use crate::error::{Error, Result};

/// Parameters of a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Standard deviation of the additive per-voxel noise.
    pub noise: f64,
    pub seed: u64,
    /// Voronoi sites per class; more sites give more fragmented regions.
    pub sites_per_class: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { classes: 6, height: 86, width: 83, bands: 204, noise: 0.02, seed: 7, sites_per_class: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

/// `baseline + Σ amplitude·exp(−(band − center)² / (2·width²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub name: String,
    pub baseline: f64,
    pub bumps: Vec<Bump>,
}

impl ClassSignature {
    pub fn evaluate(&self, bands: usize) -> Vec<f64> {
        (0..bands)
            .map(|b| {
                let x = b as f64;
                self.baseline
                    + self
                        .bumps
                        .iter()
                        .map(|p| p.amplitude * (-(x - p.center).powi(2) / (2.0 * p.width * p.width)).exp())
                        .sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Site {
    pub row: usize,
    pub col: usize,
    pub class: u16,
}

/// Everything needed to audit a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    /// Labeled pixels per class, index 0 holding class 1.
    pub class_counts: Vec<usize>,
    pub signatures: Vec<ClassSignature>,
    pub sites: Vec<Site>,
}

/// Generates a fully labeled scene: a seeded Voronoi partition into class
/// regions, each pixel carrying its class signature plus Gaussian noise.
pub fn synth_cube(spec: &SynthSpec) -> Result<(HsiCube, SynthManifest)> {
    let pixels = spec.height * spec.width;
    if spec.classes < 2 {
        return Err(Error::Parameter(format!("need at least 2 classes, got {}", spec.classes)));
    }
    if spec.classes > u16::MAX as usize {
        return Err(Error::Parameter(format!("at most {} classes, got {}", u16::MAX, spec.classes)));
    }
    if spec.bands < 16 {
        return Err(Error::Parameter(format!("need at least 16 bands, got {}", spec.bands)));
    }
    if spec.classes > pixels {
        return Err(Error::Parameter(format!(
            "{} classes cannot fit a {}×{} scene",
            spec.classes, spec.height, spec.width
        )));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Parameter(format!("noise must be finite and non-negative, got {}", spec.noise)));
    }
    if spec.sites_per_class == 0 {
        return Err(Error::Parameter("sites_per_class must be at least 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.bands as f64;
    let names = default_class_names(spec.classes);
    let signatures: Vec<ClassSignature> = names
        .iter()
        .map(|name| {
            let count = rng.random_range(2..=3);
            let bumps = (0..count)
                .map(|_| Bump {
                    center: rng.random_range(0.0..s - 1.0),
                    width: rng.random_range(s / 24.0..s / 8.0),
                    amplitude: rng.random_range(0.2..0.6),
                })
                .collect();
            ClassSignature { name: name.clone(), baseline: rng.random_range(0.05..0.15), bumps }
        })
        .collect();

    // Distinct site pixels, so every class owns at least its own sites.
    let per_class = spec.sites_per_class.min(pixels / spec.classes);
    let mut taken = vec![false; pixels];
    let mut sites = Vec::with_capacity(per_class * spec.classes);
    for class in 1..=spec.classes as u16 {
        for _ in 0..per_class {
            let p = loop {
                let p = rng.random_range(0..pixels);
                if !taken[p] {
                    break p;
                }
            };
            taken[p] = true;
            sites.push(Site { row: p / spec.width, col: p % spec.width, class });
        }
    }

    let mut labels = vec![0u16; pixels];
    for (p, label) in labels.iter_mut().enumerate() {
        let (r, c) = ((p / spec.width) as i64, (p % spec.width) as i64);
        let nearest = sites
            .iter()
            .min_by_key(|site| (site.row as i64 - r).pow(2) + (site.col as i64 - c).pow(2))
            .expect("at least one site");
        *label = nearest.class;
    }

    let curves: Vec<Vec<f64>> = signatures.iter().map(|sig| sig.evaluate(spec.bands)).collect();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Parameter(format!("noise: {e}")))?;
    let mut reflectance = Vec::with_capacity(pixels * spec.bands);
    for &l in &labels {
        for &v in &curves[l as usize - 1] {
            let eps = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            reflectance.push((v + eps) as f32);
        }
    }

    let cube = HsiCube::new(spec.height, spec.width, spec.bands, reflectance, labels, names)?;
    let manifest = SynthManifest { spec: spec.clone(), class_counts: cube.class_histogram(), signatures, sites };
    Ok((cube, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SynthSpec {
        SynthSpec { classes: 4, height: 20, width: 18, bands: 24, noise, seed: 5, sites_per_class: 2 }
    }

    #[test]
    fn noiseless_classes_share_one_spectrum() {
        let (cube, manifest) = synth_cube(&small(0.0)).unwrap();
        for c in 1..=4u16 {
            let expect: Vec<f32> =
                manifest.signatures[c as usize - 1].evaluate(24).into_iter().map(|v| v as f32).collect();
            for r in 0..cube.height() {
                for col in 0..cube.width() {
                    if cube.label(r, col) == c {
                        assert_eq!(cube.spectrum(r, col), expect.as_slice());
                    }
                }
            }
        }
    }

    #[test]
    fn noiseless_nearest_signature_is_perfect() {
        let (cube, manifest) = synth_cube(&small(0.0)).unwrap();
        let curves: Vec<Vec<f64>> = manifest.signatures.iter().map(|s| s.evaluate(24)).collect();
        for r in 0..cube.height() {
            for c in 0..cube.width() {
                let px = cube.spectrum(r, c);
                let best = (0..curves.len())
                    .min_by(|&a, &b| {
                        let d = |k: usize| curves[k].iter().zip(px).map(|(x, &y)| (x - y as f64).powi(2)).sum::<f64>();
                        d(a).total_cmp(&d(b))
                    })
                    .unwrap();
                assert_eq!(best as u16 + 1, cube.label(r, c));
            }
        }
    }

    #[test]
    fn manifest_counts_and_determinism() {
        let (cube, manifest) = synth_cube(&small(0.02)).unwrap();
        assert_eq!(manifest.class_counts, cube.class_histogram());
        assert_eq!(manifest.class_counts.iter().sum::<usize>(), 20 * 18);
        let (again, _) = synth_cube(&small(0.02)).unwrap();
        assert_eq!(cube, again);
    }

    #[test]
    fn degenerate_specs_rejected() {
        let bad = |f: fn(&mut SynthSpec)| {
            let mut s = small(0.0);
            f(&mut s);
            matches!(synth_cube(&s), Err(Error::Parameter(_)))
        };
        assert!(bad(|s| s.classes = 1));
        assert!(bad(|s| s.bands = 15));
        assert!(bad(|s| {
            s.height = 1;
            s.width = 3;
        }));
        assert!(bad(|s| s.noise = -1.0));
    }
}
