//! Spectral dimensionality reduction.
//!
//! Every method fits a [`ReducedBasis`]: a mean vector and a `B × S`
//! projection such that a pixel spectrum `x` of `S` bands reduces to
//! `projection · (x - mean)`.

mod grp;
mod ica;
pub mod io;
pub mod linalg;
mod pca;
mod spca;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grp::fit_grp;
pub use ica::{fit_ica, fit_ica_with, IcaOptions};
pub use io::{decode_basis, encode_basis, read_basis, write_basis};
pub use linalg::subspace_angle;
pub use pca::{fit_ipca, fit_pca, fit_svd, singular_values, IncrementalPca};
pub use spca::{fit_spca, fit_spca_with, SpcaOptions};

/// Band counts evaluated in the window × band grid.
pub const DEFAULT_BAND_COUNTS: [usize; 5] = [15, 18, 21, 24, 27];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Ipca,
    Spca,
    Svd,
    Ica,
    Grp,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Pca, Method::Ipca, Method::Spca, Method::Svd, Method::Ica, Method::Grp];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Ipca => "ipca",
            Method::Spca => "spca",
            Method::Svd => "svd",
            Method::Ica => "ica",
            Method::Grp => "grp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown reduction method {s:?}")))
    }
}

/// Pixels as rows, bands as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMatrix {
    data: Array2<f64>,
}

impl SpectralMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if let Some(((r, c), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite reflectance at sample {r}, band {c}")));
        }
        Ok(Self { data })
    }

    pub fn from_rows(samples: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        let data = Array2::from_shape_vec((samples, bands), values)
            .map_err(|e| Error::Dimension(format!("spectral matrix {samples}×{bands}: {e}")))?;
        Self::new(data)
    }

    pub fn samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn bands(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// Copy with every band shifted to zero mean.
    pub fn centered(&self) -> Self {
        let mean = self.data.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(self.bands()));
        Self { data: &self.data - &mean }
    }

    /// Copy with every band scaled to zero mean and unit sample variance;
    /// constant bands are only centered.
    pub fn standardized(&self) -> Self {
        let centered = self.centered();
        let n = (self.samples().max(2) - 1) as f64;
        let sd = centered.data.map_axis(Axis(0), |c| (c.dot(&c) / n).sqrt());
        let scale = sd.mapv(|s| if s > 0.0 { s } else { 1.0 });
        Self { data: centered.data / &scale }
    }

    fn require_fit_size(&self) -> Result<()> {
        if self.samples() < 2 {
            return Err(Error::Parameter(format!("fitting needs at least 2 samples, got {}", self.samples())));
        }
        if self.bands() == 0 {
            return Err(Error::Parameter("fitting needs at least one band".into()));
        }
        Ok(())
    }
}

/// A fitted linear reduction `h = projection · (x - mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    pub method: Method,
    pub mean: Array1<f64>,
    /// `retained × bands`.
    pub projection: Array2<f64>,
    /// Per-component variance, for the variance-ordered methods.
    pub explained: Option<Array1<f64>>,
    pub seed: Option<u64>,
}

impl ReducedBasis {
    pub fn bands(&self) -> usize {
        self.projection.ncols()
    }

    pub fn retained(&self) -> usize {
        self.projection.nrows()
    }

    pub fn transform(&self, data: &SpectralMatrix) -> Result<SpectralMatrix> {
        self.check_bands(data.bands())?;
        let centered = data.data() - &self.mean;
        Ok(SpectralMatrix { data: centered.dot(&self.projection.t()) })
    }

    /// Reduces one spectrum.
    pub fn transform_row(&self, spectrum: &[f64]) -> Result<Vec<f64>> {
        self.check_bands(spectrum.len())?;
        Ok(self
            .projection
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(spectrum).zip(&self.mean).map(|((p, x), m)| p * (x - m)).sum())
            .collect())
    }

    /// Least-squares preimage `mean + Pᵀ (P Pᵀ)⁻¹ h`; for orthonormal rows
    /// this is `mean + Pᵀ h`, the rank-`B` reconstruction.
    pub fn inverse_transform(&self, reduced: &SpectralMatrix) -> Result<SpectralMatrix> {
        if reduced.bands() != self.retained() {
            return Err(Error::Dimension(format!(
                "basis retains {} components, data has {}",
                self.retained(),
                reduced.bands()
            )));
        }
        let gram = self.projection.dot(&self.projection.t());
        let coeffs = reduced.data().dot(&linalg::inverse_spd(&gram));
        Ok(SpectralMatrix { data: coeffs.dot(&self.projection) + &self.mean })
    }

    fn check_bands(&self, bands: usize) -> Result<()> {
        if bands != self.bands() {
            return Err(Error::Dimension(format!("basis expects {} bands, data has {}", self.bands(), bands)));
        }
        Ok(())
    }
}

/// Fits `method` with the default options of each algorithm.
pub fn fit(method: Method, data: &SpectralMatrix, retain: usize, seed: u64) -> Result<ReducedBasis> {
    match method {
        Method::Pca => fit_pca(data, retain),
        Method::Ipca => {
            // Stream the rows in fixed blocks, as an out-of-core caller would.
            let block = 512;
            let batches: Vec<SpectralMatrix> =
                data.data().axis_chunks_iter(Axis(0), block).map(|c| SpectralMatrix { data: c.to_owned() }).collect();
            fit_ipca(&batches, retain)
        }
        Method::Spca => fit_spca(data, retain, spca::default_budget(data.bands())),
        Method::Svd => fit_svd(data, retain),
        Method::Ica => fit_ica(data, retain, seed),
        Method::Grp => fit_grp(data.bands(), retain, seed),
    }
}

/// Optional rescaling of the fit data, folded back into the returned basis
/// so that it applies to raw spectra.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocess {
    /// Fit on mean-centered data even for methods that do not center.
    pub center: bool,
    /// Fit on bands scaled to unit sample variance (implies centering).
    pub standardize: bool,
}

/// [`fit`] on preprocessed data. With `projection P` and `mean m` fitted on
/// `z = (x − μ) / s`, the returned basis has projection `P · diag(1/s)` and
/// mean `μ + s ∘ m`, so `transform(x)` equals the fitted transform of `z`.
pub fn fit_with(
    method: Method,
    data: &SpectralMatrix,
    retain: usize,
    seed: u64,
    prep: Preprocess,
) -> Result<ReducedBasis> {
    if !(prep.center || prep.standardize) {
        return fit(method, data, retain, seed);
    }
    data.require_fit_size()?;
    let mean = data.data.mean_axis(Axis(0)).expect("at least two samples");
    let scale = if prep.standardize {
        let n = (data.samples() - 1) as f64;
        (&data.data - &mean).map_axis(Axis(0), |c| (c.dot(&c) / n).sqrt()).mapv(|s| if s > 0.0 { s } else { 1.0 })
    } else {
        Array1::ones(data.bands())
    };
    let z = SpectralMatrix { data: (&data.data - &mean) / &scale };
    let mut basis = fit(method, &z, retain, seed)?;
    basis.mean = &mean + &(&basis.mean * &scale);
    basis.projection = &basis.projection / &scale;
    Ok(basis)
}

fn check_retain(retain: usize, limit: usize, what: &str) -> Result<()> {
    if retain == 0 || retain > limit {
        return Err(Error::Parameter(format!("retained components must lie in 1..={limit} ({what}), got {retain}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn preprocessing_folds_into_the_basis() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let scales = [1.0, 10.0, 0.1, 3.0, 0.5, 7.0];
        let values: Vec<f64> = (0..60 * 6).map(|i| 2.0 + scales[i % 6] * rng.random_range(-1.0..1.0)).collect();
        let x = SpectralMatrix::from_rows(60, 6, values).unwrap();
        for method in [Method::Pca, Method::Svd, Method::Grp] {
            let prep = Preprocess { center: true, standardize: true };
            let folded = fit_with(method, &x, 3, 1, prep).unwrap();
            let z = x.standardized();
            let direct = fit(method, &z, 3, 1).unwrap();
            let a = folded.transform(&x).unwrap();
            let b = direct.transform(&z).unwrap();
            for (p, q) in a.data().iter().zip(b.data()) {
                assert!((p - q).abs() < 1e-10, "{method}: {p} vs {q}");
            }
        }
        let plain = fit_with(Method::Pca, &x, 2, 0, Preprocess::default()).unwrap();
        assert_eq!(plain, fit(Method::Pca, &x, 2, 0).unwrap());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("kpca".parse::<Method>().is_err());
    }

    #[test]
    fn transform_matches_hand_product() {
        let x = SpectralMatrix::new(array![
            [1.0, 2.0, 3.0],
            [0.0, -1.0, 4.0],
            [2.0, 2.0, 2.0],
            [5.0, 0.0, 1.0],
            [-3.0, 1.0, 0.5]
        ])
        .unwrap();
        let basis = ReducedBasis {
            method: Method::Pca,
            mean: array![1.0, 0.5, 2.0],
            projection: array![[0.5, -1.0, 0.25], [2.0, 0.0, -1.0]],
            explained: None,
            seed: None,
        };
        let h = basis.transform(&x).unwrap();
        for (i, row) in x.data().rows().into_iter().enumerate() {
            let c = [row[0] - 1.0, row[1] - 0.5, row[2] - 2.0];
            let e0 = 0.5 * c[0] - 1.0 * c[1] + 0.25 * c[2];
            let e1 = 2.0 * c[0] + 0.0 * c[1] - 1.0 * c[2];
            assert!((h.data()[[i, 0]] - e0).abs() < 1e-12);
            assert!((h.data()[[i, 1]] - e1).abs() < 1e-12);
            let r = basis.transform_row(row.as_slice().unwrap()).unwrap();
            assert!((r[0] - e0).abs() < 1e-12 && (r[1] - e1).abs() < 1e-12);
        }
        let wrong = SpectralMatrix::new(array![[1.0, 2.0]]).unwrap();
        assert!(matches!(basis.transform(&wrong), Err(Error::Dimension(_))));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(SpectralMatrix::new(array![[1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn standardized_has_unit_variance() {
        let x = SpectralMatrix::new(array![[1.0, 10.0, 3.0], [2.0, 30.0, 3.0], [4.0, 20.0, 3.0]]).unwrap();
        let s = x.standardized();
        for c in 0..2 {
            let col = s.data().column(c);
            assert!(col.sum().abs() < 1e-12);
            assert!((col.dot(&col) / 2.0 - 1.0).abs() < 1e-12);
        }
        assert!(s.data().column(2).iter().all(|&v| v == 0.0));
    }
}
