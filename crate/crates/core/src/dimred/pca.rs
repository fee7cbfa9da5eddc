use ndarray::{s, Array1, Array2};

use super::linalg::{mean_and_scatter, numerical_rank, symmetric_eigen};
use super::{check_retain, Method, ReducedBasis, SpectralMatrix};
use crate::error::{Error, Result};

/// Top-`retain` eigenvectors of `scatter / (n - 1)`.
fn basis_from_scatter(
    method: Method,
    mean: Array1<f64>,
    scatter: &Array2<f64>,
    samples: usize,
    retain: usize,
) -> Result<ReducedBasis> {
    let cov = scatter / (samples - 1) as f64;
    let (values, vectors) = symmetric_eigen(&cov);
    let rank = numerical_rank(&values, cov.nrows().max(samples));
    if retain > rank {
        return Err(Error::Rank { requested: retain, achievable: rank });
    }
    Ok(ReducedBasis {
        method,
        mean,
        projection: vectors.slice(s![..retain, ..]).to_owned(),
        explained: Some(values.slice(s![..retain]).to_owned()),
        seed: None,
    })
}

/// Principal components of the mean-centered sample covariance.
pub fn fit_pca(data: &SpectralMatrix, retain: usize) -> Result<ReducedBasis> {
    data.require_fit_size()?;
    check_retain(retain, data.bands(), "band count")?;
    let (mean, scatter) = mean_and_scatter(data.data());
    basis_from_scatter(Method::Pca, mean, &scatter, data.samples(), retain)
}

/// Covariance-updating incremental PCA.
///
/// Keeps a running mean and centered scatter matrix, merged batch by batch
/// with the pairwise update of Chan et al.; because the merge is exact the
/// final eigendecomposition matches batch PCA on the pooled data.
#[derive(Debug, Clone)]
pub struct IncrementalPca {
    count: usize,
    mean: Array1<f64>,
    scatter: Array2<f64>,
}

impl IncrementalPca {
    pub fn new(bands: usize) -> Self {
        Self { count: 0, mean: Array1::zeros(bands), scatter: Array2::zeros((bands, bands)) }
    }

    pub fn samples_seen(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn partial_fit(&mut self, batch: &SpectralMatrix) -> Result<()> {
        if batch.bands() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "batch has {} bands, earlier batches had {}",
                batch.bands(),
                self.mean.len()
            )));
        }
        let nb = batch.samples();
        if nb == 0 {
            return Ok(());
        }
        let (batch_mean, batch_scatter) = mean_and_scatter(batch.data());
        if self.count == 0 {
            self.mean = batch_mean;
            self.scatter = batch_scatter;
            self.count = nb;
            return Ok(());
        }
        let n = self.count as f64;
        let m = nb as f64;
        let total = n + m;
        let delta = &batch_mean - &self.mean;
        self.mean = (&self.mean * n + &batch_mean * m) / total;
        let outer = delta.view().insert_axis(ndarray::Axis(1)).dot(&delta.view().insert_axis(ndarray::Axis(0)));
        self.scatter = &self.scatter + &batch_scatter + &(outer * (n * m / total));
        self.count += nb;
        Ok(())
    }

    pub fn finalize(&self, retain: usize) -> Result<ReducedBasis> {
        if self.count < 2 {
            return Err(Error::Parameter(format!("incremental PCA needs at least 2 samples, saw {}", self.count)));
        }
        check_retain(retain, self.mean.len(), "band count")?;
        basis_from_scatter(Method::Ipca, self.mean.clone(), &self.scatter, self.count, retain)
    }
}

pub fn fit_ipca(batches: &[SpectralMatrix], retain: usize) -> Result<ReducedBasis> {
    let first = batches.first().ok_or_else(|| Error::Parameter("incremental PCA needs at least one batch".into()))?;
    let mut ipca = IncrementalPca::new(first.bands());
    for b in batches {
        ipca.partial_fit(b)?;
    }
    ipca.finalize(retain)
}

/// Truncated SVD of the uncentered data matrix `X = P S Qᵀ`.
///
/// The projection holds the top-`k` right singular vectors `Qᵢ` (from the
/// eigendecomposition of `XᵀX`), the mean is zero, and `explained` holds
/// `Sᵢ² / (N - 1)`. `inverse_transform(transform(X))` is the rank-`k`
/// reconstruction `Σ Pᵢ Sᵢ Qᵢᵀ`.
pub fn fit_svd(data: &SpectralMatrix, retain: usize) -> Result<ReducedBasis> {
    data.require_fit_size()?;
    check_retain(retain, data.samples().min(data.bands()), "min(samples, bands)")?;
    let x = data.data();
    let gram = x.t().dot(x);
    let (values, vectors) = symmetric_eigen(&gram);
    let rank = numerical_rank(&values, data.samples().max(data.bands()));
    if retain > rank {
        return Err(Error::Rank { requested: retain, achievable: rank });
    }
    let n1 = (data.samples() - 1) as f64;
    Ok(ReducedBasis {
        method: Method::Svd,
        mean: Array1::zeros(data.bands()),
        projection: vectors.slice(s![..retain, ..]).to_owned(),
        explained: Some(values.slice(s![..retain]).mapv(|l| l.max(0.0) / n1)),
        seed: None,
    })
}

/// Singular values `Sᵢ` implied by an SVD basis fitted on `samples` rows.
pub fn singular_values(basis: &ReducedBasis, samples: usize) -> Option<Array1<f64>> {
    let n1 = (samples.max(2) - 1) as f64;
    basis.explained.as_ref().map(|e| e.mapv(|v| (v * n1).sqrt()))
}
