use ndarray::{Array1, Array2, Axis};

use super::linalg::{mean_and_scatter, normalize_sign, numerical_rank, symmetric_eigen};
use super::{check_retain, Method, ReducedBasis, SpectralMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpcaOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SpcaOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-7 }
    }
}

/// Nonzeros per component used when the caller gives no budget.
pub(crate) fn default_budget(bands: usize) -> usize {
    (bands / 4).max(1)
}

/// Keeps the `budget` largest-magnitude entries (ties: lower index) and
/// zeroes the rest.
fn hard_threshold(v: &mut Array1<f64>, budget: usize) {
    if budget >= v.len() {
        return;
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[j].abs().partial_cmp(&v[i].abs()).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    for &i in &order[budget..] {
        v[i] = 0.0;
    }
}

pub fn fit_spca(data: &SpectralMatrix, retain: usize, sparsity_budget: usize) -> Result<ReducedBasis> {
    fit_spca_with(data, retain, sparsity_budget, SpcaOptions::default())
}

/// Sparse PCA by truncated power iteration with hard thresholding.
///
/// Each component starts from the leading eigenvector of the current
/// (deflated) covariance, truncated to `sparsity_budget` entries, and
/// iterates `v ← T(C v) / ‖T(C v)‖` until the iterate moves less than `tol`.
/// The covariance is then projection-deflated, `C ← (I - vvᵀ) C (I - vvᵀ)`.
pub fn fit_spca_with(
    data: &SpectralMatrix,
    retain: usize,
    sparsity_budget: usize,
    opts: SpcaOptions,
) -> Result<ReducedBasis> {
    data.require_fit_size()?;
    let bands = data.bands();
    check_retain(retain, bands, "band count")?;
    if sparsity_budget == 0 || sparsity_budget > bands {
        return Err(Error::Parameter(format!("sparsity budget must lie in 1..={bands}, got {sparsity_budget}")));
    }
    let (mean, scatter) = mean_and_scatter(data.data());
    let mut cov = scatter / (data.samples() - 1) as f64;
    let full_rank = numerical_rank(&symmetric_eigen(&cov).0, bands.max(data.samples()));
    if retain > full_rank {
        return Err(Error::Rank { requested: retain, achievable: full_rank });
    }

    let mut projection = Array2::zeros((retain, bands));
    let mut explained = Array1::zeros(retain);
    for k in 0..retain {
        let (_, vecs) = symmetric_eigen(&cov);
        let mut v = vecs.row(0).to_owned();
        hard_threshold(&mut v, sparsity_budget);
        let n0 = v.dot(&v).sqrt();
        if n0 == 0.0 {
            return Err(Error::Rank { requested: retain, achievable: k });
        }
        v /= n0;

        let mut converged = false;
        let mut last_delta = f64::INFINITY;
        for _ in 0..opts.max_iter {
            let mut w = cov.dot(&v);
            hard_threshold(&mut w, sparsity_budget);
            let norm = w.dot(&w).sqrt();
            if norm == 0.0 {
                return Err(Error::Rank { requested: retain, achievable: k });
            }
            w /= norm;
            if w.dot(&v) < 0.0 {
                w.mapv_inplace(|x| -x);
            }
            last_delta = (&w - &v).mapv(|x| x * x).sum().sqrt();
            v = w;
            if last_delta < opts.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence(format!(
                "sparse component {} did not converge in {} iterations (last step {:.3e}, tol {:.1e})",
                k + 1,
                opts.max_iter,
                last_delta,
                opts.tol
            )));
        }
        normalize_sign(v.as_slice_mut().expect("contiguous"));
        explained[k] = v.dot(&cov.dot(&v));
        projection.row_mut(k).assign(&v);

        let cv = cov.dot(&v);
        let vcv = v.dot(&cv);
        let col = v.view().insert_axis(Axis(1));
        let cv_col = cv.view().insert_axis(Axis(1));
        // (I - vvᵀ) C (I - vvᵀ) = C - v(Cv)ᵀ - (Cv)vᵀ + (vᵀCv) vvᵀ
        cov = &cov - &col.dot(&cv_col.t()) - &cv_col.dot(&col.t()) + &(col.dot(&col.t()) * vcv);
    }
    Ok(ReducedBasis { method: Method::Spca, mean, projection, explained: Some(explained), seed: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimred::{fit_pca, linalg::subspace_angle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noisy(rows: usize, cols: usize, seed: u64) -> SpectralMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((rows, cols), |(_, c)| rng.random_range(-1.0..1.0) * (1.0 + 0.3 * c as f64));
        SpectralMatrix::new(data).unwrap()
    }

    #[test]
    fn full_budget_matches_pca() {
        let x = noisy(200, 12, 1);
        let sparse = fit_spca(&x, 4, 12).unwrap();
        let dense = fit_pca(&x, 4).unwrap();
        assert!(subspace_angle(&sparse.projection, &dense.projection) < 1e-6);
    }

    #[test]
    fn planted_support_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let support = [2usize, 5, 7];
        let rows = 400;
        let cols = 12;
        let mut data = Array2::zeros((rows, cols));
        for mut r in data.rows_mut() {
            let z: f64 = rng.sample::<f64, _>(StandardNormal) * 3.0;
            for c in 0..cols {
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.3;
                r[c] = noise + if support.contains(&c) { z } else { 0.0 };
            }
        }
        let basis = fit_spca(&SpectralMatrix::new(data).unwrap(), 1, 3).unwrap();
        let nz: Vec<usize> =
            basis.projection.row(0).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
        assert_eq!(nz, support);
    }

    #[test]
    fn budget_bounds_every_row() {
        let x = noisy(100, 10, 3);
        let basis = fit_spca(&x, 5, 3).unwrap();
        for r in basis.projection.rows() {
            assert!(r.iter().filter(|v| **v != 0.0).count() <= 3);
            assert!((r.dot(&r) - 1.0).abs() < 1e-12);
        }
        assert!(matches!(fit_spca(&x, 2, 0), Err(Error::Parameter(_))));
        assert!(matches!(fit_spca(&x, 2, 11), Err(Error::Parameter(_))));
    }

    #[test]
    fn iteration_cap_reports_convergence_error() {
        let x = noisy(100, 10, 4);
        let opts = SpcaOptions { max_iter: 1, tol: 0.0 };
        assert!(matches!(fit_spca_with(&x, 2, 3, opts), Err(Error::Convergence(_))));
    }
}
