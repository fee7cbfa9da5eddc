use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::linalg::{inverse_sqrt, mean_and_scatter, numerical_rank, symmetric_eigen};
use super::{check_retain, Method, ReducedBasis, SpectralMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IcaOptions {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-6 }
    }
}

/// `(W Wᵀ)^{-1/2} W`
fn symmetric_decorrelation(w: &Array2<f64>) -> Array2<f64> {
    inverse_sqrt(&w.dot(&w.t())).dot(w)
}

pub fn fit_ica(data: &SpectralMatrix, retain: usize, seed: u64) -> Result<ReducedBasis> {
    fit_ica_with(data, retain, seed, IcaOptions::default())
}

/// FastICA with PCA whitening, the logcosh contrast (`g = tanh`) and
/// symmetric decorrelation.
///
/// The returned projection is `W K`, where `K` whitens the centered data to
/// `retain` dimensions and `W` is the orthogonal unmixing matrix, so the
/// transformed training data has unit-variance, uncorrelated components.
pub fn fit_ica_with(data: &SpectralMatrix, retain: usize, seed: u64, opts: IcaOptions) -> Result<ReducedBasis> {
    data.require_fit_size()?;
    check_retain(retain, data.bands(), "band count")?;
    let n = data.samples();
    let (mean, scatter) = mean_and_scatter(data.data());
    let cov = scatter / (n - 1) as f64;
    let (values, vectors) = symmetric_eigen(&cov);
    let rank = numerical_rank(&values, data.bands().max(n));
    if retain > rank {
        return Err(Error::Rank { requested: retain, achievable: rank });
    }
    let mut whitening = vectors.slice(s![..retain, ..]).to_owned();
    for (mut row, &l) in whitening.rows_mut().into_iter().zip(values.iter()) {
        row /= l.sqrt();
    }
    let centered = data.data() - &mean;
    let z = centered.dot(&whitening.t());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Array2::from_shape_fn((retain, retain), |_| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&init);
    let nf = n as f64;
    let mut converged = false;
    let mut lim = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let y = z.dot(&w.t());
        let g = y.mapv(f64::tanh);
        let g_prime_mean: Array1<f64> = g.mapv(|t| 1.0 - t * t).mean_axis(Axis(0)).expect("n >= 2");
        let mut w_next = g.t().dot(&z) / nf;
        for (mut row, (wr, gp)) in w_next.rows_mut().into_iter().zip(w.rows().into_iter().zip(g_prime_mean.iter())) {
            row.scaled_add(-gp, &wr);
        }
        let w_next = symmetric_decorrelation(&w_next);
        lim = w_next.rows().into_iter().zip(w.rows()).map(|(a, b)| (a.dot(&b).abs() - 1.0).abs()).fold(0.0, f64::max);
        w = w_next;
        if lim < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "FastICA did not converge after {iterations} iterations (change {lim:.3e}, tol {:.1e}); try a different seed",
            opts.tol
        )));
    }
    Ok(ReducedBasis { method: Method::Ica, mean, projection: w.dot(&whitening), explained: None, seed: Some(seed) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn correlation(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
        let am = a.mean().unwrap();
        let bm = b.mean().unwrap();
        let ac = a.mapv(|v| v - am);
        let bc = b.mapv(|v| v - bm);
        ac.dot(&bc) / (ac.dot(&ac).sqrt() * bc.dot(&bc).sqrt())
    }

    #[test]
    fn recovers_planted_uniform_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 3000;
        let sources = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let mixing = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let x = SpectralMatrix::new(sources.dot(&mixing.t())).unwrap();
        let basis = fit_ica(&x, 3, 42).unwrap();
        let h = basis.transform(&x).unwrap();
        for s in sources.columns() {
            let best = h.data().columns().into_iter().map(|c| correlation(s, c).abs()).fold(0.0, f64::max);
            assert!(best > 0.99, "best |r| = {best}");
        }
    }

    #[test]
    fn outputs_are_white() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1000;
        let sources = Array2::from_shape_fn((n, 5), |(_, c)| {
            let u: f64 = rng.random_range(-1.0..1.0);
            if c % 2 == 0 {
                u.powi(3)
            } else {
                u
            }
        });
        let mixing = Array2::from_shape_fn((5, 8), |_| rng.random_range(-1.0..1.0));
        let x = SpectralMatrix::new(sources.dot(&mixing)).unwrap();
        let basis = fit_ica(&x, 4, 1).unwrap();
        let h = basis.transform(&x).unwrap().centered();
        let cov = h.data().t().dot(h.data()) / (n - 1) as f64;
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    assert!((cov[[i, j]] - 1.0).abs() < 1e-6);
                } else {
                    assert!(cov[[i, j]].abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn white_gaussian_single_component_terminates() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = SpectralMatrix::new(Array2::from_shape_fn((2000, 3), |_| StandardNormal.sample(&mut rng))).unwrap();
        let basis = fit_ica(&x, 1, 3).unwrap();
        let h = basis.transform(&x).unwrap().centered();
        let var = h.data().column(0).dot(&h.data().column(0)) / 1999.0;
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn white_gaussian_multi_component_returns() {
        // No non-Gaussian direction exists, so either outcome is legitimate;
        // the call must return and a success must still be white.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = SpectralMatrix::new(Array2::from_shape_fn((2000, 3), |_| StandardNormal.sample(&mut rng))).unwrap();
        match fit_ica(&x, 3, 5) {
            Ok(basis) => {
                let h = basis.transform(&x).unwrap().centered();
                for c in h.data().columns() {
                    assert!((c.dot(&c) / 1999.0 - 1.0).abs() < 1e-9);
                }
            }
            Err(Error::Convergence(msg)) => assert!(msg.contains("300 iterations")),
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn same_seed_same_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x =
            SpectralMatrix::new(Array2::from_shape_fn((500, 4), |_| rng.random_range(-1.0f64..1.0).powi(3))).unwrap();
        assert_eq!(fit_ica(&x, 3, 9).unwrap(), fit_ica(&x, 3, 9).unwrap());
    }
}
