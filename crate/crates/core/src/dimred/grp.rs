use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Method, ReducedBasis};
use crate::error::{Error, Result};

/// Gaussian random projection: a data-independent `retain × bands` matrix
/// with i.i.d. `Normal(0, 1 / retain)` entries and a zero mean vector.
pub fn fit_grp(bands: usize, retain: usize, seed: u64) -> Result<ReducedBasis> {
    if retain == 0 || retain >= bands {
        return Err(Error::Parameter(format!(
            "random projection needs 1 <= retained < bands, got {retain} of {bands}"
        )));
    }
    let normal = Normal::new(0.0, (1.0 / retain as f64).sqrt()).expect("positive scale");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection = Array2::from_shape_fn((retain, bands), |_| normal.sample(&mut rng));
    Ok(ReducedBasis { method: Method::Grp, mean: Array1::zeros(bands), projection, explained: None, seed: Some(seed) })
}
