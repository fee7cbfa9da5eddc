//! Central finite-difference oracle for analytic gradients.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Worst relative error between `params.grad()` and central differences of
/// `f` over every coordinate of `params`.
///
/// `f` is evaluated at perturbed copies of `params`; the gradient slot of
/// `params` must already hold the analytic gradient.
pub fn finite_diff_check<F>(f: F, params: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> f64,
{
    let all: Vec<usize> = (0..params.len()).collect();
    finite_diff_check_at(f, params, eps, &all)
}

/// As [`finite_diff_check`], restricted to the listed coordinates.
pub fn finite_diff_check_at<F>(mut f: F, params: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: FnMut(&Tensor) -> f64,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Parameter(format!("finite-difference step must be positive, got {eps}")));
    }
    let analytic = params
        .grad()
        .ok_or_else(|| Error::Contract("finite_diff_check needs a populated gradient slot".into()))?
        .to_vec();
    let mut probe = params.detached();
    let mut worst = 0.0f64;
    for &i in coords {
        if i >= params.len() {
            return Err(Error::Index(format!("coordinate {i} out of range for {} parameters", params.len())));
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Oracle(format!("objective is not finite at coordinate {i}: {up}, {down}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(numeric, analytic[i]));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::layers::{self, ConvKernel3D, DenseLayer};
    use crate::autodiff::tape::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_objective_is_exact() {
        let c = [0.3, -1.7, 2.5, 0.9];
        let mut theta = Tensor::from_vec(vec![0.01, 0.02, -0.03, 0.005]);
        theta.set_grad(c.to_vec()).unwrap();
        let err = finite_diff_check(|t| t.data().iter().zip(c).map(|(a, b)| a * b).sum(), &theta, DEFAULT_EPS).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rejects_missing_grad_and_nan() {
        let t = Tensor::from_vec(vec![1.0]);
        assert!(matches!(finite_diff_check(|_| 0.0, &t, 1e-5), Err(Error::Contract(_))));
        let mut t = t;
        t.set_grad(vec![0.0]).unwrap();
        assert!(matches!(finite_diff_check(|_| f64::NAN, &t, 1e-5), Err(Error::Oracle(_))));
        assert!(matches!(finite_diff_check(|_| 0.0, &t, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn dense_relu_softmax_ce_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[4, 6], &mut rng);
        let l1 = DenseLayer::glorot(6, 5, &mut rng);
        let l2 = DenseLayer::glorot(5, 3, &mut rng);
        let labels = [0, 2, 1, 2];

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w1 = tape.leaf(l1.weights.clone());
        let b1 = tape.leaf(l1.bias.clone());
        let w2 = tape.leaf(l2.weights.clone());
        let b2 = tape.leaf(l2.bias.clone());
        let h = tape.dense(xv, w1, b1).unwrap();
        let h = tape.relu(h);
        let z = tape.dense(h, w2, b2).unwrap();
        let loss = tape.cross_entropy(z, &labels).unwrap();
        tape.backward(loss).unwrap();

        let objective = |a: &DenseLayer, b: &DenseLayer| {
            let h = layers::relu(&layers::dense_forward(&x, a).unwrap());
            layers::cross_entropy_loss(&layers::dense_forward(&h, b).unwrap(), &labels).unwrap()
        };

        let mut p = l1.weights.clone();
        p.set_grad(tape.grad(w1).unwrap().to_vec()).unwrap();
        let e = finite_diff_check(
            |t| objective(&DenseLayer { weights: t.clone(), bias: l1.bias.clone() }, &l2),
            &p,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(e < 1e-6, "{e}");

        let mut p = l2.bias.clone();
        p.set_grad(tape.grad(b2).unwrap().to_vec()).unwrap();
        let e = finite_diff_check(
            |t| objective(&l1, &DenseLayer { weights: l2.weights.clone(), bias: t.clone() }),
            &p,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn conv3d_micro_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random(&[2, 4, 4, 5, 1], &mut rng);
        let k = ConvKernel3D::glorot(1, [2, 2, 3], 1, &mut rng);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.leaf(k.weights.clone());
        let b = tape.leaf(k.bias.clone());
        let y = tape.conv3d(xv, w, b).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();

        let mut p = k.weights.clone();
        p.set_grad(tape.grad(w).unwrap().to_vec()).unwrap();
        let e = finite_diff_check(
            |t| {
                let kk = ConvKernel3D { weights: t.clone(), bias: k.bias.clone() };
                layers::conv3d_forward(&x, &kk).unwrap().data().iter().map(|v| v * v).sum()
            },
            &p,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(e < 1e-6, "{e}");
    }
}
