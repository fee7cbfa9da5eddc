//! Small dense linear-algebra routines used by the reduction methods.

use ndarray::{Array1, Array2, ArrayView1, Axis};

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order (stable: equal eigenvalues keep
/// their original index order) and the matching unit eigenvectors as the
/// *rows* of the second array, each sign-normalized by [`normalize_sign`].
pub fn symmetric_eigen(matrix: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "symmetric_eigen needs a square matrix");
    let mut a: Vec<f64> = matrix.iter().copied().collect();
    // v holds eigenvectors as columns while rotating.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale > 0.0 {
        for sweep in 0..60 {
            let off: f64 = (0..n)
                .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
                .map(|(p, q)| a[p * n + q] * a[p * n + q])
                .sum::<f64>()
                .sqrt();
            if off == 0.0 || off <= 1e-300 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    let g = 100.0 * apq.abs();
                    // Off-diagonal entries below the diagonals' precision are
                    // annihilated outright once the early sweeps are done.
                    if sweep > 3
                        && a[p * n + p].abs() + g == a[p * n + p].abs()
                        && a[q * n + q].abs() + g == a[q * n + q].abs()
                    {
                        a[p * n + q] = 0.0;
                        a[q * n + p] = 0.0;
                        continue;
                    }
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = Array1::from_iter(order.iter().map(|&i| a[i * n + i]));
    let mut vectors = Array2::zeros((n, n));
    for (row, &col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[[row, k]] = v[k * n + col];
        }
        normalize_sign(vectors.row_mut(row).as_slice_mut().expect("standard layout"));
    }
    (values, vectors)
}

/// Flips `v` so that its largest-magnitude entry is positive; ties resolve
/// to the lowest index.
pub fn normalize_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Number of eigenvalues above the numerical-rank threshold.
pub fn numerical_rank(eigenvalues: &Array1<f64>, dim: usize) -> usize {
    let max = eigenvalues.iter().copied().fold(0.0, f64::max);
    let tol = max * dim as f64 * f64::EPSILON * 16.0;
    eigenvalues.iter().filter(|&&l| l > tol && l > 0.0).count()
}

/// Column means and the centered scatter matrix `Σ (x - μ)(x - μ)ᵀ`.
pub fn mean_and_scatter(data: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = data.nrows().max(1) as f64;
    let mean = data.sum_axis(Axis(0)) / n;
    let centered = data - &mean;
    let scatter = centered.t().dot(&centered);
    (mean, scatter)
}

/// Orthonormal basis (as rows) for the row space of `rows`, by two passes
/// of modified Gram–Schmidt. Rows that vanish are dropped.
pub fn orthonormal_rows(rows: &Array2<f64>) -> Array2<f64> {
    let mut basis: Vec<Array1<f64>> = Vec::new();
    for r in rows.rows() {
        let mut v = r.to_owned();
        let norm0 = v.dot(&v).sqrt();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.scaled_add(-proj, b);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 * norm0.max(1e-300) {
            basis.push(v / norm);
        }
    }
    let cols = rows.ncols();
    let mut out = Array2::zeros((basis.len(), cols));
    for (i, b) in basis.iter().enumerate() {
        out.row_mut(i).assign(b);
    }
    out
}

/// Largest principal angle (radians) between the row spaces of `a` and `b`.
///
/// Computed from the sine, `σ_max(Qa (I - Qbᵀ Qb))`, which stays accurate
/// for nearly identical subspaces where the cosine form loses all digits.
pub fn subspace_angle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let qa = orthonormal_rows(a);
    let qb = orthonormal_rows(b);
    let residual = &qa - &qa.dot(&qb.t()).dot(&qb);
    let gram = residual.dot(&residual.t());
    let (vals, _) = symmetric_eigen(&gram);
    let top = vals.iter().copied().fold(0.0, f64::max).max(0.0);
    let sine = top.sqrt().min(1.0);
    let angle = sine.asin();
    if qa.nrows() != qb.nrows() {
        // Spaces of unequal dimension are never the same span.
        angle.max(std::f64::consts::FRAC_PI_2)
    } else {
        angle
    }
}

/// `M^{-1/2}` for a symmetric positive-definite matrix.
pub fn inverse_sqrt(m: &Array2<f64>) -> Array2<f64> {
    let (vals, vecs) = symmetric_eigen(m);
    let scaled = Array2::from_shape_fn(vecs.dim(), |(i, j)| vecs[[i, j]] / vals[i].max(f64::MIN_POSITIVE).sqrt());
    vecs.t().dot(&scaled)
}

/// `M^{-1}` for a symmetric positive-definite matrix.
pub fn inverse_spd(m: &Array2<f64>) -> Array2<f64> {
    let (vals, vecs) = symmetric_eigen(m);
    let scaled = Array2::from_shape_fn(vecs.dim(), |(i, j)| vecs[[i, j]] / vals[i].max(f64::MIN_POSITIVE));
    vecs.t().dot(&scaled)
}

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}
