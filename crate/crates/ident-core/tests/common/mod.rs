//! Helpers shared by the integration tests. The centerpiece is an
//! independent proximal-gradient group-lasso solver used to cross-check the
//! ADMM solver: same objective, entirely different iteration.

use ident_core::dictionary::FeatureSystem;
use ndarray::{Array1, Array2};
use std::ops::Range;

/// The max-norm-scaled matrix the sparse solver actually works in. Zero
/// columns stay zero, matching the solver's convention of excluding them.
pub fn scaled_matrix(sys: &FeatureSystem) -> Array2<f64> {
    let mut a = sys.matrix().to_owned();
    for c in 0..a.ncols() {
        let m = sys.column_meta(c).max_norm;
        if m > 0.0 {
            a.column_mut(c).mapv_inplace(|v| v / m);
        }
    }
    a
}

pub fn block_ranges(sys: &FeatureSystem) -> Vec<Range<usize>> {
    (0..sys.n_features()).map(|j| sys.block(j)).collect()
}

/// 0.5 ||b - A z||^2 + lambda sum_g ||z_g||_2 in the scaled coordinates.
pub fn group_lasso_objective(
    a: &Array2<f64>,
    b: &Array1<f64>,
    blocks: &[Range<usize>],
    lambda: f64,
    z: &Array1<f64>,
) -> f64 {
    let r = b - &a.dot(z);
    let fit = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let penalty: f64 = blocks
        .iter()
        .map(|g| z.slice(ndarray::s![g.clone()]).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum();
    fit + lambda * penalty
}

/// Largest eigenvalue of A^T A by power iteration, padded slightly so the
/// ISTA step 1/L is always on the safe side.
fn gram_spectral_bound(a: &Array2<f64>) -> f64 {
    let k = a.ncols();
    let gram = a.t().dot(a);
    // Deterministic start with energy in every coordinate.
    let mut v = Array1::from_shape_fn(k, |i| 1.0 + i as f64 / k as f64);
    let mut lam = 0.0f64;
    for _ in 0..500 {
        let w = gram.dot(&v);
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return 1.0;
        }
        lam = v.dot(&w) / v.dot(&v);
        v = w / n;
    }
    lam.max(f64::MIN_POSITIVE) * 1.01
}

/// Plain ISTA on the scaled system: gradient step on the quadratic, then the
/// group soft-threshold. Slow but simple enough to trust as an oracle.
pub fn group_lasso_ista(
    sys: &FeatureSystem,
    lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Array1<f64> {
    let a = scaled_matrix(sys);
    let b = sys.b_hat().to_owned();
    let blocks = block_ranges(sys);
    let step = 1.0 / gram_spectral_bound(&a);
    let mut z = Array1::zeros(a.ncols());
    for _ in 0..max_iters {
        let grad = a.t().dot(&(&a.dot(&z) - &b));
        let v = &z - &(step * &grad);
        let mut z_new = v.clone();
        for g in &blocks {
            let norm = v
                .slice(ndarray::s![g.clone()])
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            let shrink = if norm > 0.0 { (1.0 - step * lambda / norm).max(0.0) } else { 0.0 };
            for c in g.clone() {
                z_new[c] = v[c] * shrink;
            }
        }
        let delta =
            z_new.iter().zip(z.iter()).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max);
        z = z_new;
        if delta <= tol {
            break;
        }
    }
    z
}
