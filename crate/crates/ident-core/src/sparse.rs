//! Group-Lasso shortlist of dictionary features.
//!
//! The regression runs on max-norm-scaled columns and penalizes the Euclidean
//! norm of each feature's coefficient block, so a feature enters or leaves
//! the model as a whole. The solver is ADMM with a cached factorization of
//! the (small) normal matrix; per-iteration work is independent of the
//! number of samples.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dictionary::{mutual_coherence, FeatureSystem};
use crate::error::{IdentError, Result};
use crate::linalg::Cholesky;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Group penalty weight.
    pub lambda: f64,
    /// ADMM coupling parameter.
    pub rho: f64,
    /// Stop when both primal and dual residual norms fall below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { lambda: 500.0, rho: 1.0, tol: 1e-6, max_iters: 10_000 }
    }
}

/// Result of the group-Lasso stage. `z` holds the scaled coefficients (one
/// per matrix column; divide by the column max-norm for physical values).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseSolution {
    pub z: Array1<f64>,
    /// Thresholding statistic per feature.
    pub block_magnitudes: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Columns dropped because their max-norm is zero.
    pub excluded_columns: Vec<usize>,
    pub lambda: f64,
}

impl SparseSolution {
    /// Physical (de-normalized) coefficients: z_c / ||column c||_inf.
    pub fn denormalized(&self, sys: &FeatureSystem) -> Array1<f64> {
        let mut out = self.z.clone();
        for c in 0..out.len() {
            let m = sys.column_meta(c).max_norm;
            out[c] = if m > 0.0 { out[c] / m } else { 0.0 };
        }
        out
    }

    /// Features whose coefficient block is not identically zero.
    pub fn active_features(&self, sys: &FeatureSystem) -> Vec<usize> {
        (0..sys.n_features())
            .filter(|&j| sys.block(j).any(|c| self.z[c] != 0.0))
            .collect()
    }
}

/// Minimize 0.5 ||b - A z||^2 + lambda * sum_j ||z_block_j||_2 over the
/// max-norm-scaled columns A. Zero columns are excluded and report 0.
pub fn group_lasso_admm(sys: &FeatureSystem, cfg: &SolverConfig) -> Result<SparseSolution> {
    if !(cfg.lambda.is_finite() && cfg.lambda >= 0.0) {
        return Err(IdentError::InvalidParameter(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    if !(cfg.rho.is_finite() && cfg.rho > 0.0) {
        return Err(IdentError::InvalidParameter(format!("rho must be > 0, got {}", cfg.rho)));
    }
    if !(cfg.tol.is_finite() && cfg.tol > 0.0) || cfg.max_iters == 0 {
        return Err(IdentError::InvalidParameter("solver needs tol > 0 and max_iters >= 1".into()));
    }

    let n_cols = sys.n_columns();
    let scale: Vec<f64> = (0..n_cols).map(|c| sys.column_meta(c).max_norm).collect();
    let included: Vec<usize> = (0..n_cols).filter(|&c| scale[c] > 0.0).collect();
    let excluded_columns: Vec<usize> = (0..n_cols).filter(|&c| scale[c] == 0.0).collect();
    if included.is_empty() {
        return Ok(SparseSolution {
            z: Array1::zeros(n_cols),
            block_magnitudes: vec![0.0; sys.n_features()],
            iterations: 0,
            converged: true,
            excluded_columns,
            lambda: cfg.lambda,
        });
    }
    let k = included.len();

    // Gram and right-hand side of the scaled system, built once. Scaling by
    // the diagonal of max-norms happens after the single large product.
    let m = sys.matrix();
    let gram_full = m.t().dot(&m);
    let atb_full = m.t().dot(&sys.b_hat());
    let mut gram = Array2::zeros((k, k));
    let mut atb = Array1::zeros(k);
    for (p, &cp) in included.iter().enumerate() {
        atb[p] = atb_full[cp] / scale[cp];
        for (q, &cq) in included.iter().enumerate() {
            gram[[p, q]] = gram_full[[cp, cq]] / (scale[cp] * scale[cq]);
        }
    }
    let factor_for = |rho: f64| {
        let mut normal = gram.clone();
        for p in 0..k {
            normal[[p, p]] += rho;
        }
        Cholesky::factor(&normal)
    };
    let mut rho = cfg.rho;
    let mut chol = factor_for(rho);

    // Feature blocks in included-column positions.
    let blocks: Vec<Vec<usize>> = (0..sys.n_features())
        .map(|j| {
            sys.block(j)
                .filter_map(|c| included.binary_search(&c).ok())
                .collect()
        })
        .collect();

    let mut z = Array1::<f64>::zeros(k);
    let mut w = Array1::<f64>::zeros(k);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let shrink = cfg.lambda / rho;
        let rhs = &atb + &(rho * (&z - &w));
        let x = chol.solve(rhs.view());
        let v = &x + &w;
        let mut z_new = Array1::<f64>::zeros(k);
        for block in &blocks {
            let norm: f64 = block.iter().map(|&p| v[p] * v[p]).sum::<f64>().sqrt();
            if norm > shrink {
                let factor = 1.0 - shrink / norm;
                for &p in block {
                    z_new[p] = factor * v[p];
                }
            }
        }
        let primal = (&x - &z_new).iter().map(|r| r * r).sum::<f64>().sqrt();
        let dual = rho * (&z_new - &z).iter().map(|r| r * r).sum::<f64>().sqrt();
        w = &w + &(&x - &z_new);
        z = z_new;
        if primal < cfg.tol && dual < cfg.tol {
            converged = true;
            break;
        }
        // Residual balancing: when one residual dominates, shift rho toward
        // it (and rescale the scaled dual variable), refactoring the cached
        // normal matrix. Amortized every 25 iterations.
        if iterations % 25 == 0 {
            if primal > 10.0 * dual && rho < 1e8 {
                rho *= 2.0;
                w.mapv_inplace(|v| v / 2.0);
                chol = factor_for(rho);
            } else if dual > 10.0 * primal && rho > 1e-6 {
                rho /= 2.0;
                w.mapv_inplace(|v| v * 2.0);
                chol = factor_for(rho);
            }
        }
    }

    let mut z_full = Array1::zeros(n_cols);
    for (p, &c) in included.iter().enumerate() {
        z_full[c] = z[p];
    }
    let block_magnitudes = normalized_block_magnitudes(sys, z_full.view());
    Ok(SparseSolution {
        z: z_full,
        block_magnitudes,
        iterations,
        converged,
        excluded_columns,
        lambda: cfg.lambda,
    })
}

/// Thresholding statistic per feature: the feature column's L1 norm times
/// the exact L1 norm of the de-normalized coefficient function over the
/// spatial domain.
pub fn normalized_block_magnitudes(
    sys: &FeatureSystem,
    z: ndarray::ArrayView1<'_, f64>,
) -> Vec<f64> {
    assert_eq!(z.len(), sys.n_columns(), "z length must match matrix columns");
    (0..sys.n_features())
        .map(|j| {
            let coefs: Vec<f64> = sys
                .block(j)
                .map(|c| {
                    let m = sys.column_meta(c).max_norm;
                    if m > 0.0 {
                        z[c] / m
                    } else {
                        0.0
                    }
                })
                .collect();
            sys.feature_meta(j).function_l1_norm * sys.coefficient_abs_integral(j, &coefs)
        })
        .collect()
}

/// How the candidate threshold tau is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    Absolute(f64),
    /// tau = fraction * max magnitude.
    RelativeToMax(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::RelativeToMax(0.1)
    }
}

/// Feature indices whose magnitude clears the threshold (and is positive),
/// in ascending order.
pub fn select_candidates(magnitudes: &[f64], threshold: Threshold) -> Vec<usize> {
    let tau = match threshold {
        Threshold::Absolute(t) => t,
        Threshold::RelativeToMax(frac) => {
            frac * magnitudes.iter().copied().fold(0.0f64, f64::max)
        }
    };
    magnitudes
        .iter()
        .enumerate()
        .filter(|&(_, &m)| m > 0.0 && m >= tau)
        .map(|(j, _)| j)
        .collect()
}

/// Quantities entering the incoherence-based support recovery guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConditions {
    /// Mutual coherence of the feature columns.
    pub coherence: f64,
    /// Upper bound on the true support size.
    pub sparsity: usize,
    /// max_j ||F[j]||_inf / ||F[j]||_L2.
    pub w_max: f64,
    /// min_j of the same ratio.
    pub w_min: f64,
    /// L2 bound on the regression residual under the true coefficients.
    pub residual_bound: f64,
    pub dx: f64,
    pub dt: f64,
}

impl RecoveryConditions {
    /// Measure coherence and column weights from a system.
    pub fn from_system(sys: &FeatureSystem, sparsity: usize, residual_bound: f64) -> Self {
        let mu = mutual_coherence(sys).mu;
        let mut w_max = 0.0f64;
        let mut w_min = f64::INFINITY;
        for j in 0..sys.n_features() {
            let meta = sys.feature_meta(j);
            if meta.function_l2_norm > 0.0 {
                let w = meta.max_norm / meta.function_l2_norm;
                w_max = w_max.max(w);
                w_min = w_min.min(w);
            }
        }
        RecoveryConditions {
            coherence: mu,
            sparsity,
            w_max,
            w_min,
            residual_bound,
            dx: sys.dx(),
            dt: sys.dt(),
        }
    }

    /// Denominator shared by the guarantee formulas; positive iff the side
    /// conditions hold.
    fn denominator(&self) -> Result<f64> {
        let mu = self.coherence;
        let s = self.sparsity as f64;
        if !(0.0..1.0).contains(&mu) {
            return Err(IdentError::RecoveryCondition(format!(
                "coherence must lie in [0, 1), got {mu}"
            )));
        }
        if self.sparsity == 0 {
            return Err(IdentError::RecoveryCondition("sparsity must be >= 1".into()));
        }
        if mu * (s - 1.0) >= 1.0 {
            return Err(IdentError::RecoveryCondition(format!(
                "coherence {mu} times (sparsity - 1) reaches 1; columns are too correlated"
            )));
        }
        if !(self.w_min > 0.0 && self.w_max >= self.w_min) {
            return Err(IdentError::RecoveryCondition(format!(
                "need 0 < w_min <= w_max, got w_min = {}, w_max = {}",
                self.w_min, self.w_max
            )));
        }
        if mu * s / (1.0 - mu * (s - 1.0)) >= self.w_min / self.w_max {
            return Err(IdentError::RecoveryCondition(format!(
                "weight spread w_min/w_max = {} cannot absorb coherence {mu} at sparsity {}",
                self.w_min / self.w_max,
                self.sparsity
            )));
        }
        if !(self.dx > 0.0 && self.dt > 0.0) {
            return Err(IdentError::RecoveryCondition("dx and dt must be positive".into()));
        }
        if !(self.residual_bound.is_finite() && self.residual_bound >= 0.0) {
            return Err(IdentError::RecoveryCondition("residual bound must be >= 0".into()));
        }
        Ok(self.w_min * (1.0 - mu * (s - 1.0)) - self.w_max * mu * s)
    }
}

/// Penalty weight under which the Lasso support is guaranteed to stay inside
/// the true support. The residual bound is bumped by a relative 1e-6 to
/// realize the strict inequality the guarantee needs.
pub fn recovery_guarantee_lambda(cond: &RecoveryConditions) -> Result<f64> {
    let den = cond.denominator()?;
    let mu = cond.coherence;
    let s = cond.sparsity as f64;
    let eps_plus = cond.residual_bound * (1.0 + 1e-6);
    Ok((1.0 - (s - 1.0) * mu) / den * eps_plus / (cond.dx * cond.dt))
}

/// Bound on max_j ||F[j]||_L2 |a_hat_j - a_j| for the de-normalized Lasso
/// coefficients at the guaranteed lambda.
pub fn recovery_error_bound(cond: &RecoveryConditions) -> Result<f64> {
    let den = cond.denominator()?;
    let eps = cond.residual_bound;
    Ok((cond.w_max + eps / (cond.dx * cond.dt).sqrt()) / den * eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(matrix: Array2<f64>, b: Array1<f64>, blocks: &[usize]) -> FeatureSystem {
        FeatureSystem::synthetic(matrix, b, 1.0, 1.0, blocks).unwrap()
    }

    /// Columns are distinct standard basis vectors, so the scaled matrix is
    /// orthonormal with unit max-norms and the minimizer has a closed form.
    fn orthonormal_system(b: &Array1<f64>, blocks: &[usize]) -> FeatureSystem {
        let n = b.len();
        let k: usize = blocks.iter().sum();
        assert!(k <= n);
        let mut m = Array2::zeros((n, k));
        for c in 0..k {
            m[[c, c]] = 1.0;
        }
        synthetic(m, b.clone(), blocks)
    }

    #[test]
    fn admm_matches_block_shrinkage_closed_form() {
        let b = array![3.0, -4.0, 0.2, 0.1, 1.0, -0.5];
        let sys = orthonormal_system(&b, &[2, 2]);
        let cfg = SolverConfig { lambda: 1.0, tol: 1e-10, ..Default::default() };
        let sol = group_lasso_admm(&sys, &cfg).unwrap();
        assert!(sol.converged);
        // Block 0 sees v = (3, -4), norm 5, factor 1 - 1/5.
        assert_abs_diff_eq!(sol.z[0], 3.0 * 0.8, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.z[1], -4.0 * 0.8, epsilon = 1e-6);
        // Block 1 sees norm ~0.2236 < lambda: fully shrunk.
        assert_eq!(sol.z[2], 0.0);
        assert_eq!(sol.z[3], 0.0);
        assert_eq!(sol.active_features(&sys), vec![0]);
    }

    #[test]
    fn large_lambda_zeroes_everything() {
        let b = array![1.0, 2.0, -1.0, 0.5];
        let sys = orthonormal_system(&b, &[1, 1, 1]);
        // max block norm of A^T b is 2; anything above it kills all blocks.
        let cfg = SolverConfig { lambda: 2.1, tol: 1e-10, ..Default::default() };
        let sol = group_lasso_admm(&sys, &cfg).unwrap();
        assert!(sol.z.iter().all(|&v| v == 0.0));
        assert!(sol.block_magnitudes.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn zero_lambda_reduces_to_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Array2::from_shape_fn((30, 4), |_| rng.gen_range(-1.0..1.0));
        let b = Array1::from_shape_fn(30, |_| rng.gen_range(-1.0..1.0));
        let sys = synthetic(m.clone(), b.clone(), &[1, 1, 1, 1]);
        let cfg = SolverConfig { lambda: 0.0, tol: 1e-12, max_iters: 50_000, ..Default::default() };
        let sol = group_lasso_admm(&sys, &cfg).unwrap();
        // Oracle: scaled least squares solved independently.
        let scale: Vec<f64> = (0..4).map(|c| sys.column_meta(c).max_norm).collect();
        let mut scaled = m.clone();
        for c in 0..4 {
            for r in 0..30 {
                scaled[[r, c]] /= scale[c];
            }
        }
        let x = crate::linalg::lstsq(scaled.view(), b.view(), 1e-12).ok().unwrap();
        for c in 0..4 {
            assert_abs_diff_eq!(sol.z[c], x[c], epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_columns_are_excluded_and_report_zero() {
        let m = array![[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0]];
        let sys = synthetic(m, array![1.0, 2.0, -1.0], &[1, 1]);
        let sol = group_lasso_admm(&sys, &SolverConfig { lambda: 0.1, ..Default::default() })
            .unwrap();
        assert_eq!(sol.excluded_columns, vec![1]);
        assert_eq!(sol.z[1], 0.0);
        assert_eq!(sol.block_magnitudes[1], 0.0);
    }

    #[test]
    fn magnitude_reduces_to_scalar_formula_for_constant_blocks() {
        // One column with ||F[j]||_L1 = 3, ||F[j]||_inf = 4, z_j = 2 over a
        // unit-span domain: magnitude = 3 * |2/4| = 1.5.
        let m = array![[4.0], [2.0]];
        let sys = FeatureSystem::synthetic(m, array![0.0, 0.0], 1.0, 0.5, &[1]).unwrap();
        assert_abs_diff_eq!(sys.feature_meta(0).function_l1_norm, 3.0, epsilon = 1e-14);
        let mags = normalized_block_magnitudes(&sys, array![2.0].view());
        assert_abs_diff_eq!(mags[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn magnitude_uses_exact_piecewise_integral_for_varying_blocks() {
        // Two-hat block with de-normalized node values (-1, 1): the
        // coefficient function integrates to 1/2 in absolute value.
        let m = array![[2.0, 0.0], [0.0, 4.0]];
        let sys = FeatureSystem::synthetic(m, array![0.0, 0.0], 1.0, 1.0, &[2]).unwrap();
        let z = array![-2.0, 4.0]; // de-normalized: -1 and 1
        let mags = normalized_block_magnitudes(&sys, z.view());
        let l1 = sys.feature_meta(0).function_l1_norm;
        assert_abs_diff_eq!(mags[0], l1 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn candidate_selection_thresholds() {
        let mags = [5.0, 0.4, 0.3];
        assert_eq!(select_candidates(&mags, Threshold::RelativeToMax(0.1)), vec![0]);
        assert_eq!(select_candidates(&mags, Threshold::Absolute(0.35)), vec![0, 1]);
        // tau = 0 keeps everything with positive magnitude.
        let with_zero = [5.0, 0.0, 0.3];
        assert_eq!(select_candidates(&with_zero, Threshold::Absolute(0.0)), vec![0, 2]);
    }

    proptest! {
        #[test]
        fn higher_threshold_selects_subset(frac1 in 0.0f64..1.0, frac2 in 0.0f64..1.0) {
            let mags = [3.0, 1.0, 0.5, 0.1, 0.0];
            let (lo, hi) = if frac1 <= frac2 { (frac1, frac2) } else { (frac2, frac1) };
            let big = select_candidates(&mags, Threshold::RelativeToMax(lo));
            let small = select_candidates(&mags, Threshold::RelativeToMax(hi));
            prop_assert!(small.iter().all(|j| big.contains(j)));
        }
    }

    #[test]
    fn guarantee_lambda_formula() {
        let cond = RecoveryConditions {
            coherence: 0.1,
            sparsity: 2,
            w_max: 1.0,
            w_min: 1.0,
            residual_bound: 0.01,
            dx: 0.1,
            dt: 0.01,
        };
        let lambda = recovery_guarantee_lambda(&cond).unwrap();
        let expect = 0.9 / (0.9 - 0.2) * 0.01 * (1.0 + 1e-6) / 0.001;
        assert_abs_diff_eq!(lambda, expect, epsilon = 1e-9);
    }

    #[test]
    fn guarantee_rejects_violated_side_conditions() {
        let mut cond = RecoveryConditions {
            coherence: 0.6,
            sparsity: 3,
            w_max: 1.0,
            w_min: 1.0,
            residual_bound: 0.01,
            dx: 1.0,
            dt: 1.0,
        };
        // mu (s-1) = 1.2 >= 1.
        assert!(recovery_guarantee_lambda(&cond).is_err());
        // mu s / (1 - mu(s-1)) = 0.375/0.75 = 0.5 exceeds w_min/w_max = 0.2.
        cond.coherence = 0.125;
        cond.w_min = 0.2;
        assert!(recovery_guarantee_lambda(&cond).is_err());
    }

    #[test]
    fn error_bound_formula() {
        let cond = RecoveryConditions {
            coherence: 0.05,
            sparsity: 2,
            w_max: 2.0,
            w_min: 1.0,
            residual_bound: 0.1,
            dx: 1.0,
            dt: 1.0,
        };
        let den = 1.0 * (1.0 - 0.05) - 2.0 * 0.05 * 2.0;
        let expect = (2.0 + 0.1) / den * 0.1;
        assert_abs_diff_eq!(recovery_error_bound(&cond).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn admm_converges_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let m = Array2::from_shape_fn((20, 6), |_| rng.gen_range(-1.0..1.0));
        let b = Array1::from_shape_fn(20, |_| rng.gen_range(-1.0..1.0));
        let sys = synthetic(m, b, &[2, 2, 2]);
        let cfg = SolverConfig { lambda: 0.5, tol: 1e-8, ..Default::default() };
        let sol = group_lasso_admm(&sys, &cfg).unwrap();
        assert!(sol.converged, "iterations {}", sol.iterations);
        assert!(sol.iterations < 10_000);
    }
}
