//! The end-to-end identification pipeline, basis expansion for varying
//! coefficients, the error-budget diagnostic, and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::denoise::{denoise_field, DenoiseMethod};
use crate::derivatives::FieldDerivatives;
use crate::dictionary::{
    build_feature_system_masked, mutual_coherence, noise_to_signal_ratio, FemBasis, Feature,
    FeatureSystem, N_FEATURES,
};
use crate::error::{IdentError, Result};
use crate::evolution::{
    least_squares_fit, model_from_fit, subset_search, PdeModel, SearchConfig, TeeRecord,
};
use crate::grid::Field;
use crate::sparse::{
    group_lasso_admm, normalized_block_magnitudes, select_candidates, SolverConfig,
    SparseSolution, Threshold,
};

/// Full pipeline configuration. The defaults reproduce the constant-
/// coefficient setup: no denoising, lambda = 500, threshold at 10% of the
/// largest magnitude, and a single constant basis element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentConfig {
    pub denoise: DenoiseMethod,
    pub solver: SolverConfig,
    pub threshold: Threshold,
    /// FEM basis size L used for varying coefficients (1 = constant).
    pub basis_size: usize,
    /// Which features may carry an x-dependent coefficient (a whole L-block);
    /// the rest keep a single constant column. Moot when basis_size == 1.
    pub vary: [bool; N_FEATURES],
    pub search: SearchConfig,
    /// Evolve from and score against the raw input rather than the denoised
    /// field (the regression always runs on the denoised field).
    pub tee_on_raw: bool,
    /// Known constant coefficients (feature index, value) enabling the
    /// noise-to-signal diagnostic; leave empty to skip it.
    pub reference: Vec<(usize, f64)>,
}

impl Default for IdentConfig {
    fn default() -> Self {
        IdentConfig {
            denoise: DenoiseMethod::None,
            solver: SolverConfig::default(),
            threshold: Threshold::default(),
            basis_size: 1,
            vary: [true; N_FEATURES],
            search: SearchConfig::default(),
            tee_on_raw: false,
            reference: Vec::new(),
        }
    }
}

/// Mask with exactly the listed features allowed to vary.
pub fn vary_mask(features: &[Feature]) -> [bool; N_FEATURES] {
    let mut mask = [false; N_FEATURES];
    for f in features {
        mask[f.index()] = true;
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentReason {
    Identified,
    /// No block magnitude crossed the threshold.
    EmptyCandidateSet,
    /// Every candidate subset blew up or could not be fit.
    NoStableSubset,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mutual coherence of the empirical feature matrix.
    pub mu: f64,
    /// Columns with zero norm (excluded from coherence and regression).
    pub zero_columns: Vec<usize>,
    /// Noise-to-signal ratio under the reference coefficients, if given.
    pub nsr: Option<f64>,
    pub solver_iterations: usize,
    pub solver_converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentResult {
    /// Features whose magnitude crossed the threshold, ascending.
    pub candidates: Vec<usize>,
    pub candidate_names: Vec<String>,
    /// Thresholding statistic per feature.
    pub magnitudes: Vec<f64>,
    pub tee_table: Vec<TeeRecord>,
    pub model: Option<PdeModel>,
    /// TEE of the chosen model.
    pub tee: Option<f64>,
    pub diagnostics: Diagnostics,
    pub reason: IdentReason,
}

/// Denoise, differentiate, regress, threshold, and refine by time evolution.
pub fn ident_pipeline(data: &Field, cfg: &IdentConfig) -> Result<IdentResult> {
    let work = denoise_field(data, cfg.denoise)?;
    let derivs = FieldDerivatives::compute(&work)?;
    let g = data.grid();
    let basis = FemBasis::uniform(g.x_min, g.x_max, cfg.basis_size)?;
    let sys = build_feature_system_masked(&work, &derivs, &basis, &cfg.vary)?;
    let sol = group_lasso_admm(&sys, &cfg.solver)?;
    let magnitudes = normalized_block_magnitudes(&sys, sol.z.view());
    finish(data, &work, &sys, &sol, magnitudes, cfg)
}

fn finish(
    data: &Field,
    work: &Field,
    sys: &FeatureSystem,
    sol: &SparseSolution,
    magnitudes: Vec<f64>,
    cfg: &IdentConfig,
) -> Result<IdentResult> {
    let candidates = select_candidates(&magnitudes, cfg.threshold);
    let candidate_names =
        candidates.iter().map(|&j| sys.feature_tag(j).name.clone()).collect();
    let coherence = mutual_coherence(sys);
    let nsr = if cfg.reference.is_empty() {
        None
    } else {
        let mut a = vec![0.0; sys.n_features()];
        for &(j, v) in &cfg.reference {
            if j >= sys.n_features() {
                return Err(IdentError::InvalidParameter(format!(
                    "reference feature index {j} out of range"
                )));
            }
            a[j] = v;
        }
        Some(noise_to_signal_ratio(sys, &a)?)
    };
    let diagnostics = Diagnostics {
        mu: coherence.mu,
        zero_columns: coherence.zero_columns,
        nsr,
        solver_iterations: sol.iterations,
        solver_converged: sol.converged,
    };

    if candidates.is_empty() {
        return Ok(IdentResult {
            candidates,
            candidate_names,
            magnitudes,
            tee_table: Vec::new(),
            model: None,
            tee: None,
            diagnostics,
            reason: IdentReason::EmptyCandidateSet,
        });
    }
    let tee_data = if cfg.tee_on_raw { data } else { work };
    let search = subset_search(sys, tee_data, &candidates, &cfg.search)?;
    let (model, tee, reason) = match search.best_record() {
        Some(r) => (
            Some(PdeModel {
                support: r.support.clone(),
                coefficients: r.coefficients.clone(),
                basis: sys.basis().clone(),
            }),
            Some(r.tee),
            IdentReason::Identified,
        ),
        None => (None, None, IdentReason::NoStableSubset),
    };
    Ok(IdentResult {
        candidates,
        candidate_names,
        magnitudes,
        tee_table: search.records,
        model,
        tee,
        diagnostics,
        reason,
    })
}

/// Output of a basis-expansion sweep over increasing L.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeeRun {
    pub l_values: Vec<usize>,
    /// `magnitudes[k][j]`: thresholding statistic of feature j at
    /// L = l_values[k].
    pub magnitudes: Vec<Vec<f64>>,
    /// Relative infinity-norm change between consecutive magnitude rows;
    /// small values indicate the plateau.
    pub plateau_delta: Vec<f64>,
    /// TEE tables per L, present when the curve was requested.
    pub tee_tables: Option<Vec<Vec<TeeRecord>>>,
    /// The chosen support refit at every L (None where rank-deficient or no
    /// model was chosen).
    pub refits: Vec<Option<PdeModel>>,
    /// Full pipeline result at the largest L.
    pub result: IdentResult,
}

/// Sweep the basis size over `l_values` (strictly increasing), recording the
/// magnitude curve, then threshold and run the subset search at the largest
/// L. When `tee_curve` is set, every L additionally gets its own TEE table
/// over that L's candidates.
pub fn bee_run(
    data: &Field,
    cfg: &IdentConfig,
    l_values: &[usize],
    tee_curve: bool,
) -> Result<BeeRun> {
    if l_values.is_empty() {
        return Err(IdentError::InvalidParameter("bee_run needs at least one L".into()));
    }
    if l_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(IdentError::InvalidParameter("l_values must be strictly increasing".into()));
    }
    let work = denoise_field(data, cfg.denoise)?;
    let derivs = FieldDerivatives::compute(&work)?;
    let g = data.grid();
    let tee_data = if cfg.tee_on_raw { data } else { &work };

    let mut magnitudes: Vec<Vec<f64>> = Vec::with_capacity(l_values.len());
    let mut tee_tables = tee_curve.then(Vec::new);
    let mut result = None;
    for (k, &l) in l_values.iter().enumerate() {
        let basis = FemBasis::uniform(g.x_min, g.x_max, l)?;
        let sys = build_feature_system_masked(&work, &derivs, &basis, &cfg.vary)?;
        let sol = group_lasso_admm(&sys, &cfg.solver)?;
        let mags = normalized_block_magnitudes(&sys, sol.z.view());
        if let Some(tables) = &mut tee_tables {
            let cands = select_candidates(&mags, cfg.threshold);
            tables.push(if cands.is_empty() {
                Vec::new()
            } else {
                subset_search(&sys, tee_data, &cands, &cfg.search)?.records
            });
        }
        if k == l_values.len() - 1 {
            result = Some(finish(data, &work, &sys, &sol, mags.clone(), cfg)?);
        }
        magnitudes.push(mags);
    }
    let result = result.expect("l_values nonempty");

    let plateau_delta = magnitudes
        .windows(2)
        .map(|w| {
            let denom =
                w[1].iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            let diff = w[0]
                .iter()
                .zip(&w[1])
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            diff / denom
        })
        .collect();

    let mut refits = Vec::with_capacity(l_values.len());
    for &l in l_values {
        let Some(model) = &result.model else {
            refits.push(None);
            continue;
        };
        let basis = FemBasis::uniform(g.x_min, g.x_max, l)?;
        let sys = build_feature_system_masked(&work, &derivs, &basis, &cfg.vary)?;
        match least_squares_fit(&sys, &model.support) {
            Ok(coefs) => refits.push(Some(model_from_fit(&sys, &model.support, &coefs)?)),
            Err(IdentError::RankDeficient { .. }) => refits.push(None),
            Err(e) => return Err(e),
        }
    }

    Ok(BeeRun {
        l_values: l_values.to_vec(),
        magnitudes,
        plateau_delta,
        tee_tables,
        refits,
        result,
    })
}

/// L1 mass of the recovered coefficients outside the true support, over the
/// total recovered L1 mass. A run that produced no model identified nothing
/// and counts as fully wrong (ratio 1).
pub fn wrong_coefficient_ratio(model: Option<&PdeModel>, truth_support: &[usize]) -> f64 {
    let Some(m) = model else { return 1.0 };
    let mut total = 0.0;
    let mut wrong = 0.0;
    for (k, &j) in m.support.iter().enumerate() {
        let mass = m.coefficients[k].l1_mass(&m.basis);
        total += mass;
        if !truth_support.contains(&j) {
            wrong += mass;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        wrong / total
    }
}

/// Integral of |recovered coefficient of `feature` - truth| over the basis
/// domain, by composite midpoint quadrature. An unsupported feature counts as
/// the zero function.
pub fn coefficient_l1_error(
    model: &PdeModel,
    feature: Feature,
    truth: impl Fn(f64) -> f64,
    n_quad: usize,
) -> f64 {
    let (a, b) = model.basis.domain();
    let h = (b - a) / n_quad as f64;
    let pos = model.support.iter().position(|&j| j == feature.index());
    (0..n_quad)
        .map(|q| {
            let x = a + (q as f64 + 0.5) * h;
            let recovered = pos.map_or(0.0, |k| model.coefficient_at(k, x));
            (recovered - truth(x)).abs() * h
        })
        .sum()
}

/// Inputs of the additive error-budget diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetParams {
    /// Sample spacings of the given data.
    pub dt: f64,
    pub dx: f64,
    /// Spacings of the scheme that generated the data (0 = exact data).
    pub fine_dt: f64,
    pub fine_dx: f64,
    /// Order q of the generating scheme.
    pub scheme_order: u32,
    /// Order p of the polynomial behind the derivative approximation.
    pub poly_order: u32,
    /// Order r of the highest spatial derivative in the PDE.
    pub pde_order: u32,
    /// Measurement-noise standard deviation.
    pub sigma: f64,
    /// FEM basis size L.
    pub basis_size: usize,
}

/// The five additive contributions to the regression error, all with unit
/// constants: an order-of-magnitude diagnostic, not a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    /// Dt, from the backward time difference.
    pub dt_term: f64,
    /// Dx^(p+1-r), from the spatial derivative approximation.
    pub dx_term: f64,
    /// (fine_dt + fine_dx^q)(1/Dt + 1/Dx^r), from data generation.
    pub generation_term: f64,
    /// sigma (1/Dt + 1/Dx^r), from measurement noise.
    pub noise_term: f64,
    /// 1/L, from the finite element expansion.
    pub fem_term: f64,
    /// Sum of the five terms.
    pub total: f64,
}

pub fn predict_error_budget(p: &BudgetParams) -> Result<ErrorBudget> {
    if !(p.dt > 0.0 && p.dx > 0.0 && p.dt.is_finite() && p.dx.is_finite()) {
        return Err(IdentError::InvalidParameter("dt and dx must be positive".into()));
    }
    if !(p.fine_dt >= 0.0 && p.fine_dx >= 0.0 && p.sigma >= 0.0) {
        return Err(IdentError::InvalidParameter(
            "fine spacings and sigma must be nonnegative".into(),
        ));
    }
    if p.poly_order < p.pde_order {
        return Err(IdentError::InvalidParameter(format!(
            "polynomial order {} is below the PDE order {}",
            p.poly_order, p.pde_order
        )));
    }
    if p.basis_size == 0 {
        return Err(IdentError::InvalidParameter("basis_size must be >= 1".into()));
    }
    let r = p.pde_order as i32;
    let sampling = 1.0 / p.dt + 1.0 / p.dx.powi(r);
    let dt_term = p.dt;
    let dx_term = p.dx.powi((p.poly_order + 1) as i32 - r);
    let generation_term = (p.fine_dt + p.fine_dx.powi(p.scheme_order as i32)) * sampling;
    let noise_term = p.sigma * sampling;
    let fem_term = 1.0 / p.basis_size as f64;
    Ok(ErrorBudget {
        dt_term,
        dx_term,
        generation_term,
        noise_term,
        fem_term,
        total: dt_term + dx_term + generation_term + noise_term + fem_term,
    })
}
