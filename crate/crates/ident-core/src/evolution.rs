//! Model selection by time evolution.
//!
//! Candidate supports from the sparse stage are refit by plain least squares
//! and re-simulated from the data's initial slice with forward Euler on a
//! refined time step. The time-evolution error (TEE) is the area-weighted L1
//! distance between the re-simulated field and the data; wrong terms with
//! even derivatives blow up and wrong odd terms drift, so the error separates
//! correct from incorrect supports far more sharply than the regression
//! residual does.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derivatives::eno_derivative_slice;
use crate::dictionary::{FemBasis, Feature, FeatureSystem};
use crate::error::{IdentError, Result};
use crate::grid::Field;
use crate::linalg::{self, LstsqError};

/// One recovered coefficient: a constant or node values over the model basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Coefficient {
    Constant(f64),
    Varying(Vec<f64>),
}

impl Coefficient {
    pub fn max_abs(&self) -> f64 {
        match self {
            Coefficient::Constant(c) => c.abs(),
            // The expansion is piecewise linear, so its extrema sit at nodes.
            Coefficient::Varying(v) => v.iter().fold(0.0f64, |m, c| m.max(c.abs())),
        }
    }

    /// Integral of |coefficient| over the basis domain.
    pub fn l1_mass(&self, basis: &FemBasis) -> f64 {
        match self {
            Coefficient::Constant(c) => c.abs() * basis.span(),
            Coefficient::Varying(v) => basis.abs_integral(v),
        }
    }
}

/// A concrete PDE u_t = sum_k c_k(x) f_k(u, u_x, u_xx) over dictionary
/// features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeModel {
    /// Ascending feature indices.
    pub support: Vec<usize>,
    /// Parallel to `support`.
    pub coefficients: Vec<Coefficient>,
    pub basis: FemBasis,
}

impl PdeModel {
    pub fn features(&self) -> Vec<Feature> {
        self.support.iter().map(|&j| Feature::ALL[j]).collect()
    }

    /// Highest spatial-derivative order among supported features.
    pub fn derivative_order(&self) -> usize {
        self.support
            .iter()
            .map(|&j| Feature::ALL[j].derivative_order())
            .max()
            .unwrap_or(0)
    }

    /// Coefficient of the k-th supported feature at position x.
    pub fn coefficient_at(&self, k: usize, x: f64) -> f64 {
        match &self.coefficients[k] {
            Coefficient::Constant(c) => *c,
            Coefficient::Varying(v) => self.basis.expand(v, x),
        }
    }

    /// Largest |coefficient| of a feature, or 0 if unsupported.
    pub fn max_abs_coefficient(&self, feature: Feature) -> f64 {
        self.support
            .iter()
            .position(|&j| j == feature.index())
            .map(|k| self.coefficients[k].max_abs())
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveConfig {
    /// Fine step is `stability_factor * dx^max(r,1)` before the diffusion cap.
    pub stability_factor: f64,
    /// Any |value| above this aborts the evolution as a blow-up.
    pub blow_up_threshold: f64,
    /// Models needing more total fine steps than this are reported as blown
    /// up rather than simulated.
    pub max_fine_steps: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            stability_factor: 0.5,
            blow_up_threshold: 1e8,
            max_fine_steps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub enum EvolveOutcome {
    Completed(Field),
    BlewUp { at_time: f64 },
}

/// Least-squares coefficients of `b_hat` against the unscaled columns of the
/// supported feature blocks. Returns a full-length coefficient vector whose
/// complement is exactly zero. Dependent columns raise
/// [`IdentError::RankDeficient`] with their global indices.
pub fn least_squares_fit(sys: &FeatureSystem, support: &[usize]) -> Result<Array1<f64>> {
    let support = normalize_support(sys, support)?;
    let cols: Vec<usize> = support.iter().flat_map(|&j| sys.block(j)).collect();
    let m = sys.matrix();
    let mut sub = Array2::zeros((m.nrows(), cols.len()));
    for (p, &c) in cols.iter().enumerate() {
        sub.column_mut(p).assign(&m.column(c));
    }
    match linalg::lstsq(sub.view(), sys.b_hat(), 1e-10) {
        Ok(x) => {
            let mut full = Array1::zeros(sys.n_columns());
            for (p, &c) in cols.iter().enumerate() {
                full[c] = x[p];
            }
            Ok(full)
        }
        Err(LstsqError::RankDeficient(dep)) => Err(IdentError::RankDeficient {
            columns: dep.into_iter().map(|p| cols[p]).collect(),
        }),
    }
}

fn normalize_support(sys: &FeatureSystem, support: &[usize]) -> Result<Vec<usize>> {
    let mut s = support.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.is_empty() {
        return Err(IdentError::InvalidParameter("support must be nonempty".into()));
    }
    if s.len() != support.len() {
        return Err(IdentError::InvalidParameter("support has repeated features".into()));
    }
    if let Some(&bad) = s.iter().find(|&&j| j >= sys.n_features()) {
        return Err(IdentError::InvalidParameter(format!(
            "feature index {bad} out of range for {} features",
            sys.n_features()
        )));
    }
    Ok(s)
}

/// Package a full-length fitted coefficient vector as a [`PdeModel`].
pub fn model_from_fit(
    sys: &FeatureSystem,
    support: &[usize],
    coefs: &Array1<f64>,
) -> Result<PdeModel> {
    let support = normalize_support(sys, support)?;
    let mut coefficients = Vec::with_capacity(support.len());
    for &j in &support {
        let tag = sys.feature_tag(j);
        if tag.feature.is_none() {
            return Err(IdentError::NonDictionaryFeature(tag.name.clone()));
        }
        let block: Vec<f64> = sys.block(j).map(|c| coefs[c]).collect();
        coefficients.push(if block.len() == 1 {
            Coefficient::Constant(block[0])
        } else {
            Coefficient::Varying(block)
        });
    }
    Ok(PdeModel { support, coefficients, basis: sys.basis().clone() })
}

/// Forward-Euler re-simulation of `model` from the first time slice of
/// `data`, recorded at the data's sample times. The fine step refines the
/// data step to `stability_factor * dx^max(r,1)`, additionally capped by
/// dx^2 / (2 max|c|) when a second-derivative diffusion term is present, and
/// is rounded down so the sample step is an integer multiple. Dirichlet
/// boundary values are held at the latest sample's values between samples.
pub fn evolve_forward_euler(
    model: &PdeModel,
    data: &Field,
    cfg: &EvolveConfig,
) -> Result<EvolveOutcome> {
    let g = data.grid();
    if g.n_x < 5 {
        return Err(IdentError::TooFewPoints {
            context: "time evolution",
            axis: "space",
            needed: 5,
            got: g.n_x,
        });
    }
    if !(cfg.stability_factor > 0.0 && cfg.blow_up_threshold > 0.0) {
        return Err(IdentError::InvalidParameter(
            "evolve config needs positive stability factor and blow-up threshold".into(),
        ));
    }

    let r = model.derivative_order();
    let mut dt_fine_raw = cfg.stability_factor * g.dx.powi(r.max(1) as i32);
    if r == 2 {
        let c_diff = model.max_abs_coefficient(Feature::Uxx);
        if c_diff > 0.0 {
            dt_fine_raw = dt_fine_raw.min(g.dx * g.dx / (2.0 * c_diff));
        }
    }
    let substeps = (g.dt / dt_fine_raw).ceil().max(1.0);
    let total = substeps * (g.n_t.saturating_sub(1)) as f64;
    if !substeps.is_finite() || total > cfg.max_fine_steps as f64 {
        return Ok(EvolveOutcome::BlewUp { at_time: g.t_min });
    }
    let substeps = substeps as usize;
    let dt_fine = g.dt / substeps as f64;

    // Coefficient values at grid nodes, per supported feature.
    let coef_at: Vec<Vec<f64>> = (0..model.support.len())
        .map(|k| (0..g.n_x).map(|i| model.coefficient_at(k, g.x(i))).collect())
        .collect();
    let features = model.features();

    let mut out = Array2::zeros((g.n_t, g.n_x));
    let mut state: Vec<f64> = data.time_slice(0).to_vec();
    for (i, &v) in state.iter().enumerate() {
        out[[0, i]] = v;
    }
    for n in 0..g.n_t - 1 {
        state[0] = data.value(0, n);
        state[g.n_x - 1] = data.value(g.n_x - 1, n);
        for step in 0..substeps {
            let ux = eno_derivative_slice(&state, g.dx, 1);
            let uxx = eno_derivative_slice(&state, g.dx, 2);
            let mut next = state.clone();
            for i in 1..g.n_x - 1 {
                let mut rhs = 0.0;
                for (k, feat) in features.iter().enumerate() {
                    rhs += coef_at[k][i] * feat.eval(state[i], ux[i], uxx[i]);
                }
                next[i] = state[i] + dt_fine * rhs;
            }
            if next.iter().any(|v| !v.is_finite() || v.abs() > cfg.blow_up_threshold) {
                return Ok(EvolveOutcome::BlewUp {
                    at_time: g.t(n) + (step + 1) as f64 * dt_fine,
                });
            }
            state = next;
        }
        state[0] = data.value(0, n + 1);
        state[g.n_x - 1] = data.value(g.n_x - 1, n + 1);
        for (i, &v) in state.iter().enumerate() {
            out[[n + 1, i]] = v;
        }
    }
    Ok(EvolveOutcome::Completed(Field::from_values(g.clone(), out)?))
}

/// Area-weighted L1 distance between a re-simulated field and the data.
pub fn time_evolution_error(evolved: &Field, data: &Field) -> Result<f64> {
    if evolved.grid() != data.grid() {
        return Err(IdentError::ShapeMismatch(
            "time_evolution_error requires both fields on the same grid".into(),
        ));
    }
    let area = data.grid().cell_area();
    Ok(evolved
        .values()
        .iter()
        .zip(data.values().iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        * area)
}

/// Outcome of evaluating one candidate subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeeRecord {
    pub support: Vec<usize>,
    pub feature_names: Vec<String>,
    pub coefficients: Vec<Coefficient>,
    /// +infinity when the model blew up or could not be fit.
    pub tee: f64,
    pub blew_up: bool,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub evolve: EvolveConfig,
    /// Cap on the candidate count (the search is exhaustive over subsets).
    pub max_candidates: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { evolve: EvolveConfig::default(), max_candidates: 12 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsetSearchResult {
    /// One record per nonempty subset, ordered by subset encoding.
    pub records: Vec<TeeRecord>,
    /// Index into `records` of the winner, if any subset evolved stably.
    pub best: Option<usize>,
}

impl SubsetSearchResult {
    pub fn best_record(&self) -> Option<&TeeRecord> {
        self.best.map(|i| &self.records[i])
    }

    pub fn record_for(&self, support: &[usize]) -> Option<&TeeRecord> {
        self.records.iter().find(|r| r.support == support)
    }
}

/// Fit, evolve, and score every nonempty subset of `candidates`. The winner
/// has the smallest finite TEE, with ties broken toward smaller support and
/// then lexicographic order. Subsets that blow up or cannot be fit are kept
/// in the table with infinite TEE.
pub fn subset_search(
    sys: &FeatureSystem,
    data: &Field,
    candidates: &[usize],
    cfg: &SearchConfig,
) -> Result<SubsetSearchResult> {
    let mut cand = candidates.to_vec();
    cand.sort_unstable();
    cand.dedup();
    if cand.is_empty() {
        return Err(IdentError::InvalidParameter("subset search needs candidates".into()));
    }
    if cand.len() > cfg.max_candidates {
        return Err(IdentError::TooManyCandidates { got: cand.len(), cap: cfg.max_candidates });
    }
    if let Some(&bad) = cand.iter().find(|&&j| j >= sys.n_features()) {
        return Err(IdentError::InvalidParameter(format!("candidate {bad} out of range")));
    }
    let g = data.grid();
    if sys.rows() != g.n_x * (g.n_t - 1) {
        return Err(IdentError::ShapeMismatch(format!(
            "feature system has {} rows; data grid implies {}",
            sys.rows(),
            g.n_x * (g.n_t - 1)
        )));
    }

    // The per-subset fits share columns, so assemble the union Gram and
    // projections once; every subset then solves its normal equations on a
    // principal submatrix instead of refactoring 10^5-row systems.
    let normal = UnionNormalEquations::assemble(sys, &cand);

    let k = cand.len();
    let records: Vec<TeeRecord> = (1u32..(1u32 << k))
        .into_par_iter()
        .map(|mask| {
            let support: Vec<usize> =
                (0..k).filter(|b| mask & (1 << b) != 0).map(|b| cand[b]).collect();
            evaluate_subset(sys, data, &normal, &support, &cfg.evolve)
        })
        .collect::<Result<Vec<_>>>()?;

    let best = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.tee.is_finite())
        .min_by(|(_, a), (_, b)| {
            a.tee
                .partial_cmp(&b.tee)
                .expect("finite TEEs compare")
                .then(a.support.len().cmp(&b.support.len()))
                .then(a.support.cmp(&b.support))
        })
        .map(|(i, _)| i);
    Ok(SubsetSearchResult { records, best })
}

/// Normal-equation data for the union of the candidate blocks: Gram matrix,
/// right-hand projections, and the position range of each feature's columns.
struct UnionNormalEquations {
    gram: Array2<f64>,
    proj: Array1<f64>,
    cols: Vec<usize>,
    /// Parallel to the candidate list: (feature, start..end positions).
    ranges: Vec<(usize, std::ops::Range<usize>)>,
}

impl UnionNormalEquations {
    fn assemble(sys: &FeatureSystem, cand: &[usize]) -> Self {
        let mut cols = Vec::new();
        let mut ranges = Vec::with_capacity(cand.len());
        for &j in cand {
            let start = cols.len();
            cols.extend(sys.block(j));
            ranges.push((j, start..cols.len()));
        }
        let m = sys.matrix();
        let mut sub = Array2::zeros((m.nrows(), cols.len()));
        for (p, &c) in cols.iter().enumerate() {
            sub.column_mut(p).assign(&m.column(c));
        }
        let gram = sub.t().dot(&sub);
        let proj = sub.t().dot(&sys.b_hat());
        UnionNormalEquations { gram, proj, cols, ranges }
    }

    /// Least-squares fit of the subset's columns, as a full-length coefficient
    /// vector over the system's columns. None when the sub-Gram is
    /// numerically rank-deficient.
    fn fit(&self, sys: &FeatureSystem, support: &[usize]) -> Option<Array1<f64>> {
        let idx: Vec<usize> = self
            .ranges
            .iter()
            .filter(|(j, _)| support.contains(j))
            .flat_map(|(_, r)| r.clone())
            .collect();
        let p = idx.len();
        let mut g = Array2::zeros((p, p));
        let mut rhs = Array1::zeros(p);
        for (a, &pa) in idx.iter().enumerate() {
            rhs[a] = self.proj[pa];
            for (b, &pb) in idx.iter().enumerate() {
                g[[a, b]] = self.gram[[pa, pb]];
            }
        }
        let x = linalg::Cholesky::try_factor(&g, 1e-12)?.solve(rhs.view());
        let mut full = Array1::zeros(sys.n_columns());
        for (a, &pa) in idx.iter().enumerate() {
            full[self.cols[pa]] = x[a];
        }
        Some(full)
    }
}

fn evaluate_subset(
    sys: &FeatureSystem,
    data: &Field,
    normal: &UnionNormalEquations,
    support: &[usize],
    cfg: &EvolveConfig,
) -> Result<TeeRecord> {
    let feature_names: Vec<String> =
        support.iter().map(|&j| sys.feature_tag(j).name.clone()).collect();
    let Some(fit) = normal.fit(sys, support) else {
        return Ok(TeeRecord {
            support: support.to_vec(),
            feature_names,
            coefficients: Vec::new(),
            tee: f64::INFINITY,
            blew_up: false,
            rank_deficient: true,
        });
    };
    let model = model_from_fit(sys, support, &fit)?;
    let (tee, blew_up) = match evolve_forward_euler(&model, data, cfg)? {
        EvolveOutcome::Completed(field) => (time_evolution_error(&field, data)?, false),
        EvolveOutcome::BlewUp { .. } => (f64::INFINITY, true),
    };
    Ok(TeeRecord {
        support: model.support,
        feature_names,
        coefficients: model.coefficients,
        tee,
        blew_up,
        rank_deficient: false,
    })
}
