//! The differential dictionary and the empirical feature system.
//!
//! Candidate right-hand sides are linear combinations of ten monomials in
//! (u, u_x, u_xx) up to degree two. Coefficients may vary in space, in which
//! case a feature's single column is replaced by a block of columns, one per
//! piecewise-linear hat function on a uniform node set; the hats sum to one,
//! so a constant coefficient is always representable inside a block.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::derivatives::FieldDerivatives;
use crate::error::{IdentError, Result};
use crate::grid::Field;

pub const N_FEATURES: usize = 10;

/// Dictionary monomials, in the fixed column order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    One,
    U,
    U2,
    Ux,
    Ux2,
    UUx,
    Uxx,
    Uxx2,
    UUxx,
    UxUxx,
}

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::One,
        Feature::U,
        Feature::U2,
        Feature::Ux,
        Feature::Ux2,
        Feature::UUx,
        Feature::Uxx,
        Feature::Uxx2,
        Feature::UUxx,
        Feature::UxUxx,
    ];

    #[inline]
    pub fn eval(self, u: f64, ux: f64, uxx: f64) -> f64 {
        match self {
            Feature::One => 1.0,
            Feature::U => u,
            Feature::U2 => u * u,
            Feature::Ux => ux,
            Feature::Ux2 => ux * ux,
            Feature::UUx => u * ux,
            Feature::Uxx => uxx,
            Feature::Uxx2 => uxx * uxx,
            Feature::UUxx => u * uxx,
            Feature::UxUxx => ux * uxx,
        }
    }

    /// Highest spatial-derivative order entering the monomial.
    pub fn derivative_order(self) -> usize {
        match self {
            Feature::One | Feature::U | Feature::U2 => 0,
            Feature::Ux | Feature::Ux2 | Feature::UUx => 1,
            Feature::Uxx | Feature::Uxx2 | Feature::UUxx | Feature::UxUxx => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::One => "1",
            Feature::U => "u",
            Feature::U2 => "u^2",
            Feature::Ux => "u_x",
            Feature::Ux2 => "u_x^2",
            Feature::UUx => "u*u_x",
            Feature::Uxx => "u_xx",
            Feature::Uxx2 => "u_xx^2",
            Feature::UUxx => "u*u_xx",
            Feature::UxUxx => "u_x*u_xx",
        }
    }

    pub fn from_name(name: &str) -> Result<Feature> {
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.name() == name.trim())
            .ok_or_else(|| IdentError::InvalidParameter(format!("unknown feature '{name}'")))
    }

    pub fn index(self) -> usize {
        Feature::ALL.iter().position(|&f| f == self).expect("member of ALL")
    }
}

/// Uniform piecewise-linear hat basis on `[x_min, x_max]`. A single-element
/// basis is the constant function 1 (constant coefficients).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FemBasis {
    x_min: f64,
    x_max: f64,
    len: usize,
}

impl FemBasis {
    pub fn uniform(x_min: f64, x_max: f64, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(IdentError::InvalidParameter("basis needs at least one element".into()));
        }
        if !(x_max > x_min) {
            return Err(IdentError::InvalidParameter(format!(
                "basis domain [{x_min}, {x_max}] is empty"
            )));
        }
        Ok(FemBasis { x_min, x_max, len })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    pub fn span(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Node spacing; meaningless for the constant basis.
    pub fn spacing(&self) -> f64 {
        debug_assert!(self.len > 1);
        (self.x_max - self.x_min) / (self.len - 1) as f64
    }

    pub fn node(&self, l: usize) -> f64 {
        debug_assert!(l < self.len);
        if self.len == 1 {
            self.x_min
        } else {
            self.x_min + l as f64 * self.spacing()
        }
    }

    /// Hat function l at x (1 everywhere for the constant basis).
    pub fn eval(&self, l: usize, x: f64) -> f64 {
        debug_assert!(l < self.len);
        if self.len == 1 {
            return 1.0;
        }
        (1.0 - ((x - self.node(l)) / self.spacing()).abs()).max(0.0)
    }

    /// Nodal interpolant coefficients of a function (its node values). The
    /// constant basis samples the domain midpoint.
    pub fn project(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        if self.len == 1 {
            return vec![f(0.5 * (self.x_min + self.x_max))];
        }
        (0..self.len).map(|l| f(self.node(l))).collect()
    }

    /// Value of the expansion sum c_l phi_l at x.
    pub fn expand(&self, coefs: &[f64], x: f64) -> f64 {
        debug_assert_eq!(coefs.len(), self.len);
        if self.len == 1 {
            return coefs[0];
        }
        // Only the two hats around x are nonzero.
        let h = self.spacing();
        let pos = ((x - self.x_min) / h).clamp(0.0, (self.len - 1) as f64);
        let l = (pos.floor() as usize).min(self.len - 2);
        let w = pos - l as f64;
        coefs[l] * (1.0 - w) + coefs[l + 1] * w
    }

    /// Exact integral of |sum c_l phi_l| over the domain. The expansion is
    /// piecewise linear, so each segment integrates in closed form even when
    /// it changes sign.
    pub fn abs_integral(&self, coefs: &[f64]) -> f64 {
        assert_eq!(coefs.len(), self.len, "coefficient count must match basis");
        if self.len == 1 {
            return coefs[0].abs() * self.span();
        }
        let h = self.spacing();
        let mut total = 0.0;
        for l in 0..self.len - 1 {
            let (v0, v1) = (coefs[l], coefs[l + 1]);
            total += if v0 * v1 >= 0.0 {
                h * (v0.abs() + v1.abs()) / 2.0
            } else {
                h * (v0 * v0 + v1 * v1) / (2.0 * (v0.abs() + v1.abs()))
            };
        }
        total
    }
}

/// Identity of one feature in a system: dictionary monomial or a free label
/// for synthetic systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTag {
    pub name: String,
    pub feature: Option<Feature>,
}

/// Per-column bookkeeping: owning feature, basis element, and plain vector
/// norms of the column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub feature_index: usize,
    pub basis_index: usize,
    pub max_norm: f64,
    pub l2_norm: f64,
    pub l1_norm: f64,
}

/// Area-weighted norms of a feature's raw column (before basis weighting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub function_l1_norm: f64,
    pub function_l2_norm: f64,
    pub max_norm: f64,
}

/// The empirical regression system: feature columns against the backward
/// time derivative, plus the metadata the sparse and evolution stages need.
#[derive(Debug, Clone)]
pub struct FeatureSystem {
    matrix: Array2<f64>,
    b_hat: Array1<f64>,
    features: Vec<FeatureTag>,
    blocks: Vec<Range<usize>>,
    column_meta: Vec<ColumnMeta>,
    feature_meta: Vec<FeatureMeta>,
    basis: FemBasis,
    dx: f64,
    dt: f64,
}

impl FeatureSystem {
    /// Rows are samples (time-major, space fastest, first time slice dropped
    /// by the backward difference); feature j occupies the contiguous column
    /// block `blocks[j]`.
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn b_hat(&self) -> ndarray::ArrayView1<'_, f64> {
        self.b_hat.view()
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_tag(&self, j: usize) -> &FeatureTag {
        &self.features[j]
    }

    pub fn block(&self, j: usize) -> Range<usize> {
        self.blocks[j].clone()
    }

    pub fn column_meta(&self, col: usize) -> &ColumnMeta {
        &self.column_meta[col]
    }

    pub fn feature_meta(&self, j: usize) -> &FeatureMeta {
        &self.feature_meta[j]
    }

    pub fn basis(&self) -> &FemBasis {
        &self.basis
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dt
    }

    /// Integral of |coefficient function| for feature j given one value per
    /// block column: the expansion over the block's basis for varying
    /// features, a constant over the domain otherwise.
    pub fn coefficient_abs_integral(&self, j: usize, block_coefs: &[f64]) -> f64 {
        let len = self.blocks[j].len();
        assert_eq!(block_coefs.len(), len);
        if len == 1 {
            block_coefs[0].abs() * self.basis.span()
        } else {
            self.basis.abs_integral(block_coefs)
        }
    }

    /// Sum of a feature's block columns, which equals the raw feature column
    /// because the hats sum to one.
    fn raw_feature_column(&self, j: usize) -> Array1<f64> {
        let mut col = Array1::zeros(self.rows());
        for c in self.block(j) {
            col += &self.matrix.column(c);
        }
        col
    }

    /// Assemble a system from an explicit matrix. Block sizes must be 1 or
    /// all share one size L > 1; `dx`/`dt` supply the area weighting.
    pub fn synthetic(
        matrix: Array2<f64>,
        b_hat: Array1<f64>,
        dx: f64,
        dt: f64,
        block_sizes: &[usize],
    ) -> Result<Self> {
        if matrix.nrows() != b_hat.len() {
            return Err(IdentError::ShapeMismatch(format!(
                "matrix has {} rows but b_hat has {}",
                matrix.nrows(),
                b_hat.len()
            )));
        }
        let total: usize = block_sizes.iter().sum();
        if total != matrix.ncols() || block_sizes.is_empty() {
            return Err(IdentError::ShapeMismatch(format!(
                "block sizes sum to {total} but matrix has {} columns",
                matrix.ncols()
            )));
        }
        let l = block_sizes.iter().copied().filter(|&s| s > 1).max().unwrap_or(1);
        if block_sizes.iter().any(|&s| s != 1 && s != l) {
            return Err(IdentError::InvalidParameter(
                "varying blocks must all share one basis size".into(),
            ));
        }
        let basis = FemBasis::uniform(0.0, 1.0, l)?;
        let features = (0..block_sizes.len())
            .map(|j| FeatureTag { name: format!("c{j}"), feature: None })
            .collect();
        Self::assemble(matrix, b_hat, features, block_sizes, basis, dx, dt)
    }

    fn assemble(
        matrix: Array2<f64>,
        b_hat: Array1<f64>,
        features: Vec<FeatureTag>,
        block_sizes: &[usize],
        basis: FemBasis,
        dx: f64,
        dt: f64,
    ) -> Result<Self> {
        if !matrix.iter().all(|v| v.is_finite()) || !b_hat.iter().all(|v| v.is_finite()) {
            return Err(IdentError::NonFinite { context: "feature system".into() });
        }
        let mut blocks = Vec::with_capacity(block_sizes.len());
        let mut column_meta = Vec::with_capacity(matrix.ncols());
        let mut start = 0;
        for (j, &size) in block_sizes.iter().enumerate() {
            blocks.push(start..start + size);
            for l in 0..size {
                let col = matrix.column(start + l);
                column_meta.push(ColumnMeta {
                    feature_index: j,
                    basis_index: l,
                    max_norm: col.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                    l2_norm: col.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    l1_norm: col.iter().map(|v| v.abs()).sum(),
                });
            }
            start += size;
        }
        let mut sys = FeatureSystem {
            matrix,
            b_hat,
            features,
            blocks,
            column_meta,
            feature_meta: Vec::new(),
            basis,
            dx,
            dt,
        };
        let area = sys.cell_area();
        sys.feature_meta = (0..sys.n_features())
            .map(|j| {
                let raw = sys.raw_feature_column(j);
                FeatureMeta {
                    function_l1_norm: raw.iter().map(|v| v.abs()).sum::<f64>() * area,
                    function_l2_norm: (raw.iter().map(|v| v * v).sum::<f64>() * area).sqrt(),
                    max_norm: raw.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                }
            })
            .collect();
        Ok(sys)
    }
}

/// Build the empirical system over the full dictionary with every
/// coefficient allowed to vary over `basis`.
pub fn build_feature_system(
    f: &Field,
    derivs: &FieldDerivatives,
    basis: &FemBasis,
) -> Result<FeatureSystem> {
    build_feature_system_masked(f, derivs, basis, &[true; N_FEATURES])
}

/// Like [`build_feature_system`], but only features with `vary[j] = true`
/// get a basis block; the rest keep a single constant-coefficient column.
pub fn build_feature_system_masked(
    f: &Field,
    derivs: &FieldDerivatives,
    basis: &FemBasis,
    vary: &[bool; N_FEATURES],
) -> Result<FeatureSystem> {
    let g = f.grid();
    if g.n_t < 2 {
        return Err(IdentError::TooFewPoints {
            context: "feature system",
            axis: "time",
            needed: 2,
            got: g.n_t,
        });
    }
    if derivs.ut.grid() != g || derivs.ux.grid() != g || derivs.uxx.grid() != g {
        return Err(IdentError::ShapeMismatch(
            "derivative fields were computed on a different grid".into(),
        ));
    }
    let (b_lo, b_hi) = basis.domain();
    let tol = 1e-9 * (g.x_max - g.x_min).abs().max(1.0);
    if (b_lo - g.x_min).abs() > tol || (b_hi - g.x_max).abs() > tol {
        return Err(IdentError::ShapeMismatch(format!(
            "basis domain [{b_lo}, {b_hi}] does not span the grid [{}, {}]",
            g.x_min, g.x_max
        )));
    }

    let block_sizes: Vec<usize> = vary.iter().map(|&v| if v { basis.len() } else { 1 }).collect();
    let total_cols: usize = block_sizes.iter().sum();
    let rows = g.n_x * (g.n_t - 1);

    // Hat values per spatial node, reused across the whole time range.
    let phi: Vec<Vec<f64>> = (0..g.n_x)
        .map(|i| (0..basis.len()).map(|l| basis.eval(l, g.x(i))).collect())
        .collect();

    let mut matrix = Array2::zeros((rows, total_cols));
    let mut b_hat = Array1::zeros(rows);
    let mut row = 0;
    for n in 1..g.n_t {
        for i in 0..g.n_x {
            let u = f.value(i, n);
            let ux = derivs.ux.value(i, n);
            let uxx = derivs.uxx.value(i, n);
            b_hat[row] = derivs.ut.value(i, n);
            let mut col = 0;
            for (j, feat) in Feature::ALL.iter().enumerate() {
                let v = feat.eval(u, ux, uxx);
                if block_sizes[j] == 1 {
                    matrix[[row, col]] = v;
                    col += 1;
                } else {
                    for l in 0..basis.len() {
                        matrix[[row, col]] = v * phi[i][l];
                        col += 1;
                    }
                }
            }
            row += 1;
        }
    }

    let features = Feature::ALL
        .iter()
        .map(|&ft| FeatureTag { name: ft.name().to_string(), feature: Some(ft) })
        .collect();
    FeatureSystem::assemble(matrix, b_hat, features, &block_sizes, basis.clone(), g.dx, g.dt)
}

/// Pairwise coherence of unit-normalized columns, and its maximum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoherenceReport {
    /// Symmetric, unit diagonal; rows and columns of zero columns are 0.
    pub pairwise: Array2<f64>,
    /// Largest off-diagonal entry.
    pub mu: f64,
    /// Columns with zero norm, excluded from the maximum.
    pub zero_columns: Vec<usize>,
}

pub fn mutual_coherence(sys: &FeatureSystem) -> CoherenceReport {
    let m = sys.matrix();
    let k = m.ncols();
    let norms: Vec<f64> = (0..k)
        .map(|j| m.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let zero_columns: Vec<usize> = (0..k).filter(|&j| norms[j] == 0.0).collect();
    let mut pairwise = Array2::zeros((k, k));
    let mut mu = 0.0f64;
    for a in 0..k {
        pairwise[[a, a]] = 1.0;
        if norms[a] == 0.0 {
            continue;
        }
        for b in a + 1..k {
            if norms[b] == 0.0 {
                continue;
            }
            let dot: f64 = m.column(a).iter().zip(m.column(b).iter()).map(|(x, y)| x * y).sum();
            let c = (dot / (norms[a] * norms[b])).abs();
            pairwise[[a, b]] = c;
            pairwise[[b, a]] = c;
            mu = mu.max(c);
        }
    }
    CoherenceReport { pairwise, mu, zero_columns }
}

/// Residual-to-signal ratio of the regression under known constant
/// coefficients `a` (one entry per feature): ||F a - b|| over the weakest
/// active signal ||F_j|| |a_j|.
pub fn noise_to_signal_ratio(sys: &FeatureSystem, a: &[f64]) -> Result<f64> {
    if a.len() != sys.n_features() {
        return Err(IdentError::ShapeMismatch(format!(
            "coefficient vector has {} entries for {} features",
            a.len(),
            sys.n_features()
        )));
    }
    let mut residual = sys.b_hat.clone();
    let mut weakest = f64::INFINITY;
    for (j, &aj) in a.iter().enumerate() {
        if aj == 0.0 {
            continue;
        }
        residual -= &(&sys.raw_feature_column(j) * aj);
        weakest = weakest.min(sys.feature_meta(j).function_l2_norm * aj.abs());
    }
    if !weakest.is_finite() || weakest == 0.0 {
        return Err(IdentError::InvalidParameter(
            "noise_to_signal_ratio needs at least one active feature with nonzero signal".into(),
        ));
    }
    let num = (residual.iter().map(|v| v * v).sum::<f64>() * sys.cell_area()).sqrt();
    Ok(num / weakest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivatives::FieldDerivatives;
    use crate::grid::{Field, Grid};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn feature_order_and_orders() {
        let names: Vec<&str> = Feature::ALL.iter().map(|f| f.name()).collect();
        assert_eq!(
            names,
            ["1", "u", "u^2", "u_x", "u_x^2", "u*u_x", "u_xx", "u_xx^2", "u*u_xx", "u_x*u_xx"]
        );
        let orders: Vec<usize> = Feature::ALL.iter().map(|f| f.derivative_order()).collect();
        assert_eq!(orders, [0, 0, 0, 1, 1, 1, 2, 2, 2, 2]);
        for f in Feature::ALL {
            assert_eq!(Feature::from_name(f.name()).unwrap(), f);
        }
    }

    #[test]
    fn feature_eval_spot_checks() {
        let (u, ux, uxx) = (2.0, -3.0, 0.5);
        assert_eq!(Feature::One.eval(u, ux, uxx), 1.0);
        assert_eq!(Feature::UUx.eval(u, ux, uxx), -6.0);
        assert_eq!(Feature::Uxx2.eval(u, ux, uxx), 0.25);
        assert_eq!(Feature::UxUxx.eval(u, ux, uxx), -1.5);
    }

    fn sample_system(n_x: usize, n_t: usize, basis_len: usize) -> FeatureSystem {
        let g = Grid::from_bounds(0.0, 1.0, n_x, 0.0, 0.01, n_t).unwrap();
        let f = Field::from_fn(g, |x, t| (2.0 * x + t).sin() + 0.3 * x);
        let derivs = FieldDerivatives::compute(&f).unwrap();
        let basis = FemBasis::uniform(0.0, 1.0, basis_len).unwrap();
        build_feature_system(&f, &derivs, &basis).unwrap()
    }

    #[test]
    fn system_shape_and_column_mapping() {
        let sys = sample_system(9, 5, 20);
        assert_eq!(sys.rows(), 9 * 4);
        assert_eq!(sys.n_columns(), 10 * 20);
        // Column 122 (0-based) belongs to feature 7, basis element 3, in
        // 1-based terms: (7-1)*20 + 3 = 123.
        let meta = sys.column_meta(122);
        assert_eq!(meta.feature_index, 6);
        assert_eq!(meta.basis_index, 2);
        assert_eq!(sys.block(6), 120..140);
    }

    #[test]
    fn constant_basis_collapses_to_plain_features() {
        let sys = sample_system(9, 5, 1);
        assert_eq!(sys.n_columns(), 10);
        // The constant-coefficient column of feature 0 is all ones.
        for v in sys.matrix().column(0).iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn masked_blocks_mix_sizes() {
        let g = Grid::from_bounds(0.0, 1.0, 9, 0.0, 0.01, 4).unwrap();
        let f = Field::from_fn(g, |x, t| x * x + t);
        let derivs = FieldDerivatives::compute(&f).unwrap();
        let basis = FemBasis::uniform(0.0, 1.0, 6).unwrap();
        let mut vary = [false; N_FEATURES];
        vary[Feature::Uxx.index()] = true;
        let sys = build_feature_system_masked(&f, &derivs, &basis, &vary).unwrap();
        assert_eq!(sys.n_columns(), 9 + 6);
        assert_eq!(sys.block(Feature::Uxx.index()).len(), 6);
        assert_eq!(sys.block(Feature::UxUxx.index()).len(), 1);
    }

    #[test]
    fn block_columns_sum_to_raw_feature() {
        // Partition of unity: summing a feature's block reproduces the
        // constant-basis column.
        let varying = sample_system(11, 4, 7);
        let flat = sample_system(11, 4, 1);
        for j in 0..N_FEATURES {
            let summed = varying.raw_feature_column(j);
            let raw = flat.matrix().column(j).to_owned();
            for (a, b) in summed.iter().zip(raw.iter()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn basis_partition_of_unity_and_interpolation() {
        let basis = FemBasis::uniform(-1.0, 3.0, 9).unwrap();
        for k in 0..200 {
            let x = -1.0 + 4.0 * k as f64 / 199.0;
            let total: f64 = (0..9).map(|l| basis.eval(l, x)).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
        // Hats interpolate nodal values.
        let coefs: Vec<f64> = (0..9).map(|l| (l as f64).sin()).collect();
        for l in 0..9 {
            assert_abs_diff_eq!(basis.expand(&coefs, basis.node(l)), coefs[l], epsilon = 1e-12);
        }
    }

    #[test]
    fn abs_integral_exact_on_sign_change() {
        // Expansion -1 -> 1 over [0, 1] crosses zero halfway: integral of
        // |x| shape is 2 * (1/2 * 1/2 * 1) / 2 = 1/4... computed directly:
        // two triangles of base 1/2 and height 1 give area 1/2.
        let basis = FemBasis::uniform(0.0, 1.0, 2).unwrap();
        assert_abs_diff_eq!(basis.abs_integral(&[-1.0, 1.0]), 0.5, epsilon = 1e-14);
        // Same-sign segment is a trapezoid.
        assert_abs_diff_eq!(basis.abs_integral(&[1.0, 3.0]), 2.0, epsilon = 1e-14);
        // Constant basis integrates |c| over the span.
        let one = FemBasis::uniform(0.0, 2.0, 1).unwrap();
        assert_abs_diff_eq!(one.abs_integral(&[-1.5]), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn abs_integral_matches_quadrature() {
        let basis = FemBasis::uniform(0.0, 1.0, 6).unwrap();
        let coefs = [0.3, -0.7, 1.1, -0.2, 0.0, 0.9];
        let exact = basis.abs_integral(&coefs);
        let m = 200_000;
        let quad: f64 = (0..m)
            .map(|k| {
                let x = (k as f64 + 0.5) / m as f64;
                basis.expand(&coefs, x).abs()
            })
            .sum::<f64>()
            / m as f64;
        assert_abs_diff_eq!(exact, quad, epsilon = 1e-6);
    }

    #[test]
    fn fem_interpolation_error_shrinks_at_least_linearly() {
        // For the smooth coefficient used in the varying-coefficient runs the
        // nodal interpolant must lose at least a factor ~2 of L1 error per
        // doubling of the node count (it does better, which is fine).
        let c = |x: f64| 0.05 + 0.2 * (std::f64::consts::PI * x).sin();
        let err = |l: usize| -> f64 {
            let basis = FemBasis::uniform(0.0, 1.0, l).unwrap();
            let coefs = basis.project(c);
            let m = 20_000;
            (0..m)
                .map(|k| {
                    let x = (k as f64 + 0.5) / m as f64;
                    (basis.expand(&coefs, x) - c(x)).abs()
                })
                .sum::<f64>()
                / m as f64
        };
        let (e5, e10, e20) = (err(5), err(10), err(20));
        assert!(e5 / e10 >= 1.5, "L=5 -> 10 ratio {}", e5 / e10);
        assert!(e10 / e20 >= 1.5, "L=10 -> 20 ratio {}", e10 / e20);
        assert!(e20 <= 0.05 / 20.0 * 10.0, "L=20 error {e20} too large for O(1/L)");
    }

    #[test]
    fn coherence_of_known_pair() {
        // Columns (1,0) and (1,1)/sqrt(2) have coherence 1/sqrt(2).
        let matrix = array![[1.0, 1.0 / 2.0_f64.sqrt()], [0.0, 1.0 / 2.0_f64.sqrt()]];
        let sys =
            FeatureSystem::synthetic(matrix, array![0.0, 0.0], 1.0, 1.0, &[1, 1]).unwrap();
        let rep = mutual_coherence(&sys);
        assert_abs_diff_eq!(rep.mu, 1.0 / 2.0_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(rep.pairwise[[0, 0]], 1.0, epsilon = 1e-15);
        assert!(rep.zero_columns.is_empty());
    }

    #[test]
    fn coherence_flags_zero_columns() {
        let matrix = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let sys =
            FeatureSystem::synthetic(matrix, array![0.0, 0.0, 0.0], 1.0, 1.0, &[1, 1]).unwrap();
        let rep = mutual_coherence(&sys);
        assert_eq!(rep.zero_columns, vec![1]);
        assert_eq!(rep.pairwise[[0, 1]], 0.0);
        assert_eq!(rep.mu, 0.0);
    }

    proptest! {
        #[test]
        fn coherence_is_scale_invariant(s1 in 0.1f64..10.0, s2 in 0.1f64..10.0) {
            let base = array![[1.0, 0.2], [0.5, 1.0], [-0.3, 0.7], [0.0, -1.0]];
            let mut scaled = base.clone();
            for r in 0..4 {
                scaled[[r, 0]] *= s1;
                scaled[[r, 1]] *= s2;
            }
            let b = Array1::zeros(4);
            let sys0 = FeatureSystem::synthetic(base, b.clone(), 1.0, 1.0, &[1, 1]).unwrap();
            let sys1 = FeatureSystem::synthetic(scaled, b, 1.0, 1.0, &[1, 1]).unwrap();
            let (r0, r1) = (mutual_coherence(&sys0), mutual_coherence(&sys1));
            prop_assert!((r0.mu - r1.mu).abs() < 1e-12);
        }

        #[test]
        fn partition_of_unity_random_basis(len in 2usize..40, x01 in 0.0f64..1.0) {
            let basis = FemBasis::uniform(0.0, 1.0, len).unwrap();
            let total: f64 = (0..len).map(|l| basis.eval(l, x01)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nsr_zero_for_consistent_system() {
        // b chosen exactly as -1 times feature u*u_x makes the ratio 0.
        let sys = sample_system(9, 5, 1);
        let col = sys.raw_feature_column(Feature::UUx.index());
        let mut consistent = sys.clone();
        consistent.b_hat = -1.0 * col;
        let mut a = [0.0; N_FEATURES];
        a[Feature::UUx.index()] = -1.0;
        assert_abs_diff_eq!(noise_to_signal_ratio(&consistent, &a).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nsr_matches_hand_computation() {
        let matrix = array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]];
        let b = array![1.5, 0.0, 1.0];
        let sys = FeatureSystem::synthetic(matrix, b, 0.5, 0.2, &[1, 1]).unwrap();
        // a = (1, 0): residual = b - col0 = (0.5, 0, 0), weakest signal =
        // ||col0||_L2 * 1. Area = 0.1 scales both sqrt factors identically.
        let a = [1.0, 0.0];
        let expect = 0.5 / 2.0f64.sqrt();
        assert_abs_diff_eq!(noise_to_signal_ratio(&sys, &a).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn nsr_requires_active_feature() {
        let sys = sample_system(7, 4, 1);
        assert!(noise_to_signal_ratio(&sys, &[0.0; N_FEATURES]).is_err());
    }
}
