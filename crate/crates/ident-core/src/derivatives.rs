//! Finite-difference derivative estimates on gridded data.
//!
//! Time derivatives use the first-order backward difference, so the first
//! time slice carries no estimate. Spatial derivatives come from a five-point
//! ENO interpolation: the stencil grows from the evaluation point toward the
//! side with the smaller Newton divided difference, which keeps stencils away
//! from kinks and steep fronts instead of smearing across them.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IdentError, Result};
use crate::grid::{Field, Grid};

const STENCIL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivKind {
    Ut,
    Ux,
    Uxx,
}

/// Derivative samples aligned with a source [`Field`]. Time indices follow
/// the source field; slices before `time_offset` have no estimate.
#[derive(Debug, Clone)]
pub struct DerivativeField {
    grid: Grid,
    kind: DerivKind,
    /// Shape `(n_t - time_offset, n_x)`.
    values: Array2<f64>,
    time_offset: usize,
}

impl DerivativeField {
    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn kind(&self) -> DerivKind {
        self.kind
    }

    /// First source time index that has an estimate.
    #[inline]
    pub fn time_offset(&self) -> usize {
        self.time_offset
    }

    /// Estimate at spatial index `i` and source time index `n`.
    #[inline]
    pub fn value(&self, i: usize, n: usize) -> f64 {
        self.values[[n - self.time_offset, i]]
    }
}

/// The three derivative estimates the dictionary consumes, computed from one
/// field.
#[derive(Debug, Clone)]
pub struct FieldDerivatives {
    pub ut: DerivativeField,
    pub ux: DerivativeField,
    pub uxx: DerivativeField,
}

impl FieldDerivatives {
    pub fn compute(f: &Field) -> Result<Self> {
        Ok(FieldDerivatives {
            ut: backward_time_derivative(f)?,
            ux: eno_spatial_derivative(f, 1)?,
            uxx: eno_spatial_derivative(f, 2)?,
        })
    }
}

/// Backward difference (u_i^n - u_i^{n-1}) / dt for n >= 1.
pub fn backward_time_derivative(f: &Field) -> Result<DerivativeField> {
    let g = f.grid();
    if g.n_t < 2 {
        return Err(IdentError::TooFewPoints {
            context: "backward time derivative",
            axis: "time",
            needed: 2,
            got: g.n_t,
        });
    }
    let mut values = Array2::zeros((g.n_t - 1, g.n_x));
    for n in 1..g.n_t {
        for i in 0..g.n_x {
            values[[n - 1, i]] = (f.value(i, n) - f.value(i, n - 1)) / g.dt;
        }
    }
    Ok(DerivativeField {
        grid: g.clone(),
        kind: DerivKind::Ut,
        values,
        time_offset: 1,
    })
}

/// First (order 1) or second (order 2) spatial derivative of every time
/// slice via five-point ENO interpolation. Needs n_x >= 5; stencils are
/// clipped to the domain near the boundary.
pub fn eno_spatial_derivative(f: &Field, order: usize) -> Result<DerivativeField> {
    if order != 1 && order != 2 {
        return Err(IdentError::InvalidParameter(format!(
            "spatial derivative order must be 1 or 2, got {order}"
        )));
    }
    let g = f.grid();
    if g.n_x < STENCIL {
        return Err(IdentError::TooFewPoints {
            context: "ENO spatial derivative",
            axis: "space",
            needed: STENCIL,
            got: g.n_x,
        });
    }
    let rows: Vec<Vec<f64>> = (0..g.n_t)
        .into_par_iter()
        .map(|n| {
            let slice = f.time_slice(n);
            eno_derivative_slice(slice.as_slice().expect("time slices are contiguous"), g.dx, order)
        })
        .collect();
    let mut values = Array2::zeros((g.n_t, g.n_x));
    for (n, row) in rows.into_iter().enumerate() {
        for (i, v) in row.into_iter().enumerate() {
            values[[n, i]] = v;
        }
    }
    Ok(DerivativeField {
        grid: g.clone(),
        kind: if order == 1 { DerivKind::Ux } else { DerivKind::Uxx },
        values,
        time_offset: 0,
    })
}

/// ENO derivative of a single slice; used directly by the time evolver.
pub fn eno_derivative_slice(values: &[f64], dx: f64, order: usize) -> Vec<f64> {
    debug_assert!(values.len() >= STENCIL);
    (0..values.len())
        .map(|i| {
            let start = eno_stencil_start(values, dx, i);
            newton_derivative_at(values, dx, start, i, order)
        })
        .collect()
}

/// Top divided difference over `count` consecutive points starting at `s`.
fn top_divided_difference(values: &[f64], dx: f64, s: usize, count: usize) -> f64 {
    let mut d: Vec<f64> = values[s..s + count].to_vec();
    for level in 1..count {
        let h = level as f64 * dx;
        for j in 0..count - level {
            d[j] = (d[j + 1] - d[j]) / h;
        }
    }
    d[0]
}

/// Pick the five-point stencil containing `i`: grow toward the side whose
/// extended divided difference is smaller in magnitude, ties toward the left,
/// clipped at the domain ends.
fn eno_stencil_start(values: &[f64], dx: f64, i: usize) -> usize {
    let n = values.len();
    let (mut l, mut r) = (i, i);
    while r - l + 1 < STENCIL {
        if l == 0 {
            r += 1;
        } else if r == n - 1 {
            l -= 1;
        } else {
            let width = r - l + 2;
            let left = top_divided_difference(values, dx, l - 1, width).abs();
            let right = top_divided_difference(values, dx, l, width).abs();
            if left <= right {
                l -= 1;
            } else {
                r += 1;
            }
        }
    }
    l
}

/// Differentiate the Newton-form interpolant on `values[start..start+5]`
/// at node `i`, propagating first and second derivatives through Horner.
fn newton_derivative_at(values: &[f64], dx: f64, start: usize, i: usize, order: usize) -> f64 {
    let mut c: Vec<f64> = values[start..start + STENCIL].to_vec();
    for level in 1..STENCIL {
        let h = level as f64 * dx;
        for j in (level..STENCIL).rev() {
            c[j] = (c[j] - c[j - 1]) / h;
        }
    }
    let xe = i as f64 * dx;
    let mut p = c[STENCIL - 1];
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    for k in (0..STENCIL - 1).rev() {
        let d = xe - (start + k) as f64 * dx;
        p2 = p2 * d + 2.0 * p1;
        p1 = p1 * d + p;
        p = p * d + c[k];
    }
    if order == 1 {
        p1
    } else {
        p2
    }
}
