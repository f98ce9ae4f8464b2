//! Local quadratic smoothing of noisy slices.
//!
//! Three filters share one frame: around each sample fit a quadratic
//! p(x) = a0 + a1 (x - x_i) + a2 (x - x_i)^2 and keep p(x_i) = a0.
//!
//! * LS: plain least squares through the five nearest samples.
//! * MA: match five-point window averages of p to window averages of the
//!   data at three centers (square system).
//! * LSMA: least squares of windowed p against windowed data at five
//!   centers; the averaging suppresses noise while the fit keeps third-order
//!   accuracy on smooth data.
//!
//! Near the ends the fit reuses the nearest fully interior set of centers
//! and evaluates the polynomial back at x_i, preserving the order of
//! accuracy. For LS and LSMA, window averages that stick out of the domain
//! are clipped and renormalized, on both the data and the model side, so
//! exact quadratics are reproduced up to the boundary. The MA system is
//! square, and mixing clipped with unclipped windows can make it exactly
//! singular, so MA keeps all three of its windows interior instead (hence
//! it needs two more samples than the others).

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{IdentError, Result};
use crate::grid::Field;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DenoiseMethod {
    #[default]
    None,
    Ls,
    Ma,
    Lsma,
}

impl DenoiseMethod {
    pub fn name(&self) -> &'static str {
        match self {
            DenoiseMethod::None => "none",
            DenoiseMethod::Ls => "ls",
            DenoiseMethod::Ma => "ma",
            DenoiseMethod::Lsma => "lsma",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "none" => Ok(DenoiseMethod::None),
            "ls" => Ok(DenoiseMethod::Ls),
            "ma" => Ok(DenoiseMethod::Ma),
            "lsma" => Ok(DenoiseMethod::Lsma),
            other => Err(IdentError::InvalidParameter(format!(
                "unknown denoise method '{other}' (expected none, ls, ma, lsma)"
            ))),
        }
    }
}

/// Five-point moving average with clipped, renormalized windows at the ends.
pub fn moving_average_5(d: &[f64]) -> Vec<f64> {
    let n = d.len();
    (0..n)
        .map(|j| {
            let lo = j.saturating_sub(2);
            let hi = (j + 2).min(n - 1);
            d[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Mean of (s - i)^k, k = 0..2, over the clipped window around center `j`,
/// in units of the grid spacing. This is the model-side counterpart of
/// [`moving_average_5`].
fn window_mean_powers(n: usize, j: usize, i: usize) -> [f64; 3] {
    let lo = j.saturating_sub(2);
    let hi = (j + 2).min(n - 1);
    let count = (hi - lo + 1) as f64;
    let mut sum = [0.0f64; 3];
    for m in lo..=hi {
        let s = m as f64 - i as f64;
        sum[0] += 1.0;
        sum[1] += s;
        sum[2] += s * s;
    }
    [sum[0] / count, sum[1] / count, sum[2] / count]
}

/// Centers `c - half ..= c + half` with `c` the nearest index whose centered
/// window lies inside the domain.
fn shifted_centers(n: usize, i: usize, half: usize) -> std::ops::RangeInclusive<usize> {
    let c = i.clamp(half, n - 1 - half);
    c - half..=c + half
}

fn solve_fit(rows: Vec<[f64; 3]>, rhs: Vec<f64>, dx: f64) -> (f64, f64, f64) {
    let m = rows.len();
    let mut a = Array2::zeros((m, 3));
    for (r, row) in rows.iter().enumerate() {
        for c in 0..3 {
            a[[r, c]] = row[c];
        }
    }
    let b = Array1::from(rhs);
    // The design is built in units of dx, so its conditioning does not depend
    // on the grid; distinct centers make it full rank.
    let coef = match linalg::lstsq(a.view(), b.view(), 1e-12) {
        Ok(c) => c,
        Err(_) => unreachable!("quadratic fit design is full rank"),
    };
    (coef[0], coef[1] / dx, coef[2] / (dx * dx))
}

/// Least-squares quadratic through the five nearest samples; returns
/// (a0, a1, a2) with the polynomial centered at x_i, so a0 is the denoised
/// value.
pub fn ls_fit(d: &[f64], i: usize, dx: f64) -> (f64, f64, f64) {
    assert!(d.len() >= 5, "ls_fit needs at least 5 samples");
    let mut rows = Vec::with_capacity(5);
    let mut rhs = Vec::with_capacity(5);
    for j in shifted_centers(d.len(), i, 2) {
        let s = j as f64 - i as f64;
        rows.push([1.0, s, s * s]);
        rhs.push(d[j]);
    }
    solve_fit(rows, rhs, dx)
}

/// Quadratic whose window averages match the data's moving average at three
/// centers. The centers are kept far enough from the ends that none of the
/// windows clip: a square system mixing clipped and unclipped rows is
/// singular for some positions (at i = 2 the three rows become collinear).
pub fn ma_fit(d: &[f64], i: usize, dx: f64) -> (f64, f64, f64) {
    let n = d.len();
    assert!(n >= 7, "ma_fit needs at least 7 samples");
    let tilde = moving_average_5(d);
    let c = i.clamp(3, n - 4);
    let mut rows = Vec::with_capacity(3);
    let mut rhs = Vec::with_capacity(3);
    for j in c - 1..=c + 1 {
        rows.push(window_mean_powers(n, j, i));
        rhs.push(tilde[j]);
    }
    solve_fit(rows, rhs, dx)
}

/// Least squares of windowed model averages against the data's moving
/// average at five centers.
pub fn lsma_fit(d: &[f64], i: usize, dx: f64) -> (f64, f64, f64) {
    assert!(d.len() >= 5, "lsma_fit needs at least 5 samples");
    let tilde = moving_average_5(d);
    let mut rows = Vec::with_capacity(5);
    let mut rhs = Vec::with_capacity(5);
    for j in shifted_centers(d.len(), i, 2) {
        rows.push(window_mean_powers(d.len(), j, i));
        rhs.push(tilde[j]);
    }
    solve_fit(rows, rhs, dx)
}

/// Denoise one slice, returning the fitted values.
pub fn denoise_slice(d: &[f64], dx: f64, method: DenoiseMethod) -> Vec<f64> {
    match method {
        DenoiseMethod::None => d.to_vec(),
        DenoiseMethod::Ls => (0..d.len()).map(|i| ls_fit(d, i, dx).0).collect(),
        DenoiseMethod::Ma => (0..d.len()).map(|i| ma_fit(d, i, dx).0).collect(),
        DenoiseMethod::Lsma => (0..d.len()).map(|i| lsma_fit(d, i, dx).0).collect(),
    }
}

/// Apply the spatial filter to every time slice.
pub fn denoise_field(f: &Field, method: DenoiseMethod) -> Result<Field> {
    if method == DenoiseMethod::None {
        return Ok(f.clone());
    }
    let g = f.grid();
    let needed = if method == DenoiseMethod::Ma { 7 } else { 5 };
    if g.n_x < needed {
        return Err(IdentError::TooFewPoints {
            context: "denoise_field",
            axis: "space",
            needed,
            got: g.n_x,
        });
    }
    let mut out = Array2::zeros((g.n_t, g.n_x));
    for n in 0..g.n_t {
        let slice = f.time_slice(n);
        let fitted = denoise_slice(slice.as_slice().expect("contiguous slice"), g.dx, method);
        for (i, v) in fitted.into_iter().enumerate() {
            out[[n, i]] = v;
        }
    }
    Field::from_values(g.clone(), out)
}
