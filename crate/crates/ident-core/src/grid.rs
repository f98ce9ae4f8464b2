//! Space-time grids and gridded scalar fields.
//!
//! A [`Field`] stores samples u_i^n on a uniform grid, one time slice per
//! contiguous row. All downstream stages (differentiation, dictionary
//! assembly, time evolution) consume this layout.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{IdentError, Result};

/// Uniform rectangular grid on `[x_min, x_max] x [t_min, t_min + (n_t-1) dt]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub t_min: f64,
    pub n_t: usize,
    pub dx: f64,
    pub dt: f64,
}

impl Grid {
    /// Grid spanning `[x_min, x_max]` with `n_x` nodes; `dx` is derived.
    pub fn from_bounds(
        x_min: f64,
        x_max: f64,
        n_x: usize,
        t_min: f64,
        dt: f64,
        n_t: usize,
    ) -> Result<Self> {
        if n_x < 2 {
            return Err(IdentError::InvalidGrid(format!(
                "need n_x >= 2 to derive dx, got {n_x}"
            )));
        }
        let dx = (x_max - x_min) / (n_x - 1) as f64;
        Self::with_spacing(x_min, dx, n_x, t_min, dt, n_t)
    }

    /// Grid from an explicit spacing; `x_max` is derived.
    pub fn with_spacing(
        x_min: f64,
        dx: f64,
        n_x: usize,
        t_min: f64,
        dt: f64,
        n_t: usize,
    ) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(IdentError::InvalidGrid(format!("dx must be positive, got {dx}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(IdentError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if n_x == 0 || n_t == 0 {
            return Err(IdentError::InvalidGrid("grid must have at least one node per axis".into()));
        }
        if !x_min.is_finite() || !t_min.is_finite() {
            return Err(IdentError::InvalidGrid("grid origin must be finite".into()));
        }
        Ok(Grid {
            x_min,
            x_max: x_min + (n_x - 1) as f64 * dx,
            n_x,
            t_min,
            n_t,
            dx,
            dt,
        })
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    #[inline]
    pub fn t(&self, n: usize) -> f64 {
        self.t_min + n as f64 * self.dt
    }

    pub fn t_max(&self) -> f64 {
        self.t(self.n_t - 1)
    }

    /// Area element dx*dt used by the weighted function-space norms.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dt
    }
}

#[derive(Serialize, Deserialize)]
struct FieldRepr {
    grid: Grid,
    /// Time-major: `values[n][i]` is u(x_i, t_n).
    values: Vec<Vec<f64>>,
}

/// Scalar samples on a [`Grid`]. Row `n` of the backing array is the time
/// slice at `t_n`, so a slice is contiguous in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldRepr", into = "FieldRepr")]
pub struct Field {
    grid: Grid,
    values: Array2<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        let values = Array2::zeros((grid.n_t, grid.n_x));
        Field { grid, values }
    }

    /// Sample `f(x, t)` at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Array2::zeros((grid.n_t, grid.n_x));
        for n in 0..grid.n_t {
            let t = grid.t(n);
            for i in 0..grid.n_x {
                values[[n, i]] = f(grid.x(i), t);
            }
        }
        Field { grid, values }
    }

    /// Wrap an existing `(n_t, n_x)` array of finite values.
    pub fn from_values(grid: Grid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.n_t, grid.n_x) {
            return Err(IdentError::ShapeMismatch(format!(
                "field values {:?} do not match grid ({}, {})",
                values.dim(),
                grid.n_t,
                grid.n_x
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(IdentError::NonFinite { context: "field construction".into() });
        }
        Ok(Field { grid, values })
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Sample at spatial index `i`, time index `n`.
    #[inline]
    pub fn value(&self, i: usize, n: usize) -> f64 {
        self.values[[n, i]]
    }

    #[inline]
    pub fn set(&mut self, i: usize, n: usize, v: f64) {
        self.values[[n, i]] = v;
    }

    /// Backing array, shape `(n_t, n_x)`.
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn time_slice(&self, n: usize) -> ArrayView1<'_, f64> {
        self.values.row(n)
    }

    /// Plain Euclidean norm of all samples (no area weighting).
    pub fn vector_l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Weighted norm `(sum |u|^p dx dt)^(1/p)` approximating the L^p norm of
    /// the underlying function.
    pub fn function_lp_norm(&self, p: f64) -> Result<f64> {
        if !(p.is_finite() && p > 0.0) {
            return Err(IdentError::InvalidParameter(format!(
                "function_lp_norm requires p > 0, got {p}"
            )));
        }
        let sum: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        let norm = (sum * self.grid.cell_area()).powf(1.0 / p);
        if !norm.is_finite() {
            return Err(IdentError::NonFinite { context: "function_lp_norm".into() });
        }
        Ok(norm)
    }

    /// Write the `x,t,u` sample table. Values carry 17 significant digits so
    /// a reader recovers each f64 exactly. `comments` become leading `#` lines.
    pub fn write_csv(&self, mut w: impl Write, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "x,t,u")?;
        for n in 0..self.grid.n_t {
            let t = self.grid.t(n);
            for i in 0..self.grid.n_x {
                writeln!(w, "{:.16e},{:.16e},{:.16e}", self.grid.x(i), t, self.value(i, n))?;
            }
        }
        Ok(())
    }

    /// Read a table produced by [`Field::write_csv`]. The grid is rebuilt from
    /// the coordinate columns, so at least two time slices are required.
    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        let mut saw_header = false;
        for (line_no, line) in r.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if !saw_header {
                if trimmed != "x,t,u" {
                    return Err(IdentError::InvalidParameter(format!(
                        "line {}: expected header 'x,t,u', got '{trimmed}'",
                        line_no + 1
                    )));
                }
                saw_header = true;
                continue;
            }
            let mut parts = trimmed.split(',');
            let mut next = |name: &str| -> Result<f64> {
                parts
                    .next()
                    .ok_or_else(|| {
                        IdentError::InvalidParameter(format!(
                            "line {}: missing column '{name}'",
                            line_no + 1
                        ))
                    })?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| {
                        IdentError::InvalidParameter(format!(
                            "line {}: bad value for '{name}': {e}",
                            line_no + 1
                        ))
                    })
            };
            rows.push((next("x")?, next("t")?, next("u")?));
        }
        if rows.len() < 4 {
            return Err(IdentError::TooFewPoints {
                context: "field CSV",
                axis: "samples",
                needed: 4,
                got: rows.len(),
            });
        }
        let t0 = rows[0].1;
        let n_x = rows.iter().position(|r| r.1 != t0).unwrap_or(rows.len());
        if n_x < 2 || rows.len() % n_x != 0 {
            return Err(IdentError::ShapeMismatch(format!(
                "field CSV is not a complete grid: {} rows with inferred n_x = {n_x}",
                rows.len()
            )));
        }
        let n_t = rows.len() / n_x;
        if n_t < 2 {
            return Err(IdentError::TooFewPoints {
                context: "field CSV",
                axis: "time",
                needed: 2,
                got: n_t,
            });
        }
        let grid = Grid::from_bounds(rows[0].0, rows[n_x - 1].0, n_x, t0, rows[n_x].1 - t0, n_t)?;
        let mut values = Array2::zeros((n_t, n_x));
        for (k, &(_, _, u)) in rows.iter().enumerate() {
            values[[k / n_x, k % n_x]] = u;
        }
        Field::from_values(grid, values)
    }
}

impl From<Field> for FieldRepr {
    fn from(f: Field) -> Self {
        let values = (0..f.grid.n_t)
            .map(|n| f.values.row(n).to_vec())
            .collect();
        FieldRepr { grid: f.grid, values }
    }
}

impl TryFrom<FieldRepr> for Field {
    type Error = IdentError;

    fn try_from(repr: FieldRepr) -> Result<Self> {
        let (n_t, n_x) = (repr.grid.n_t, repr.grid.n_x);
        if repr.values.len() != n_t || repr.values.iter().any(|row| row.len() != n_x) {
            return Err(IdentError::ShapeMismatch("field JSON values do not match grid".into()));
        }
        let flat: Vec<f64> = repr.values.into_iter().flatten().collect();
        let values = Array2::from_shape_vec((n_t, n_x), flat)
            .expect("row lengths checked above");
        Field::from_values(repr.grid, values)
    }
}

/// Additive i.i.d. Gaussian noise at a percent level of the data's RMS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Noise level as a percentage: sigma = percent/100 * ||u||_2 / sqrt(N).
    pub percent: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(percent: f64, seed: u64) -> Self {
        NoiseSpec { percent, seed }
    }

    /// Standard deviation this spec produces on the given data.
    pub fn sigma_for(&self, f: &Field) -> f64 {
        let n = (f.grid.n_x * f.grid.n_t) as f64;
        self.percent / 100.0 * f.vector_l2_norm() / n.sqrt()
    }
}

/// Return a copy of `f` with noise drawn per [`NoiseSpec`]. Draws iterate
/// time slice by time slice, space-fastest, so a seed fixes the whole sample.
pub fn add_noise(f: &Field, spec: &NoiseSpec) -> Result<Field> {
    if !(spec.percent.is_finite() && spec.percent >= 0.0) {
        return Err(IdentError::InvalidParameter(format!(
            "noise percent must be >= 0, got {}",
            spec.percent
        )));
    }
    if spec.percent == 0.0 {
        return Ok(f.clone());
    }
    let sigma = spec.sigma_for(f);
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| IdentError::InvalidParameter(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noisy = f.clone();
    for v in noisy.values.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(noisy)
}

/// Keep every c-th sample along each axis, starting at the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownsampleSpec {
    pub c_x: usize,
    pub c_t: usize,
}

impl DownsampleSpec {
    pub fn new(c_x: usize, c_t: usize) -> Self {
        DownsampleSpec { c_x, c_t }
    }

    pub fn is_identity(&self) -> bool {
        self.c_x == 1 && self.c_t == 1
    }
}

fn retained(len: usize, factor: usize, axis: &'static str) -> Result<usize> {
    if factor == 0 {
        return Err(IdentError::InvalidParameter(format!("{axis} downsample factor must be >= 1")));
    }
    let kept = (len - 1) / factor + 1;
    if kept < 2 {
        return Err(IdentError::DownsampleTooCoarse { axis, factor, size: len });
    }
    Ok(kept)
}

/// Subsample a field, keeping indices 0, c, 2c, ... along each axis. The
/// retained samples are bit-identical to the originals.
pub fn downsample(f: &Field, spec: &DownsampleSpec) -> Result<Field> {
    let g = f.grid();
    let m_x = retained(g.n_x, spec.c_x, "space")?;
    let m_t = retained(g.n_t, spec.c_t, "time")?;
    let grid = Grid::with_spacing(
        g.x_min,
        g.dx * spec.c_x as f64,
        m_x,
        g.t_min,
        g.dt * spec.c_t as f64,
        m_t,
    )?;
    let mut values = Array2::zeros((m_t, m_x));
    for n in 0..m_t {
        for i in 0..m_x {
            values[[n, i]] = f.value(i * spec.c_x, n * spec.c_t);
        }
    }
    Ok(Field { grid, values })
}
