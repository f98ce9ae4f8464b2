//! Reference problems: the analytic Burgers solution and a first-order
//! explicit convection--diffusion solver used to manufacture test data.
//!
//! The solver is deliberately low-order (Godunov flux, upwind advection,
//! centered diffusion, forward Euler): identification quality is supposed to
//! reflect the (delta t + delta x) generation error of exactly this kind of
//! scheme, so a sharper solver would change the benchmarks.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{IdentError, Result};
use crate::grid::{Field, Grid};

/// Shock formation time of u_t + (u^2/2)_x = 0 from u(x,0) = sin(4 pi x).
pub const BURGERS_SHOCK_TIME: f64 = 1.0 / (4.0 * PI);

/// Named initial profiles on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialCondition {
    Zero,
    /// sin(4 pi x)
    SinFourPi,
    /// sin(4 pi x) + 0.5 sin(8 pi x)
    TwoMode,
    /// sin(pi x)
    SinPi,
    /// exp(-200 (x - 1/2)^2), effectively interior-supported
    Bump,
}

impl InitialCondition {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            InitialCondition::Zero => 0.0,
            InitialCondition::SinFourPi => (4.0 * PI * x).sin(),
            InitialCondition::TwoMode => (4.0 * PI * x).sin() + 0.5 * (8.0 * PI * x).sin(),
            InitialCondition::SinPi => (PI * x).sin(),
            InitialCondition::Bump => (-200.0 * (x - 0.5) * (x - 0.5)).exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitialCondition::Zero => "zero",
            InitialCondition::SinFourPi => "sin4pi",
            InitialCondition::TwoMode => "sin4pi+0.5sin8pi",
            InitialCondition::SinPi => "sinpi",
            InitialCondition::Bump => "bump",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim() {
            "zero" => Ok(InitialCondition::Zero),
            "sin4pi" => Ok(InitialCondition::SinFourPi),
            "sin4pi+0.5sin8pi" => Ok(InitialCondition::TwoMode),
            "sinpi" => Ok(InitialCondition::SinPi),
            "bump" => Ok(InitialCondition::Bump),
            other => Err(IdentError::InvalidParameter(format!(
                "unknown initial condition {other:?} (try zero, sin4pi, sin4pi+0.5sin8pi, sinpi, bump)"
            ))),
        }
    }
}

/// Named spatial coefficient functions for b(x) u_x and c(x) u_xx terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpatialCoefficient {
    Zero,
    Constant(f64),
    /// 0.05 + 0.2 sin(pi x)
    SinBump,
    /// -2 x
    MinusTwoX,
}

impl SpatialCoefficient {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            SpatialCoefficient::Zero => 0.0,
            SpatialCoefficient::Constant(c) => c,
            SpatialCoefficient::SinBump => 0.05 + 0.2 * (PI * x).sin(),
            SpatialCoefficient::MinusTwoX => -2.0 * x,
        }
    }

    pub fn name(self) -> String {
        match self {
            SpatialCoefficient::Zero => "zero".into(),
            SpatialCoefficient::Constant(c) => format!("{c}"),
            SpatialCoefficient::SinBump => "sin-bump".into(),
            SpatialCoefficient::MinusTwoX => "minus-2x".into(),
        }
    }

    /// Parses "zero", "sin-bump", "minus-2x", or a float literal.
    pub fn from_name(name: &str) -> Result<Self> {
        let name = name.trim();
        match name {
            "zero" => Ok(SpatialCoefficient::Zero),
            "sin-bump" => Ok(SpatialCoefficient::SinBump),
            "minus-2x" => Ok(SpatialCoefficient::MinusTwoX),
            other => other.parse::<f64>().map(SpatialCoefficient::Constant).map_err(|_| {
                IdentError::InvalidParameter(format!(
                    "unknown coefficient {other:?} (try zero, sin-bump, minus-2x, or a number)"
                ))
            }),
        }
    }
}

/// Configuration of a fine-grid explicit simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub fine_dx: f64,
    pub fine_dt: f64,
    pub t_end: f64,
    /// Always 1; kept explicit because the generation-error budget is
    /// parameterized by the scheme order.
    pub scheme_order: u32,
    pub initial: InitialCondition,
    /// Include the conservative Burgers flux -(u^2/2)_x.
    pub burgers: bool,
    /// Coefficient b(x) of u_x.
    pub advection: SpatialCoefficient,
    /// Coefficient c(x) of u_xx; must be nonnegative on the domain.
    pub diffusion: SpatialCoefficient,
}

/// Analytic pre-shock solution of u_t + (u^2/2)_x = 0, u(x,0) = sin(4 pi x),
/// zero Dirichlet boundaries, sampled on `grid`. Each sample solves the
/// characteristic equation u = sin(4 pi (x - u t)) by Newton iteration with a
/// bisection safeguard; the residual at every sample is below 1e-13.
pub fn burgers_analytic(grid: &Grid) -> Result<Field> {
    if grid.t_max() >= BURGERS_SHOCK_TIME {
        return Err(IdentError::InvalidParameter(format!(
            "final time {} reaches the shock time 1/(4 pi) = {BURGERS_SHOCK_TIME}; \
             the characteristic solution is single-valued only before it",
            grid.t_max()
        )));
    }
    let mut values = ndarray::Array2::zeros((grid.n_t, grid.n_x));
    let mut prev: Vec<f64> = (0..grid.n_x).map(|i| (4.0 * PI * grid.x(i)).sin()).collect();
    for n in 0..grid.n_t {
        let t = grid.t(n);
        for i in 0..grid.n_x {
            let u = solve_characteristic(grid.x(i), t, prev[i])?;
            values[[n, i]] = u;
            prev[i] = u;
        }
    }
    Field::from_values(grid.clone(), values)
}

fn solve_characteristic(x: f64, t: f64, guess: f64) -> Result<f64> {
    let f = |u: f64| u - (4.0 * PI * (x - u * t)).sin();
    let fp = |u: f64| 1.0 + 4.0 * PI * t * (4.0 * PI * (x - u * t)).cos();
    // f is strictly increasing before the shock time and brackets the root.
    let mut lo = -1.0 - 1e-9;
    let mut hi = 1.0 + 1e-9;
    let mut u = guess.clamp(lo, hi);
    for _ in 0..100 {
        let fu = f(u);
        if fu.abs() <= 1e-13 {
            return Ok(u);
        }
        if fu > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let d = fp(u);
        let newton = u - fu / d;
        u = if d > 1e-12 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Err(IdentError::CharacteristicSolve {
        x,
        t,
        reason: "Newton with bisection fallback did not reach residual 1e-13 in 100 iterations"
            .into(),
    })
}

/// Forward-Euler first-order solve of
/// u_t + burgers*(u^2/2)_x = b(x) u_x + c(x) u_xx, zero Dirichlet,
/// on the fine grid implied by `cfg`, sampled onto `grid_out` (whose spacings
/// must be integer multiples of the fine spacings). The Burgers flux is the
/// Godunov flux; b(x) u_x is first-order upwind; u_xx is the centered second
/// difference.
pub fn simulate_first_order(cfg: &SimConfig, grid_out: &Grid) -> Result<Field> {
    if cfg.scheme_order != 1 {
        return Err(IdentError::InvalidParameter(format!(
            "only the first-order scheme is implemented (got q = {})",
            cfg.scheme_order
        )));
    }
    if !(cfg.fine_dx > 0.0 && cfg.fine_dt > 0.0 && cfg.t_end > 0.0)
        || !(cfg.fine_dx.is_finite() && cfg.fine_dt.is_finite() && cfg.t_end.is_finite())
    {
        return Err(IdentError::InvalidParameter(
            "fine_dx, fine_dt, t_end must be positive and finite".into(),
        ));
    }
    if grid_out.t_min.abs() > 1e-12 {
        return Err(IdentError::InvalidParameter(
            "simulation output grids must start at t = 0".into(),
        ));
    }
    if grid_out.t_max() > cfg.t_end * (1.0 + 1e-9) {
        return Err(IdentError::InvalidParameter(format!(
            "output grid runs to t = {} but the simulation ends at t_end = {}",
            grid_out.t_max(),
            cfg.t_end
        )));
    }
    let c_x = spacing_factor(grid_out.dx, cfg.fine_dx, "dx")?;
    let c_t = spacing_factor(grid_out.dt, cfg.fine_dt, "dt")?;

    let n_fine = (grid_out.n_x - 1) * c_x + 1;
    let fine_x = |i: usize| grid_out.x_min + i as f64 * cfg.fine_dx;
    let b_at: Vec<f64> = (0..n_fine).map(|i| cfg.advection.eval(fine_x(i))).collect();
    let c_at: Vec<f64> = (0..n_fine).map(|i| cfg.diffusion.eval(fine_x(i))).collect();
    if let Some(bad) = c_at.iter().find(|&&c| c < -1e-12) {
        return Err(IdentError::InvalidParameter(format!(
            "diffusion coefficient must be nonnegative (found {bad})"
        )));
    }
    let mut state: Vec<f64> = (0..n_fine).map(|i| cfg.initial.eval(fine_x(i))).collect();
    state[0] = 0.0;
    state[n_fine - 1] = 0.0;

    let max_c = c_at.iter().cloned().fold(0.0f64, f64::max);
    if max_c > 0.0 && cfg.fine_dt > cfg.fine_dx * cfg.fine_dx / (2.0 * max_c) * (1.0 + 1e-9) {
        return Err(IdentError::Unstable(format!(
            "explicit diffusion requires fine_dt <= fine_dx^2/(2 max c) = {}",
            cfg.fine_dx * cfg.fine_dx / (2.0 * max_c)
        )));
    }
    let max_b = b_at.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let max_u0 = state.iter().fold(0.0f64, |m, u| m.max(u.abs()));
    let speed = max_b + if cfg.burgers { max_u0 } else { 0.0 };
    if speed * cfg.fine_dt > cfg.fine_dx * (1.0 + 1e-9) {
        return Err(IdentError::Unstable(format!(
            "advection CFL violated: speed {speed} * fine_dt exceeds fine_dx"
        )));
    }

    let inv_dx = 1.0 / cfg.fine_dx;
    let inv_dx2 = inv_dx * inv_dx;
    let mut out = ndarray::Array2::zeros((grid_out.n_t, grid_out.n_x));
    for j in 0..grid_out.n_x {
        out[[0, j]] = state[j * c_x];
    }
    let mut flux = vec![0.0; n_fine - 1];
    let mut next = state.clone();
    for n in 0..grid_out.n_t - 1 {
        for _ in 0..c_t {
            if cfg.burgers {
                for i in 0..n_fine - 1 {
                    flux[i] = godunov_flux(state[i], state[i + 1]);
                }
            }
            for i in 1..n_fine - 1 {
                let mut du = 0.0;
                if cfg.burgers {
                    du -= (flux[i] - flux[i - 1]) * inv_dx;
                }
                let b = b_at[i];
                if b > 0.0 {
                    du += b * (state[i + 1] - state[i]) * inv_dx;
                } else if b < 0.0 {
                    du += b * (state[i] - state[i - 1]) * inv_dx;
                }
                let c = c_at[i];
                if c != 0.0 {
                    du += c * (state[i + 1] - 2.0 * state[i] + state[i - 1]) * inv_dx2;
                }
                next[i] = state[i] + cfg.fine_dt * du;
            }
            next[0] = 0.0;
            next[n_fine - 1] = 0.0;
            if next.iter().any(|v| !v.is_finite() || v.abs() > 1e10) {
                return Err(IdentError::Unstable(format!(
                    "simulation blew up near t = {}",
                    grid_out.t(n)
                )));
            }
            std::mem::swap(&mut state, &mut next);
        }
        for j in 0..grid_out.n_x {
            out[[n + 1, j]] = state[j * c_x];
        }
    }
    Field::from_values(grid_out.clone(), out)
}

fn spacing_factor(coarse: f64, fine: f64, what: &str) -> Result<usize> {
    let ratio = coarse / fine;
    let rounded = ratio.round();
    if !(rounded >= 1.0) || (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
        return Err(IdentError::InvalidParameter(format!(
            "output {what} = {coarse} is not a positive integer multiple of fine {what} = {fine}"
        )));
    }
    Ok(rounded as usize)
}

/// Godunov numerical flux for f(u) = u^2/2.
fn godunov_flux(ul: f64, ur: f64) -> f64 {
    if ul <= ur {
        // min of u^2/2 over [ul, ur]
        if ul <= 0.0 && 0.0 <= ur {
            0.0
        } else {
            0.5 * (ul * ul).min(ur * ur)
        }
    } else {
        0.5 * (ul * ul).max(ur * ur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pure_burgers(fine_dx: f64, fine_dt: f64, t_end: f64, initial: InitialCondition) -> SimConfig {
        SimConfig {
            fine_dx,
            fine_dt,
            t_end,
            scheme_order: 1,
            initial,
            burgers: true,
            advection: SpatialCoefficient::Zero,
            diffusion: SpatialCoefficient::Zero,
        }
    }

    #[test]
    fn analytic_matches_initial_condition_at_t_zero() {
        let g = Grid::from_bounds(0.0, 1.0, 57, 0.0, 0.004, 3).unwrap();
        let f = burgers_analytic(&g).unwrap();
        for i in 0..g.n_x {
            assert_eq!(f.value(i, 0), (4.0 * PI * g.x(i)).sin());
        }
    }

    #[test]
    fn analytic_boundaries_vanish() {
        let g = Grid::from_bounds(0.0, 1.0, 57, 0.0, 0.004, 13).unwrap();
        let f = burgers_analytic(&g).unwrap();
        for n in 0..g.n_t {
            assert!(f.value(0, n).abs() <= 1e-12);
            assert!(f.value(g.n_x - 1, n).abs() <= 1e-12);
        }
    }

    #[test]
    fn analytic_characteristic_residual_small_everywhere() {
        let g = Grid::from_bounds(0.0, 1.0, 57, 0.0, 0.004, 13).unwrap();
        let f = burgers_analytic(&g).unwrap();
        for n in 0..g.n_t {
            let t = g.t(n);
            for i in 0..g.n_x {
                let u = f.value(i, n);
                let residual = u - (4.0 * PI * (g.x(i) - u * t)).sin();
                assert!(residual.abs() <= 1e-12, "residual {residual} at ({i},{n})");
            }
        }
    }

    #[test]
    fn analytic_is_odd_about_the_midpoint() {
        let g = Grid::from_bounds(0.0, 1.0, 129, 0.0, 0.005, 11).unwrap();
        let f = burgers_analytic(&g).unwrap();
        for n in 0..g.n_t {
            for i in 0..g.n_x {
                let j = g.n_x - 1 - i;
                assert!(
                    (f.value(i, n) + f.value(j, n)).abs() <= 1e-10,
                    "asymmetry at ({i},{n})"
                );
            }
        }
    }

    #[test]
    fn analytic_respects_the_max_principle() {
        let g = Grid::from_bounds(0.0, 1.0, 89, 0.0, 0.007, 9).unwrap();
        let f = burgers_analytic(&g).unwrap();
        assert!(f.values().iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn analytic_rejects_post_shock_times() {
        let g = Grid::from_bounds(0.0, 1.0, 57, 0.0, 0.01, 9).unwrap();
        assert!(g.t_max() > BURGERS_SHOCK_TIME);
        assert!(burgers_analytic(&g).is_err());
    }

    #[test]
    fn zero_initial_condition_stays_zero() {
        let cfg = SimConfig {
            initial: InitialCondition::Zero,
            ..pure_burgers(1.0 / 64.0, 1e-4, 0.01, InitialCondition::Zero)
        };
        let g = Grid::with_spacing(0.0, 1.0 / 64.0, 65, 0.0, 1e-3, 11).unwrap();
        let f = simulate_first_order(&cfg, &g).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_diffusion_tracks_the_heat_kernel() {
        let dx = 1.0 / 256.0;
        let dt = dx * dx;
        let cfg = SimConfig {
            fine_dx: dx,
            fine_dt: dt,
            t_end: 0.05,
            scheme_order: 1,
            initial: InitialCondition::SinPi,
            burgers: false,
            advection: SpatialCoefficient::Zero,
            diffusion: SpatialCoefficient::Constant(0.1),
        };
        let g = Grid::with_spacing(0.0, 4.0 * dx, 65, 0.0, 800.0 * dt, 5).unwrap();
        let f = simulate_first_order(&cfg, &g).unwrap();
        for n in 0..g.n_t {
            let t = g.t(n);
            for i in 0..g.n_x {
                let exact = (-0.1 * PI * PI * t).exp() * (PI * g.x(i)).sin();
                assert!(
                    (f.value(i, n) - exact).abs() <= 0.02,
                    "({i},{n}): {} vs {exact}",
                    f.value(i, n)
                );
            }
        }
    }

    #[test]
    fn conservative_flux_preserves_interior_mass() {
        let dx = 1.0 / 128.0;
        let cfg = pure_burgers(dx, 1e-4, 0.01, InitialCondition::Bump);
        let g = Grid::with_spacing(0.0, dx, 129, 0.0, 1e-3, 11).unwrap();
        let f = simulate_first_order(&cfg, &g).unwrap();
        let mass = |n: usize| (0..g.n_x).map(|i| f.value(i, n)).sum::<f64>() * dx;
        let drift = (mass(g.n_t - 1) - mass(0)).abs();
        assert!(drift <= 1e-10, "mass drift {drift}");
    }

    #[test]
    fn diffusion_creates_no_new_extrema() {
        let dx = 1.0 / 128.0;
        let c = 0.1;
        let dt = 0.9 * dx * dx / (2.0 * c);
        let cfg = SimConfig {
            fine_dx: dx,
            fine_dt: dt,
            t_end: 300.0 * dt,
            scheme_order: 1,
            initial: InitialCondition::TwoMode,
            burgers: false,
            advection: SpatialCoefficient::Zero,
            diffusion: SpatialCoefficient::Constant(c),
        };
        let g = Grid::with_spacing(0.0, dx, 129, 0.0, 10.0 * dt, 31).unwrap();
        let f = simulate_first_order(&cfg, &g).unwrap();
        let row_max = |n: usize| (0..g.n_x).map(|i| f.value(i, n)).fold(f64::MIN, f64::max);
        let row_min = |n: usize| (0..g.n_x).map(|i| f.value(i, n)).fold(f64::MAX, f64::min);
        for n in 1..g.n_t {
            assert!(row_max(n) <= row_max(n - 1) + 1e-12);
            assert!(row_min(n) >= row_min(n - 1) - 1e-12);
        }
    }

    #[test]
    fn burgers_error_against_analytic_is_first_order() {
        // delta t and delta x are halved together, so the O(dt + dx) error
        // should halve per level.
        let mut errors = Vec::new();
        let mut spacings = Vec::new();
        for k in [128usize, 256, 512] {
            let dx = 1.0 / k as f64;
            let dt = 0.2 * dx;
            let c_t = (0.02 / dt).round() as usize;
            let g = Grid::with_spacing(0.0, (k / 32) as f64 * dx, 33, 0.0, c_t as f64 * dt, 2)
                .unwrap();
            let cfg = pure_burgers(dx, dt, g.t_max() * (1.0 + 1e-12), InitialCondition::SinFourPi);
            let sim = simulate_first_order(&cfg, &g).unwrap();
            let exact = burgers_analytic(&g).unwrap();
            let err = (0..g.n_x)
                .map(|i| (sim.value(i, 1) - exact.value(i, 1)).abs())
                .fold(0.0f64, f64::max);
            errors.push(err.ln());
            spacings.push(dx.ln());
        }
        let n = errors.len() as f64;
        let sx: f64 = spacings.iter().sum();
        let sy: f64 = errors.iter().sum();
        let sxx: f64 = spacings.iter().map(|x| x * x).sum();
        let sxy: f64 = spacings.iter().zip(&errors).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((slope - 1.0).abs() <= 0.3, "slope {slope}");
    }

    #[test]
    fn sampling_matches_the_unsampled_run() {
        let dx = 1.0 / 64.0;
        let dt = 1e-4;
        let cfg = pure_burgers(dx, dt, 0.002, InitialCondition::SinFourPi);
        let full = Grid::with_spacing(0.0, dx, 65, 0.0, dt, 21).unwrap();
        let coarse = Grid::with_spacing(0.0, 2.0 * dx, 33, 0.0, 5.0 * dt, 5).unwrap();
        let f_full = simulate_first_order(&cfg, &full).unwrap();
        let f_coarse = simulate_first_order(&cfg, &coarse).unwrap();
        for n in 0..coarse.n_t {
            for j in 0..coarse.n_x {
                assert_eq!(f_coarse.value(j, n), f_full.value(2 * j, 5 * n));
            }
        }
    }

    #[test]
    fn configuration_errors_are_reported() {
        let dx = 1.0 / 64.0;
        let good = pure_burgers(dx, 1e-4, 0.01, InitialCondition::SinFourPi);
        let g = Grid::with_spacing(0.0, dx, 65, 0.0, 1e-3, 11).unwrap();

        let higher = SimConfig { scheme_order: 2, ..good };
        assert!(simulate_first_order(&higher, &g).is_err());

        let misaligned = Grid::with_spacing(0.0, 1.5 * dx, 33, 0.0, 1e-3, 11).unwrap();
        assert!(simulate_first_order(&good, &misaligned).is_err());

        let negative_diffusion =
            SimConfig { diffusion: SpatialCoefficient::Constant(-0.1), ..good };
        assert!(simulate_first_order(&negative_diffusion, &g).is_err());

        // fine_dt = 1e-3 still divides the output dt, but violates
        // fine_dt <= fine_dx^2 / (2 max c) = 1.22e-4 for c = 1.
        let unstable_diffusion = SimConfig {
            diffusion: SpatialCoefficient::Constant(1.0),
            fine_dt: 1e-3,
            ..good
        };
        assert!(matches!(
            simulate_first_order(&unstable_diffusion, &g),
            Err(IdentError::Unstable(_))
        ));

        // CFL bound at fine_dt = 1e-3 is |b| <= dx / fine_dt = 15.625.
        let fast_advection = SimConfig {
            burgers: false,
            advection: SpatialCoefficient::Constant(20.0),
            fine_dt: 1e-3,
            ..good
        };
        assert!(matches!(
            simulate_first_order(&fast_advection, &g),
            Err(IdentError::Unstable(_))
        ));
    }

    #[test]
    fn name_round_trips() {
        for ic in [
            InitialCondition::Zero,
            InitialCondition::SinFourPi,
            InitialCondition::TwoMode,
            InitialCondition::SinPi,
            InitialCondition::Bump,
        ] {
            assert_eq!(InitialCondition::from_name(ic.name()).unwrap(), ic);
        }
        for sc in [
            SpatialCoefficient::Zero,
            SpatialCoefficient::Constant(0.25),
            SpatialCoefficient::SinBump,
            SpatialCoefficient::MinusTwoX,
        ] {
            assert_eq!(SpatialCoefficient::from_name(&sc.name()).unwrap(), sc);
        }
        assert!(InitialCondition::from_name("parabola").is_err());
        assert!(SpatialCoefficient::from_name("x^2").is_err());
    }
}
