//! Classical backward semi-Lagrangian scheme on the stiff system, with
//! v-r-v split steps: half a velocity kick with the field at `t_n`, a
//! full radial advection at speed `v/eps`, a Poisson solve on the
//! intermediate distribution, then the second half kick with the fresh
//! field at `t_{n+1}`.
//!
//! Characteristic feet that leave the grid hull fetch zero (compact
//! support); the mass they carried is accumulated in an escaped-mass
//! diagnostic rather than silently dropped, since beam defocusing in
//! long runs is precisely the failure mode worth observing.

use crate::fields::{external_field, solve_radial_poisson, FocusingConfig};
use crate::geometry::{DistributionField, PhaseGrid};
use crate::spline::{BoundaryCondition, Spline1D};
use crate::SolverError;
use rayon::prelude::*;

/// State of the classical scheme: distribution, field column on the
/// radial axis, and clock.
#[derive(Debug, Clone)]
pub struct ClassicalState {
    pub f: DistributionField,
    /// `E(r_i)` over the full symmetric axis, zero at the origin.
    pub e: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    /// Mass estimate advected out of the hull during the last step.
    pub escaped_step: f64,
    /// Cumulative escaped mass since the initial time.
    pub escaped_total: f64,
}

impl ClassicalState {
    /// Initial state at `t = 0`; computes the self-consistent field of
    /// `f0` unless the run is linear (`self_field = false`).
    pub fn new(
        f0: DistributionField,
        dt: f64,
        self_field: bool,
    ) -> Result<Self, SolverError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SolverError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let e = if self_field {
            solve_radial_poisson(|k, j| f0.get(k, j), &f0.grid)?
        } else {
            vec![0.0; f0.grid.n_r()]
        };
        Ok(ClassicalState { f: f0, e, t: 0.0, dt, escaped_step: 0.0, escaped_total: 0.0 })
    }
}

/// Largest `dt` satisfying the locality condition of the split scheme:
/// the radial displacement `dt v_max / eps` stays within one radial
/// cell and the half velocity kick `dt/2 * field_bound` within one
/// velocity cell. This forces `dt = O(eps)`.
pub fn cfl_timestep(
    grid: &PhaseGrid,
    cfg: &FocusingConfig,
    field_bound: f64,
) -> Result<f64, SolverError> {
    if !(field_bound > 0.0) || !field_bound.is_finite() {
        return Err(SolverError::InvalidParameter(format!(
            "field bound must be positive and finite, got {field_bound}"
        )));
    }
    if !(cfg.eps > 0.0) {
        return Err(SolverError::InvalidParameter(format!("eps must be positive, got {}", cfg.eps)));
    }
    let dt_r = cfg.eps * grid.dr() / grid.v_max;
    let dt_v = 2.0 * grid.dv() / field_bound;
    Ok(dt_r.min(dt_v))
}

/// Backward advection in `v` by `dt_half` under the per-radial-node
/// acceleration column: `f*(r_i, v_j) = Pi_v f(r_i, v_j - dt_half * a_i)`.
/// Returns the new field and the escaped-mass estimate.
pub fn advect_v(
    f: &DistributionField,
    dt_half: f64,
    accel: &[f64],
) -> Result<(DistributionField, f64), SolverError> {
    let grid = f.grid;
    let n_v = grid.n_v();
    let axis = grid.v_axis();
    let cell = grid.cell_area();
    let hull_lo = axis.x0;
    let hull_hi = axis.last();

    let rows: Vec<Result<(Vec<f64>, f64), SolverError>> = (0..grid.n_r())
        .into_par_iter()
        .map(|row| {
            let values = &f.values[row * n_v..(row + 1) * n_v];
            let shift = dt_half * accel[row];
            if shift == 0.0 {
                return Ok((values.to_vec(), 0.0));
            }
            let spline = Spline1D::fit(values, axis, BoundaryCondition::Natural)?;
            let mut out = Vec::with_capacity(n_v);
            let mut escaped = 0.0;
            for j in 0..n_v {
                let foot = axis.node(j) - shift;
                if foot < hull_lo || foot > hull_hi {
                    escaped += values[j].abs() * cell;
                }
                out.push(spline.eval(foot));
            }
            Ok((out, escaped))
        })
        .collect();

    let mut result = DistributionField::zeros(grid);
    let mut escaped = 0.0;
    for (row, item) in rows.into_iter().enumerate() {
        let (values, esc) = item?;
        result.values[row * n_v..(row + 1) * n_v].copy_from_slice(&values);
        escaped += esc;
    }
    Ok((result, escaped))
}

/// Backward advection in `r` by `dt` at speed `v/eps`:
/// `f**(r_i, v_j) = Pi_r f(r_i - dt/eps * v_j, v_j)`.
pub fn advect_r(
    f: &DistributionField,
    dt: f64,
    eps: f64,
) -> Result<(DistributionField, f64), SolverError> {
    let grid = f.grid;
    let n_r = grid.n_r();
    let n_v = grid.n_v();
    let axis = grid.r_axis();
    let cell = grid.cell_area();
    let hull_lo = axis.x0;
    let hull_hi = axis.last();

    let columns: Vec<Result<(Vec<f64>, f64), SolverError>> = (0..n_v)
        .into_par_iter()
        .map(|col| {
            let j = col as isize - grid.p_v as isize;
            let shift = dt / eps * grid.v_coord(j);
            let mut values = Vec::with_capacity(n_r);
            for row in 0..n_r {
                values.push(f.values[row * n_v + col]);
            }
            if shift == 0.0 {
                return Ok((values, 0.0));
            }
            let spline = Spline1D::fit(&values, axis, BoundaryCondition::Natural)?;
            let mut out = Vec::with_capacity(n_r);
            let mut escaped = 0.0;
            for i in 0..n_r {
                let foot = axis.node(i) - shift;
                if foot < hull_lo || foot > hull_hi {
                    escaped += values[i].abs() * cell;
                }
                out.push(spline.eval(foot));
            }
            Ok((out, escaped))
        })
        .collect();

    let mut result = DistributionField::zeros(grid);
    let mut escaped = 0.0;
    for (col, item) in columns.into_iter().enumerate() {
        let (values, esc) = item?;
        for row in 0..n_r {
            result.values[row * n_v + col] = values[row];
        }
        escaped += esc;
    }
    Ok((result, escaped))
}

/// One split step: half kick with `E_n + Xi(., t_n)`, radial advection,
/// Poisson solve on the intermediate distribution, half kick with
/// `E_{n+1} + Xi(., t_{n+1})`.
pub fn step_classical(
    state: &ClassicalState,
    cfg: &FocusingConfig,
    self_field: bool,
) -> Result<ClassicalState, SolverError> {
    let grid = state.f.grid;
    let dt = state.dt;
    let t_next = state.t + dt;

    let accel_now: Vec<f64> = (0..grid.n_r())
        .map(|idx| {
            let i = idx as isize - grid.p_r as isize;
            state.e[idx] + external_field(cfg, grid.r_coord(i), state.t)
        })
        .collect();
    let (f_star, esc1) = advect_v(&state.f, 0.5 * dt, &accel_now)?;
    let (f_ss, esc2) = advect_r(&f_star, dt, cfg.eps)?;

    let e_next = if self_field {
        solve_radial_poisson(|k, j| f_ss.get(k, j), &grid)?
    } else {
        vec![0.0; grid.n_r()]
    };

    let accel_next: Vec<f64> = (0..grid.n_r())
        .map(|idx| {
            let i = idx as isize - grid.p_r as isize;
            e_next[idx] + external_field(cfg, grid.r_coord(i), t_next)
        })
        .collect();
    let (f_next, esc3) = advect_v(&f_ss, 0.5 * dt, &accel_next)?;

    let escaped_step = esc1 + esc2 + esc3;
    Ok(ClassicalState {
        f: f_next,
        e: e_next,
        t: t_next,
        dt,
        escaped_step,
        escaped_total: state.escaped_total + escaped_step,
    })
}
