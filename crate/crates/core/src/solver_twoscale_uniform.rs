//! Two-scale semi-Lagrangian scheme on a uniform `(q, u_r)` mesh: a
//! two-time-level leapfrog where `G^{n+1}` is fetched from `G^{n-1}`
//! along characteristic feet computed with the averaged fields at level
//! `n`, displaced by `2 d` with `d` from a linearized fixed-point solve.
//!
//! There is no split step here: the averaged drift depends on both
//! coordinates, so each advance is one 2D interpolation per node.

use crate::fields::{
    averaged_fields_uniform, self_field_twoscale_uniform, AveragedFieldTable, FocusingConfig,
    RadialFieldTable,
};
use crate::geometry::{rotate, DistributionField, PhaseGrid, PhasePoint, TauGrid};
use crate::spline::Spline2D;
use crate::SolverError;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Per-node characteristic displacements over one time level.
#[derive(Debug, Clone)]
pub struct ShiftTable {
    pub grid: PhaseGrid,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl ShiftTable {
    pub fn get(&self, i: isize, j: isize) -> (f64, f64) {
        let idx = self.grid.lin(i, j);
        (self.d1[idx], self.d2[idx])
    }
}

/// Solve the linearized fixed point `d = dt * A^{-1} <E>(x)` with
/// `A = Id + dt * grad(Pi <E>)(x)` at every node of one field slice.
///
/// `grad_rotation` is the angle by which spline gradients are rotated
/// into physical coordinates: zero on the uniform mesh, `tau_m` on the
/// rotated mesh `M(Omega(tau_m))`, where the slice tables are indexed
/// by unrotated node and the chain rule through the rotation applies.
pub fn compute_shifts_slice(
    e1: &[f64],
    e2: &[f64],
    grid: &PhaseGrid,
    dt: f64,
    grad_rotation: f64,
    slice: usize,
) -> Result<ShiftTable, SolverError> {
    let s1 = Spline2D::fit(e1, *grid, Default::default())?;
    let s2 = Spline2D::fit(e2, *grid, Default::default())?;
    let n_v = grid.n_v();
    let n_nodes = grid.n_nodes();

    let shifts: Vec<Result<(f64, f64), SolverError>> = (0..n_nodes)
        .into_par_iter()
        .map(|idx| {
            let i = (idx / n_v) as isize - grid.p_r as isize;
            let j = (idx % n_v) as isize - grid.p_v as isize;
            let node = grid.node(i, j);
            let g1 = rotate_vector(s1.eval_grad(node), grad_rotation);
            let g2 = rotate_vector(s2.eval_grad(node), grad_rotation);
            let a11 = 1.0 + dt * g1.0;
            let a12 = dt * g1.1;
            let a21 = dt * g2.0;
            let a22 = 1.0 + dt * g2.1;
            let det = a11 * a22 - a12 * a21;
            if det.abs() < 1e-12 {
                return Err(SolverError::SingularShift { i, j, slice, det });
            }
            let (f1, f2) = (e1[idx], e2[idx]);
            Ok((dt * (a22 * f1 - a12 * f2) / det, dt * (a11 * f2 - a21 * f1) / det))
        })
        .collect();

    let mut d1 = Vec::with_capacity(n_nodes);
    let mut d2 = Vec::with_capacity(n_nodes);
    for s in shifts {
        let (x, y) = s?;
        d1.push(x);
        d2.push(y);
    }
    Ok(ShiftTable { grid: *grid, d1, d2 })
}

#[inline]
fn rotate_vector(v: (f64, f64), angle: f64) -> (f64, f64) {
    if angle == 0.0 {
        return v;
    }
    let (s, c) = angle.sin_cos();
    (c * v.0 - s * v.1, s * v.0 + c * v.1)
}

/// Shifts for the uniform scheme from the averaged-field table.
pub fn compute_shifts_uniform(avg: &AveragedFieldTable, dt: f64) -> Result<ShiftTable, SolverError> {
    compute_shifts_slice(avg.slice_e1(0), avg.slice_e2(0), &avg.grid, dt, 0.0, 0)
}

/// Fetch `source` at `node - 2 d` through its spline; returns the new
/// table and the escaped-mass estimate for feet leaving the hull.
pub(crate) fn fetch_shifted(
    source: &DistributionField,
    shifts: &ShiftTable,
) -> Result<(DistributionField, f64), SolverError> {
    let grid = source.grid;
    let spline = Spline2D::fit_field(source)?;
    let r_axis = grid.r_axis();
    let v_axis = grid.v_axis();
    let cell = grid.cell_area();
    let n_v = grid.n_v();

    let rows: Vec<(Vec<f64>, f64)> = (0..grid.n_r())
        .into_par_iter()
        .map(|row| {
            let mut out = Vec::with_capacity(n_v);
            let mut escaped = 0.0;
            for col in 0..n_v {
                let idx = row * n_v + col;
                let foot = PhasePoint::new(
                    r_axis.node(row) - 2.0 * shifts.d1[idx],
                    v_axis.node(col) - 2.0 * shifts.d2[idx],
                );
                if foot.r < r_axis.x0
                    || foot.r > r_axis.last()
                    || foot.v < v_axis.x0
                    || foot.v > v_axis.last()
                {
                    escaped += source.values[idx].abs() * cell;
                }
                out.push(spline.eval(foot));
            }
            (out, escaped)
        })
        .collect();

    let mut result = DistributionField::zeros(grid);
    let mut escaped = 0.0;
    for (row, (values, esc)) in rows.into_iter().enumerate() {
        result.values[row * n_v..(row + 1) * n_v].copy_from_slice(&values);
        escaped += esc;
    }
    Ok((result, escaped))
}

/// Two-time-level state: `g_prev` at `t - dt`, `g_curr` at `t`.
#[derive(Debug, Clone)]
pub struct TwoScaleUniformState {
    pub g_prev: DistributionField,
    pub g_curr: DistributionField,
    pub t: f64,
    pub dt: f64,
    pub tau: TauGrid,
    pub escaped_step: f64,
    pub escaped_total: f64,
}

fn zero_field_table(grid: &PhaseGrid, tau: &TauGrid) -> RadialFieldTable {
    RadialFieldTable::zeros(grid.r_axis(), *tau)
}

/// One leapfrog advance with externally supplied averaged fields
/// (level-`n` fields moving `G^{n-1}` to `G^{n+1}` over `2 dt`).
pub fn leapfrog_step_with_fields(
    state: &TwoScaleUniformState,
    avg: &AveragedFieldTable,
) -> Result<TwoScaleUniformState, SolverError> {
    let shifts = compute_shifts_uniform(avg, state.dt)?;
    let (g_next, escaped) = fetch_shifted(&state.g_prev, &shifts)?;
    Ok(TwoScaleUniformState {
        g_prev: state.g_curr.clone(),
        g_curr: g_next,
        t: state.t + state.dt,
        dt: state.dt,
        tau: state.tau,
        escaped_step: escaped,
        escaped_total: state.escaped_total + escaped,
    })
}

/// One full leapfrog step: self-field of `G^n` (unless the run is
/// linear), averaged fields, shifts, fetch from `G^{n-1}`.
pub fn leapfrog_step_uniform(
    state: &TwoScaleUniformState,
    cfg: &FocusingConfig,
    self_field: bool,
) -> Result<TwoScaleUniformState, SolverError> {
    let e = if self_field {
        self_field_twoscale_uniform(&state.g_curr, &state.tau)?
    } else {
        zero_field_table(&state.g_curr.grid, &state.tau)
    };
    let avg = averaged_fields_uniform(&e, cfg, &state.g_curr.grid)?;
    leapfrog_step_with_fields(state, &avg)
}

/// Initialize the two-level advance: `G^1` is one complete iteration at
/// `dt/2` with `G^{1/2} = G^0`, i.e. fields from `G^0` and a `2 * (dt/2)`
/// displacement applied to `G^0`.
pub fn init_half_step_uniform(
    g0: DistributionField,
    cfg: &FocusingConfig,
    dt: f64,
    tau: TauGrid,
    self_field: bool,
) -> Result<TwoScaleUniformState, SolverError> {
    if !dt.is_finite() {
        return Err(SolverError::InvalidParameter(format!("dt must be finite, got {dt}")));
    }
    let e = if self_field {
        self_field_twoscale_uniform(&g0, &tau)?
    } else {
        zero_field_table(&g0.grid, &tau)
    };
    let avg = averaged_fields_uniform(&e, cfg, &g0.grid)?;
    let shifts = compute_shifts_uniform(&avg, 0.5 * dt)?;
    let (g1, escaped) = fetch_shifted(&g0, &shifts)?;
    Ok(TwoScaleUniformState {
        g_prev: g0,
        g_curr: g1,
        t: dt,
        dt,
        tau,
        escaped_step: escaped,
        escaped_total: escaped,
    })
}

/// Readout of the physical distribution on `out_grid`:
/// `f(r, v, t) ~ 2 pi * Pi_2 G(gamma(r, v, t/eps))`. This variant
/// interpolates; the rotated-mesh solver's readout does not.
pub fn reconstruct_f_uniform(
    g: &DistributionField,
    eps: f64,
    t: f64,
    out_grid: &PhaseGrid,
) -> Result<DistributionField, SolverError> {
    let spline = Spline2D::fit_field(g)?;
    let angle = t / eps;
    let mut out = DistributionField::zeros(*out_grid);
    for i in out_grid.i_range() {
        for j in out_grid.j_range() {
            let p = rotate(out_grid.node(i, j), angle);
            out.set(i, j, 2.0 * PI * spline.eval(p));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::TensionFn;
    use crate::geometry::unrotate;
    use crate::scenarios::gaussian_beam;
    use approx::assert_abs_diff_eq;

    fn cfg_cos2() -> FocusingConfig {
        FocusingConfig {
            eps: 1e-2,
            h0: 1.0,
            omega1: 2.0,
            omega1_rational: true,
            h1: TensionFn::CosineSquared,
        }
    }

    fn cfg_irrational() -> FocusingConfig {
        FocusingConfig {
            eps: 1e-2,
            h0: 1.0,
            omega1: 4.0 * 2.0f64.sqrt(),
            omega1_rational: false,
            h1: TensionFn::Cosine,
        }
    }

    /// The resonant-case averaged fields (-u/4, q/4) sampled on a grid.
    fn rotation_field(grid: PhaseGrid) -> AveragedFieldTable {
        let mut avg = AveragedFieldTable::zeros(grid, 1);
        for i in grid.i_range() {
            for j in grid.j_range() {
                let idx = grid.lin(i, j);
                avg.e1[idx] = -grid.v_coord(j) / 4.0;
                avg.e2[idx] = grid.r_coord(i) / 4.0;
            }
        }
        avg
    }

    #[test]
    fn zero_fields_give_zero_shifts() {
        let grid = PhaseGrid::square(3.0, 12);
        let avg = AveragedFieldTable::zeros(grid, 1);
        let shifts = compute_shifts_uniform(&avg, 0.1).unwrap();
        assert!(shifts.d1.iter().all(|&d| d == 0.0));
        assert!(shifts.d2.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn shift_solve_matches_exact_two_by_two_inverse() {
        // closed-form field, node (q, u) = (1, 0), dt = 0.01:
        // A = [[1, -0.0025], [0.0025, 1]], rhs = (0, 0.25)
        // grid whose nodes include exactly q = 1: dr = 0.25
        let grid = PhaseGrid::new(2.25, 2.25, 8, 8);
        assert_abs_diff_eq!(grid.dr(), 0.25, epsilon = 1e-15);
        let avg = rotation_field(grid);
        let dt = 0.01;
        let shifts = compute_shifts_uniform(&avg, dt).unwrap();
        let (d1, d2) = shifts.get(4, 0); // node (1.0, 0.0)

        // independent 2x2 solve
        let (a11, a12, a21, a22) = (1.0, -dt / 4.0, dt / 4.0, 1.0);
        let det = a11 * a22 - a12 * a21;
        let rhs = (0.0, 0.25);
        let exact = (dt * (a22 * rhs.0 - a12 * rhs.1) / det, dt * (a11 * rhs.1 - a21 * rhs.0) / det);
        assert_abs_diff_eq!(d1, exact.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d2, exact.1, epsilon = 1e-12);
        // magnitudes from the expansion: d1 ~ 6.25e-6, d2 ~ 2.5e-3
        assert!((d1 / 6.25e-6 - 1.0).abs() < 1e-4, "d1 {d1}");
        assert!((d2 / 2.5e-3 - 1.0).abs() < 1e-4, "d2 {d2}");
    }

    #[test]
    fn constant_field_shift_is_exact() {
        let grid = PhaseGrid::square(2.0, 10);
        let mut avg = AveragedFieldTable::zeros(grid, 1);
        avg.e1.fill(0.37);
        avg.e2.fill(-0.81);
        let dt = 0.05;
        let shifts = compute_shifts_uniform(&avg, dt).unwrap();
        for idx in 0..grid.n_nodes() {
            assert_abs_diff_eq!(shifts.d1[idx], dt * 0.37, epsilon = 1e-13);
            assert_abs_diff_eq!(shifts.d2[idx], dt * (-0.81), epsilon = 1e-13);
        }
    }

    #[test]
    fn singular_shift_matrix_is_reported() {
        let grid = PhaseGrid::square(2.0, 8);
        let mut avg = AveragedFieldTable::zeros(grid, 1);
        // e1 = -q makes A = [[1 - dt, 0], [0, 1]]; dt = 1 zeroes the determinant
        for i in grid.i_range() {
            for j in grid.j_range() {
                avg.e1[grid.lin(i, j)] = -grid.r_coord(i);
            }
        }
        let err = compute_shifts_uniform(&avg, 1.0).unwrap_err();
        match err {
            SolverError::SingularShift { det, .. } => assert!(det.abs() < 1e-12),
            other => panic!("expected singular-shift error, got {other}"),
        }
    }

    #[test]
    fn shift_residual_is_tiny_on_the_closed_form_field() {
        // For an affine drift the linearized solve is the exact fixed
        // point: d = dt <E>(x - d) holds to rounding.
        let grid = PhaseGrid::square(3.0, 32);
        let avg = rotation_field(grid);
        let e1 = Spline2D::fit(avg.slice_e1(0), grid, Default::default()).unwrap();
        let e2 = Spline2D::fit(avg.slice_e2(0), grid, Default::default()).unwrap();
        for dt in [0.1, 0.05, 0.025] {
            let shifts = compute_shifts_uniform(&avg, dt).unwrap();
            let mut worst: f64 = 0.0;
            for i in -20..=20isize {
                for j in -20..=20isize {
                    let node = grid.node(i, j);
                    let (d1, d2) = shifts.get(i, j);
                    let foot = PhasePoint::new(node.r - d1, node.v - d2);
                    let r1 = d1 - dt * e1.eval(foot);
                    let r2 = d2 - dt * e2.eval(foot);
                    worst = worst.max(r1.hypot(r2));
                }
            }
            assert!(worst <= 1e-12, "residual {worst} at dt {dt}");
        }
    }

    #[test]
    fn stationary_case_is_node_exact() {
        // zero self-field, irrational omega1: the profile must not move
        let grid = PhaseGrid::square(3.0, 32);
        let tau = TauGrid::new(16);
        let g0 = DistributionField::from_fn(grid, |p| gaussian_beam(p, 1.0, 0.5, 0.4));
        let cfg = cfg_irrational();
        let mut state = init_half_step_uniform(g0.clone(), &cfg, 7.39e-3, tau, false).unwrap();
        for _ in 0..25 {
            state = leapfrog_step_uniform(&state, &cfg, false).unwrap();
        }
        for (a, b) in state.g_curr.values.iter().zip(&g0.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(state.escaped_total, 0.0);
    }

    #[test]
    fn init_half_step_zero_dt_copies_g0() {
        let grid = PhaseGrid::square(3.0, 16);
        let tau = TauGrid::new(8);
        let g0 = DistributionField::from_fn(grid, |p| gaussian_beam(p, 1.0, 0.5, 0.4));
        let state = init_half_step_uniform(g0.clone(), &cfg_cos2(), 0.0, tau, false).unwrap();
        for (a, b) in state.g_curr.values.iter().zip(&g0.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn init_half_step_rotates_by_quarter_dt_in_the_resonant_case() {
        let grid = PhaseGrid::square(3.0, 96);
        let tau = TauGrid::new(16);
        let f0 = |p: PhasePoint| gaussian_beam(p, 1.0, 0.5, 0.45);
        let g0 = DistributionField::from_fn(grid, f0);
        let dt = 0.1;
        let state = init_half_step_uniform(g0, &cfg_cos2(), dt, tau, false).unwrap();
        let mut worst: f64 = 0.0;
        for i in grid.i_range() {
            for j in grid.j_range() {
                let expect = f0(rotate(grid.node(i, j), -dt / 4.0));
                worst = worst.max((state.g_curr.get(i, j) - expect).abs());
            }
        }
        assert!(worst <= 1e-4, "half-step error {worst}");
    }

    #[test]
    fn resonant_case_follows_the_slow_rotation() {
        let grid = PhaseGrid::square(3.0, 96);
        let tau = TauGrid::new(16);
        let cfg = cfg_cos2();
        let f0 = |p: PhasePoint| gaussian_beam(p, 1.0, 0.5, 0.45);
        let dt = cfg.eps * tau.dtau() * 4.0;
        let mut state = init_half_step_uniform(DistributionField::from_fn(grid, f0), &cfg, dt, tau, false).unwrap();
        let steps = 120;
        for _ in 0..steps {
            state = leapfrog_step_uniform(&state, &cfg, false).unwrap();
        }
        let t = state.t;
        let err = crate::diagnostics::l1_distance_to(&state.g_curr, |p| f0(rotate(p, -t / 4.0)));
        assert!(err <= 5e-3, "L1 error {err} at t = {t}");
    }

    #[test]
    fn leapfrog_reverses_on_frozen_fields() {
        let grid = PhaseGrid::square(3.0, 64);
        let tau = TauGrid::new(16);
        let avg = rotation_field(grid);
        let g0 = DistributionField::from_fn(grid, |p| gaussian_beam(p, 1.0, 0.5, 0.45));
        let dt = 5e-3;
        let forward = TwoScaleUniformState {
            g_prev: g0.clone(),
            g_curr: g0.clone(),
            t: 0.0,
            dt,
            tau,
            escaped_step: 0.0,
            escaped_total: 0.0,
        };
        let mid = leapfrog_step_with_fields(&forward, &avg).unwrap();
        let back = TwoScaleUniformState { dt: -dt, ..mid.clone() };
        // fetch from the advanced level to undo the displacement
        let back = TwoScaleUniformState { g_prev: mid.g_curr.clone(), ..back };
        let done = leapfrog_step_with_fields(&back, &avg).unwrap();
        for (a, b) in done.g_curr.values.iter().zip(&g0.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn reconstruction_at_full_fast_period_is_a_scaled_copy() {
        let grid = PhaseGrid::square(3.0, 48);
        let g = DistributionField::from_fn(grid, |p| gaussian_beam(p, 1.0, 0.5, 0.4));
        let eps = 1e-2;
        let out = reconstruct_f_uniform(&g, eps, 2.0 * PI * eps, &grid).unwrap();
        for i in grid.i_range() {
            for j in grid.j_range() {
                assert_abs_diff_eq!(out.get(i, j), 2.0 * PI * g.get(i, j), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn reconstruction_of_radial_g_is_phase_independent() {
        let grid = PhaseGrid::square(3.0, 420);
        let g = DistributionField::from_fn(grid, |p| (-(p.r * p.r + p.v * p.v) / 0.4).exp());
        let eps = 1e-2;
        let a = reconstruct_f_uniform(&g, eps, 0.123, &grid).unwrap();
        let b = reconstruct_f_uniform(&g, eps, 0.456, &grid).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-8);
        }
    }

    #[test]
    fn mesh_gradient_rotation_is_consistent() {
        // rotating the gradient of a slice table equals the physical
        // gradient of the rotated-field composition
        let grid = PhaseGrid::square(3.0, 48);
        let tau_m = 0.7;
        let phys = |p: PhasePoint| (0.8 * p.r).sin() * (0.5 * p.v).cos();
        // slice table stores phys at rotated nodes
        let table = DistributionField::from_fn(grid, |p| phys(rotate(p, tau_m)));
        let s = Spline2D::fit_field(&table).unwrap();
        let x = PhasePoint::new(0.4, -0.3); // physical query point
        let (gq, gu) = s.eval_grad(unrotate(x, tau_m));
        let rotated = rotate_vector((gq, gu), tau_m);
        // central differences of the physical composition
        let h = 1e-6;
        let fd_q = (phys(PhasePoint::new(x.r + h, x.v)) - phys(PhasePoint::new(x.r - h, x.v))) / (2.0 * h);
        let fd_u = (phys(PhasePoint::new(x.r, x.v + h)) - phys(PhasePoint::new(x.r, x.v - h))) / (2.0 * h);
        assert_abs_diff_eq!(rotated.0, fd_q, epsilon = 1e-4);
        assert_abs_diff_eq!(rotated.1, fd_u, epsilon = 1e-4);
    }
}
