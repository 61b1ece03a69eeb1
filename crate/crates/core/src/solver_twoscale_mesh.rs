//! Two-scale semi-Lagrangian scheme storing the limit profile `G` on
//! every rotated mesh `M(Omega(tau_m))` at once: slice `m` holds the
//! values `G(gamma(r_i, v_j, tau_m))` in the unrotated index layout.
//!
//! The payoff is that the Poisson integrand and the physical readout
//! need the profile exactly at rotated nodes, so both become plain
//! table reads. The cost is that fields, shifts, and the leapfrog fetch
//! run once per slice. Interpolation on a rotated mesh is interpolation
//! on the unrotated index grid after rotating the query back, and
//! gradients transform through the rotation.
//!
//! The time step is tied to the fast-phase grid, `dt = eps * dtau * K`
//! with integer `K >= 1`, so that `t_n / eps` always lands on the slice
//! `(n K) mod (p_tau + 1)` exactly.

use crate::fields::{
    averaged_fields_mesh, self_field_twoscale_mesh, AveragedFieldTable, FocusingConfig,
    RadialFieldTable,
};
use crate::geometry::{unrotate, DistributionField, PhaseGrid, PhasePoint, TauGrid};
use crate::solver_twoscale_uniform::compute_shifts_slice;
use crate::spline::Spline2D;
use crate::SolverError;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Two-time-level state on the rotated mesh family. `slices_curr[m]`
/// samples `G` at time `step * dt` on `M(Omega(tau_m))`.
#[derive(Debug, Clone)]
pub struct TwoScaleMeshState {
    pub slices_prev: Vec<DistributionField>,
    pub slices_curr: Vec<DistributionField>,
    pub grid: PhaseGrid,
    pub tau: TauGrid,
    /// `dt = eps * dtau * K`.
    pub k: usize,
    /// Leapfrog level of `slices_curr`.
    pub step: usize,
    pub dt: f64,
    pub escaped_step: f64,
    pub escaped_total: f64,
}

impl TwoScaleMeshState {
    pub fn t(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Slice index whose phase equals `(t_n / eps) mod 2 pi`: the
    /// integer identity `(n K) mod (p_tau + 1)`.
    pub fn slice_index_for_step(&self, n: usize) -> usize {
        (n * self.k) % self.tau.len()
    }

    /// Largest disagreement between two slices read at the same
    /// physical points (an interpolation-consistency probe; exact zero
    /// is not expected).
    pub fn slice_consistency_defect(&self, samples: usize) -> Result<f64, SolverError> {
        let splines: Vec<Spline2D> =
            self.slices_curr.iter().map(Spline2D::fit_field).collect::<Result<_, _>>()?;
        let radius = 0.45 * self.grid.r_max.min(self.grid.v_max);
        let mut worst: f64 = 0.0;
        for s in 0..samples {
            let angle = 2.0 * PI * s as f64 / samples as f64;
            let x = PhasePoint::new(radius * angle.cos(), radius * angle.sin());
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (m, spline) in splines.iter().enumerate() {
                let v = spline.eval(unrotate(x, self.tau.node(m)));
                lo = lo.min(v);
                hi = hi.max(v);
            }
            worst = worst.max(hi - lo);
        }
        Ok(worst)
    }
}

fn validate_time_step(dt: f64, eps: f64, tau: &TauGrid) -> Result<usize, SolverError> {
    let base = eps * tau.dtau();
    let ratio = dt / base;
    let k = ratio.round();
    if !(k >= 1.0) || (ratio - k).abs() > 1e-9 * k.max(1.0) {
        return Err(SolverError::InvalidParameter(format!(
            "dt = {dt} is not a positive integer multiple of eps * dtau = {base}"
        )));
    }
    Ok(k as usize)
}

/// Advance every slice by `dt_eff` using the averaged fields `avg`
/// (level-`n` fields applied to the `prev` level): the rotated-mesh
/// leapfrog kernel. Returns the new slices and the escaped mass.
pub fn mesh_advance_with_fields(
    prev: &[DistributionField],
    avg: &AveragedFieldTable,
    tau: &TauGrid,
    dt_eff: f64,
) -> Result<(Vec<DistributionField>, f64), SolverError> {
    let grid = avg.grid;
    let n_v = grid.n_v();
    let results: Vec<Result<(DistributionField, f64), SolverError>> = (0..tau.len())
        .into_par_iter()
        .map(|m| {
            let tau_m = tau.node(m);
            let shifts =
                compute_shifts_slice(avg.slice_e1(m), avg.slice_e2(m), &grid, dt_eff, tau_m, m)?;
            let spline = Spline2D::fit_field(&prev[m])?;
            let r_axis = grid.r_axis();
            let v_axis = grid.v_axis();
            let cell = grid.cell_area();
            let mut out = DistributionField::zeros(grid);
            let mut escaped = 0.0;
            for row in 0..grid.n_r() {
                for col in 0..n_v {
                    let idx = row * n_v + col;
                    // physical displacement, rotated back into slice
                    // coordinates where the table lives
                    let d = unrotate(PhasePoint::new(shifts.d1[idx], shifts.d2[idx]), tau_m);
                    let foot = PhasePoint::new(
                        r_axis.node(row) - 2.0 * d.r,
                        v_axis.node(col) - 2.0 * d.v,
                    );
                    if foot.r < r_axis.x0
                        || foot.r > r_axis.last()
                        || foot.v < v_axis.x0
                        || foot.v > v_axis.last()
                    {
                        escaped += prev[m].values[idx].abs() * cell;
                    }
                    out.values[idx] = spline.eval(foot);
                }
            }
            Ok((out, escaped))
        })
        .collect();

    let mut slices = Vec::with_capacity(tau.len());
    let mut escaped = 0.0;
    for r in results {
        let (slice, esc) = r?;
        slices.push(slice);
        escaped += esc;
    }
    Ok((slices, escaped))
}

fn mesh_advance(
    prev: &[DistributionField],
    field_level: &[DistributionField],
    cfg: &FocusingConfig,
    grid: &PhaseGrid,
    tau: &TauGrid,
    dt_eff: f64,
    self_field: bool,
) -> Result<(Vec<DistributionField>, f64), SolverError> {
    let e = if self_field {
        self_field_twoscale_mesh(field_level, tau)?
    } else {
        RadialFieldTable::zeros(grid.r_axis(), *tau)
    };
    let avg = averaged_fields_mesh(&e, cfg, grid, tau)?;
    mesh_advance_with_fields(prev, &avg, tau, dt_eff)
}

/// Sample `G^0 = f0 / (2 pi)` on every rotated mesh and compute `G^1`
/// by one complete iteration at `dt/2` with `G^{1/2} = G^0`.
pub fn init_mesh_state(
    f0: impl Fn(PhasePoint) -> f64 + Sync,
    grid: PhaseGrid,
    tau: TauGrid,
    cfg: &FocusingConfig,
    dt: f64,
    self_field: bool,
) -> Result<TwoScaleMeshState, SolverError> {
    let k = validate_time_step(dt, cfg.eps, &tau)?;
    let g0: Vec<DistributionField> = (0..tau.len())
        .into_par_iter()
        .map(|m| {
            let tau_m = tau.node(m);
            DistributionField::from_fn(grid, |p| {
                f0(crate::geometry::rotate(p, tau_m)) / (2.0 * PI)
            })
        })
        .collect();
    let (g1, escaped) = mesh_advance(&g0, &g0, cfg, &grid, &tau, 0.5 * dt, self_field)?;
    Ok(TwoScaleMeshState {
        slices_prev: g0,
        slices_curr: g1,
        grid,
        tau,
        k,
        step: 1,
        dt,
        escaped_step: escaped,
        escaped_total: escaped,
    })
}

/// One leapfrog step: fields from the current level, fetch on the
/// previous one, no interpolation anywhere in the Poisson solve.
pub fn step_mesh(
    state: &TwoScaleMeshState,
    cfg: &FocusingConfig,
    self_field: bool,
) -> Result<TwoScaleMeshState, SolverError> {
    let (next, escaped) = mesh_advance(
        &state.slices_prev,
        &state.slices_curr,
        cfg,
        &state.grid,
        &state.tau,
        state.dt,
        self_field,
    )?;
    Ok(TwoScaleMeshState {
        slices_prev: state.slices_curr.clone(),
        slices_curr: next,
        grid: state.grid,
        tau: state.tau,
        k: state.k,
        step: state.step + 1,
        dt: state.dt,
        escaped_step: escaped,
        escaped_total: state.escaped_total + escaped,
    })
}

/// Physical readout at the current step: `t_n / eps` lands exactly on
/// the phase of slice `(n K) mod (p_tau + 1)`, whose table already
/// holds `G` at `gamma(r_i, v_j, tau)` -- so `f ~ 2 pi G` is a scaled
/// copy of that slice on the uniform readout nodes, with zero
/// interpolation.
pub fn reconstruct_f_mesh(state: &TwoScaleMeshState) -> DistributionField {
    let slice = state.slice_index_for_step(state.step);
    let mut out = state.slices_curr[slice].clone();
    out.scale(2.0 * PI);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::TensionFn;
    use crate::geometry::rotate;
    use crate::scenarios::{analytic_nonresonant, gaussian_beam, semi_gaussian, BeamParams};
    use crate::solver_twoscale_uniform::{leapfrog_step_with_fields, TwoScaleUniformState};
    use approx::assert_abs_diff_eq;

    fn cfg_irrational(eps: f64) -> FocusingConfig {
        FocusingConfig {
            eps,
            h0: 1.0,
            omega1: 4.0 * 2.0f64.sqrt(),
            omega1_rational: false,
            h1: TensionFn::Cosine,
        }
    }

    fn cfg_cos2(eps: f64) -> FocusingConfig {
        FocusingConfig {
            eps,
            h0: 1.0,
            omega1: 2.0,
            omega1_rational: true,
            h1: TensionFn::CosineSquared,
        }
    }

    #[test]
    fn init_rejects_unaligned_time_steps() {
        let grid = PhaseGrid::square(3.0, 8);
        let tau = TauGrid::new(4);
        let cfg = cfg_irrational(1e-2);
        let bad = cfg.eps * tau.dtau() * 1.5;
        assert!(init_mesh_state(|_| 0.0, grid, tau, &cfg, bad, false).is_err());
        assert!(init_mesh_state(|_| 0.0, grid, tau, &cfg, 0.0, false).is_err());
    }

    #[test]
    fn init_samples_rotated_nodes() {
        let grid = PhaseGrid::square(3.0, 32);
        let tau = TauGrid::new(3); // nodes 0, pi/2, pi, 3pi/2
        let cfg = cfg_irrational(1e-2);
        let b = BeamParams::default();
        let dt = cfg.eps * tau.dtau();
        let state = init_mesh_state(|p| semi_gaussian(p, &b), grid, tau, &cfg, dt, false).unwrap();

        // slice 0 is f0 / 2pi at the unrotated nodes
        for i in grid.i_range() {
            for j in grid.j_range() {
                assert_abs_diff_eq!(
                    state.slices_prev[0].get(i, j),
                    semi_gaussian(grid.node(i, j), &b) / (2.0 * PI),
                    epsilon = 1e-14
                );
            }
        }
        // quarter-turn slice holds f0(-v_j, r_i) / 2pi
        let quarter = &state.slices_prev[1];
        for i in grid.i_range() {
            for j in grid.j_range() {
                let p = grid.node(i, j);
                assert_abs_diff_eq!(
                    quarter.get(i, j),
                    semi_gaussian(PhasePoint::new(-p.v, p.r), &b) / (2.0 * PI),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn rotationally_symmetric_f0_gives_identical_slices() {
        let grid = PhaseGrid::square(3.0, 24);
        let tau = TauGrid::new(8);
        let cfg = cfg_irrational(1e-2);
        let dt = cfg.eps * tau.dtau();
        let state = init_mesh_state(
            |p| (-(p.r * p.r + p.v * p.v) / 0.3).exp(),
            grid,
            tau,
            &cfg,
            dt,
            false,
        )
        .unwrap();
        let first = &state.slices_prev[0];
        for m in 1..tau.len() {
            for (a, b) in state.slices_prev[m].values.iter().zip(&first.values) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn stationary_case_holds_every_slice_fixed() {
        let grid = PhaseGrid::square(3.0, 32);
        let tau = TauGrid::new(8);
        let cfg = cfg_irrational(1e-2);
        let dt = cfg.eps * tau.dtau() * 2.0;
        let b = BeamParams::default();
        let mut state =
            init_mesh_state(|p| semi_gaussian(p, &b), grid, tau, &cfg, dt, false).unwrap();
        let initial = state.slices_prev.clone();
        for _ in 0..20 {
            state = step_mesh(&state, &cfg, false).unwrap();
        }
        for (slice, init) in state.slices_curr.iter().zip(&initial) {
            for (a, b) in slice.values.iter().zip(&init.values) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
        assert_eq!(state.escaped_total, 0.0);
    }

    #[test]
    fn slice_index_arithmetic_matches_the_fast_phase() {
        let grid = PhaseGrid::square(3.0, 8);
        for (p_tau, k) in [(16usize, 2usize), (20, 1), (16, 5), (8, 3)] {
            let tau = TauGrid::new(p_tau);
            let cfg = cfg_irrational(1e-2);
            let dt = cfg.eps * tau.dtau() * k as f64;
            let state = init_mesh_state(|_| 0.0, grid, tau, &cfg, dt, false).unwrap();
            assert_eq!(state.k, k);
            for n in 0..200usize {
                let idx = state.slice_index_for_step(n);
                assert_eq!(idx, (n * k) % (p_tau + 1));
                // the slice phase equals (t_n / eps) mod 2 pi
                let angle = (n as f64 * dt / cfg.eps).rem_euclid(2.0 * PI);
                let slice_angle = tau.node(idx);
                let diff = (angle - slice_angle).rem_euclid(2.0 * PI);
                let diff = diff.min(2.0 * PI - diff);
                assert!(diff < 1e-8 * (1.0 + n as f64), "phase mismatch {diff} at n={n}");
            }
        }
    }

    #[test]
    fn stationary_reconstruction_is_interpolation_free() {
        // zero-field irrational case: the readout must equal the exact
        // rigid rotation of f0 at every step, to rounding
        let grid = PhaseGrid::square(3.0, 32);
        let tau = TauGrid::new(16);
        let cfg = cfg_irrational(1e-2);
        let dt = cfg.eps * tau.dtau() * 2.0;
        let b = BeamParams::default();
        let mut state =
            init_mesh_state(|p| semi_gaussian(p, &b), grid, tau, &cfg, dt, false).unwrap();
        for _ in 0..40 {
            state = step_mesh(&state, &cfg, false).unwrap();
            let f = reconstruct_f_mesh(&state);
            let t = state.t();
            let err = crate::diagnostics::l1_distance_to(&f, |p| analytic_nonresonant(p, t, cfg.eps, &b));
            assert!(err <= 1e-10, "L1 error {err} at step {}", state.step);
        }
    }

    #[test]
    fn resonant_case_rotates_every_slice() {
        let grid = PhaseGrid::square(3.0, 96);
        let tau = TauGrid::new(16);
        let cfg = cfg_cos2(1e-2);
        let dt = cfg.eps * tau.dtau() * 4.0;
        let f0 = |p: PhasePoint| gaussian_beam(p, 1.0, 0.5, 0.45);
        let mut state = init_mesh_state(f0, grid, tau, &cfg, dt, false).unwrap();
        let steps = 60;
        for _ in 0..steps {
            state = step_mesh(&state, &cfg, false).unwrap();
        }
        let t = state.t();
        // slice m holds G(gamma(node, tau_m), t) with
        // G(x, t) = f0(rotate(x, -t/4)) / 2pi
        for m in [0, 5, 11] {
            let err = crate::diagnostics::l1_distance_to(&state.slices_curr[m], |p| {
                f0(rotate(rotate(p, tau.node(m)), -t / 4.0)) / (2.0 * PI)
            });
            assert!(err <= 5e-3, "slice {m} L1 error {err}");
        }
    }

    #[test]
    fn mesh_and_uniform_steps_agree_through_the_rotation() {
        // radial profile and the closed-form rotation field: both
        // solvers must return the profile unchanged up to interpolation
        let grid = PhaseGrid::square(3.0, 420);
        let tau = TauGrid::new(8);
        let radial = |p: PhasePoint| (-(p.r * p.r + p.v * p.v) / 0.4).exp();
        let dt = 0.02;

        // frozen rotation field on the uniform mesh and per slice
        let mut avg_uniform = AveragedFieldTable::zeros(grid, 1);
        let mut avg_mesh = AveragedFieldTable::zeros(grid, tau.len());
        for m in 0..tau.len() {
            for i in grid.i_range() {
                for j in grid.j_range() {
                    let idx = grid.lin(i, j);
                    let node = grid.rotated_node(i, j, tau.node(m)).unwrap();
                    avg_mesh.e1[m * grid.n_nodes() + idx] = -node.v / 4.0;
                    avg_mesh.e2[m * grid.n_nodes() + idx] = node.r / 4.0;
                    if m == 0 {
                        avg_uniform.e1[idx] = -node.v / 4.0;
                        avg_uniform.e2[idx] = node.r / 4.0;
                    }
                }
            }
        }

        let g0 = DistributionField::from_fn(grid, radial);
        let uniform_state = TwoScaleUniformState {
            g_prev: g0.clone(),
            g_curr: g0.clone(),
            t: 0.0,
            dt,
            tau,
            escaped_step: 0.0,
            escaped_total: 0.0,
        };
        let uniform_next = leapfrog_step_with_fields(&uniform_state, &avg_uniform).unwrap();

        let slices: Vec<DistributionField> = (0..tau.len())
            .map(|m| DistributionField::from_fn(grid, |p| radial(rotate(p, tau.node(m)))))
            .collect();
        let (mesh_next, _) = mesh_advance_with_fields(&slices, &avg_mesh, &tau, dt).unwrap();

        // compare at matched physical points: slice m node (i, j) sits at
        // gamma(node, tau_m); the uniform solution is radial, so its value
        // there equals its value at the unrotated node
        for m in [0, 3, 6] {
            for i in (-200..=200isize).step_by(25) {
                for j in (-200..=200isize).step_by(25) {
                    assert_abs_diff_eq!(
                        mesh_next[m].get(i, j),
                        uniform_next.g_curr.get(i, j),
                        epsilon = 1e-8
                    );
                }
            }
        }
    }

    #[test]
    fn slice_consistency_defect_is_interpolation_small() {
        let grid = PhaseGrid::square(3.0, 64);
        let tau = TauGrid::new(8);
        let cfg = cfg_irrational(1e-2);
        let dt = cfg.eps * tau.dtau();
        let state = init_mesh_state(
            |p| gaussian_beam(p, 1.0, 0.5, 0.45),
            grid,
            tau,
            &cfg,
            dt,
            false,
        )
        .unwrap();
        let defect = state.slice_consistency_defect(64).unwrap();
        assert!(defect <= 1e-4, "defect {defect}");
    }
}
