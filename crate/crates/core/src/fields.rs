//! Electric fields: the external focusing field, the radial Poisson
//! solve for the self-consistent field, and the phase-averaged drift
//! fields of the homogenized system.
//!
//! The radial field on the half-line extends to negative radii by
//! oddness, `E(-r) = -E(r)`, matching the sign conventions under which
//! the axisymmetric system is posed on the whole line. The averaged
//! fields are periodic-trapezoid sums over the fast-phase grid; with
//! `p_tau + 1` nodes the rule is exact for trigonometric polynomials of
//! degree `p_tau`, which is what makes the `H1 = cos^2` closed form
//! reproducible to rounding.

use crate::geometry::{rotate, DistributionField, PhaseGrid, TauGrid, UniformAxis};
use crate::spline::{BoundaryCondition, Spline1D, Spline2D, SplineError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("non-finite sample in Poisson integrand at radial index {index}")]
    NonFiniteSample { index: isize },
    #[error("mesh state has {slices} slices but the tau grid has {expected} nodes")]
    SliceCountMismatch { slices: usize, expected: usize },
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Periodic tension `H1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "H1Spec", into = "H1Spec")]
pub enum TensionFn {
    Cosine,
    CosineSquared,
    /// One period sampled uniformly on `[0, 2*pi)`, evaluated by
    /// periodic linear interpolation.
    Table(Vec<f64>),
}

impl TensionFn {
    pub fn eval(&self, phase: f64) -> f64 {
        match self {
            TensionFn::Cosine => phase.cos(),
            TensionFn::CosineSquared => {
                let c = phase.cos();
                c * c
            }
            TensionFn::Table(values) => {
                let n = values.len();
                let u = (phase / (2.0 * PI)).rem_euclid(1.0) * n as f64;
                let i = (u as usize).min(n - 1);
                let frac = u - i as f64;
                let next = values[(i + 1) % n];
                values[i] * (1.0 - frac) + next * frac
            }
        }
    }

    /// Bound on `|H1|`, used for CFL field estimates.
    pub fn max_abs(&self) -> f64 {
        match self {
            TensionFn::Cosine | TensionFn::CosineSquared => 1.0,
            TensionFn::Table(values) => values.iter().fold(0.0, |a, &v| a.max(v.abs())),
        }
    }
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(untagged)]
enum H1Spec {
    Name(String),
    Table { table: Vec<f64> },
}

impl From<TensionFn> for H1Spec {
    fn from(h1: TensionFn) -> Self {
        match h1 {
            TensionFn::Cosine => H1Spec::Name("cos".into()),
            TensionFn::CosineSquared => H1Spec::Name("cos2".into()),
            TensionFn::Table(table) => H1Spec::Table { table },
        }
    }
}

impl TryFrom<H1Spec> for TensionFn {
    type Error = String;

    fn try_from(spec: H1Spec) -> Result<Self, String> {
        match spec {
            H1Spec::Name(name) => match name.as_str() {
                "cos" | "cosine" => Ok(TensionFn::Cosine),
                "cos2" | "cos^2" | "cosine-squared" => Ok(TensionFn::CosineSquared),
                other => Err(format!("unknown tension function '{other}' (expected cos, cos2, or a table)")),
            },
            H1Spec::Table { table } => {
                if table.len() < 2 {
                    Err("tension table needs at least 2 samples".into())
                } else {
                    Ok(TensionFn::Table(table))
                }
            }
        }
    }
}

/// Parameters of the periodic focusing channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusingConfig {
    /// Scale ratio between beam radius and focusing period, `> 0`.
    pub eps: f64,
    /// Constant tension `H0`.
    pub h0: f64,
    /// Fast-phase frequency parameter of `H1`.
    pub omega1: f64,
    /// Declares `omega1` rational. Never inferred from the float value:
    /// the resonance indicator is a property of the modelled number,
    /// not of its representation.
    pub omega1_rational: bool,
    pub h1: TensionFn,
}

impl FocusingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.eps > 0.0) {
            return Err(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.h0 >= 0.0) {
            return Err(format!("h0 must be non-negative, got {}", self.h0));
        }
        Ok(())
    }

    /// Resonance indicator `I_Q(omega1)`.
    pub fn indicator(&self) -> f64 {
        if self.omega1_rational {
            1.0
        } else {
            0.0
        }
    }
}

/// External focusing field
/// `Xi_r(r, t) = -(H0/eps) r + H1(omega1 t / eps) r`.
pub fn external_field(cfg: &FocusingConfig, r: f64, t: f64) -> f64 {
    (-cfg.h0 / cfg.eps + cfg.h1.eval(cfg.omega1 * t / cfg.eps)) * r
}

/// Self-consistent field values `E(r_i, tau_m)`, one column per
/// fast-phase node. The classical solver stores a single column
/// (`tau` grid with one node).
#[derive(Debug, Clone, PartialEq)]
pub struct RadialFieldTable {
    pub r_axis: UniformAxis,
    pub tau: TauGrid,
    /// Slice-major: `values[m * r_axis.n + idx]`.
    pub values: Vec<f64>,
}

impl RadialFieldTable {
    pub fn zeros(r_axis: UniformAxis, tau: TauGrid) -> Self {
        RadialFieldTable { r_axis, tau, values: vec![0.0; r_axis.n * tau.len()] }
    }

    pub fn column(&self, m: usize) -> &[f64] {
        &self.values[m * self.r_axis.n..(m + 1) * self.r_axis.n]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Radial Poisson solve
/// `E(r_i) = (1/r_i) * int_0^{r_i} int s g(s, v) dv ds`, `E(0) = 0`,
/// discretized with nested trapezoid sums on the grid nodes. The
/// sampler is indexed, `g(k, j)` for the node `(r_k, v_j)`; callers
/// decide whether a sample is a table lookup or an interpolation.
/// Negative radii are filled by oddness.
///
/// Returns the field column over the full symmetric r-axis.
pub fn solve_radial_poisson(
    sampler: impl Fn(isize, isize) -> f64 + Sync,
    grid: &PhaseGrid,
) -> Result<Vec<f64>, FieldError> {
    let p_r = grid.p_r as isize;
    let p_v = grid.p_v as isize;
    let dv = grid.dv();
    let dr = grid.dr();

    // Line densities rho_k = dv * sum_j w_j g(k, j) for k >= 0, with
    // trapezoid half-weights at the velocity endpoints.
    let rho: Vec<f64> = (0..=p_r)
        .into_par_iter()
        .map(|k| {
            let mut acc = 0.5 * (sampler(k, -p_v) + sampler(k, p_v));
            for j in (-p_v + 1)..p_v {
                acc += sampler(k, j);
            }
            acc * dv
        })
        .collect();
    for (k, r) in rho.iter().enumerate() {
        if !r.is_finite() {
            return Err(FieldError::NonFiniteSample { index: k as isize });
        }
    }

    let n_r = grid.n_r();
    let mut column = vec![0.0; n_r];
    let mut prefix = 0.0; // sum_{kappa=1}^{i-1} kappa * rho_kappa
    for i in 1..=p_r {
        prefix += (i - 1) as f64 * rho[(i - 1) as usize];
        let e = dr * (prefix / i as f64 + 0.5 * rho[i as usize]);
        column[(p_r + i) as usize] = e;
        column[(p_r - i) as usize] = -e;
    }
    Ok(column)
}

/// Self-field of the two-scale scheme on a uniform mesh: one Poisson
/// solve per fast-phase node, sampling `G` through its spline at the
/// rotated nodes `gamma(r_k, v_j, tau_m)`.
pub fn self_field_twoscale_uniform(
    g: &DistributionField,
    tau: &TauGrid,
) -> Result<RadialFieldTable, FieldError> {
    let spline = Spline2D::fit_field(g)?;
    let grid = g.grid;
    let columns: Vec<Result<Vec<f64>, FieldError>> = (0..tau.len())
        .into_par_iter()
        .map(|m| {
            let tau_m = tau.node(m);
            solve_radial_poisson(|k, j| spline.eval(rotate(grid.node(k, j), tau_m)), &grid)
        })
        .collect();
    let mut table = RadialFieldTable::zeros(grid.r_axis(), *tau);
    for (m, col) in columns.into_iter().enumerate() {
        let col = col?;
        table.values[m * grid.n_r()..(m + 1) * grid.n_r()].copy_from_slice(&col);
    }
    Ok(table)
}

/// Self-field of the two-scale scheme on the rotated meshes: the slice
/// for `tau_m` already stores `G` at `gamma(r_k, v_j, tau_m)`, so every
/// sample is a direct table read.
pub fn self_field_twoscale_mesh(
    slices: &[DistributionField],
    tau: &TauGrid,
) -> Result<RadialFieldTable, FieldError> {
    if slices.len() != tau.len() {
        return Err(FieldError::SliceCountMismatch { slices: slices.len(), expected: tau.len() });
    }
    let grid = slices[0].grid;
    let columns: Vec<Result<Vec<f64>, FieldError>> = (0..tau.len())
        .into_par_iter()
        .map(|m| solve_radial_poisson(|k, j| slices[m].get(k, j), &grid))
        .collect();
    let mut table = RadialFieldTable::zeros(grid.r_axis(), *tau);
    for (m, col) in columns.into_iter().enumerate() {
        let col = col?;
        table.values[m * grid.n_r()..(m + 1) * grid.n_r()].copy_from_slice(&col);
    }
    Ok(table)
}

/// Averaged drift fields `<E1>`, `<E2>` sampled on the working mesh:
/// one slice for the uniform scheme, one per fast-phase node (at the
/// rotated nodes) for the rotated-mesh scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedFieldTable {
    pub grid: PhaseGrid,
    pub slices: usize,
    /// Slice-major, `e1[m * n_nodes + lin(i, j)]`.
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
}

impl AveragedFieldTable {
    pub fn zeros(grid: PhaseGrid, slices: usize) -> Self {
        let n = grid.n_nodes() * slices;
        AveragedFieldTable { grid, slices, e1: vec![0.0; n], e2: vec![0.0; n] }
    }

    pub fn slice_e1(&self, m: usize) -> &[f64] {
        &self.e1[m * self.grid.n_nodes()..(m + 1) * self.grid.n_nodes()]
    }

    pub fn slice_e2(&self, m: usize) -> &[f64] {
        &self.e2[m * self.grid.n_nodes()..(m + 1) * self.grid.n_nodes()]
    }

    pub fn get(&self, m: usize, i: isize, j: isize) -> (f64, f64) {
        let idx = m * self.grid.n_nodes() + self.grid.lin(i, j);
        (self.e1[idx], self.e2[idx])
    }
}

struct QuadratureTables {
    /// `dtau * sin(tau_k)` and `dtau * cos(tau_k)`.
    wsin: Vec<f64>,
    wcos: Vec<f64>,
    /// `I_Q(omega1) / (2*pi) * H1(omega1 * tau_k)`.
    ext: Vec<f64>,
    any_ext: bool,
}

fn quadrature_tables(cfg: &FocusingConfig, tau: &TauGrid) -> QuadratureTables {
    let dtau = tau.dtau();
    let iq = cfg.indicator();
    let mut wsin = Vec::with_capacity(tau.len());
    let mut wcos = Vec::with_capacity(tau.len());
    let mut ext = Vec::with_capacity(tau.len());
    for k in 0..tau.len() {
        let tau_k = tau.node(k);
        wsin.push(dtau * tau_k.sin());
        wcos.push(dtau * tau_k.cos());
        ext.push(iq / (2.0 * PI) * cfg.h1.eval(cfg.omega1 * tau_k));
    }
    QuadratureTables { wsin, wcos, any_ext: iq != 0.0, ext }
}

fn fit_columns(e: &RadialFieldTable) -> Result<Vec<Spline1D>, SplineError> {
    (0..e.tau.len())
        .map(|m| Spline1D::fit(e.column(m), e.r_axis, BoundaryCondition::Natural))
        .collect()
}

/// Averaged fields on the uniform mesh:
/// `<E1>(q_i, u_j) ~ -dtau * sum_m sin(tau_m) [ Pi_1 E(cos(tau_m) q_i + sin(tau_m) u_j, tau_m)
///                                              + ext_m * (cos(tau_m) q_i + sin(tau_m) u_j) ]`
/// and the mirrored cosine sum for `<E2>`; the external term enters only
/// when `omega1` is declared rational.
pub fn averaged_fields_uniform(
    e: &RadialFieldTable,
    cfg: &FocusingConfig,
    grid: &PhaseGrid,
) -> Result<AveragedFieldTable, FieldError> {
    let tau = e.tau;
    let q = quadrature_tables(cfg, &tau);
    let mut out = AveragedFieldTable::zeros(*grid, 1);
    if e.is_zero() && !q.any_ext {
        return Ok(out);
    }
    let columns = fit_columns(e)?;
    let axis = e.r_axis;
    let n_v = grid.n_v();
    let cos_tau: Vec<f64> = (0..tau.len()).map(|k| tau.node(k).cos()).collect();
    let sin_tau: Vec<f64> = (0..tau.len()).map(|k| tau.node(k).sin()).collect();

    let n_nodes = grid.n_nodes();
    let pairs: Vec<(f64, f64)> = (0..n_nodes)
        .into_par_iter()
        .map(|idx| {
            let i = (idx / n_v) as isize - grid.p_r as isize;
            let j = (idx % n_v) as isize - grid.p_v as isize;
            let qi = grid.r_coord(i);
            let uj = grid.v_coord(j);
            let (mut a1, mut a2) = (0.0, 0.0);
            for k in 0..tau.len() {
                let x = cos_tau[k] * qi + sin_tau[k] * uj;
                let mut val = match Spline1D::locate_weights(&axis, x) {
                    Some((cell, w)) if !columns[k].is_zero() => columns[k].eval_at(cell, &w),
                    _ => 0.0,
                };
                if q.any_ext {
                    val += q.ext[k] * x;
                }
                a1 -= q.wsin[k] * val;
                a2 += q.wcos[k] * val;
            }
            (a1, a2)
        })
        .collect();
    for (idx, (a1, a2)) in pairs.into_iter().enumerate() {
        out.e1[idx] = a1;
        out.e2[idx] = a2;
    }
    Ok(out)
}

/// Averaged fields at the rotated nodes `gamma(r_i, v_j, tau_m)`: the
/// interpolation argument becomes `cos(tau_k - tau_m) r_i +
/// sin(tau_k - tau_m) v_j`, so the slice `m` pairs quadrature node `k`
/// with the phase offset `delta = k - m (mod p_tau + 1)`. The node loop
/// groups work by offset so that one axis location serves every column
/// spline.
pub fn averaged_fields_mesh(
    e: &RadialFieldTable,
    cfg: &FocusingConfig,
    grid: &PhaseGrid,
    tau: &TauGrid,
) -> Result<AveragedFieldTable, FieldError> {
    let n_tau = tau.len();
    debug_assert_eq!(e.tau.len(), n_tau);
    let q = quadrature_tables(cfg, tau);
    if e.is_zero() && !q.any_ext {
        return Ok(AveragedFieldTable::zeros(*grid, n_tau));
    }
    let columns = fit_columns(e)?;
    let all_columns_zero = columns.iter().all(|c| c.is_zero());
    let axis = e.r_axis;
    let n_v = grid.n_v();
    let n_nodes = grid.n_nodes();
    let cos_d: Vec<f64> = (0..n_tau).map(|d| tau.node(d).cos()).collect();
    let sin_d: Vec<f64> = (0..n_tau).map(|d| tau.node(d).sin()).collect();

    // Node-major accumulation (contiguous per node), transposed to
    // slice-major afterwards.
    let node_major: Vec<(Vec<f64>, Vec<f64>)> = (0..n_nodes)
        .into_par_iter()
        .map(|idx| {
            let i = (idx / n_v) as isize - grid.p_r as isize;
            let j = (idx % n_v) as isize - grid.p_v as isize;
            let ri = grid.r_coord(i);
            let vj = grid.v_coord(j);
            let mut a1 = vec![0.0; n_tau];
            let mut a2 = vec![0.0; n_tau];
            for delta in 0..n_tau {
                let x = cos_d[delta] * ri + sin_d[delta] * vj;
                let stencil = if all_columns_zero { None } else { Spline1D::locate_weights(&axis, x) };
                // slice m pairs with quadrature node k = m + delta (mod n_tau)
                let mut k = delta;
                for m in 0..n_tau {
                    let mut val = match &stencil {
                        Some((cell, w)) if !columns[k].is_zero() => columns[k].eval_at(*cell, w),
                        _ => 0.0,
                    };
                    if q.any_ext {
                        val += q.ext[k] * x;
                    }
                    a1[m] -= q.wsin[k] * val;
                    a2[m] += q.wcos[k] * val;
                    k += 1;
                    if k == n_tau {
                        k = 0;
                    }
                }
            }
            (a1, a2)
        })
        .collect();

    let mut out = AveragedFieldTable::zeros(*grid, n_tau);
    for (idx, (a1, a2)) in node_major.into_iter().enumerate() {
        for m in 0..n_tau {
            out.e1[m * n_nodes + idx] = a1[m];
            out.e2[m * n_nodes + idx] = a2[m];
        }
    }
    Ok(out)
}
