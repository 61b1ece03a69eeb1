//! Cubic spline interpolation on uniform grids: the 1D operator used on
//! field columns and advection rows, and the 2D tensor-product operator
//! used on phase-space tables, with analytic first derivatives.
//!
//! Splines are stored in the cubic B-spline basis. Fitting solves the
//! tridiagonal collocation system (rows `c[k-1] + 4 c[k] + c[k+1] = 6 y[k]`)
//! with natural end conditions, under which the first and last
//! coefficients reduce to the boundary values. Evaluation outside the
//! node hull returns zero: every interpolated quantity here is compactly
//! supported, and an extrapolated cubic would be meaningless.

use crate::geometry::{PhaseGrid, PhasePoint, UniformAxis};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SplineError {
    #[error("spline fit needs at least 4 nodes, got {got}")]
    TooFewNodes { got: usize },
    #[error("non-finite value in spline input")]
    NonFiniteValue,
    #[error("value table has {got} entries, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// End condition of the fitted spline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryCondition {
    /// Second derivative zero at both ends.
    #[default]
    Natural,
}

/// Slack for locating a query against the node hull, so that the hull
/// endpoints themselves evaluate exactly despite rounding in
/// `(x - x0) / dx`.
const HULL_EDGE_TOL: f64 = 1e-9;

#[inline]
fn basis(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    let t2 = t * t;
    [
        s * s * s / 6.0,
        (3.0 * t2 * t - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t2 * t + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t2 * t / 6.0,
    ]
}

#[inline]
fn basis_deriv(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [
        -0.5 * s * s,
        0.5 * t * (3.0 * t - 4.0),
        0.5 * (-3.0 * t * t + 2.0 * t + 1.0),
        0.5 * t * t,
    ]
}

/// Locate `x` on the axis: cell index in `0 ..= n-2` and local
/// coordinate `t` in `[0, 1]`, or `None` outside the hull.
#[inline]
fn locate(axis: &UniformAxis, x: f64) -> Option<(usize, f64)> {
    let span = (axis.n - 1) as f64;
    let mut u = (x - axis.x0) / axis.dx;
    if u < -HULL_EDGE_TOL || u > span + HULL_EDGE_TOL {
        return None;
    }
    u = u.clamp(0.0, span);
    let mut cell = u as usize;
    if cell > axis.n - 2 {
        cell = axis.n - 2;
    }
    Some((cell, u - cell as f64))
}

/// Natural-BC B-spline coefficients of `y`: `n + 2` values, basis
/// indices shifted by one (entry `k` multiplies the B-spline centred at
/// node `k - 1`).
fn fit_coefficients(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut c = vec![0.0; n + 2];
    // Natural BC collapses the end equations to c_0 = y_0, c_{n-1} = y_{n-1}.
    c[1] = y[0];
    c[n] = y[n - 1];
    // Thomas sweep on the interior rows k = 1 .. n-2.
    let m = n - 2;
    let mut diag = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    diag[0] = 4.0;
    rhs[0] = 6.0 * y[1] - y[0];
    for k in 1..m {
        let w = 1.0 / diag[k - 1];
        diag[k] = 4.0 - w;
        rhs[k] = 6.0 * y[k + 1] - w * rhs[k - 1];
    }
    rhs[m - 1] -= y[n - 1];
    c[n - 1] = rhs[m - 1] / diag[m - 1];
    for k in (0..m - 1).rev() {
        c[k + 2] = (rhs[k] - c[k + 3]) / diag[k];
    }
    // Phantom coefficients from S''(x_0) = S''(x_{n-1}) = 0.
    c[0] = 2.0 * c[1] - c[2];
    c[n + 1] = 2.0 * c[n] - c[n - 1];
    c
}

fn check_finite(values: &[f64]) -> Result<(), SplineError> {
    let sum: f64 = values.iter().map(|v| v.abs()).sum();
    if sum.is_finite() {
        Ok(())
    } else {
        Err(SplineError::NonFiniteValue)
    }
}

/// 1D cubic spline through values on a uniform axis.
#[derive(Debug, Clone)]
pub struct Spline1D {
    pub axis: UniformAxis,
    pub bc: BoundaryCondition,
    coeffs: Vec<f64>,
    zero: bool,
}

impl Spline1D {
    pub fn fit(values: &[f64], axis: UniformAxis, bc: BoundaryCondition) -> Result<Self, SplineError> {
        if axis.n < 4 {
            return Err(SplineError::TooFewNodes { got: axis.n });
        }
        if values.len() != axis.n {
            return Err(SplineError::ShapeMismatch { expected: axis.n, got: values.len() });
        }
        check_finite(values)?;
        let zero = values.iter().all(|&v| v == 0.0);
        let coeffs = if zero { vec![0.0; axis.n + 2] } else { fit_coefficients(values) };
        Ok(Spline1D { axis, bc, coeffs, zero })
    }

    /// All fitted values identically zero.
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// Spline value at `x`; zero outside the node hull.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if self.zero {
            return 0.0;
        }
        match locate(&self.axis, x) {
            None => 0.0,
            Some((cell, t)) => {
                let w = basis(t);
                let c = &self.coeffs[cell..cell + 4];
                c[0] * w[0] + c[1] * w[1] + c[2] * w[2] + c[3] * w[3]
            }
        }
    }

    /// First derivative at `x`; zero outside the hull.
    #[inline]
    pub fn eval_deriv(&self, x: f64) -> f64 {
        if self.zero {
            return 0.0;
        }
        match locate(&self.axis, x) {
            None => 0.0,
            Some((cell, t)) => {
                let w = basis_deriv(t);
                let c = &self.coeffs[cell..cell + 4];
                (c[0] * w[0] + c[1] * w[1] + c[2] * w[2] + c[3] * w[3]) / self.axis.dx
            }
        }
    }

    /// Cell location plus basis weights for `x`, for callers that reuse
    /// one evaluation point across many splines on the same axis.
    #[inline]
    pub fn locate_weights(axis: &UniformAxis, x: f64) -> Option<(usize, [f64; 4])> {
        locate(axis, x).map(|(cell, t)| (cell, basis(t)))
    }

    /// Evaluate from a precomputed [`Self::locate_weights`] stencil.
    #[inline]
    pub fn eval_at(&self, cell: usize, w: &[f64; 4]) -> f64 {
        let c = &self.coeffs[cell..cell + 4];
        c[0] * w[0] + c[1] * w[1] + c[2] * w[2] + c[3] * w[3]
    }
}

/// Tensor-product cubic spline on a [`PhaseGrid`].
#[derive(Debug, Clone)]
pub struct Spline2D {
    pub grid: PhaseGrid,
    pub bc: BoundaryCondition,
    /// `(n_r + 2) x (n_v + 2)` coefficients, r-index slow.
    coeffs: Vec<f64>,
    zero: bool,
}

impl Spline2D {
    /// Fit values in row-major node order (i slow, j fast).
    pub fn fit(values: &[f64], grid: PhaseGrid, bc: BoundaryCondition) -> Result<Self, SplineError> {
        let (nx, ny) = (grid.n_r(), grid.n_v());
        if nx < 4 || ny < 4 {
            return Err(SplineError::TooFewNodes { got: nx.min(ny) });
        }
        if values.len() != nx * ny {
            return Err(SplineError::ShapeMismatch { expected: nx * ny, got: values.len() });
        }
        check_finite(values)?;
        if values.iter().all(|&v| v == 0.0) {
            return Ok(Spline2D { grid, bc, coeffs: vec![0.0; (nx + 2) * (ny + 2)], zero: true });
        }

        // Stage 1: fit along r for each j-column.
        let mut stage = vec![0.0; (nx + 2) * ny];
        let mut column = vec![0.0; nx];
        for j in 0..ny {
            for i in 0..nx {
                column[i] = values[i * ny + j];
            }
            for (k, ck) in fit_coefficients(&column).into_iter().enumerate() {
                stage[k * ny + j] = ck;
            }
        }
        // Stage 2: fit along v for each coefficient row.
        let mut coeffs = vec![0.0; (nx + 2) * (ny + 2)];
        for k in 0..nx + 2 {
            let row = &stage[k * ny..(k + 1) * ny];
            coeffs[k * (ny + 2)..(k + 1) * (ny + 2)].copy_from_slice(&fit_coefficients(row));
        }
        Ok(Spline2D { grid, bc, coeffs, zero: false })
    }

    pub fn fit_field(field: &crate::geometry::DistributionField) -> Result<Self, SplineError> {
        Self::fit(&field.values, field.grid, BoundaryCondition::Natural)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// Spline value at `p`; zero outside the node hull.
    #[inline]
    pub fn eval(&self, p: PhasePoint) -> f64 {
        if self.zero {
            return 0.0;
        }
        let (Some((ci, tx)), Some((cj, ty))) =
            (locate(&self.grid.r_axis(), p.r), locate(&self.grid.v_axis(), p.v))
        else {
            return 0.0;
        };
        let wx = basis(tx);
        let wy = basis(ty);
        let stride = self.grid.n_v() + 2;
        let mut acc = 0.0;
        for (a, &wxa) in wx.iter().enumerate() {
            let row = &self.coeffs[(ci + a) * stride + cj..(ci + a) * stride + cj + 4];
            acc += wxa * (row[0] * wy[0] + row[1] * wy[1] + row[2] * wy[2] + row[3] * wy[3]);
        }
        acc
    }

    /// Analytic gradient `(d/dr, d/dv)` of the piecewise cubic at `p`;
    /// `(0, 0)` outside the hull.
    #[inline]
    pub fn eval_grad(&self, p: PhasePoint) -> (f64, f64) {
        if self.zero {
            return (0.0, 0.0);
        }
        let (Some((ci, tx)), Some((cj, ty))) =
            (locate(&self.grid.r_axis(), p.r), locate(&self.grid.v_axis(), p.v))
        else {
            return (0.0, 0.0);
        };
        let wx = basis(tx);
        let dwx = basis_deriv(tx);
        let wy = basis(ty);
        let dwy = basis_deriv(ty);
        let stride = self.grid.n_v() + 2;
        let (mut dx, mut dy) = (0.0, 0.0);
        for a in 0..4 {
            let row = &self.coeffs[(ci + a) * stride + cj..(ci + a) * stride + cj + 4];
            let along = row[0] * wy[0] + row[1] * wy[1] + row[2] * wy[2] + row[3] * wy[3];
            let along_d = row[0] * dwy[0] + row[1] * dwy[1] + row[2] * dwy[2] + row[3] * dwy[3];
            dx += dwx[a] * along;
            dy += wx[a] * along_d;
        }
        (dx / self.grid.dr(), dy / self.grid.dv())
    }
}
