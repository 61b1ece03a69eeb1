//! Phase-space grids, the fast-phase grid, and the rotation map that
//! generates the rotated mesh family.
//!
//! The phase-space mesh is symmetric: nodes run `i = -p_r ..= p_r`,
//! `j = -p_v ..= p_v` with spacings `dr = r_max/(p_r+1)` and
//! `dv = v_max/(p_v+1)`, so the box endpoints are never nodes. The
//! fast-phase mesh covers `[0, 2*pi)` with `p_tau + 1` nodes; the node
//! `2*pi` is identified with `0` (periodic composite rule).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("node index ({i}, {j}) outside grid bounds (+-{p_r}, +-{p_v})")]
    IndexOutOfRange { i: isize, j: isize, p_r: usize, p_v: usize },
    #[error("value table has {got} entries, grid has {expected} nodes")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("grids differ between operands")]
    GridMismatch,
}

/// A point of the `(r, v_r)` plane (equivalently `(q, u_r)` for the
/// limit system). Both coordinates may be negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub r: f64,
    pub v: f64,
}

impl PhasePoint {
    pub fn new(r: f64, v: f64) -> Self {
        PhasePoint { r, v }
    }

    /// Euclidean norm, preserved by [`rotate`].
    pub fn norm(&self) -> f64 {
        self.r.hypot(self.v)
    }
}

/// Planar rotation by `tau`:
/// `gamma(r, v, tau) = (cos(tau) r - sin(tau) v, sin(tau) r + cos(tau) v)`.
pub fn rotate(p: PhasePoint, tau: f64) -> PhasePoint {
    let (s, c) = tau.sin_cos();
    PhasePoint { r: c * p.r - s * p.v, v: s * p.r + c * p.v }
}

/// Inverse rotation: `unrotate(rotate(p, tau), tau) = p`.
pub fn unrotate(p: PhasePoint, tau: f64) -> PhasePoint {
    rotate(p, -tau)
}

/// Uniformly spaced 1D axis with `n` nodes `x0 + k*dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformAxis {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
}

impl UniformAxis {
    pub fn node(&self, k: usize) -> f64 {
        self.x0 + k as f64 * self.dx
    }

    pub fn last(&self) -> f64 {
        self.node(self.n - 1)
    }
}

/// Uniform symmetric tensor grid on `(r, v_r)`.
///
/// `r_max` and `v_max` are half-widths of the box; the extreme nodes
/// sit strictly inside it at `r_max * p_r / (p_r + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub r_max: f64,
    pub v_max: f64,
    pub p_r: usize,
    pub p_v: usize,
}

impl PhaseGrid {
    pub fn new(r_max: f64, v_max: f64, p_r: usize, p_v: usize) -> Self {
        assert!(r_max > 0.0 && v_max > 0.0, "box half-widths must be positive");
        PhaseGrid { r_max, v_max, p_r, p_v }
    }

    /// Square grid, same half-width and index bound on both axes.
    pub fn square(half_width: f64, p: usize) -> Self {
        Self::new(half_width, half_width, p, p)
    }

    pub fn dr(&self) -> f64 {
        self.r_max / (self.p_r as f64 + 1.0)
    }

    pub fn dv(&self) -> f64 {
        self.v_max / (self.p_v as f64 + 1.0)
    }

    /// Number of nodes along r: `2*p_r + 1`.
    pub fn n_r(&self) -> usize {
        2 * self.p_r + 1
    }

    pub fn n_v(&self) -> usize {
        2 * self.p_v + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.n_r() * self.n_v()
    }

    pub fn r_coord(&self, i: isize) -> f64 {
        i as f64 * self.dr()
    }

    pub fn v_coord(&self, j: isize) -> f64 {
        j as f64 * self.dv()
    }

    pub fn node(&self, i: isize, j: isize) -> PhasePoint {
        PhasePoint { r: self.r_coord(i), v: self.v_coord(j) }
    }

    pub fn in_range(&self, i: isize, j: isize) -> bool {
        i.unsigned_abs() <= self.p_r && j.unsigned_abs() <= self.p_v
    }

    /// Node of the rotated mesh `M(Omega(tau))`: `gamma(r_i, v_j, tau)`.
    pub fn rotated_node(&self, i: isize, j: isize, tau: f64) -> Result<PhasePoint, GeometryError> {
        if !self.in_range(i, j) {
            return Err(GeometryError::IndexOutOfRange { i, j, p_r: self.p_r, p_v: self.p_v });
        }
        Ok(rotate(self.node(i, j), tau))
    }

    /// Row-major linear index, i slow, j fast.
    pub fn lin(&self, i: isize, j: isize) -> usize {
        debug_assert!(self.in_range(i, j));
        (i + self.p_r as isize) as usize * self.n_v() + (j + self.p_v as isize) as usize
    }

    pub fn r_axis(&self) -> UniformAxis {
        UniformAxis { x0: -(self.p_r as f64) * self.dr(), dx: self.dr(), n: self.n_r() }
    }

    pub fn v_axis(&self) -> UniformAxis {
        UniformAxis { x0: -(self.p_v as f64) * self.dv(), dx: self.dv(), n: self.n_v() }
    }

    /// Signed index range along r, `-p_r ..= p_r`.
    pub fn i_range(&self) -> std::ops::RangeInclusive<isize> {
        -(self.p_r as isize)..=self.p_r as isize
    }

    pub fn j_range(&self) -> std::ops::RangeInclusive<isize> {
        -(self.p_v as isize)..=self.p_v as isize
    }

    pub fn cell_area(&self) -> f64 {
        self.dr() * self.dv()
    }
}

/// Periodic grid of the fast phase over `[0, 2*pi)`, nodes
/// `tau_m = m * dtau`, `m = 0 ..= p_tau`, `dtau = 2*pi/(p_tau + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    pub p_tau: usize,
}

impl TauGrid {
    pub fn new(p_tau: usize) -> Self {
        TauGrid { p_tau }
    }

    pub fn dtau(&self) -> f64 {
        2.0 * std::f64::consts::PI / (self.p_tau as f64 + 1.0)
    }

    /// Number of nodes, `p_tau + 1`.
    pub fn len(&self) -> usize {
        self.p_tau + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, m: usize) -> f64 {
        m as f64 * self.dtau()
    }

    /// Periodic composite quadrature of `w` over one period,
    /// `dtau * sum_m w(tau_m)`; exact for trigonometric polynomials of
    /// degree `<= p_tau`.
    pub fn integrate(&self, mut w: impl FnMut(f64) -> f64) -> f64 {
        let dtau = self.dtau();
        (0..self.len()).map(|m| w(self.node(m))).sum::<f64>() * dtau
    }
}

/// Grid-sampled distribution values (`f`, a slice of `F`, or `G`).
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionField {
    pub grid: PhaseGrid,
    pub values: Vec<f64>,
}

impl DistributionField {
    pub fn zeros(grid: PhaseGrid) -> Self {
        DistributionField { grid, values: vec![0.0; grid.n_nodes()] }
    }

    pub fn from_fn(grid: PhaseGrid, f: impl Fn(PhasePoint) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_nodes());
        for i in grid.i_range() {
            for j in grid.j_range() {
                values.push(f(grid.node(i, j)));
            }
        }
        DistributionField { grid, values }
    }

    pub fn from_values(grid: PhaseGrid, values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.len() != grid.n_nodes() {
            return Err(GeometryError::ShapeMismatch { expected: grid.n_nodes(), got: values.len() });
        }
        Ok(DistributionField { grid, values })
    }

    pub fn get(&self, i: isize, j: isize) -> f64 {
        self.values[self.grid.lin(i, j)]
    }

    pub fn set(&mut self, i: isize, j: isize, value: f64) {
        let k = self.grid.lin(i, j);
        self.values[k] = value;
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, &v| a.max(v.abs()))
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn rotate_identity_and_quarter_turn() {
        let p = rotate(PhasePoint::new(1.0, 0.5), 0.0);
        assert_abs_diff_eq!(p.r, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.v, 0.5, epsilon = 1e-15);

        let q = rotate(PhasePoint::new(1.0, 0.0), PI / 2.0);
        assert_abs_diff_eq!(q.r, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.v, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn unrotate_inverts_quarter_turn() {
        let p = unrotate(PhasePoint::new(0.0, 1.0), PI / 2.0);
        assert_abs_diff_eq!(p.r, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.v, 0.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn rotate_composes_as_group(r in -3.0..3.0f64, v in -3.0..3.0f64,
                                    a in -7.0..7.0f64, b in -7.0..7.0f64) {
            let p = PhasePoint::new(r, v);
            let two_step = rotate(rotate(p, a), b);
            let one_step = rotate(p, a + b);
            prop_assert!((two_step.r - one_step.r).abs() < 1e-12);
            prop_assert!((two_step.v - one_step.v).abs() < 1e-12);
        }

        #[test]
        fn rotate_preserves_norm(r in -3.0..3.0f64, v in -3.0..3.0f64, tau in -7.0..7.0f64) {
            let p = PhasePoint::new(r, v);
            prop_assert!((rotate(p, tau).norm() - p.norm()).abs() < 1e-12);
        }

        #[test]
        fn unrotate_round_trips(r in -3.0..3.0f64, v in -3.0..3.0f64, tau in -7.0..7.0f64) {
            let p = PhasePoint::new(r, v);
            let q = unrotate(rotate(p, tau), tau);
            prop_assert!((q.r - p.r).abs() < 1e-12);
            prop_assert!((q.v - p.v).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_nodes_and_spacing() {
        let g = PhaseGrid::square(3.0, 64);
        assert_abs_diff_eq!(g.dr(), 3.0 / 65.0, epsilon = 1e-15);
        let origin = g.node(0, 0);
        assert_eq!((origin.r, origin.v), (0.0, 0.0));
        // extreme node strictly inside the box
        assert!(g.r_coord(64) < 3.0);
        assert_abs_diff_eq!(g.r_coord(64), 3.0 * 64.0 / 65.0, epsilon = 1e-12);
        // symmetry under (i, j) -> (-i, -j)
        let a = g.node(17, -5);
        let b = g.node(-17, 5);
        assert_eq!((a.r, a.v), (-b.r, -b.v));
    }

    #[test]
    fn rotated_node_origin_is_fixed() {
        let g = PhaseGrid::square(3.0, 8);
        for m in 0..7 {
            let p = g.rotated_node(0, 0, m as f64).unwrap();
            assert_eq!((p.r, p.v), (0.0, 0.0));
        }
    }

    #[test]
    fn rotated_node_quarter_turn() {
        let g = PhaseGrid::new(0.1 * 9.0, 0.1 * 9.0, 8, 8); // dr = 0.1
        let p = g.rotated_node(1, 0, PI / 2.0).unwrap();
        assert_abs_diff_eq!(p.r, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.v, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn rotated_node_rejects_out_of_range() {
        let g = PhaseGrid::square(3.0, 4);
        assert!(g.rotated_node(5, 0, 0.0).is_err());
        assert!(g.rotated_node(0, -5, 0.0).is_err());
    }

    #[test]
    fn rotated_mesh_stays_in_enlarged_square() {
        // Max-norm bound computed by enumerating all nodes: the rotated
        // mesh lies inside the square of half-width r_max + v_max.
        let g = PhaseGrid::new(3.0, 2.0, 32, 24);
        let tau = 2.0 * PI / 3.0;
        let bound = g.r_max + g.v_max;
        let mut max_norm: f64 = 0.0;
        for i in g.i_range() {
            for j in g.j_range() {
                let p = g.rotated_node(i, j, tau).unwrap();
                max_norm = max_norm.max(p.r.abs()).max(p.v.abs());
            }
        }
        assert!(max_norm < bound, "max-norm {max_norm} exceeds {bound}");
    }

    #[test]
    fn rotated_node_map_is_injective() {
        let g = PhaseGrid::square(1.0, 6);
        let tau = 0.7;
        let mut seen = Vec::new();
        for i in g.i_range() {
            for j in g.j_range() {
                let p = g.rotated_node(i, j, tau).unwrap();
                for &(r, v) in &seen {
                    assert!((p.r - r as f64).abs() > 1e-9 || (p.v - v as f64).abs() > 1e-9);
                }
                seen.push((p.r, p.v));
            }
        }
    }

    #[test]
    fn tau_grid_excludes_two_pi() {
        let t = TauGrid::new(16);
        assert_eq!(t.len(), 17);
        assert_abs_diff_eq!(t.node(16), 2.0 * PI - t.dtau(), epsilon = 1e-12);
    }

    #[test]
    fn tau_grid_integrates_trig_polynomials_exactly() {
        let t = TauGrid::new(16);
        // degree <= p_tau / 2 is well within the exactness range
        for k in 1..=8u32 {
            let s = t.integrate(|tau| (k as f64 * tau).cos());
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
            let c = t.integrate(|tau| (k as f64 * tau).sin().powi(2));
            assert_abs_diff_eq!(c, PI, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(t.integrate(|_| 1.0), 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn field_indexing_round_trips() {
        let g = PhaseGrid::new(2.0, 1.0, 5, 3);
        let mut f = DistributionField::zeros(g);
        f.set(-5, 3, 1.25);
        f.set(0, 0, -2.0);
        assert_eq!(f.get(-5, 3), 1.25);
        assert_eq!(f.get(0, 0), -2.0);
        assert_eq!(f.values.len(), 11 * 7);
    }
}
