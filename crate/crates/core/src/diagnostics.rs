//! Error norms, conservation tracking, and per-step time series.

use crate::geometry::{DistributionField, GeometryError, PhasePoint};

/// `L1` distance between two grid functions on the same grid,
/// `sum |a - b| * dr * dv` (plain Lebesgue weight on every node).
pub fn l1_distance(a: &DistributionField, b: &DistributionField) -> Result<f64, GeometryError> {
    if a.grid != b.grid {
        return Err(GeometryError::GridMismatch);
    }
    let cell = a.grid.cell_area();
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() * cell)
}

/// `L1` distance between a grid function and an analytic sampler
/// evaluated at the grid nodes.
pub fn l1_distance_to(a: &DistributionField, sampler: impl Fn(PhasePoint) -> f64) -> f64 {
    let grid = a.grid;
    let mut acc = 0.0;
    for i in grid.i_range() {
        for j in grid.j_range() {
            acc += (a.get(i, j) - sampler(grid.node(i, j))).abs();
        }
    }
    acc * grid.cell_area()
}

/// Total mass `sum w_i w_j f * dr * dv` with trapezoid half-weights at
/// the outermost nodes; `weighted` inserts the radial measure `|r|`.
pub fn total_mass(f: &DistributionField, weighted: bool) -> f64 {
    let grid = f.grid;
    let (p_r, p_v) = (grid.p_r as isize, grid.p_v as isize);
    let mut acc = 0.0;
    for i in grid.i_range() {
        let wi = if i.abs() == p_r { 0.5 } else { 1.0 };
        let radial = if weighted { grid.r_coord(i).abs() } else { 1.0 };
        let mut row = 0.0;
        for j in grid.j_range() {
            let wj = if j.abs() == p_v { 0.5 } else { 1.0 };
            row += wj * f.get(i, j);
        }
        acc += wi * radial * row;
    }
    acc * grid.cell_area()
}

/// One row per recorded step: time, optional error against an analytic
/// solution, working-state mass, cumulative escaped mass, peak value.
#[derive(Debug, Clone, Default)]
pub struct DiagnosticSeries {
    pub times: Vec<f64>,
    pub l1_error: Vec<Option<f64>>,
    pub mass: Vec<f64>,
    pub escaped_mass: Vec<f64>,
    pub max_abs: Vec<f64>,
}

impl DiagnosticSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Append one row. `mass` is the working-distribution mass (the
    /// solver's conserved quantity), `escaped_mass` the cumulative
    /// total up to this time; `l1_error` is present only when the run
    /// has an analytic reference.
    pub fn record(
        &mut self,
        t: f64,
        mass: f64,
        max_abs: f64,
        escaped_mass: f64,
        l1_error: Option<f64>,
    ) {
        self.times.push(t);
        self.l1_error.push(l1_error);
        self.mass.push(mass);
        self.escaped_mass.push(escaped_mass);
        self.max_abs.push(max_abs);
    }

    /// Append one row with mass and peak taken from `field`.
    pub fn record_field(
        &mut self,
        t: f64,
        field: &DistributionField,
        escaped_mass: f64,
        l1_error: Option<f64>,
    ) {
        self.record(t, total_mass(field, false), field.max_abs(), escaped_mass, l1_error);
    }

    pub fn max_l1_error(&self) -> Option<f64> {
        self.l1_error.iter().flatten().copied().fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    /// Largest relative deviation of the mass column from its first
    /// entry.
    pub fn max_mass_drift(&self) -> f64 {
        let Some(&first) = self.mass.first() else { return 0.0 };
        if first == 0.0 {
            return self.mass.iter().fold(0.0, |a, &m| a.max(m.abs()));
        }
        self.mass.iter().fold(0.0, |a, &m| a.max(((m - first) / first).abs()))
    }
}
