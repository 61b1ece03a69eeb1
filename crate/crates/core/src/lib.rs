//! Semi-Lagrangian solvers for a charged particle beam in a periodic
//! focusing channel.
//!
//! The library implements three solvers for the 1D axisymmetric
//! Vlasov-Poisson system with a strong oscillating external field of
//! scale ratio `eps`:
//!
//! * a classical backward semi-Lagrangian scheme with v-r-v splitting
//!   on the stiff system itself ([`solver_classical`]),
//! * a two-scale semi-Lagrangian scheme on a uniform phase-space mesh
//!   for the homogenized limit system ([`solver_twoscale_uniform`]),
//! * a two-scale scheme storing the limit profile on a family of
//!   rotated meshes, which removes all interpolation from the Poisson
//!   solve and from the readout of the physical distribution
//!   ([`solver_twoscale_mesh`]).
//!
//! Supporting modules provide grids and the phase-space rotation map
//! ([`geometry`]), cubic spline interpolation ([`spline`]), radial
//! Poisson solves and phase-averaged fields ([`fields`]), initial
//! beams and analytic linear-case solutions ([`scenarios`]), error
//! norms and conservation tracking ([`diagnostics`]), and run
//! orchestration with CSV/JSON output ([`runner`]).

pub mod diagnostics;
pub mod fields;
pub mod geometry;
pub mod runner;
pub mod scenarios;
pub mod solver_classical;
pub mod solver_twoscale_mesh;
pub mod solver_twoscale_uniform;
pub mod spline;

pub use geometry::{DistributionField, PhaseGrid, PhasePoint, TauGrid};

use thiserror::Error;

/// Errors shared by the solver modules.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("singular shift matrix (|det| = {det:.3e}) at node i={i}, j={j}, slice {slice}; reduce dt")]
    SingularShift { i: isize, j: isize, slice: usize, det: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Field(#[from] fields::FieldError),
    #[error(transparent)]
    Spline(#[from] spline::SplineError),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
}
