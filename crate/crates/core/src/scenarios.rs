//! Initial beams, analytic linear-case solutions, and the named
//! simulation presets with their grid and time-step parameters.

use crate::fields::{FocusingConfig, TensionFn};
use crate::geometry::{rotate, PhasePoint};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PresetError {
    #[error("unknown preset '{0}' (expected I, II, II', II'', III, III', IV, IV', optionally suffixed :cos or :cos2)")]
    UnknownName(String),
    #[error("preset '{name}' does not take a case suffix")]
    CaseNotApplicable { name: String },
}

/// Semi-gaussian beam parameters: uniform in radius up to `rm`,
/// gaussian in radial velocity with width `vth`, density scale `n0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    pub n0: f64,
    pub rm: f64,
    pub vth: f64,
}

impl Default for BeamParams {
    fn default() -> Self {
        BeamParams { n0: 4.0, rm: 0.75, vth: 0.1 }
    }
}

/// `f0(r, v) = n0 / (sqrt(2 pi) vth) * exp(-v^2 / (2 vth^2))` for
/// `|r| <= rm`, zero otherwise.
pub fn semi_gaussian(p: PhasePoint, b: &BeamParams) -> f64 {
    if p.r.abs() <= b.rm {
        b.n0 / ((2.0 * PI).sqrt() * b.vth) * (-p.v * p.v / (2.0 * b.vth * b.vth)).exp()
    } else {
        0.0
    }
}

/// Smooth compactly-concentrated beam, gaussian in both coordinates.
/// Used where convergence rates need a profile without jumps.
pub fn gaussian_beam(p: PhasePoint, amplitude: f64, sigma_r: f64, sigma_v: f64) -> f64 {
    amplitude
        * (-p.r * p.r / (2.0 * sigma_r * sigma_r)).exp()
        * (-p.v * p.v / (2.0 * sigma_v * sigma_v)).exp()
}

/// Exact solution of the linear non-resonant case (`omega1` irrational,
/// zero self-field): the profile is stationary in the slow time and the
/// physical distribution is its rigid rotation,
/// `f(r, v, t) = f0(gamma(r, v, t/eps))`.
pub fn analytic_nonresonant(p: PhasePoint, t: f64, eps: f64, b: &BeamParams) -> f64 {
    semi_gaussian(rotate(p, t / eps), b)
}

/// Exact solution of the linear resonant case (`omega1` a natural
/// number `>= 2` with `H1 = cos^2`, zero self-field): the limit profile
/// rotates slowly at rate `1/4`, so the physical distribution is `f0`
/// rotated by `t/eps - t/4`.
pub fn analytic_resonant(p: PhasePoint, t: f64, eps: f64, b: &BeamParams) -> f64 {
    semi_gaussian(rotate(p, t / eps - t / 4.0), b)
}

/// Initial distribution selector for run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialDistribution {
    SemiGaussian { n0: f64, rm: f64, vth: f64 },
    Gaussian { amplitude: f64, sigma_r: f64, sigma_v: f64 },
    /// Snapshot-format CSV sampled on the working grid.
    Table { path: String },
}

impl InitialDistribution {
    pub fn semi_gaussian(b: BeamParams) -> Self {
        InitialDistribution::SemiGaussian { n0: b.n0, rm: b.rm, vth: b.vth }
    }

    /// Pointwise value for the analytic variants; `None` for tabulated
    /// data, which the runner samples through a spline.
    pub fn sample(&self, p: PhasePoint) -> Option<f64> {
        match self {
            InitialDistribution::SemiGaussian { n0, rm, vth } => {
                Some(semi_gaussian(p, &BeamParams { n0: *n0, rm: *rm, vth: *vth }))
            }
            InitialDistribution::Gaussian { amplitude, sigma_r, sigma_v } => {
                Some(gaussian_beam(p, *amplitude, *sigma_r, *sigma_v))
            }
            InitialDistribution::Table { .. } => None,
        }
    }

    pub fn beam_params(&self) -> Option<BeamParams> {
        match self {
            InitialDistribution::SemiGaussian { n0, rm, vth } => {
                Some(BeamParams { n0: *n0, rm: *rm, vth: *vth })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Classical,
    TwoscaleUniform,
    TwoscaleMesh,
}

/// Field cases of the numerical experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Case {
    /// `omega1 = 4 sqrt(2)` (irrational), `H1 = cos`.
    Cos,
    /// `omega1 = 2` (rational), `H1 = cos^2`.
    Cos2,
    /// `omega1 = 1` (rational), `H1 = cos^2`, wide beam `rm = 1.85`.
    Cos2Omega1,
}

impl Case {
    fn focusing(self, eps: f64) -> FocusingConfig {
        match self {
            Case::Cos => FocusingConfig {
                eps,
                h0: 1.0,
                omega1: 4.0 * 2.0f64.sqrt(),
                omega1_rational: false,
                h1: TensionFn::Cosine,
            },
            Case::Cos2 => FocusingConfig {
                eps,
                h0: 1.0,
                omega1: 2.0,
                omega1_rational: true,
                h1: TensionFn::CosineSquared,
            },
            Case::Cos2Omega1 => FocusingConfig {
                eps,
                h0: 1.0,
                omega1: 1.0,
                omega1_rational: true,
                h1: TensionFn::CosineSquared,
            },
        }
    }

    fn t_final(self) -> f64 {
        match self {
            Case::Cos => 6.93,
            Case::Cos2 | Case::Cos2Omega1 => 6.9854,
        }
    }

    /// Base time-step multiplier of the reported runs.
    fn k_table(self) -> usize {
        match self {
            Case::Cos => 5,
            Case::Cos2 => 2,
            Case::Cos2Omega1 => 1,
        }
    }

    fn beam(self) -> BeamParams {
        match self {
            Case::Cos2Omega1 => BeamParams { rm: 1.85, ..BeamParams::default() },
            _ => BeamParams::default(),
        }
    }

    fn snapshots(self, nonlinear: bool) -> Vec<f64> {
        match (self, nonlinear) {
            (Case::Cos, false) => vec![1.1088, 6.468],
            (Case::Cos, true) => vec![1.4784, 3.234, 5.544],
            (Case::Cos2, false) => vec![0.2957, 5.9875],
            (Case::Cos2, true) => vec![1.1458, 3.6221, 5.8027],
            (Case::Cos2Omega1, _) => vec![1.3464, 4.3388, 5.1462, 5.984],
        }
    }
}

/// A fully resolved named simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub solver: SolverKind,
    /// Working-grid index bounds and box half-widths. For the uniform
    /// two-scale presets the box is the enlarged square of half-width
    /// `r + v_r` of the physical box, which the rotated support of the
    /// profile requires.
    pub p_r: usize,
    pub p_v: usize,
    pub r_max: f64,
    pub v_max: f64,
    /// Fast-phase index bound of the matching two-scale discretization
    /// (classical presets use it only for the `dt = eps dtau K / N`
    /// arithmetic).
    pub p_tau: usize,
    /// Time-step multiplier `K` in `dt = eps * dtau * K`.
    pub k: usize,
    /// Classical presets: divisor `N` in `dt = dt_H / N`. `None` means
    /// derive the smallest admissible `N` from the locality condition.
    pub n_divisor: Option<u32>,
    pub focusing: FocusingConfig,
    pub self_field: bool,
    pub f0: InitialDistribution,
    pub t_final: f64,
    /// Readout grid for reconstructions (index bound on the physical
    /// box). Classical runs read out on their working grid.
    pub output_p: usize,
    pub output_r_max: f64,
    pub output_v_max: f64,
    pub snapshot_times: Vec<f64>,
}

impl Preset {
    pub fn dtau(&self) -> f64 {
        2.0 * PI / (self.p_tau as f64 + 1.0)
    }

    /// Two-scale base step `dt_H = eps * dtau * K`.
    pub fn dt_h(&self) -> f64 {
        self.focusing.eps * self.dtau() * self.k as f64
    }
}

const BOX: f64 = 3.0;

/// Build a named preset. Names are the simulation labels `I`, `II`,
/// `II'`, `II''`, `III`, `III'`, `IV`, `IV'`; the unprimed classical
/// and two-scale names default to the `cos` case and accept a `:cos` or
/// `:cos2` suffix selecting the field case (the primed wide-beam
/// presets are fixed to their own case).
pub fn load_preset(name: &str) -> Result<Preset, PresetError> {
    let (base, case_suffix) = match name.split_once(':') {
        Some((b, c)) => (b, Some(c)),
        None => (name, None),
    };

    let case_for = |default: Case| -> Result<Case, PresetError> {
        match case_suffix {
            None => Ok(default),
            Some("cos") => Ok(Case::Cos),
            Some("cos2") => Ok(Case::Cos2),
            Some(_) => Err(PresetError::UnknownName(name.to_string())),
        }
    };
    let no_case = |fixed: Case| -> Result<Case, PresetError> {
        if case_suffix.is_some() {
            Err(PresetError::CaseNotApplicable { name: name.to_string() })
        } else {
            Ok(fixed)
        }
    };

    let eps = 1e-2;
    let (solver, p, p_tau, case, self_field, n_divisor, enlarged, output_p) = match base {
        "I" => {
            let case = case_for(Case::Cos)?;
            let n = match case {
                Case::Cos => Some(122),
                Case::Cos2 => Some(49),
                Case::Cos2Omega1 => None,
            };
            (SolverKind::Classical, 64, 16, case, false, n, false, 64)
        }
        "II" => (SolverKind::Classical, 128, 16, case_for(Case::Cos)?, false, None, false, 128)
        ,
        "II'" => {
            let case = case_for(Case::Cos)?;
            let n = match case {
                Case::Cos => Some(480),
                Case::Cos2 => Some(192),
                Case::Cos2Omega1 => None,
            };
            (SolverKind::Classical, 256, 16, case, true, n, false, 256)
        }
        "II''" => (SolverKind::Classical, 256, 20, no_case(Case::Cos2Omega1)?, true, None, false, 256),
        "III" => (SolverKind::TwoscaleMesh, 64, 16, case_for(Case::Cos)?, false, None, false, 64),
        "III'" => (SolverKind::TwoscaleMesh, 128, 20, no_case(Case::Cos2Omega1)?, true, None, false, 128),
        "IV" => (SolverKind::TwoscaleUniform, 128, 16, case_for(Case::Cos)?, false, None, true, 64),
        "IV'" => (SolverKind::TwoscaleUniform, 256, 20, no_case(Case::Cos2Omega1)?, true, None, true, 128),
        _ => return Err(PresetError::UnknownName(name.to_string())),
    };

    // Linear validation runs use K = 2; nonlinear runs use the per-case
    // table values. Classical presets always keep the table K so that
    // dt = dt_H / N matches the reported step-count ratios.
    let k = match solver {
        SolverKind::Classical => case.k_table(),
        _ if self_field => case.k_table(),
        _ => 2,
    };

    let half_width = if enlarged { 2.0 * BOX } else { BOX };
    Ok(Preset {
        name: name.to_string(),
        solver,
        p_r: p,
        p_v: p,
        r_max: half_width,
        v_max: half_width,
        p_tau,
        k,
        n_divisor,
        focusing: case.focusing(eps),
        self_field,
        f0: InitialDistribution::semi_gaussian(case.beam()),
        t_final: case.t_final(),
        output_p,
        output_r_max: BOX,
        output_v_max: BOX,
        snapshot_times: case.snapshots(self_field),
    })
}
