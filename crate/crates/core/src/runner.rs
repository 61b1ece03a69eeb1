//! Run orchestration: resolved configurations, the simulation loop for
//! all three solvers, snapshot/diagnostic/manifest output, run
//! comparison, and time-step convergence studies.
//!
//! File formats:
//! * snapshots: CSV with header lines `# t=<value>` and
//!   `# grid=<P_r>x<P_vr>`, then `r,v,f` rows in row-major node order;
//! * `diagnostics.csv`: `t,l1_error,mass,escaped_mass,max_abs` with
//!   empty error cells when the run has no analytic reference;
//! * `run.json`: manifest echoing every resolved parameter.
//!
//! All parallel loops write elementwise, so outputs are bit-identical
//! across thread counts.

use crate::diagnostics::{l1_distance_to, total_mass, DiagnosticSeries};
use crate::fields::{solve_radial_poisson, FocusingConfig, TensionFn};
use crate::geometry::{rotate, DistributionField, GeometryError, PhaseGrid, PhasePoint, TauGrid};
use crate::scenarios::{load_preset, InitialDistribution, Preset, PresetError, SolverKind};
use crate::solver_classical::{cfl_timestep, step_classical, ClassicalState};
use crate::solver_twoscale_mesh::{init_mesh_state, reconstruct_f_mesh, step_mesh, TwoScaleMeshState};
use crate::solver_twoscale_uniform::{
    init_half_step_uniform, leapfrog_step_uniform, reconstruct_f_uniform, TwoScaleUniformState,
};
use crate::spline::Spline2D;
use crate::SolverError;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Preset(#[from] PresetError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Field(#[from] crate::fields::FieldError),
    #[error(transparent)]
    Spline(#[from] crate::spline::SplineError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
}

/// Fully resolved run configuration. Build one from a preset and
/// optionally overlay individual fields from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub solver: SolverKind,
    pub focusing: FocusingConfig,
    pub self_field: bool,
    pub p_r: usize,
    pub p_v: usize,
    pub r_max: f64,
    pub v_max: f64,
    pub p_tau: usize,
    /// Two-scale time-step multiplier, `dt = eps * dtau * K`.
    pub k: usize,
    /// Classical runs: `dt = dt_H / N`; `None` derives the smallest
    /// admissible `N` from the locality condition.
    pub n_divisor: Option<u32>,
    /// Explicit time step (uniform two-scale only; the rotated-mesh
    /// scheme is bound to `eps * dtau * K` and classical runs to
    /// `dt_H / N`).
    pub dt_override: Option<f64>,
    pub f0: InitialDistribution,
    pub t_final: f64,
    pub snapshot_times: Vec<f64>,
    pub output_p: usize,
    pub output_r_max: f64,
    pub output_v_max: f64,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
    /// Record diagnostics every this many steps (0 = auto).
    pub diag_every: usize,
    /// Print step progress to stderr.
    #[serde(default)]
    pub progress: bool,
}

/// Optional field-by-field overrides loaded from a JSON config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverlay {
    pub solver: Option<SolverKind>,
    pub eps: Option<f64>,
    pub h0: Option<f64>,
    pub omega1: Option<f64>,
    pub omega1_rational: Option<bool>,
    pub h1: Option<TensionFn>,
    pub self_field: Option<bool>,
    pub p_r: Option<usize>,
    pub p_v: Option<usize>,
    pub r_max: Option<f64>,
    pub v_max: Option<f64>,
    pub p_tau: Option<usize>,
    pub k: Option<usize>,
    pub n_divisor: Option<u32>,
    pub dt: Option<f64>,
    pub f0: Option<InitialDistribution>,
    pub t_final: Option<f64>,
    pub snapshot_times: Option<Vec<f64>>,
    pub output_p: Option<usize>,
    pub output_r_max: Option<f64>,
    pub output_v_max: Option<f64>,
    pub threads: Option<usize>,
    pub diag_every: Option<usize>,
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self, RunnerError> {
        Ok(Self::from_preset_struct(load_preset(name)?))
    }

    pub fn from_preset_struct(p: Preset) -> Self {
        RunConfig {
            preset: Some(p.name.clone()),
            solver: p.solver,
            focusing: p.focusing,
            self_field: p.self_field,
            p_r: p.p_r,
            p_v: p.p_v,
            r_max: p.r_max,
            v_max: p.v_max,
            p_tau: p.p_tau,
            k: p.k,
            n_divisor: p.n_divisor,
            dt_override: None,
            f0: p.f0,
            t_final: p.t_final,
            snapshot_times: p.snapshot_times,
            output_p: p.output_p,
            output_r_max: p.output_r_max,
            output_v_max: p.output_v_max,
            threads: 0,
            diag_every: 0,
            progress: false,
        }
    }

    pub fn apply_overlay(&mut self, o: &ConfigOverlay) {
        if let Some(v) = o.solver {
            self.solver = v;
        }
        if let Some(v) = o.eps {
            self.focusing.eps = v;
        }
        if let Some(v) = o.h0 {
            self.focusing.h0 = v;
        }
        if let Some(v) = o.omega1 {
            self.focusing.omega1 = v;
        }
        if let Some(v) = o.omega1_rational {
            self.focusing.omega1_rational = v;
        }
        if let Some(v) = &o.h1 {
            self.focusing.h1 = v.clone();
        }
        if let Some(v) = o.self_field {
            self.self_field = v;
        }
        if let Some(v) = o.p_r {
            self.p_r = v;
        }
        if let Some(v) = o.p_v {
            self.p_v = v;
        }
        if let Some(v) = o.r_max {
            self.r_max = v;
        }
        if let Some(v) = o.v_max {
            self.v_max = v;
        }
        if let Some(v) = o.p_tau {
            self.p_tau = v;
        }
        if let Some(v) = o.k {
            self.k = v;
        }
        if let Some(v) = o.n_divisor {
            self.n_divisor = Some(v);
        }
        if let Some(v) = o.dt {
            self.dt_override = Some(v);
        }
        if let Some(v) = &o.f0 {
            self.f0 = v.clone();
        }
        if let Some(v) = o.t_final {
            self.t_final = v;
        }
        if let Some(v) = &o.snapshot_times {
            self.snapshot_times = v.clone();
        }
        if let Some(v) = o.output_p {
            self.output_p = v;
        }
        if let Some(v) = o.output_r_max {
            self.output_r_max = v;
        }
        if let Some(v) = o.output_v_max {
            self.output_v_max = v;
        }
        if let Some(v) = o.threads {
            self.threads = v;
        }
        if let Some(v) = o.diag_every {
            self.diag_every = v;
        }
    }

    pub fn grid(&self) -> PhaseGrid {
        PhaseGrid::new(self.r_max, self.v_max, self.p_r, self.p_v)
    }

    pub fn tau(&self) -> TauGrid {
        TauGrid::new(self.p_tau)
    }

    pub fn out_grid(&self) -> PhaseGrid {
        PhaseGrid::new(self.output_r_max, self.output_v_max, self.output_p, self.output_p)
    }

    /// Two-scale base step `dt_H = eps * dtau * K`.
    pub fn dt_h(&self) -> f64 {
        self.focusing.eps * self.tau().dtau() * self.k as f64
    }

    /// Validate invariants and pin the time step, step count, and
    /// snapshot schedule.
    pub fn resolve(&self) -> Result<Resolved, RunnerError> {
        self.focusing.validate().map_err(RunnerError::Config)?;
        if !(self.t_final >= 0.0) {
            return Err(RunnerError::Config(format!("t_final must be >= 0, got {}", self.t_final)));
        }
        if self.k < 1 {
            return Err(RunnerError::Config("K must be a positive integer".into()));
        }
        let grid = self.grid();
        let dt_h = self.dt_h();

        let mut field_bound = None;
        let mut cfl_bound = None;
        let mut n_divisor = None;
        let dt = match self.solver {
            SolverKind::Classical => {
                if self.dt_override.is_some() {
                    return Err(RunnerError::Config(
                        "classical runs take dt = dt_H / N; set n_divisor instead of dt".into(),
                    ));
                }
                let bound = self.classical_field_bound()?;
                let cfl = cfl_timestep(&grid, &self.focusing, bound)?;
                let n = match self.n_divisor {
                    Some(n) => n,
                    None => (dt_h / cfl).ceil() as u32,
                };
                let dt = dt_h / n as f64;
                if dt > cfl * (1.0 + 1e-12) {
                    return Err(RunnerError::Config(format!(
                        "classical run violates the locality condition: dt = {dt:.6e} exceeds the bound {cfl:.6e} (N = {n} too small for this grid)"
                    )));
                }
                field_bound = Some(bound);
                cfl_bound = Some(cfl);
                n_divisor = Some(n);
                dt
            }
            SolverKind::TwoscaleMesh => {
                if let Some(dt) = self.dt_override {
                    let expected = dt_h;
                    if (dt - expected).abs() > 1e-12 * expected {
                        return Err(RunnerError::Config(format!(
                            "rotated-mesh runs require dt = eps * dtau * K = {expected:.6e} exactly; got {dt:.6e} (adjust K instead)"
                        )));
                    }
                }
                dt_h
            }
            SolverKind::TwoscaleUniform => self.dt_override.unwrap_or(dt_h),
        };
        if !(dt > 0.0) {
            return Err(RunnerError::Config(format!("resolved dt must be positive, got {dt}")));
        }

        if self.solver == SolverKind::TwoscaleMesh {
            let out = self.out_grid();
            if out != grid {
                return Err(RunnerError::Config(
                    "rotated-mesh runs read out on their own mesh; the output grid must equal the working grid".into(),
                ));
            }
        }

        // Classical runs integrate to the same final time as the
        // matching two-scale run, so their step count is exactly N
        // times the two-scale one.
        let steps = match self.solver {
            SolverKind::Classical => {
                (self.t_final / dt_h).round() as usize * n_divisor.unwrap() as usize
            }
            _ => (self.t_final / dt).round() as usize,
        };
        let mut snapshot_steps: Vec<usize> = vec![0];
        for &t in &self.snapshot_times {
            let s = ((t / dt).round() as usize).min(steps);
            snapshot_steps.push(s);
        }
        snapshot_steps.push(steps);
        snapshot_steps.sort_unstable();
        snapshot_steps.dedup();

        let diag_every = if self.diag_every > 0 {
            self.diag_every
        } else {
            (steps / 2000).max(1)
        };

        Ok(Resolved {
            dt,
            dt_h,
            dtau: self.tau().dtau(),
            steps,
            n_divisor,
            field_bound,
            cfl_bound,
            snapshot_steps,
            diag_every,
        })
    }

    /// Conservative bound on `|E + Xi|` for the locality condition: the
    /// external tensions plus twice the peak initial self-field.
    fn classical_field_bound(&self) -> Result<f64, RunnerError> {
        let external =
            (self.focusing.h0 / self.focusing.eps + self.focusing.h1.max_abs()) * self.r_max;
        let self_part = if self.self_field {
            let f0 = self.initial_field()?;
            let column = solve_radial_poisson(|k, j| f0.get(k, j), &f0.grid)?;
            2.0 * column.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
        } else {
            0.0
        };
        Ok(external + self_part)
    }

    /// Initial distribution sampled on the working grid.
    pub fn initial_field(&self) -> Result<DistributionField, RunnerError> {
        let grid = self.grid();
        match &self.f0 {
            InitialDistribution::Table { path } => {
                let (field, _) = load_snapshot(Path::new(path))?;
                if field.grid != grid {
                    return Err(RunnerError::Config(format!(
                        "tabulated f0 grid {:?} does not match the working grid {:?}",
                        field.grid, grid
                    )));
                }
                Ok(field)
            }
            other => Ok(DistributionField::from_fn(grid, |p| other.sample(p).unwrap())),
        }
    }

    /// Analytic reference `f(p, t)` for linear runs, when one exists:
    /// the rigid fast rotation for an irrational frequency, and the
    /// slow-plus-fast rotation for the resonant `cos^2` cases with
    /// integer frequency `>= 2`.
    pub fn analytic_reference(&self) -> Option<AnalyticReference> {
        if self.self_field {
            return None;
        }
        let f0 = match &self.f0 {
            InitialDistribution::Table { .. } => return None,
            other => other.clone(),
        };
        let eps = self.focusing.eps;
        if !self.focusing.omega1_rational {
            return Some(AnalyticReference { f0, eps, slow_rate: 0.0, case: "nonresonant" });
        }
        let w = self.focusing.omega1;
        if self.focusing.h1 == TensionFn::CosineSquared && w >= 2.0 && w == w.round() {
            return Some(AnalyticReference { f0, eps, slow_rate: 0.25, case: "resonant" });
        }
        None
    }
}

/// Exact linear-case solution `f0(rotate(p, t/eps - slow_rate * t))`.
#[derive(Debug, Clone)]
pub struct AnalyticReference {
    f0: InitialDistribution,
    eps: f64,
    slow_rate: f64,
    pub case: &'static str,
}

impl AnalyticReference {
    pub fn eval(&self, p: PhasePoint, t: f64) -> f64 {
        let angle = t / self.eps - self.slow_rate * t;
        self.f0.sample(rotate(p, angle)).unwrap_or(0.0)
    }
}

/// Time step, step count, and schedule pinned by [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub dt: f64,
    pub dt_h: f64,
    pub dtau: f64,
    pub steps: usize,
    pub n_divisor: Option<u32>,
    pub field_bound: Option<f64>,
    pub cfl_bound: Option<f64>,
    pub snapshot_steps: Vec<usize>,
    pub diag_every: usize,
}

enum SolverState {
    Classical(ClassicalState),
    Uniform(TwoScaleUniformState),
    Mesh(TwoScaleMeshState),
}

impl SolverState {
    fn step(&mut self, cfg: &FocusingConfig, self_field: bool) -> Result<(), SolverError> {
        match self {
            SolverState::Classical(s) => *s = step_classical(s, cfg, self_field)?,
            SolverState::Uniform(s) => *s = leapfrog_step_uniform(s, cfg, self_field)?,
            SolverState::Mesh(s) => *s = step_mesh(s, cfg, self_field)?,
        }
        Ok(())
    }

    fn time(&self) -> f64 {
        match self {
            SolverState::Classical(s) => s.t,
            SolverState::Uniform(s) => s.t,
            SolverState::Mesh(s) => s.t(),
        }
    }

    fn escaped_total(&self) -> f64 {
        match self {
            SolverState::Classical(s) => s.escaped_total,
            SolverState::Uniform(s) => s.escaped_total,
            SolverState::Mesh(s) => s.escaped_total,
        }
    }

    /// Physical distribution on the output grid.
    fn readout(&self, eps: f64, out_grid: &PhaseGrid) -> Result<DistributionField, SolverError> {
        match self {
            SolverState::Classical(s) => {
                if s.f.grid == *out_grid {
                    Ok(s.f.clone())
                } else {
                    let spline = Spline2D::fit_field(&s.f)?;
                    Ok(DistributionField::from_fn(*out_grid, |p| spline.eval(p)))
                }
            }
            SolverState::Uniform(s) => Ok(reconstruct_f_uniform(&s.g_curr, eps, s.t, out_grid)?),
            SolverState::Mesh(s) => Ok(reconstruct_f_mesh(s)),
        }
    }

    /// Mass of the working distribution in physical-`f` units (the
    /// two-scale profiles carry `G = f / (2 pi)`; slice 0 stands in for
    /// the rotated-mesh family).
    fn working_mass(&self) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        match self {
            SolverState::Classical(s) => total_mass(&s.f, false),
            SolverState::Uniform(s) => two_pi * total_mass(&s.g_curr, false),
            SolverState::Mesh(s) => two_pi * total_mass(&s.slices_curr[0], false),
        }
    }

    fn per_slice_masses(&self) -> Vec<f64> {
        let two_pi = 2.0 * std::f64::consts::PI;
        match self {
            SolverState::Mesh(s) => {
                s.slices_curr.iter().map(|g| two_pi * total_mass(g, false)).collect()
            }
            SolverState::Classical(s) => vec![total_mass(&s.f, false)],
            SolverState::Uniform(s) => vec![two_pi * total_mass(&s.g_curr, false)],
        }
    }
}

/// In-memory result of a simulation run.
pub struct RunOutcome {
    pub resolved: Resolved,
    pub series: DiagnosticSeries,
    /// `(step, time, distribution on the output grid)` at the scheduled
    /// snapshot steps.
    pub snapshots: Vec<(usize, f64, DistributionField)>,
    pub final_readout: DistributionField,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub final_slice_masses: Vec<f64>,
    pub escaped_total: f64,
    pub analytic_case: Option<&'static str>,
    pub wall_seconds: f64,
}

fn build_state(config: &RunConfig, resolved: &Resolved) -> Result<SolverState, RunnerError> {
    let grid = config.grid();
    let tau = config.tau();
    let dt = resolved.dt;
    match config.solver {
        SolverKind::Classical => {
            let f0 = config.initial_field()?;
            Ok(SolverState::Classical(ClassicalState::new(f0, dt, config.self_field)?))
        }
        SolverKind::TwoscaleUniform => {
            let mut g0 = config.initial_field()?;
            g0.scale(1.0 / (2.0 * std::f64::consts::PI));
            Ok(SolverState::Uniform(init_half_step_uniform(
                g0,
                &config.focusing,
                dt,
                tau,
                config.self_field,
            )?))
        }
        SolverKind::TwoscaleMesh => {
            let state = match &config.f0 {
                InitialDistribution::Table { path } => {
                    let (field, _) = load_snapshot(Path::new(path))?;
                    let spline = Spline2D::fit_field(&field)?;
                    init_mesh_state(
                        |p| spline.eval(p),
                        grid,
                        tau,
                        &config.focusing,
                        dt,
                        config.self_field,
                    )?
                }
                other => {
                    let f0 = other.clone();
                    init_mesh_state(
                        move |p| f0.sample(p).unwrap(),
                        grid,
                        tau,
                        &config.focusing,
                        dt,
                        config.self_field,
                    )?
                }
            };
            Ok(SolverState::Mesh(state))
        }
    }
}

/// Run the configured simulation in memory.
pub fn execute(config: &RunConfig) -> Result<RunOutcome, RunnerError> {
    if config.threads == 0 {
        execute_inner(config)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| RunnerError::Config(format!("thread pool: {e}")))?;
        pool.install(|| execute_inner(config))
    }
}

struct Recorder {
    series: DiagnosticSeries,
    snapshots: Vec<(usize, f64, DistributionField)>,
    snapshot_steps: Vec<usize>,
}

impl Recorder {
    fn record(
        &mut self,
        step: usize,
        t: f64,
        readout: DistributionField,
        working_mass: f64,
        escaped: f64,
        reference: Option<&AnalyticReference>,
    ) {
        let l1 = reference.map(|r| l1_distance_to(&readout, |p| r.eval(p, t)));
        self.series.record(t, working_mass, readout.max_abs(), escaped, l1);
        if self.snapshot_steps.contains(&step) {
            self.snapshots.push((step, t, readout));
        }
    }
}

fn execute_inner(config: &RunConfig) -> Result<RunOutcome, RunnerError> {
    let started = std::time::Instant::now();
    let resolved = config.resolve()?;
    let out_grid = config.out_grid();
    let eps = config.focusing.eps;
    let reference = config.analytic_reference();

    let mut rec = Recorder {
        series: DiagnosticSeries::new(),
        snapshots: Vec::new(),
        snapshot_steps: resolved.snapshot_steps.clone(),
    };

    // step 0 reads the raw initial data (the two-scale init half-step
    // advances the solver state to level 1 before the loop starts)
    let init = initial_readout(config)?;
    let initial_mass = total_mass(&config.initial_field()?, false);
    rec.record(0, 0.0, init.clone(), initial_mass, 0.0, reference.as_ref());

    if resolved.steps == 0 {
        return Ok(RunOutcome {
            resolved,
            series: rec.series,
            snapshots: rec.snapshots,
            final_readout: init,
            initial_mass,
            final_mass: initial_mass,
            final_slice_masses: vec![initial_mass],
            escaped_total: 0.0,
            analytic_case: reference.map(|r| r.case),
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }

    let mut state = build_state(config, &resolved)?;
    if let SolverState::Classical(_) = state {
        // classical states start at level 0; the two-scale inits
        // already produced level 1
        state.step(&config.focusing, config.self_field)?;
    }
    rec.record(
        1,
        state.time(),
        state.readout(eps, &out_grid)?,
        state.working_mass(),
        state.escaped_total(),
        reference.as_ref(),
    );

    let progress_every = (resolved.steps / 20).max(1);
    for step in 2..=resolved.steps {
        state.step(&config.focusing, config.self_field)?;
        if step % resolved.diag_every == 0
            || step == resolved.steps
            || resolved.snapshot_steps.contains(&step)
        {
            rec.record(
                step,
                state.time(),
                state.readout(eps, &out_grid)?,
                state.working_mass(),
                state.escaped_total(),
                reference.as_ref(),
            );
        }
        if config.progress && (step % progress_every == 0 || step == resolved.steps) {
            eprintln!(
                "  step {step}/{} (t = {:.4}, {:.1} s)",
                resolved.steps,
                state.time(),
                started.elapsed().as_secs_f64()
            );
        }
    }

    let final_readout = state.readout(eps, &out_grid)?;
    Ok(RunOutcome {
        resolved,
        series: rec.series,
        snapshots: rec.snapshots,
        final_readout,
        initial_mass,
        final_mass: state.working_mass(),
        final_slice_masses: state.per_slice_masses(),
        escaped_total: state.escaped_total(),
        analytic_case: reference.map(|r| r.case),
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Physical readout of the raw initial data (before the init half-step).
fn initial_readout(config: &RunConfig) -> Result<DistributionField, RunnerError> {
    let out_grid = config.out_grid();
    let f0 = config.initial_field()?;
    if f0.grid == out_grid {
        Ok(f0)
    } else {
        let spline = Spline2D::fit_field(&f0)?;
        Ok(DistributionField::from_fn(out_grid, |p| spline.eval(p)))
    }
}

/// Manifest echoing the resolved parameters, written as `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub preset: Option<String>,
    pub solver: SolverKind,
    pub focusing: FocusingConfig,
    pub self_field: bool,
    pub p_r: usize,
    pub p_v: usize,
    pub r_max: f64,
    pub v_max: f64,
    pub p_tau: usize,
    pub dtau: f64,
    pub k: usize,
    pub n_divisor: Option<u32>,
    pub dt_h: f64,
    pub dt: f64,
    pub steps: usize,
    pub t_final: f64,
    pub f0: InitialDistribution,
    pub output_p: usize,
    pub output_r_max: f64,
    pub output_v_max: f64,
    pub threads: usize,
    pub analytic_case: Option<String>,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub escaped_mass_total: f64,
    pub max_l1_error: Option<f64>,
    pub snapshots: Vec<SnapshotEntry>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub index: usize,
    pub step: usize,
    pub time: f64,
    pub file: String,
}

/// Summary returned by [`run`].
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
}

/// Execute the run and write snapshots, diagnostics, and the manifest
/// into `out_dir`.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunSummary, RunnerError> {
    fs::create_dir_all(out_dir)?;
    let outcome = execute(config)?;

    let mut entries = Vec::new();
    for (index, (step, t, field)) in outcome.snapshots.iter().enumerate() {
        let file = format!("snapshot_{index:03}.csv");
        write_snapshot(&out_dir.join(&file), field, *t)?;
        entries.push(SnapshotEntry { index, step: *step, time: *t, file });
    }
    write_diagnostics(&out_dir.join("diagnostics.csv"), &outcome.series)?;

    let manifest = RunManifest {
        preset: config.preset.clone(),
        solver: config.solver,
        focusing: config.focusing.clone(),
        self_field: config.self_field,
        p_r: config.p_r,
        p_v: config.p_v,
        r_max: config.r_max,
        v_max: config.v_max,
        p_tau: config.p_tau,
        dtau: outcome.resolved.dtau,
        k: config.k,
        n_divisor: outcome.resolved.n_divisor,
        dt_h: outcome.resolved.dt_h,
        dt: outcome.resolved.dt,
        steps: outcome.resolved.steps,
        t_final: config.t_final,
        f0: config.f0.clone(),
        output_p: config.output_p,
        output_r_max: config.output_r_max,
        output_v_max: config.output_v_max,
        threads: config.threads,
        analytic_case: outcome.analytic_case.map(str::to_string),
        initial_mass: outcome.initial_mass,
        final_mass: outcome.final_mass,
        escaped_mass_total: outcome.escaped_total,
        max_l1_error: outcome.series.max_l1_error(),
        snapshots: entries,
        wall_seconds: outcome.wall_seconds,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(out_dir.join("run.json"), json + "\n")?;
    Ok(RunSummary { out_dir: out_dir.to_path_buf(), manifest })
}

/// Write one snapshot:
/// `# t=<value>`, `# grid=<P_r>x<P_vr>`, `r,v,f`, then row-major rows.
pub fn write_snapshot(path: &Path, field: &DistributionField, t: f64) -> Result<(), RunnerError> {
    let grid = field.grid;
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# t={t}")?;
    writeln!(w, "# grid={}x{}", grid.p_r, grid.p_v)?;
    writeln!(w, "r,v,f")?;
    for i in grid.i_range() {
        for j in grid.j_range() {
            let p = grid.node(i, j);
            writeln!(w, "{},{},{}", p.r, p.v, field.get(i, j))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a snapshot back; the grid is rebuilt from the header index
/// bounds and the node coordinates.
pub fn load_snapshot(path: &Path) -> Result<(DistributionField, f64), RunnerError> {
    let text = fs::read_to_string(path)?;
    let parse_err = |message: String| RunnerError::Parse {
        path: path.display().to_string(),
        message,
    };
    let mut lines = text.lines();
    let t_line = lines.next().ok_or_else(|| parse_err("empty file".into()))?;
    let t: f64 = t_line
        .strip_prefix("# t=")
        .ok_or_else(|| parse_err(format!("expected '# t=', got '{t_line}'")))?
        .parse()
        .map_err(|e| parse_err(format!("bad time: {e}")))?;
    let g_line = lines.next().ok_or_else(|| parse_err("missing grid header".into()))?;
    let dims = g_line
        .strip_prefix("# grid=")
        .ok_or_else(|| parse_err(format!("expected '# grid=', got '{g_line}'")))?;
    let (p_r, p_v) = dims
        .split_once('x')
        .ok_or_else(|| parse_err("grid header needs PxP".into()))?;
    let p_r: usize = p_r.parse().map_err(|e| parse_err(format!("bad P_r: {e}")))?;
    let p_v: usize = p_v.parse().map_err(|e| parse_err(format!("bad P_vr: {e}")))?;
    let header = lines.next();
    if header != Some("r,v,f") {
        return Err(parse_err(format!("expected 'r,v,f' header, got {header:?}")));
    }

    let n_r = 2 * p_r + 1;
    let n_v = 2 * p_v + 1;
    let mut rows = Vec::with_capacity(n_r * n_v);
    let mut max_r: f64 = 0.0;
    let mut max_v: f64 = 0.0;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let r: f64 = parts
            .next()
            .ok_or_else(|| parse_err("short row".into()))?
            .parse()
            .map_err(|e| parse_err(format!("bad r: {e}")))?;
        let v: f64 = parts
            .next()
            .ok_or_else(|| parse_err("short row".into()))?
            .parse()
            .map_err(|e| parse_err(format!("bad v: {e}")))?;
        let f: f64 = parts
            .next()
            .ok_or_else(|| parse_err("short row".into()))?
            .parse()
            .map_err(|e| parse_err(format!("bad f: {e}")))?;
        max_r = max_r.max(r.abs());
        max_v = max_v.max(v.abs());
        rows.push(f);
    }
    if rows.len() != n_r * n_v {
        return Err(parse_err(format!("expected {} rows, got {}", n_r * n_v, rows.len())));
    }
    // extreme node is at R * P / (P + 1)
    let r_max = max_r * (p_r as f64 + 1.0) / p_r as f64;
    let v_max = max_v * (p_v as f64 + 1.0) / p_v as f64;
    let grid = PhaseGrid::new(r_max, v_max, p_r, p_v);
    Ok((DistributionField::from_values(grid, rows)?, t))
}

fn write_diagnostics(path: &Path, series: &DiagnosticSeries) -> Result<(), RunnerError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t,l1_error,mass,escaped_mass,max_abs")?;
    for k in 0..series.len() {
        let l1 = series.l1_error[k].map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            series.times[k], l1, series.mass[k], series.escaped_mass[k], series.max_abs[k]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Comparison target for [`compare`].
pub enum CompareTarget<'a> {
    /// Another run directory with matching output grids.
    Run(&'a Path),
    /// Analytic linear-case reference named `nonresonant` or
    /// `resonant`, built from the manifest of the compared run.
    Analytic(&'a str),
}

/// Report of a snapshot-by-snapshot comparison.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub rows: Vec<(f64, f64)>,
    pub max_l1: f64,
    pub final_l1: f64,
}

/// Compare the snapshots of run `a` against another run or an analytic
/// reference; writes `compare.csv` into `a` and returns the report.
pub fn compare(a_dir: &Path, target: CompareTarget) -> Result<CompareReport, RunnerError> {
    let manifest_a = read_manifest(a_dir)?;
    let mut rows = Vec::new();
    match target {
        CompareTarget::Run(b_dir) => {
            let manifest_b = read_manifest(b_dir)?;
            if manifest_a.snapshots.len() != manifest_b.snapshots.len() {
                return Err(RunnerError::Config(format!(
                    "snapshot counts differ: {} vs {}",
                    manifest_a.snapshots.len(),
                    manifest_b.snapshots.len()
                )));
            }
            for (ea, eb) in manifest_a.snapshots.iter().zip(&manifest_b.snapshots) {
                let (fa, ta) = load_snapshot(&a_dir.join(&ea.file))?;
                let (fb, _) = load_snapshot(&b_dir.join(&eb.file))?;
                if fa.grid != fb.grid {
                    return Err(RunnerError::Geometry(GeometryError::GridMismatch));
                }
                let l1 = crate::diagnostics::l1_distance(&fa, &fb)?;
                rows.push((ta, l1));
            }
        }
        CompareTarget::Analytic(case) => {
            let config = manifest_to_config(&manifest_a);
            let reference = config.analytic_reference().ok_or_else(|| {
                RunnerError::Config(
                    "run has no analytic reference (nonlinear, tabulated f0, or unsupported case)"
                        .into(),
                )
            })?;
            if reference.case != case {
                return Err(RunnerError::Config(format!(
                    "requested analytic case '{case}' but the run's linear case is '{}'",
                    reference.case
                )));
            }
            for entry in &manifest_a.snapshots {
                let (fa, ta) = load_snapshot(&a_dir.join(&entry.file))?;
                rows.push((ta, l1_distance_to(&fa, |p| reference.eval(p, ta))));
            }
        }
    }
    let max_l1 = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let final_l1 = rows.last().map(|r| r.1).unwrap_or(0.0);

    let mut w = BufWriter::new(fs::File::create(a_dir.join("compare.csv"))?);
    writeln!(w, "# max_l1={max_l1}")?;
    writeln!(w, "# final_l1={final_l1}")?;
    writeln!(w, "t,l1")?;
    for (t, l1) in &rows {
        writeln!(w, "{t},{l1}")?;
    }
    w.flush()?;
    Ok(CompareReport { rows, max_l1, final_l1 })
}

fn read_manifest(dir: &Path) -> Result<RunManifest, RunnerError> {
    let text = fs::read_to_string(dir.join("run.json"))?;
    Ok(serde_json::from_str(&text)?)
}

fn manifest_to_config(m: &RunManifest) -> RunConfig {
    RunConfig {
        preset: m.preset.clone(),
        solver: m.solver,
        focusing: m.focusing.clone(),
        self_field: m.self_field,
        p_r: m.p_r,
        p_v: m.p_v,
        r_max: m.r_max,
        v_max: m.v_max,
        p_tau: m.p_tau,
        k: m.k,
        n_divisor: m.n_divisor,
        dt_override: None,
        f0: m.f0.clone(),
        t_final: m.t_final,
        snapshot_times: Vec::new(),
        output_p: m.output_p,
        output_r_max: m.output_r_max,
        output_v_max: m.output_v_max,
        threads: m.threads,
        diag_every: 0,
        progress: false,
    }
}

/// One row of a convergence study: time step, final-time error, and
/// the ratio to the previous (coarser) row.
#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub dt: f64,
    pub steps: usize,
    pub l1_error: f64,
    pub ratio: Option<f64>,
}

/// Halve the time step `halvings - 1` times starting from
/// `2^(halvings-1)` times the configured step, run each to the same
/// final time, and report final-time errors against the analytic
/// reference. Requires a linear configuration with a known solution.
pub fn error_study(
    config: &RunConfig,
    halvings: usize,
    t_cap: Option<f64>,
) -> Result<Vec<StudyRow>, RunnerError> {
    if halvings == 0 {
        return Err(RunnerError::Config("halvings must be at least 1".into()));
    }
    if config.analytic_reference().is_none() {
        return Err(RunnerError::Config(
            "error studies need a linear configuration with an analytic reference".into(),
        ));
    }
    let t_target = t_cap.unwrap_or(config.t_final);
    let coarse_factor = 1usize << (halvings - 1);
    let base = config.resolve()?;
    // Every level must end at the same instant. Classical ladders run
    // downward from the configured step (coarser ones would break the
    // locality bound), so their common time is a multiple of dt_H; the
    // two-scale ladders start 2^(halvings-1) times coarser.
    let t_study = match config.solver {
        SolverKind::Classical => (t_target / base.dt_h).round().max(1.0) * base.dt_h,
        _ => {
            let dt_max = base.dt * coarse_factor as f64;
            ((t_target / dt_max).round().max(1.0)) * dt_max
        }
    };

    let mut rows: Vec<StudyRow> = Vec::new();
    for level in 0..halvings {
        let factor = coarse_factor >> level;
        let mut cfg = config.clone();
        cfg.t_final = t_study;
        cfg.snapshot_times = Vec::new();
        match config.solver {
            SolverKind::Classical => {
                let n = base.n_divisor.unwrap() * (coarse_factor / factor).max(1) as u32;
                // coarse runs would violate the locality bound; study
                // downward from the configured step instead
                cfg.n_divisor = Some(n);
            }
            SolverKind::TwoscaleMesh => {
                cfg.k = config.k * factor;
            }
            SolverKind::TwoscaleUniform => {
                cfg.dt_override = Some(base.dt * factor as f64);
            }
        }
        let resolved = cfg.resolve()?;
        let outcome = execute(&cfg)?;
        let reference = cfg.analytic_reference().unwrap();
        let err = l1_distance_to(&outcome.final_readout, |p| reference.eval(p, t_study));
        let ratio = rows.last().map(|prev: &StudyRow| prev.l1_error / err);
        rows.push(StudyRow { dt: resolved.dt, steps: resolved.steps, l1_error: err, ratio });
    }
    Ok(rows)
}
