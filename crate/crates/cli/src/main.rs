//! Command-line front end: run a named preset (optionally overridden
//! field-by-field from a JSON config), compare two run directories or a
//! run against its analytic linear-case solution, and run time-step
//! convergence studies.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::fs;
use std::path::PathBuf;
use tsbeam::runner::{compare, error_study, run, CompareTarget, ConfigOverlay, RunConfig};

#[derive(Parser)]
#[command(name = "tsbeam", version, about = "Semi-Lagrangian beam solvers in a periodic focusing channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation preset, writing snapshots, diagnostics, and a
    /// manifest into the output directory.
    Run {
        /// Preset name: I, II, II', II'', III, III', IV, IV'
        /// (optionally suffixed :cos or :cos2).
        #[arg(long)]
        preset: String,
        /// JSON file overriding individual preset fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads (0 = all available).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Compare the snapshots of run --a against run --b or against an
    /// analytic linear-case solution.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long, conflicts_with = "analytic")]
        b: Option<PathBuf>,
        /// Analytic case: nonresonant | resonant.
        #[arg(long)]
        analytic: Option<String>,
    },
    /// Convergence-ratio report: rerun a linear preset with halved
    /// time steps and print final-time errors.
    ErrorStudy {
        #[arg(long)]
        preset: String,
        /// Number of time-step levels (each half the previous).
        #[arg(long, default_value_t = 3)]
        halvings: usize,
        /// JSON file overriding individual preset fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cap the study's final time (defaults to the preset's).
        #[arg(long)]
        t_final: Option<f64>,
        /// Optional CSV report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(preset: &str, overlay_path: Option<&PathBuf>) -> Result<RunConfig> {
    let mut config = RunConfig::from_preset(preset)
        .with_context(|| format!("loading preset '{preset}'"))?;
    if let Some(path) = overlay_path {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let overlay: ConfigOverlay = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.apply_overlay(&overlay);
    }
    Ok(config)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { preset, config, out, threads } => {
            let mut cfg = load_config(&preset, config.as_ref())?;
            cfg.threads = threads;
            cfg.progress = true;
            let resolved = cfg.resolve()?;
            eprintln!(
                "preset {preset}: {:?}, dt = {:.6e}, {} steps to t = {}",
                cfg.solver, resolved.dt, resolved.steps, cfg.t_final
            );
            let summary = run(&cfg, &out)?;
            let m = &summary.manifest;
            println!("wrote {}", summary.out_dir.display());
            println!("  dt = {:.6e}  steps = {}  dt_H = {:.6e}", m.dt, m.steps, m.dt_h);
            if let Some(n) = m.n_divisor {
                println!("  N = {n} (classical/two-scale step ratio)");
            }
            println!(
                "  mass {} -> {} (drift {:.3e}), escaped {:.3e}",
                m.initial_mass,
                m.final_mass,
                ((m.final_mass - m.initial_mass) / m.initial_mass).abs(),
                m.escaped_mass_total
            );
            if let Some(err) = m.max_l1_error {
                println!("  max L1 error vs {} solution: {err:.6e}", m.analytic_case.as_deref().unwrap_or("analytic"));
            }
        }
        Command::Compare { a, b, analytic } => {
            let target = match (&b, &analytic) {
                (Some(b), None) => CompareTarget::Run(b),
                (None, Some(case)) => CompareTarget::Analytic(case),
                _ => bail!("specify exactly one of --b or --analytic"),
            };
            let report = compare(&a, target)?;
            println!("wrote {}", a.join("compare.csv").display());
            println!("  snapshots = {}", report.rows.len());
            println!("  max L1 = {:.6e}", report.max_l1);
            println!("  final L1 = {:.6e}", report.final_l1);
        }
        Command::ErrorStudy { preset, halvings, config, t_final, out } => {
            let cfg = load_config(&preset, config.as_ref())?;
            let rows = error_study(&cfg, halvings, t_final)?;
            println!("dt,steps,l1_error,ratio");
            let mut report = String::from("dt,steps,l1_error,ratio\n");
            for row in &rows {
                let ratio = row.ratio.map(|r| format!("{r:.3}")).unwrap_or_default();
                println!("{:.6e},{},{:.6e},{}", row.dt, row.steps, row.l1_error, ratio);
                report.push_str(&format!("{},{},{},{}\n", row.dt, row.steps, row.l1_error, ratio));
            }
            if let Some(path) = out {
                fs::write(&path, report)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
