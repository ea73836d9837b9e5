use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hme::config::{load_config, RunConfig};
use hme::grid::JointDensityGrid;
use hme::oracles::{compare_grids, RNG_ALGORITHM};
use hme::output::*;
use hme::pipeline::{simulate_ssa, solve_cme, solve_hme};
use hme::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_THRESHOLD: u8 = 4;

#[derive(Parser)]
#[command(name = "hme", version, about = "Hybrid master equation solver and oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the moment system and reconstruct the joint density.
    SolveHme(RunArgs),
    /// Integrate the dense master equation on the full lattice.
    SolveCme(RunArgs),
    /// Simulate the counting process and write the empirical law.
    Ssa(RunArgs),
    /// Compare two grid files.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_traj: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    grid_a: PathBuf,
    grid_b: PathBuf,
    /// Supplies `compare.max_tv`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_tv: Option<f64>,
    /// Directory for `compare_report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Error(Error),
    Threshold(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn load(args: &RunArgs) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(tau) = args.tau {
        cfg = cfg.with_tau(tau)?;
    }
    if let Some(seed) = args.seed {
        cfg.oracle.seed = seed;
    }
    if let Some(n) = args.n_traj {
        cfg.oracle.n_traj = n;
    }
    cfg.validate()?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

fn write_meta(out: &Path, command: &str, cfg: &RunConfig, status: &str, extra: serde_json::Value) -> Result<(), Error> {
    let meta = json!({
        "command": command,
        "status": status,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "mass_floor": cfg.solver.mass_floor,
        "results": extra,
    });
    write_json(&out.join(run_meta_name(command, cfg.solver.tau)), &meta)
}

fn solve_hme_cmd(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out) = load(args)?;
    let tau = cfg.solver.tau;
    write_meta(&out, "solve-hme", &cfg, "running", json!(null))?;
    let run = if cfg.output.diagnostics {
        let path = out.join(diagnostics_name(tau));
        let file = File::create(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        let run = solve_hme(&cfg, Some(&mut w))?;
        w.flush().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        run
    } else {
        solve_hme(&cfg, None)?
    };
    write_atomic(&out.join(hme_grid_name(tau)), run.joint.to_text().as_bytes())?;
    write_atomic(&out.join(marginals_name(tau)), marginals_csv(&run.outcome.field).as_bytes())?;
    write_atomic(&out.join(domain_name(tau)), domain_csv(&run.outcome.domain).as_bytes())?;
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    let fallbacks: Vec<_> = run
        .reconstructions
        .iter()
        .filter(|r| r.fallback_reason.is_some())
        .map(|r| json!({"d": r.d, "method": r.method, "reason": r.fallback_reason}))
        .collect();
    write_meta(
        &out,
        "solve-hme",
        &cfg,
        "complete",
        json!({
            "run": run.outcome.stats,
            "slow_states": run.outcome.domain.slow_len(),
            "expansions": run.outcome.domain.expansion_log(),
            "maxent": run.maxent_stats,
            "maxent_fallbacks": fallbacks,
            "warnings": run.warnings,
            "joint_total_mass": run.joint.total_mass(),
        }),
    )?;
    println!(
        "solve-hme tau={tau}: {} slow states, total mass {:.12}, maxent {}/{} exact, outputs in {}",
        run.outcome.domain.slow_len(),
        run.outcome.stats.final_total_mass,
        run.maxent_stats.maxent,
        run.maxent_stats.problems,
        out.display()
    );
    Ok(())
}

fn solve_cme_cmd(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out) = load(args)?;
    let tau = cfg.solver.tau;
    write_meta(&out, "solve-cme", &cfg, "running", json!(null))?;
    let grid = solve_cme(&cfg)?;
    write_atomic(&out.join(cme_grid_name(tau)), grid.to_text().as_bytes())?;
    write_meta(&out, "solve-cme", &cfg, "complete", json!({"total_mass": grid.total_mass(), "points": grid.len()}))?;
    println!("solve-cme tau={tau}: {} points, total mass {:.12}", grid.len(), grid.total_mass());
    Ok(())
}

fn ssa_cmd(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out) = load(args)?;
    let tau = cfg.solver.tau;
    write_meta(&out, "ssa", &cfg, "running", json!(null))?;
    let res = simulate_ssa(&cfg)?;
    write_atomic(&out.join(ssa_grid_name(tau)), res.grid.to_text().as_bytes())?;
    write_meta(
        &out,
        "ssa",
        &cfg,
        "complete",
        json!({
            "rng": RNG_ALGORITHM,
            "seed": cfg.oracle.seed,
            "n_traj": cfg.oracle.n_traj,
            "stalled": res.stalled,
            "events": res.events,
        }),
    )?;
    println!("ssa tau={tau}: {} trajectories, {} distinct end states", cfg.oracle.n_traj, res.grid.len());
    Ok(())
}

fn compare_cmd(args: &CompareArgs) -> Result<(), Failure> {
    let a = JointDensityGrid::read(&args.grid_a)?;
    let b = JointDensityGrid::read(&args.grid_b)?;
    let mut max_tv = match &args.config {
        Some(p) => load_config(p)?.compare.max_tv,
        None => None,
    };
    if args.max_tv.is_some() {
        max_tv = args.max_tv;
    }
    let report = compare_grids(&a, &b)?;
    println!("total variation: {:.6}", report.total_variation);
    println!("marginal L1: {:.6}", report.marginal_l1);
    println!(
        "modes: {:?} / {:?} ({})",
        report.mode_a.as_ref().map(|p| (&p.d, &p.c)),
        report.mode_b.as_ref().map(|p| (&p.d, &p.c)),
        if report.same_mode { "same" } else { "different" }
    );
    for s in &report.states {
        println!(
            "  d={:?} marginal gap {:+.3e} mean gap {:?} var gap {:?}",
            s.d, s.marginal_gap, s.mean_gap, s.variance_gap
        );
    }
    let passed = max_tv.map(|t| report.total_variation <= t);
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    write_json(
        &out.join("compare_report.json"),
        &json!({
            "grid_a": args.grid_a,
            "grid_b": args.grid_b,
            "max_tv": max_tv,
            "passed": passed,
            "report": report,
        }),
    )?;
    match (max_tv, passed) {
        (Some(t), Some(true)) => {
            println!("PASS total variation <= {t}");
            Ok(())
        }
        (Some(t), _) => Err(Failure::Threshold(format!(
            "FAIL total variation {:.6} > {t}",
            report.total_variation
        ))),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SolveHme(a) => solve_hme_cmd(a),
        Command::SolveCme(a) => solve_cme_cmd(a),
        Command::Ssa(a) => ssa_cmd(a),
        Command::Compare(a) => compare_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Threshold(msg)) => {
            println!("{msg}");
            ExitCode::from(EXIT_THRESHOLD)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            let input = matches!(e, Error::GridFormat { .. } | Error::Io { .. });
            ExitCode::from(if e.is_config() || input { EXIT_CONFIG } else { EXIT_NUMERIC })
        }
    }
}
