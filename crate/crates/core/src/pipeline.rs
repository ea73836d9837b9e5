//! End-to-end runs driven by a [`RunConfig`].

use std::io::Write;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Result;
use crate::grid::JointDensityGrid;
use crate::integrator::{run_to_time, LatticeDomain, RunOutcome};
use crate::maxent::{assemble_joint, conditional_problems, reconstruct_all, Method, Reconstruction};
use crate::oracles::{cme_solve, initial_law, ssa_simulate, CmeConfig, SsaConfig, SsaOutcome};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MaxEntStats {
    pub problems: usize,
    pub maxent: usize,
    pub below_floor: usize,
    pub two_point: usize,
    pub mean_only: usize,
    pub point_mass: usize,
    pub max_iterations: usize,
    pub total_iterations: usize,
    pub max_residual: f64,
}

impl MaxEntStats {
    pub fn from_reconstructions(recs: &[Reconstruction]) -> Self {
        let mut s = MaxEntStats {
            problems: recs.len(),
            ..Default::default()
        };
        for r in recs {
            match r.method {
                Method::MaxEnt => s.maxent += 1,
                Method::BelowFloor => s.below_floor += 1,
                Method::TwoPoint => s.two_point += 1,
                Method::MeanOnly => s.mean_only += 1,
                Method::PointMass => s.point_mass += 1,
            }
            s.max_iterations = s.max_iterations.max(r.solution.iterations);
            s.total_iterations += r.solution.iterations;
            if r.method == Method::MaxEnt {
                s.max_residual = s.max_residual.max(r.solution.residual);
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct HmeRun {
    pub outcome: RunOutcome,
    pub reconstructions: Vec<Reconstruction>,
    pub warnings: Vec<String>,
    pub joint: JointDensityGrid,
    pub maxent_stats: MaxEntStats,
}

/// Moment integration, fast-grid construction and reconstruction.
pub fn solve_hme(cfg: &RunConfig, diagnostics: Option<&mut dyn Write>) -> Result<HmeRun> {
    cfg.validate()?;
    let outcome = run_to_time(&cfg.network, &cfg.solver, &cfg.domain, diagnostics)?;
    let problems = conditional_problems(&outcome.field, &outcome.domain, cfg.maxent.mass_floor);
    let reconstructions = reconstruct_all(&problems, cfg.maxent.tol, cfg.maxent.max_iter);
    let joint = assemble_joint(
        &reconstructions,
        cfg.solver.tau,
        outcome.domain.slow_dims(),
        outcome.domain.fast_dims(),
    );
    let maxent_stats = MaxEntStats::from_reconstructions(&reconstructions);
    Ok(HmeRun {
        outcome,
        reconstructions,
        warnings: problems.warnings,
        joint,
        maxent_stats,
    })
}

/// Dense master equation over `Omega` with the solver's step size.
pub fn solve_cme(cfg: &RunConfig) -> Result<JointDensityGrid> {
    cfg.validate()?;
    let domain = LatticeDomain::initial(&cfg.network, cfg.domain.clone())?;
    let init = initial_law(&domain, cfg.oracle.initial, &cfg.solver)?;
    let cme = CmeConfig {
        delta: cfg.solver.delta,
        tau: cfg.solver.tau,
        scheme: cfg.oracle.cme_scheme,
        printed_fast_gain: cfg.oracle.printed_fast_gain,
    };
    cme_solve(&cfg.network, &domain, &init, &cme)
}

/// SSA from the same initial law as the CME, capped to `Omega`.
pub fn simulate_ssa(cfg: &RunConfig) -> Result<SsaOutcome> {
    cfg.validate()?;
    let domain = LatticeDomain::initial(&cfg.network, cfg.domain.clone())?;
    let init = initial_law(&domain, cfg.oracle.initial, &cfg.solver)?;
    let ssa = SsaConfig {
        tau: cfg.solver.tau,
        n_traj: cfg.oracle.n_traj,
        seed: cfg.oracle.seed,
        caps: Some((cfg.domain.slow_caps.clone(), cfg.domain.fast_caps.clone())),
    };
    ssa_simulate(&cfg.network, &init, &ssa)
}
