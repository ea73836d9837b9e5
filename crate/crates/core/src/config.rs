//! Run configuration, read from TOML.
//!
//! ```toml
//! [network]
//! species = ["S1", "S2"]
//! initial_state = [50, 0]
//!
//! [[network.reactions]]
//! name = "R1"
//! rate_constant = 0.2
//! reactant_orders = [1, 0]
//! stoichiometry = [-2, 2]
//! tier = "slow"
//!
//! [solver]
//! tau = 1.0
//!
//! [domain]
//! slow_caps = [30]
//! fast_caps = [30]
//! initial_slow_caps = [8]
//! initial_fast_caps = [8]
//! ```
//!
//! The `network`, `solver.tau` and `domain` entries are required; the
//! `maxent`, `output`, `oracle` and `compare` sections are optional.
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{DomainSpec, Scheme, SolverConfig};
use crate::maxent::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::network::{ensure_valid, ReactionNetwork, ValidationMode};
use crate::oracles::InitialLaw;

const REQUIRED: &[&str] = &[
    "network.species",
    "network.initial_state",
    "network.reactions",
    "solver.tau",
    "domain.slow_caps",
    "domain.fast_caps",
    "domain.initial_slow_caps",
    "domain.initial_fast_caps",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaxEntConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub mass_floor: f64,
}

impl Default for MaxEntConfig {
    fn default() -> Self {
        MaxEntConfig {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            mass_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a per-step `diagnostics_tau<tau>.csv` next to the grids.
    pub diagnostics: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            diagnostics: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub n_traj: u64,
    pub seed: u64,
    pub initial: InitialLaw,
    pub cme_scheme: Scheme,
    pub printed_fast_gain: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n_traj: 100_000,
            seed: 20_240_601,
            initial: InitialLaw::Poisson,
            cme_scheme: Scheme::Euler,
            printed_fast_gain: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Exit with a threshold failure when the TV distance exceeds this.
    pub max_tv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: ReactionNetwork,
    pub solver: SolverConfig,
    pub domain: DomainSpec,
    #[serde(default)]
    pub maxent: MaxEntConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn lookup<'a>(doc: &'a toml::Table, path: &str) -> Option<&'a toml::Value> {
    let mut parts = path.split('.');
    let mut cur = doc.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Strict parse followed by validation.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let missing: Vec<&str> = REQUIRED
        .iter()
        .copied()
        .filter(|p| lookup(&doc, p).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "missing required fields: {}",
            missing.join(", ")
        )));
    }
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.solver.mass_floor = cfg.maxent.mass_floor;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_valid(&self.network, ValidationMode::Hybrid)?;
        self.solver.validate()?;
        let slow = self.network.slow_reactions().len();
        let fast = self.network.fast_reactions().len();
        self.domain.validate(slow, fast)?;
        if !(self.maxent.tol > 0.0) || self.maxent.max_iter == 0 {
            return Err(Error::Config("maxent.tol must be > 0 and maxent.max_iter >= 1".into()));
        }
        if self.oracle.n_traj == 0 {
            return Err(Error::Config("oracle.n_traj must be >= 1".into()));
        }
        if let Some(t) = self.compare.max_tv {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config("compare.max_tv must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Applies a `tau` override and revalidates.
    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        self.solver.tau = tau;
        self.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUNDLED: &str = include_str!("../configs/paper_example.cfg");

    #[test]
    fn bundled_config_is_the_example() {
        let cfg = parse_config(BUNDLED).unwrap();
        assert_eq!(cfg.network, ReactionNetwork::conversion_cycle(0.2, 0.4, [50.0, 0.0]));
        assert_eq!(cfg.solver.delta, 1e-4);
        assert_eq!(cfg.solver.epsilon_expand, 1e-6);
        assert_eq!(cfg.solver.epsilon_sigma, 2.0);
        assert_eq!(cfg.domain.slow_caps, vec![30]);
        assert_eq!(cfg.domain.fast_caps, vec![30]);
        assert_eq!(cfg.domain.initial_slow_caps, vec![8]);
        assert_eq!(cfg.domain.initial_fast_caps, vec![8]);
        assert_eq!(cfg.solver.mass_floor, 1e-12);
    }

    #[test]
    fn empty_document_lists_required_fields() {
        let err = parse_config("").unwrap_err().to_string();
        for field in REQUIRED {
            assert!(err.contains(field), "{err}");
        }
    }

    #[test]
    fn zero_tau_is_rejected() {
        let text = BUNDLED.replace("tau = 1.0", "tau = 0.0");
        assert!(parse_config(&text).unwrap_err().is_config());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = BUNDLED.replace("[solver]", "[solver]\nstep_size = 3");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("step_size"), "{err}");
        let text = format!("{BUNDLED}\n[extra]\nx = 1\n");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config("[network\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn tau_override() {
        let cfg = parse_config(BUNDLED).unwrap().with_tau(0.5).unwrap();
        assert_eq!(cfg.solver.steps(), 5000);
        assert!(parse_config(BUNDLED).unwrap().with_tau(-1.0).is_err());
    }
}
