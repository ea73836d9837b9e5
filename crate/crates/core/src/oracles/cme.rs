//! Dense master equation on the truncated counting lattice.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{JointDensityGrid, LatticePoint};
use crate::integrator::{poisson_initial_grid, LatticeDomain, Scheme, SolverConfig};
use crate::network::{decompose_propensity, propensity, ReactionNetwork};

use super::jump;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialLaw {
    /// Unit mass at `(0, 0)`.
    Origin,
    /// The Poisson law on `Omega0` used by the moment solver.
    #[default]
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmeConfig {
    pub delta: f64,
    pub tau: f64,
    pub scheme: Scheme,
    /// Use `p(d, c)` in the gain term of fast reactions instead of
    /// `p(d, c - e_j)`. Fast jumps then cancel out exactly.
    pub printed_fast_gain: bool,
}

impl Default for CmeConfig {
    fn default() -> Self {
        CmeConfig {
            delta: 1e-4,
            tau: 1.0,
            scheme: Scheme::Euler,
            printed_fast_gain: false,
        }
    }
}

/// Initial joint law on the lattice.
pub fn initial_law(
    domain: &LatticeDomain,
    law: InitialLaw,
    solver: &SolverConfig,
) -> Result<JointDensityGrid> {
    match law {
        InitialLaw::Poisson => poisson_initial_grid(domain, solver),
        InitialLaw::Origin => {
            let point = LatticePoint::new(vec![0; domain.slow_dims()], vec![0; domain.fast_dims()]);
            if !domain.in_omega(&point.d, &point.c) {
                return Err(Error::EmptyDomain);
            }
            let mut g = JointDensityGrid::new(0.0, domain.slow_dims(), domain.fast_dims());
            g.insert(point, 1.0);
            Ok(g)
        }
    }
}

struct Transition {
    src: usize,
    dst: usize,
    rate: f64,
}

fn derivative(n: usize, transitions: &[Transition], p: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for t in transitions {
        let flux = t.rate * p[t.src];
        out[t.src] -= flux;
        out[t.dst] += flux;
    }
    debug_assert_eq!(out.len(), n);
}

/// Integrates the master equation over every point of `Omega` from
/// `initial` to `cfg.tau`.
pub fn cme_solve(
    net: &ReactionNetwork,
    domain: &LatticeDomain,
    initial: &JointDensityGrid,
    cfg: &CmeConfig,
) -> Result<JointDensityGrid> {
    if !(cfg.delta > 0.0) || !(cfg.tau >= 0.0) {
        return Err(Error::Config("cme delta must be > 0 and tau >= 0".into()));
    }
    let decomp = decompose_propensity(net);
    let points = domain.omega_points();
    let index: HashMap<&LatticePoint, usize> = points.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let n = points.len();

    let mut p = vec![0.0; n];
    for (pt, mass) in initial.iter() {
        let i = *index.get(pt).ok_or_else(|| {
            Error::Config(format!("initial mass at {pt:?} lies outside the lattice"))
        })?;
        p[i] += mass;
    }

    let mut transitions = Vec::new();
    for (i, pt) in points.iter().enumerate() {
        let cf: Vec<f64> = pt.c.iter().map(|&v| v as f64).collect();
        for k in 0..net.reactions.len() {
            let fast = decomp.fast_reactions().contains(&k);
            if fast && cfg.printed_fast_gain {
                continue;
            }
            let (d2, c2) = jump(&decomp, k, &pt.d, &pt.c);
            let Some(&j) = index.get(&LatticePoint::new(d2, c2)) else {
                continue;
            };
            let rate = propensity(net, &decomp, k, &pt.d, &cf)?;
            if rate > 0.0 {
                transitions.push(Transition { src: i, dst: j, rate });
            }
        }
    }

    let steps = (cfg.tau / cfg.delta).round() as usize;
    let h = cfg.delta;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for step in 1..=steps {
        match cfg.scheme {
            Scheme::Euler => {
                derivative(n, &transitions, &p, &mut k1);
                p.iter_mut().zip(&k1).for_each(|(x, r)| *x += h * r);
            }
            Scheme::Rk4 => {
                derivative(n, &transitions, &p, &mut k1);
                tmp.iter_mut().zip(p.iter().zip(&k1)).for_each(|(t, (x, r))| *t = x + 0.5 * h * r);
                derivative(n, &transitions, &tmp, &mut k2);
                tmp.iter_mut().zip(p.iter().zip(&k2)).for_each(|(t, (x, r))| *t = x + 0.5 * h * r);
                derivative(n, &transitions, &tmp, &mut k3);
                tmp.iter_mut().zip(p.iter().zip(&k3)).for_each(|(t, (x, r))| *t = x + h * r);
                derivative(n, &transitions, &tmp, &mut k4);
                for i in 0..n {
                    p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        if let Some(i) = p.iter().position(|v| !v.is_finite()) {
            return Err(Error::Instability {
                step,
                what: format!("lattice point {:?}", points[i]),
            });
        }
    }

    let mut grid = JointDensityGrid::new(cfg.tau, domain.slow_dims(), domain.fast_dims());
    for (pt, v) in points.into_iter().zip(p) {
        grid.insert(pt, v);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::DomainSpec;
    use crate::network::{KineticsForm, Reaction, Tier};

    fn example_domain() -> (ReactionNetwork, LatticeDomain) {
        let net = ReactionNetwork::conversion_cycle(0.2, 0.4, [50.0, 0.0]);
        let spec = DomainSpec {
            slow_caps: vec![30],
            fast_caps: vec![30],
            initial_slow_caps: vec![8],
            initial_fast_caps: vec![8],
        };
        let domain = LatticeDomain::initial(&net, spec).unwrap();
        (net, domain)
    }

    fn birth(rate: f64) -> ReactionNetwork {
        ReactionNetwork {
            species: vec!["A".into()],
            initial_state: vec![0.0],
            reactions: vec![Reaction {
                name: "birth".into(),
                rate_constant: rate,
                reactant_orders: vec![0],
                stoichiometry: vec![1],
                tier: Tier::Slow,
                kinetics: KineticsForm::PowerLaw,
            }],
        }
    }

    #[test]
    fn zero_time_returns_initial() {
        let (net, domain) = example_domain();
        let init = initial_law(&domain, InitialLaw::Poisson, &SolverConfig::default()).unwrap();
        let cfg = CmeConfig { tau: 0.0, ..Default::default() };
        let out = cme_solve(&net, &domain, &init, &cfg).unwrap();
        for (pt, v) in out.iter() {
            assert_eq!(v, init.get(pt));
        }
    }

    #[test]
    fn pure_birth_is_poisson() {
        let net = birth(2.0);
        let spec = DomainSpec {
            slow_caps: vec![40],
            fast_caps: vec![],
            initial_slow_caps: vec![0],
            initial_fast_caps: vec![],
        };
        let domain = LatticeDomain::initial(&net, spec).unwrap();
        let init = initial_law(&domain, InitialLaw::Origin, &SolverConfig::default()).unwrap();
        let cfg = CmeConfig { tau: 1.5, delta: 1e-3, scheme: Scheme::Rk4, ..Default::default() };
        let out = cme_solve(&net, &domain, &init, &cfg).unwrap();
        let lt: f64 = 3.0;
        let mut pmf = (-lt).exp();
        for k in 0..30 {
            let got = out.get(&LatticePoint::new(vec![k], vec![]));
            assert!((got - pmf).abs() < 1e-10, "{k}: {got} vs {pmf}");
            pmf *= lt / (k + 1) as f64;
        }
        assert!((out.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn example_conserves_mass() {
        let (net, domain) = example_domain();
        let init = initial_law(&domain, InitialLaw::Poisson, &SolverConfig::default()).unwrap();
        let cfg = CmeConfig { tau: 0.2, ..Default::default() };
        let out = cme_solve(&net, &domain, &init, &cfg).unwrap();
        assert!((out.total_mass() - 1.0).abs() < 1e-9 * 0.2 + 1e-13);
        assert!(out.iter().all(|(_, v)| v >= 0.0));
    }

    #[test]
    fn printed_gain_freezes_fast_counter() {
        let (net, domain) = example_domain();
        let init = initial_law(&domain, InitialLaw::Origin, &SolverConfig::default()).unwrap();
        let cfg = CmeConfig { tau: 0.1, printed_fast_gain: true, ..Default::default() };
        let out = cme_solve(&net, &domain, &init, &cfg).unwrap();
        assert!(out.iter().filter(|(pt, _)| pt.c[0] > 0).all(|(_, v)| v == 0.0));
        let cfg = CmeConfig { tau: 0.1, ..Default::default() };
        let out = cme_solve(&net, &domain, &init, &cfg).unwrap();
        assert!(out.iter().any(|(pt, v)| pt.c[0] > 0 && v > 0.0));
    }

    #[test]
    fn origin_outside_lattice() {
        let mut net = birth(1.0);
        net.initial_state = vec![-1.0];
        net.reactions[0].reactant_orders = vec![1];
        net.reactions[0].stoichiometry = vec![1];
        // A = -1 + d: d = 0 infeasible, so the domain starts at d = 1
        let spec = DomainSpec {
            slow_caps: vec![3],
            fast_caps: vec![],
            initial_slow_caps: vec![3],
            initial_fast_caps: vec![],
        };
        let domain = LatticeDomain::initial(&net, spec).unwrap();
        assert!(initial_law(&domain, InitialLaw::Origin, &SolverConfig::default()).is_err());
    }
}
