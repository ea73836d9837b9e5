//! Exact-jump simulation of the counting process.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{JointDensityGrid, LatticePoint};
use crate::network::{decompose_propensity, propensity, PropensityDecomposition, ReactionNetwork};

use super::jump;

/// Recorded in run metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), seed_from_u64(seed), stream = trajectory index";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsaConfig {
    pub tau: f64,
    pub n_traj: u64,
    pub seed: u64,
    /// Optional per-coordinate caps `(slow, fast)`; jumps beyond them are
    /// suppressed.
    #[serde(default)]
    pub caps: Option<(Vec<i64>, Vec<i64>)>,
}

#[derive(Debug, Clone)]
pub struct SsaOutcome {
    pub grid: JointDensityGrid,
    /// Trajectories whose total propensity hit zero before `tau`.
    pub stalled: u64,
    pub events: u64,
}

struct Sampler {
    points: Vec<LatticePoint>,
    cumulative: Vec<f64>,
}

impl Sampler {
    fn new(initial: &JointDensityGrid) -> Result<Self> {
        let mut points = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (pt, p) in initial.iter() {
            if p > 0.0 {
                acc += p;
                points.push(pt.clone());
                cumulative.push(acc);
            }
        }
        if points.is_empty() {
            return Err(Error::EmptyGrid);
        }
        Ok(Sampler { points, cumulative })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> LatticePoint {
        let total = *self.cumulative.last().expect("nonempty");
        if self.points.len() == 1 {
            return self.points[0].clone();
        }
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.points[i.min(self.points.len() - 1)].clone()
    }
}

struct Walker<'a> {
    net: &'a ReactionNetwork,
    decomp: PropensityDecomposition,
    caps: Option<&'a (Vec<i64>, Vec<i64>)>,
}

impl Walker<'_> {
    fn allowed(&self, d: &[i64], c: &[i64]) -> bool {
        if let Some((sc, fc)) = self.caps {
            if d.iter().zip(sc).any(|(v, m)| v > m) || c.iter().zip(fc).any(|(v, m)| v > m) {
                return false;
            }
        }
        self.decomp.is_feasible(d, c)
    }

    /// Runs one trajectory to `tau`; returns the end state, event count and
    /// whether it stalled.
    fn run(&self, start: LatticePoint, tau: f64, rng: &mut ChaCha8Rng) -> Result<(LatticePoint, u64, bool)> {
        let LatticePoint { mut d, mut c } = start;
        let nr = self.net.reactions.len();
        let mut rates = vec![0.0; nr];
        let mut t = 0.0;
        let mut events = 0;
        loop {
            let cf: Vec<f64> = c.iter().map(|&v| v as f64).collect();
            let mut total = 0.0;
            for (k, rate) in rates.iter_mut().enumerate() {
                let (d2, c2) = jump(&self.decomp, k, &d, &c);
                *rate = if self.allowed(&d2, &c2) {
                    propensity(self.net, &self.decomp, k, &d, &cf)?
                } else {
                    0.0
                };
                total += *rate;
            }
            if total <= 0.0 {
                return Ok((LatticePoint::new(d, c), events, true));
            }
            let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
            if t + wait > tau {
                return Ok((LatticePoint::new(d, c), events, false));
            }
            t += wait;
            let mut u = rng.random::<f64>() * total;
            let mut chosen = nr - 1;
            for (k, &r) in rates.iter().enumerate() {
                if u < r {
                    chosen = k;
                    break;
                }
                u -= r;
            }
            while rates[chosen] == 0.0 {
                chosen -= 1;
            }
            let (d2, c2) = jump(&self.decomp, chosen, &d, &c);
            d = d2;
            c = c2;
            events += 1;
        }
    }
}

/// Empirical law of `(D(tau), C(tau))` over `n_traj` trajectories started
/// from draws of `initial`. Trajectory `i` uses its own ChaCha stream, so
/// the result does not depend on the thread count.
pub fn ssa_simulate(
    net: &ReactionNetwork,
    initial: &JointDensityGrid,
    cfg: &SsaConfig,
) -> Result<SsaOutcome> {
    if cfg.n_traj == 0 {
        return Err(Error::Config("oracle.n_traj must be >= 1".into()));
    }
    if !(cfg.tau >= 0.0) {
        return Err(Error::Config("tau must be >= 0".into()));
    }
    let sampler = Sampler::new(initial)?;
    let walker = Walker {
        net,
        decomp: decompose_propensity(net),
        caps: cfg.caps.as_ref(),
    };
    let chunk = 1024u64;
    let chunks = cfg.n_traj.div_ceil(chunk);
    let partial: Vec<(BTreeMap<LatticePoint, u64>, u64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|b| -> Result<_> {
            let mut counts = BTreeMap::new();
            let mut stalled = 0;
            let mut events = 0;
            for i in b * chunk..((b + 1) * chunk).min(cfg.n_traj) {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i);
                let start = sampler.draw(&mut rng);
                let (end, ev, st) = walker.run(start, cfg.tau, &mut rng)?;
                *counts.entry(end).or_insert(0u64) += 1;
                stalled += u64::from(st);
                events += ev;
            }
            Ok((counts, stalled, events))
        })
        .collect::<Result<_>>()?;

    let mut counts: BTreeMap<LatticePoint, u64> = BTreeMap::new();
    let (mut stalled, mut events) = (0, 0);
    for (part, s, e) in partial {
        for (k, v) in part {
            *counts.entry(k).or_insert(0) += v;
        }
        stalled += s;
        events += e;
    }
    let mut grid = JointDensityGrid::new(cfg.tau, initial.slow_dims(), initial.fast_dims());
    for (k, v) in counts {
        grid.insert(k, v as f64 / cfg.n_traj as f64);
    }
    Ok(SsaOutcome {
        grid,
        stalled,
        events,
    })
}
