//! Fixed-step integration of the moment system on an adaptively growing
//! slow-state domain.
//!
//! A run starts from a Poisson law on the initial box `Omega0`, takes
//! `J = tau / delta` explicit steps, and after every step extends the slow
//! domain by one layer along each slow coordinate whose boundary layer holds
//! more than `epsilon_expand` mass. Once `tau` is reached every newly added
//! slow state receives a fast-counter grid sized from its conditional
//! standard deviation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grid::{JointDensityGrid, LatticePoint};
use crate::moments::{field_rhs, ClosureConfig, FieldRhs, MomentConfig, MomentField};
use crate::network::{decompose_propensity, PropensityDecomposition, ReactionNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Euler,
    Rk4,
}

/// Marginal mass given to a slow state when the domain grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NewStateMass {
    /// Start empty; mass arrives through the slow-reaction flux.
    #[default]
    Zero,
    /// `sum_d p(d) / (|D| + 1)`.
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub delta: f64,
    pub tau: f64,
    pub epsilon_expand: f64,
    pub epsilon_sigma: f64,
    pub poisson_mean_d: f64,
    pub poisson_mean_c: f64,
    pub scheme: Scheme,
    pub renormalize_on_expand: bool,
    pub new_state_mass: NewStateMass,
    /// Set from the maxent section of a run config.
    #[serde(skip)]
    pub mass_floor: f64,
    pub closure: ClosureConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            delta: 1e-4,
            tau: 1.0,
            epsilon_expand: 1e-6,
            epsilon_sigma: 2.0,
            poisson_mean_d: 1.0,
            poisson_mean_c: 1.0,
            scheme: Scheme::Euler,
            renormalize_on_expand: false,
            new_state_mass: NewStateMass::Zero,
            mass_floor: 1e-12,
            closure: ClosureConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return bad("solver.delta must be > 0");
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("solver.tau must be > 0");
        }
        let steps = (self.tau / self.delta).round();
        if steps < 1.0 || (steps * self.delta - self.tau).abs() > 1e-9 * self.tau.max(1.0) {
            return bad("solver.tau must be an integer multiple of solver.delta");
        }
        if self.epsilon_expand.is_nan() || self.epsilon_expand < 0.0 {
            return bad("solver.epsilon_expand must be >= 0");
        }
        if !(self.epsilon_sigma >= 0.0) {
            return bad("solver.epsilon_sigma must be >= 0");
        }
        if !(self.poisson_mean_d >= 0.0) || !(self.poisson_mean_c >= 0.0) {
            return bad("solver.poisson_mean_d and poisson_mean_c must be >= 0");
        }
        if !(self.mass_floor >= 0.0) {
            return bad("maxent.mass_floor must be >= 0");
        }
        self.closure.validate()
    }

    pub fn steps(&self) -> usize {
        (self.tau / self.delta).round() as usize
    }

    pub fn moment_config(&self) -> MomentConfig {
        MomentConfig {
            closure: self.closure,
            mass_floor: self.mass_floor,
        }
    }
}

/// Lattice caps of the full region `Omega` and of the initial box `Omega0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub slow_caps: Vec<i64>,
    pub fast_caps: Vec<i64>,
    pub initial_slow_caps: Vec<i64>,
    pub initial_fast_caps: Vec<i64>,
}

impl DomainSpec {
    pub fn validate(&self, slow_dims: usize, fast_dims: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.slow_caps.len() != slow_dims || self.initial_slow_caps.len() != slow_dims {
            return bad(format!("domain slow caps need {slow_dims} entries"));
        }
        if self.fast_caps.len() != fast_dims || self.initial_fast_caps.len() != fast_dims {
            return bad(format!("domain fast caps need {fast_dims} entries"));
        }
        let all = self
            .slow_caps
            .iter()
            .chain(&self.fast_caps)
            .chain(&self.initial_slow_caps)
            .chain(&self.initial_fast_caps);
        if all.clone().any(|&c| c < 0) {
            return bad("domain caps must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Initial,
    Expanded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExpansionEvent {
    pub step: usize,
    pub state: Vec<i64>,
}

/// The discrete region the moment system and reconstruction live on.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeDomain {
    decomp: PropensityDecomposition,
    spec: DomainSpec,
    initial: BTreeSet<Vec<i64>>,
    slow: BTreeSet<Vec<i64>>,
    upper: Vec<i64>,
    fast_grid: BTreeMap<Vec<i64>, Vec<Vec<i64>>>,
    expansion_log: Vec<ExpansionEvent>,
}

/// All integer vectors `v` with `0 <= v <= caps`.
fn box_points(caps: &[i64]) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for &cap in caps {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..=cap).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

fn range_points(lo: &[i64], hi: &[i64]) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for (&a, &b) in lo.iter().zip(hi) {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (a..=b).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

impl LatticeDomain {
    /// Builds `Omega0`: slow states inside the initial caps that have at
    /// least one feasible fast point inside the initial caps.
    pub fn initial(net: &ReactionNetwork, spec: DomainSpec) -> Result<Self> {
        let decomp = decompose_propensity(net);
        spec.validate(decomp.slow_dims(), decomp.fast_dims())?;
        let slow_caps: Vec<i64> = spec
            .initial_slow_caps
            .iter()
            .zip(&spec.slow_caps)
            .map(|(a, b)| *a.min(b))
            .collect();
        let fast_caps: Vec<i64> = spec
            .initial_fast_caps
            .iter()
            .zip(&spec.fast_caps)
            .map(|(a, b)| *a.min(b))
            .collect();
        let fast_box = box_points(&fast_caps);
        let mut fast_grid = BTreeMap::new();
        for d in box_points(&slow_caps) {
            let column: Vec<Vec<i64>> = fast_box
                .iter()
                .filter(|c| decomp.is_feasible(&d, c))
                .cloned()
                .collect();
            if !column.is_empty() {
                fast_grid.insert(d, column);
            }
        }
        if fast_grid.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let initial: BTreeSet<Vec<i64>> = fast_grid.keys().cloned().collect();
        let upper = (0..decomp.slow_dims())
            .map(|i| initial.iter().map(|d| d[i]).max().unwrap_or(0))
            .collect();
        Ok(LatticeDomain {
            decomp,
            spec,
            slow: initial.clone(),
            initial,
            upper,
            fast_grid,
            expansion_log: Vec::new(),
        })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn slow_dims(&self) -> usize {
        self.decomp.slow_dims()
    }

    pub fn fast_dims(&self) -> usize {
        self.decomp.fast_dims()
    }

    pub fn slow_states(&self) -> impl Iterator<Item = &Vec<i64>> {
        self.slow.iter()
    }

    pub fn slow_len(&self) -> usize {
        self.slow.len()
    }

    pub fn initial_states(&self) -> impl Iterator<Item = &Vec<i64>> {
        self.initial.iter()
    }

    pub fn contains_slow(&self, d: &[i64]) -> bool {
        self.slow.contains(d)
    }

    pub fn origin(&self, d: &[i64]) -> Option<Origin> {
        if self.initial.contains(d) {
            Some(Origin::Initial)
        } else if self.slow.contains(d) {
            Some(Origin::Expanded)
        } else {
            None
        }
    }

    pub fn expansion_log(&self) -> &[ExpansionEvent] {
        &self.expansion_log
    }

    /// Fast-counter grid attached to `d`. Expanded states have an empty grid
    /// until [`build_fast_domain`] runs.
    pub fn fast_grid(&self, d: &[i64]) -> &[Vec<i64>] {
        self.fast_grid.get(d).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Membership in the full region `Omega`: within caps and feasible.
    pub fn in_omega(&self, d: &[i64], c: &[i64]) -> bool {
        d.iter().all(|&v| v >= 0)
            && c.iter().all(|&v| v >= 0)
            && d.iter().zip(&self.spec.slow_caps).all(|(v, cap)| v <= cap)
            && c.iter().zip(&self.spec.fast_caps).all(|(v, cap)| v <= cap)
            && self.decomp.is_feasible(d, c)
    }

    /// Every point of `Omega`.
    pub fn omega_points(&self) -> Vec<LatticePoint> {
        let fast_box = box_points(&self.spec.fast_caps);
        box_points(&self.spec.slow_caps)
            .into_iter()
            .flat_map(|d| {
                fast_box
                    .iter()
                    .filter(|c| self.decomp.is_feasible(&d, c))
                    .map(|c| LatticePoint::new(d.clone(), c.clone()))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Every point currently attached to the domain (`Omega*` once the fast
    /// grids are built).
    pub fn points(&self) -> Vec<LatticePoint> {
        self.fast_grid
            .iter()
            .flat_map(|(d, cs)| cs.iter().map(|c| LatticePoint::new(d.clone(), c.clone())))
            .collect()
    }

    fn slow_state_admissible(&self, d: &[i64]) -> bool {
        if d.iter().zip(&self.spec.slow_caps).any(|(v, cap)| v > cap) {
            return false;
        }
        box_points(&self.spec.fast_caps)
            .iter()
            .any(|c| self.decomp.is_feasible(d, c))
    }
}

/// Initial joint law: independent Poisson counts restricted to `Omega0`
/// and renormalized.
pub fn poisson_initial_grid(domain: &LatticeDomain, cfg: &SolverConfig) -> Result<JointDensityGrid> {
    let mut grid = JointDensityGrid::new(0.0, domain.slow_dims(), domain.fast_dims());
    let mut total = 0.0;
    for d in &domain.initial {
        let wd: f64 = d.iter().map(|&k| poisson_pmf(k, cfg.poisson_mean_d)).product();
        for c in domain.fast_grid(d) {
            let wc: f64 = c.iter().map(|&k| poisson_pmf(k, cfg.poisson_mean_c)).product();
            let w = wd * wc;
            total += w;
            grid.insert(LatticePoint::new(d.clone(), c.clone()), w);
        }
    }
    if grid.is_empty() {
        return Err(Error::EmptyDomain);
    }
    if !(total > 0.0) {
        return Err(Error::Config(
            "Poisson initial law has no mass on the initial domain".into(),
        ));
    }
    let mut out = JointDensityGrid::new(0.0, domain.slow_dims(), domain.fast_dims());
    for (k, v) in grid.iter() {
        out.insert(k.clone(), v / total);
    }
    Ok(out)
}

fn poisson_pmf(k: i64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let kf = k as f64;
    (kf * mean.ln() - mean - ln_gamma(kf + 1.0)).exp()
}

/// Marginals, conditional means and covariances of the Poisson initial law.
pub fn init_poisson(domain: &LatticeDomain, cfg: &SolverConfig) -> Result<MomentField> {
    let grid = poisson_initial_grid(domain, cfg)?;
    let q = domain.fast_dims();
    let mut field = MomentField::new(domain.slow_dims(), q);
    for d in &domain.initial {
        let column = domain.fast_grid(d);
        let weights: Vec<f64> = column
            .iter()
            .map(|c| grid.get(&LatticePoint::new(d.clone(), c.clone())))
            .collect();
        let mass: f64 = weights.iter().sum();
        // a zero-mass column (Poisson mean 0) falls back to uniform weights
        let norm: Vec<f64> = if mass > 0.0 {
            weights.iter().map(|w| w / mass).collect()
        } else {
            vec![1.0 / column.len() as f64; column.len()]
        };
        let mut mean = vec![0.0; q];
        for (c, w) in column.iter().zip(&norm) {
            for j in 0..q {
                mean[j] += w * c[j] as f64;
            }
        }
        let mut cov = vec![0.0; q * q];
        for (c, w) in column.iter().zip(&norm) {
            for a in 0..q {
                for b in 0..q {
                    cov[a * q + b] += w * (c[a] as f64 - mean[a]) * (c[b] as f64 - mean[b]);
                }
            }
        }
        field.push_state(d.clone(), mass, mean, cov);
    }
    Ok(field)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClampCounts {
    pub marginal: usize,
    pub variance: usize,
    pub mean: usize,
}

impl ClampCounts {
    pub fn total(&self) -> usize {
        self.marginal + self.variance + self.mean
    }

    fn add(&mut self, other: ClampCounts) {
        self.marginal += other.marginal;
        self.variance += other.variance;
        self.mean += other.mean;
    }
}

fn axpy(field: &MomentField, h: f64, rhs: &FieldRhs) -> MomentField {
    let mut out = field.clone();
    for idx in 0..field.len() {
        out.set_marginal(idx, field.marginal(idx) + h * rhs.marginal[idx]);
        for (v, r) in out.mean_mut(idx).iter_mut().zip(&rhs.mean[idx]) {
            *v += h * r;
        }
        for (v, r) in out.cov_mut(idx).iter_mut().zip(&rhs.cov[idx]) {
            *v += h * r;
        }
    }
    out
}

fn check_finite(field: &MomentField, step: usize) -> Result<()> {
    for idx in 0..field.len() {
        let ok = field.marginal(idx).is_finite()
            && field.mean(idx).iter().all(|v| v.is_finite())
            && field.cov(idx).iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::Instability {
                step,
                what: format!("slow state {:?}", field.states()[idx]),
            });
        }
    }
    Ok(())
}

/// Advances the field by one step of `cfg.delta`, then clamps negative
/// marginals, means and diagonal variances to zero.
pub fn step(
    field: &MomentField,
    net: &ReactionNetwork,
    decomp: &PropensityDecomposition,
    cfg: &SolverConfig,
    step_index: usize,
) -> Result<(MomentField, ClampCounts)> {
    let mc = cfg.moment_config();
    let h = cfg.delta;
    let mut next = match cfg.scheme {
        Scheme::Euler => {
            let k1 = field_rhs(net, decomp, field, &mc)?;
            axpy(field, h, &k1)
        }
        Scheme::Rk4 => {
            let k1 = field_rhs(net, decomp, field, &mc)?;
            let k2 = field_rhs(net, decomp, &axpy(field, 0.5 * h, &k1), &mc)?;
            let k3 = field_rhs(net, decomp, &axpy(field, 0.5 * h, &k2), &mc)?;
            let k4 = field_rhs(net, decomp, &axpy(field, h, &k3), &mc)?;
            let mut acc = axpy(field, h / 6.0, &k1);
            acc = axpy(&acc, h / 3.0, &k2);
            acc = axpy(&acc, h / 3.0, &k3);
            axpy(&acc, h / 6.0, &k4)
        }
    };
    check_finite(&next, step_index)?;
    let q = field.fast_dims();
    let mut clamps = ClampCounts::default();
    for idx in 0..next.len() {
        if next.marginal(idx) < 0.0 {
            next.set_marginal(idx, 0.0);
            clamps.marginal += 1;
        }
        for v in next.mean_mut(idx) {
            if *v < 0.0 {
                *v = 0.0;
                clamps.mean += 1;
            }
        }
        let cov = next.cov_mut(idx);
        for j in 0..q {
            if cov[j * q + j] < 0.0 {
                cov[j * q + j] = 0.0;
                clamps.variance += 1;
            }
        }
    }
    Ok((next, clamps))
}

/// Grows the slow domain by one layer along every slow coordinate whose
/// boundary layer carries more than `epsilon_expand` mass. New states copy
/// the conditional moments of their predecessor. Returns the number of
/// states added.
pub fn expand_slow_domain(
    field: &mut MomentField,
    domain: &mut LatticeDomain,
    cfg: &SolverConfig,
    step_index: usize,
) -> usize {
    let mut added = 0;
    for i in 0..domain.slow_dims() {
        let top = domain.upper[i];
        if top >= domain.spec.slow_caps[i] {
            continue;
        }
        let face: Vec<Vec<i64>> = domain.slow.iter().filter(|d| d[i] == top).cloned().collect();
        let boundary_mass = face
            .iter()
            .filter_map(|d| field.index_of(d))
            .map(|idx| field.marginal(idx))
            .fold(f64::NEG_INFINITY, f64::max);
        if !(boundary_mass > cfg.epsilon_expand) {
            continue;
        }
        let average = field.total_mass() / (domain.slow.len() as f64 + 1.0);
        let mut grew = false;
        for d in face {
            let mut next = d.clone();
            next[i] += 1;
            if domain.slow.contains(&next) || !domain.slow_state_admissible(&next) {
                continue;
            }
            let src = field.index_of(&d).expect("domain and field agree");
            let mass = match cfg.new_state_mass {
                NewStateMass::Zero => 0.0,
                NewStateMass::Average => average,
            };
            let mean = field.mean(src).to_vec();
            let cov = field.cov(src).to_vec();
            field.push_state(next.clone(), mass, mean, cov);
            domain.slow.insert(next.clone());
            domain.expansion_log.push(ExpansionEvent {
                step: step_index,
                state: next,
            });
            added += 1;
            grew = true;
        }
        if grew {
            domain.upper[i] += 1;
        }
    }
    if added > 0 && cfg.renormalize_on_expand {
        let total = field.total_mass();
        if total > 0.0 {
            for idx in 0..field.len() {
                field.set_marginal(idx, field.marginal(idx) / total);
            }
        }
    }
    added
}

/// Attaches a fast grid to every slow state added after initialization.
///
/// The grid spans `[max(lo - eps*sigma, 0), hi + eps*sigma]` per fast
/// coordinate, where `lo`/`hi` are the extreme fast values paired with the
/// largest initial slow state, clipped to `Omega`.
pub fn build_fast_domain(field: &MomentField, domain: &mut LatticeDomain, cfg: &SolverConfig) {
    let q = domain.fast_dims();
    let Some(reference) = domain.initial.iter().next_back() else {
        return;
    };
    let column = domain.fast_grid(reference);
    let lo: Vec<f64> = (0..q)
        .map(|j| column.iter().map(|c| c[j]).min().unwrap_or(0) as f64)
        .collect();
    let hi: Vec<f64> = (0..q)
        .map(|j| column.iter().map(|c| c[j]).max().unwrap_or(0) as f64)
        .collect();
    let new_states: Vec<Vec<i64>> = domain.slow.difference(&domain.initial).cloned().collect();
    for d in new_states {
        let sigma: Vec<f64> = match field.index_of(&d) {
            Some(idx) => (0..q).map(|j| field.variance(idx, j).max(0.0).sqrt()).collect(),
            None => vec![0.0; q],
        };
        let lower: Vec<i64> = (0..q)
            .map(|j| (lo[j] - cfg.epsilon_sigma * sigma[j]).max(0.0).ceil() as i64)
            .collect();
        let upper: Vec<i64> = (0..q)
            .map(|j| ((hi[j] + cfg.epsilon_sigma * sigma[j]).floor() as i64).min(domain.spec.fast_caps[j]))
            .collect();
        let grid: Vec<Vec<i64>> = range_points(&lower, &upper)
            .into_iter()
            .filter(|c| domain.in_omega(&d, c))
            .collect();
        domain.fast_grid.insert(d, grid);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub clamps: ClampCounts,
    pub expansions: usize,
    pub min_total_mass: f64,
    pub max_total_mass: f64,
    pub final_total_mass: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub field: MomentField,
    pub domain: LatticeDomain,
    pub stats: RunStats,
}

/// Initializes, integrates to `cfg.tau` with expansion checks after each
/// step, and builds the fast grids of the final domain.
///
/// When `diagnostics` is given, one `step,total_mass,domain_size,clamps`
/// line is written per step.
pub fn run_to_time(
    net: &ReactionNetwork,
    cfg: &SolverConfig,
    spec: &DomainSpec,
    mut diagnostics: Option<&mut dyn Write>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let decomp = decompose_propensity(net);
    let mut domain = LatticeDomain::initial(net, spec.clone())?;
    let mut field = init_poisson(&domain, cfg)?;
    let initial_mass = field.total_mass();
    let mut stats = RunStats {
        steps: 0,
        clamps: ClampCounts::default(),
        expansions: 0,
        min_total_mass: initial_mass,
        max_total_mass: initial_mass,
        final_total_mass: initial_mass,
    };
    let io_err = |e| Error::io("<diagnostics>", e);
    if let Some(w) = diagnostics.as_mut() {
        writeln!(w, "step,total_mass,domain_size,clamps").map_err(io_err)?;
    }
    for j in 1..=cfg.steps() {
        let (next, clamps) = step(&field, net, &decomp, cfg, j)?;
        field = next;
        stats.clamps.add(clamps);
        stats.expansions += expand_slow_domain(&mut field, &mut domain, cfg, j);
        stats.steps = j;
        let mass = field.total_mass();
        stats.min_total_mass = stats.min_total_mass.min(mass);
        stats.max_total_mass = stats.max_total_mass.max(mass);
        if let Some(w) = diagnostics.as_mut() {
            writeln!(w, "{j},{mass:.17e},{},{}", field.len(), clamps.total()).map_err(io_err)?;
        }
    }
    stats.final_total_mass = field.total_mass();
    build_fast_domain(&field, &mut domain, cfg);
    Ok(RunOutcome {
        field,
        domain,
        stats,
    })
}
