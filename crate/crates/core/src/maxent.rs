//! Maximum-entropy reconstruction of conditional densities on a lattice.
//!
//! Given raw moment targets `S_k = E[phi_k(C)]` with `phi_k(c) = prod_j c_j^{M_j}`,
//! the maximum-entropy density on a finite grid has the form
//! `p(c) = exp(-lambda_0 - sum_k lambda_k phi_k(c))`. The multipliers minimize the
//! convex dual `g(lambda) = log sum_c exp(-lambda . phi(c)) + lambda . S`, whose
//! gradient is `S - E_p[phi]` and whose Hessian is `Cov_p(phi)`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{JointDensityGrid, LatticePoint};
use crate::integrator::LatticeDomain;
use crate::moments::MomentField;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;
/// Variances below this are treated as a point-like conditional law.
pub const DEGENERATE_VARIANCE: f64 = 1e-10;

const JITTER: f64 = 1e-10;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;
const MAX_MULTIPLIER: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct MaxEntProblem {
    pub grid: Vec<Vec<i64>>,
    /// `(M, S^M)` pairs. Must contain the zero multi-index with target 1.
    pub constraints: Vec<(Vec<u32>, f64)>,
}

impl MaxEntProblem {
    /// Problem with the normalization constraint prepended.
    pub fn new(grid: Vec<Vec<i64>>, moments: Vec<(Vec<u32>, f64)>) -> Self {
        let q = grid.first().map_or(0, Vec::len);
        let mut constraints = vec![(vec![0; q], 1.0)];
        constraints.extend(moments);
        MaxEntProblem { grid, constraints }
    }

    fn validate(&self) -> Result<usize> {
        let bad = |m: &str| Err(Error::InvalidProblem(m.to_string()));
        if self.grid.is_empty() {
            return bad("empty grid");
        }
        let q = self.grid[0].len();
        if self.grid.iter().any(|c| c.len() != q) {
            return bad("grid points of different dimension");
        }
        let distinct: BTreeSet<&Vec<i64>> = self.grid.iter().collect();
        if distinct.len() != self.grid.len() {
            return bad("duplicate grid points");
        }
        if self.constraints.iter().any(|(m, s)| m.len() != q || !s.is_finite()) {
            return bad("constraint multi-index dimension or target");
        }
        match self.constraints.iter().find(|(m, _)| m.iter().all(|&e| e == 0)) {
            Some((_, s)) if (s - 1.0).abs() <= 1e-12 => Ok(q),
            Some(_) => bad("normalization target must be 1"),
            None => bad("missing normalization constraint"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxEntSolution {
    /// `lambda_0` (the log partition) followed by one multiplier per
    /// constraint in problem order, normalization excluded.
    pub multipliers: Vec<f64>,
    pub log_partition: f64,
    pub density: Vec<(Vec<i64>, f64)>,
    pub residual: f64,
    pub iterations: usize,
    /// Dual objective after each accepted step, starting point first.
    #[serde(skip)]
    pub dual_trace: Vec<f64>,
}

pub fn monomial(c: &[i64], m: &[u32]) -> f64 {
    c.iter()
        .zip(m)
        .map(|(&x, &e)| (x as f64).powi(e as i32))
        .product()
}

/// `sum_c density(c) * prod_j c_j^{M_j}` for each multi-index.
pub fn moments_of(density: &[(Vec<i64>, f64)], indices: &[Vec<u32>]) -> Vec<f64> {
    indices
        .iter()
        .map(|m| density.iter().map(|(c, p)| p * monomial(c, m)).sum())
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + v.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

struct Standardized {
    /// `n x K` standardized feature values.
    g: DMatrix<f64>,
    targets: DVector<f64>,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

struct Eval {
    dual: f64,
    log_z: f64,
    probs: Vec<f64>,
    gradient: DVector<f64>,
}

impl Standardized {
    fn eval(&self, eta: &DVector<f64>) -> Eval {
        let expo: Vec<f64> = (0..self.g.nrows())
            .map(|i| -(self.g.row(i) * eta)[0])
            .collect();
        let log_z = log_sum_exp(&expo);
        let probs: Vec<f64> = expo.iter().map(|e| (e - log_z).exp()).collect();
        let mut expect = DVector::zeros(self.g.ncols());
        for (i, p) in probs.iter().enumerate() {
            expect += self.g.row(i).transpose() * *p;
        }
        Eval {
            dual: log_z + eta.dot(&self.targets),
            log_z,
            probs,
            // gradient of the dual in eta
            gradient: &self.targets - expect,
        }
    }

    fn hessian(&self, probs: &[f64], mean: &DVector<f64>) -> DMatrix<f64> {
        let k = self.g.ncols();
        let mut h = DMatrix::zeros(k, k);
        for (i, p) in probs.iter().enumerate() {
            let centered = self.g.row(i).transpose() - mean;
            h += &centered * centered.transpose() * *p;
        }
        h
    }
}

fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let k = h.nrows();
    let mut jitter = 0.0;
    for _ in 0..12 {
        let m = h + DMatrix::identity(k, k) * jitter;
        if let Some(ch) = m.cholesky() {
            let x = ch.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        jitter = if jitter == 0.0 { JITTER } else { jitter * 100.0 };
    }
    None
}

/// Solves the dual by damped Newton with Armijo backtracking.
pub fn dual_solve(problem: &MaxEntProblem, tol: f64, max_iter: usize) -> Result<MaxEntSolution> {
    let q = problem.validate()?;
    let n = problem.grid.len();
    let moment_idx: Vec<usize> = (0..problem.constraints.len())
        .filter(|&k| problem.constraints[k].0.iter().any(|&e| e != 0))
        .collect();
    let phi: Vec<Vec<f64>> = moment_idx
        .iter()
        .map(|&k| {
            let m = &problem.constraints[k].0;
            problem.grid.iter().map(|c| monomial(c, m)).collect()
        })
        .collect();

    for j in 0..q {
        let mut e1 = vec![0; q];
        e1[j] = 1;
        let mut e2 = vec![0; q];
        e2[j] = 2;
        let find = |m: &[u32]| problem.constraints.iter().find(|(mm, _)| mm == m).map(|c| c.1);
        if let (Some(s1), Some(s2)) = (find(&e1), find(&e2)) {
            let var = s2 - s1 * s1;
            if var < DEGENERATE_VARIANCE && n > 1 {
                return Err(Error::DegenerateGrid(format!(
                    "variance target {var:e} for fast coordinate {j} on {n} points"
                )));
            }
        }
    }

    // constant features carry no information; they only have to agree
    let mut active = Vec::new();
    for (slot, &k) in moment_idx.iter().enumerate() {
        let target = problem.constraints[k].1;
        let lo = phi[slot].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = phi[slot].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = tol * (1.0 + target.abs());
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            if (target - lo).abs() > slack {
                return Err(Error::InfeasibleMoments(format!(
                    "constraint {k} is constant {lo} on the grid, target {target}"
                )));
            }
            continue;
        }
        if target <= lo + slack || target >= hi - slack {
            return Err(Error::InfeasibleMoments(format!(
                "target {target} for constraint {k} is not inside ({lo}, {hi})"
            )));
        }
        active.push(slot);
    }

    let kk = active.len();
    let mut g = DMatrix::zeros(n, kk);
    let mut targets = DVector::zeros(kk);
    let mut shift = Vec::with_capacity(kk);
    let mut scale = Vec::with_capacity(kk);
    for (col, &slot) in active.iter().enumerate() {
        let f = &phi[slot];
        let a = f.iter().sum::<f64>() / n as f64;
        let s = (f.iter().map(|v| (v - a).powi(2)).sum::<f64>() / n as f64).sqrt();
        for i in 0..n {
            g[(i, col)] = (f[i] - a) / s;
        }
        targets[col] = (problem.constraints[moment_idx[slot]].1 - a) / s;
        shift.push(a);
        scale.push(s);
    }
    let st = Standardized {
        g,
        targets,
        shift,
        scale,
    };

    let raw_residual = |probs: &[f64]| -> f64 {
        moment_idx
            .iter()
            .enumerate()
            .map(|(slot, &k)| {
                let m: f64 = probs.iter().zip(&phi[slot]).map(|(p, f)| p * f).sum();
                (m - problem.constraints[k].1).abs()
            })
            .fold(0.0, f64::max)
    };

    let mut eta = DVector::zeros(kk);
    let mut ev = st.eval(&eta);
    let mut residual = raw_residual(&ev.probs);
    let mut trace = vec![ev.dual];
    let mut iterations = 0;
    while residual > tol {
        if iterations >= max_iter {
            return Err(Error::NotConverged {
                iterations,
                residual,
            });
        }
        let mean = &st.targets - &ev.gradient;
        let h = st.hessian(&ev.probs, &mean);
        let dir = -solve_spd(&h, &ev.gradient).ok_or_else(|| {
            Error::InfeasibleMoments("singular covariance of the constraint features".into())
        })?;
        let slope = ev.gradient.dot(&dir);
        let mut step = 1.0;
        let accepted = loop {
            let trial = &eta + &dir * step;
            let tv = st.eval(&trial);
            if tv.dual.is_finite() && tv.dual <= ev.dual + ARMIJO * step * slope {
                break Some((trial, tv));
            }
            // at round-off level the dual cannot resolve progress; use the gradient
            let flat = (tv.dual - ev.dual).abs() <= 64.0 * f64::EPSILON * ev.dual.abs().max(1.0);
            if flat && tv.gradient.amax() < ev.gradient.amax() {
                break Some((trial, tv));
            }
            step *= 0.5;
            if step < MIN_STEP {
                break None;
            }
        };
        let Some((next, next_ev)) = accepted else {
            return Err(Error::InfeasibleMoments(format!(
                "line search failed at iteration {iterations} (residual {residual:e})"
            )));
        };
        if next.amax() > MAX_MULTIPLIER {
            return Err(Error::InfeasibleMoments("dual is unbounded".into()));
        }
        eta = next;
        ev = next_ev;
        residual = raw_residual(&ev.probs);
        trace.push(ev.dual);
        iterations += 1;
    }

    // back to raw features: -eta.g = -sum (eta/s) phi + sum eta a / s
    let mut multipliers = vec![0.0; problem.constraints.len()];
    let mut offset = 0.0;
    for (col, &slot) in active.iter().enumerate() {
        let lambda = eta[col] / st.scale[col];
        multipliers[moment_idx[slot]] = lambda;
        offset += lambda * st.shift[col];
    }
    let log_partition = ev.log_z - offset;
    let norm_idx = (0..problem.constraints.len())
        .find(|k| !moment_idx.contains(k))
        .expect("validated");
    multipliers[norm_idx] = log_partition;
    let density = problem
        .grid
        .iter()
        .cloned()
        .zip(ev.probs.iter().copied())
        .collect();
    Ok(MaxEntSolution {
        multipliers,
        log_partition,
        density,
        residual,
        iterations,
        dual_trace: trace,
    })
}

pub fn entropy(density: &[(Vec<i64>, f64)]) -> f64 {
    -density
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(_, p)| p * p.ln())
        .sum::<f64>()
}

/// What [`conditional_problems`] produced for one slow state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalProblem {
    pub d: Vec<i64>,
    pub marginal: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    /// Below the mass floor: a one-point problem at the grid point nearest
    /// the frozen mean.
    pub below_floor: bool,
    pub problem: MaxEntProblem,
}

#[derive(Debug, Clone, Default)]
pub struct ProblemSet {
    pub problems: Vec<ConditionalProblem>,
    /// Slow states dropped because their fast grid is empty.
    pub warnings: Vec<String>,
}

fn nearest(grid: &[Vec<i64>], mean: &[f64]) -> Vec<i64> {
    grid.iter()
        .min_by(|a, b| {
            let da: f64 = a.iter().zip(mean).map(|(&x, m)| (x as f64 - m).powi(2)).sum();
            let db: f64 = b.iter().zip(mean).map(|(&x, m)| (x as f64 - m).powi(2)).sum();
            da.total_cmp(&db)
        })
        .cloned()
        .expect("nonempty grid")
}

/// One problem per slow state of the domain: normalization, raw first
/// moments, and raw second moments `cov + mean mean^T`.
pub fn conditional_problems(
    field: &MomentField,
    domain: &LatticeDomain,
    mass_floor: f64,
) -> ProblemSet {
    let q = field.fast_dims();
    let mut out = ProblemSet::default();
    for (idx, d) in field.states().iter().enumerate() {
        let grid = domain.fast_grid(d).to_vec();
        if grid.is_empty() {
            out.warnings
                .push(format!("slow state {d:?} has an empty fast grid and was skipped"));
            continue;
        }
        let p = field.marginal(idx);
        let mean = field.mean(idx).to_vec();
        let cov = field.cov(idx).to_vec();
        let below_floor = !(p >= mass_floor && p > 0.0);
        let problem = if below_floor {
            MaxEntProblem::new(vec![nearest(&grid, &mean)], vec![])
        } else {
            let mut moments = Vec::new();
            for j in 0..q {
                let mut m = vec![0; q];
                m[j] = 1;
                moments.push((m, mean[j]));
            }
            for a in 0..q {
                for b in a..q {
                    let mut m = vec![0; q];
                    m[a] += 1;
                    m[b] += 1;
                    moments.push((m, cov[a * q + b] + mean[a] * mean[b]));
                }
            }
            MaxEntProblem::new(grid, moments)
        };
        out.problems.push(ConditionalProblem {
            d: d.clone(),
            marginal: p,
            mean,
            cov,
            below_floor,
            problem,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// All constraints met by the dual solver.
    MaxEnt,
    /// One-point problem of a state below the mass floor.
    BelowFloor,
    /// Variance target below the degeneracy threshold: two neighbouring
    /// grid points matching the mean.
    TwoPoint,
    /// Targets outside the polytope: maxent on the means alone, clamped
    /// into the grid interior.
    MeanOnly,
    /// Last resort: all mass on the grid point nearest the mean.
    PointMass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub d: Vec<i64>,
    pub marginal: f64,
    pub method: Method,
    pub solution: MaxEntSolution,
    /// Why the full problem was not used, if it was not.
    pub fallback_reason: Option<String>,
}

fn point_solution(c: Vec<i64>) -> MaxEntSolution {
    MaxEntSolution {
        multipliers: vec![0.0],
        log_partition: 0.0,
        density: vec![(c, 1.0)],
        residual: 0.0,
        iterations: 0,
        dual_trace: vec![0.0],
    }
}

/// Mass split between the two grid points bracketing the mean along a
/// single fast coordinate. Falls back to the nearest point otherwise.
fn two_point(grid: &[Vec<i64>], mean: &[f64]) -> MaxEntSolution {
    if mean.len() == 1 {
        let m = mean[0];
        let below = grid.iter().filter(|c| c[0] as f64 <= m).max();
        let above = grid.iter().filter(|c| c[0] as f64 >= m).min();
        if let (Some(a), Some(b)) = (below, above) {
            if a == b {
                return point_solution(a.clone());
            }
            let w = (m - a[0] as f64) / (b[0] - a[0]) as f64;
            let mut sol = point_solution(a.clone());
            sol.density = vec![(a.clone(), 1.0 - w), (b.clone(), w)];
            return sol;
        }
    }
    point_solution(nearest(grid, mean))
}

fn mean_only(grid: &[Vec<i64>], mean: &[f64], tol: f64, max_iter: usize) -> Result<MaxEntSolution> {
    let q = mean.len();
    let mut moments = Vec::new();
    for j in 0..q {
        let lo = grid.iter().map(|c| c[j]).min().unwrap_or(0) as f64;
        let hi = grid.iter().map(|c| c[j]).max().unwrap_or(0) as f64;
        let margin = 1e-3 * (hi - lo);
        let mut m = vec![0; q];
        m[j] = 1;
        let target = if hi > lo {
            mean[j].clamp(lo + margin, hi - margin)
        } else {
            lo
        };
        moments.push((m, target));
    }
    dual_solve(&MaxEntProblem::new(grid.to_vec(), moments), tol, max_iter)
}

fn reconstruct_one(cp: &ConditionalProblem, tol: f64, max_iter: usize) -> Reconstruction {
    let make = |method, solution, reason: Option<String>| Reconstruction {
        d: cp.d.clone(),
        marginal: cp.marginal,
        method,
        solution,
        fallback_reason: reason,
    };
    if cp.below_floor {
        return make(Method::BelowFloor, point_solution(cp.problem.grid[0].clone()), None);
    }
    match dual_solve(&cp.problem, tol, max_iter) {
        Ok(sol) => make(Method::MaxEnt, sol, None),
        Err(e @ Error::DegenerateGrid(_)) => {
            make(Method::TwoPoint, two_point(&cp.problem.grid, &cp.mean), Some(e.to_string()))
        }
        Err(e) => match mean_only(&cp.problem.grid, &cp.mean, tol, max_iter) {
            Ok(sol) => make(Method::MeanOnly, sol, Some(e.to_string())),
            Err(_) => make(
                Method::PointMass,
                point_solution(nearest(&cp.problem.grid, &cp.mean)),
                Some(e.to_string()),
            ),
        },
    }
}

/// Solves every conditional problem in parallel, falling back per state as
/// described on [`Method`]. Output order follows the input.
pub fn reconstruct_all(problems: &ProblemSet, tol: f64, max_iter: usize) -> Vec<Reconstruction> {
    problems
        .problems
        .par_iter()
        .map(|cp| reconstruct_one(cp, tol, max_iter))
        .collect()
}

/// `p(d, c) = p(c | d) p(d)`.
pub fn assemble_joint(
    reconstructions: &[Reconstruction],
    time: f64,
    slow_dims: usize,
    fast_dims: usize,
) -> JointDensityGrid {
    let mut grid = JointDensityGrid::new(time, slow_dims, fast_dims);
    for r in reconstructions {
        for (c, p) in &r.solution.density {
            grid.add(LatticePoint::new(r.d.clone(), c.clone()), p * r.marginal);
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(lo: i64, hi: i64) -> Vec<Vec<i64>> {
        (lo..=hi).map(|c| vec![c]).collect()
    }

    #[test]
    fn one_point_support() {
        let sol = dual_solve(&MaxEntProblem::new(vec![vec![5]], vec![]), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(sol.density, vec![(vec![5], 1.0)]);
        assert_eq!(sol.residual, 0.0);
    }

    #[test]
    fn symmetric_two_point() {
        let p = MaxEntProblem::new(line(0, 1), vec![(vec![1], 0.5)]);
        let sol = dual_solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((sol.density[0].1 - 0.5).abs() < 1e-15);
        assert!((sol.density[1].1 - 0.5).abs() < 1e-15);
        assert!(sol.multipliers[1].abs() < 1e-15);
        assert!((sol.log_partition - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_recovery() {
        let p = MaxEntProblem::new(line(0, 30), vec![(vec![1], 10.0), (vec![2], 104.0)]);
        let sol = dual_solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(sol.iterations <= 50, "{}", sol.iterations);
        let w: Vec<f64> = (0..=30).map(|c| (-((c as f64 - 10.0).powi(2)) / 8.0).exp()).collect();
        let z: f64 = w.iter().sum();
        let tv: f64 = 0.5 * sol.density.iter().zip(&w).map(|((_, p), g)| (p - g / z).abs()).sum::<f64>();
        assert!(tv <= 1e-3, "{tv}");
        assert!(sol.residual <= 1e-8);
    }

    #[test]
    fn moments_of_examples() {
        let d = vec![(vec![0], 0.5), (vec![2], 0.5)];
        assert_eq!(moments_of(&d, &[vec![0], vec![1], vec![2]]), vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn infeasible_and_degenerate_targets() {
        let p = MaxEntProblem::new(line(0, 4), vec![(vec![1], 5.0)]);
        assert!(matches!(dual_solve(&p, 1e-8, 200), Err(Error::InfeasibleMoments(_))));
        let p = MaxEntProblem::new(line(0, 4), vec![(vec![1], 2.0), (vec![2], 4.0)]);
        assert!(matches!(dual_solve(&p, 1e-8, 200), Err(Error::DegenerateGrid(_))));
        // variance 3 exceeds the largest achievable on {0, 1, 2} with mean 1
        let p = MaxEntProblem::new(line(0, 2), vec![(vec![1], 1.0), (vec![2], 4.0)]);
        assert!(matches!(dual_solve(&p, 1e-8, 200), Err(Error::InfeasibleMoments(_))));
        let mut p = MaxEntProblem::new(line(0, 2), vec![]);
        p.constraints.clear();
        assert!(matches!(dual_solve(&p, 1e-8, 200), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn not_converged_reports_iterations() {
        let p = MaxEntProblem::new(line(0, 30), vec![(vec![1], 10.0), (vec![2], 104.0)]);
        match dual_solve(&p, 1e-8, 1) {
            Err(Error::NotConverged { iterations, .. }) => assert_eq!(iterations, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_dimensional_cross_moment() {
        let grid: Vec<Vec<i64>> = (0..6).flat_map(|a| (0..6).map(move |b| vec![a, b])).collect();
        let p = MaxEntProblem::new(
            grid,
            vec![
                (vec![1, 0], 2.0),
                (vec![0, 1], 3.0),
                (vec![2, 0], 5.5),
                (vec![1, 1], 6.5),
                (vec![0, 2], 10.0),
            ],
        );
        let sol = dual_solve(&p, 1e-8, 200).unwrap();
        let got = moments_of(&sol.density, &[vec![1, 1]]);
        assert!((got[0] - 6.5).abs() <= 1e-8);
    }

    #[test]
    fn conditional_problem_targets() {
        use crate::integrator::{DomainSpec, LatticeDomain};
        use crate::network::ReactionNetwork;
        let net = ReactionNetwork::conversion_cycle(0.2, 0.4, [50.0, 0.0]);
        let spec = DomainSpec {
            slow_caps: vec![30],
            fast_caps: vec![30],
            initial_slow_caps: vec![3],
            initial_fast_caps: vec![8],
        };
        let domain = LatticeDomain::initial(&net, spec).unwrap();
        let mut field = MomentField::new(1, 1);
        field.push_state(vec![3], 0.9, vec![4.0], vec![2.0]);
        field.push_state(vec![2], 1e-14, vec![2.6], vec![0.5]);
        let set = conditional_problems(&field, &domain, 1e-12);
        assert_eq!(
            set.problems[0].problem.constraints,
            vec![(vec![0], 1.0), (vec![1], 4.0), (vec![2], 18.0)]
        );
        assert!(set.problems[1].below_floor);
        assert_eq!(set.problems[1].problem.grid, vec![vec![3]]);
    }

    #[test]
    fn empty_grid_is_skipped_with_warning() {
        use crate::integrator::{DomainSpec, LatticeDomain};
        use crate::network::ReactionNetwork;
        let net = ReactionNetwork::conversion_cycle(0.2, 0.4, [50.0, 0.0]);
        let spec = DomainSpec {
            slow_caps: vec![30],
            fast_caps: vec![30],
            initial_slow_caps: vec![1],
            initial_fast_caps: vec![1],
        };
        let domain = LatticeDomain::initial(&net, spec).unwrap();
        let mut field = MomentField::new(1, 1);
        field.push_state(vec![5], 1.0, vec![0.0], vec![0.0]);
        let set = conditional_problems(&field, &domain, 1e-12);
        assert!(set.problems.is_empty());
        assert_eq!(set.warnings.len(), 1);
    }

    #[test]
    fn assembly_multiplies_marginals() {
        let uniform = |c0: i64| MaxEntSolution {
            multipliers: vec![2f64.ln()],
            log_partition: 2f64.ln(),
            density: vec![(vec![c0], 0.5), (vec![c0 + 1], 0.5)],
            residual: 0.0,
            iterations: 0,
            dual_trace: vec![],
        };
        let recs = vec![
            Reconstruction { d: vec![0], marginal: 0.4, method: Method::MaxEnt, solution: uniform(0), fallback_reason: None },
            Reconstruction { d: vec![1], marginal: 0.6, method: Method::MaxEnt, solution: uniform(0), fallback_reason: None },
        ];
        let g = assemble_joint(&recs, 1.0, 1, 1);
        let cells: Vec<f64> = g.iter().map(|(_, p)| p).collect();
        assert_eq!(cells, vec![0.2, 0.2, 0.3, 0.3]);
        assert!((g.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fallbacks() {
        let cp = |mean: f64, var: f64| ConditionalProblem {
            d: vec![1],
            marginal: 0.5,
            mean: vec![mean],
            cov: vec![var],
            below_floor: false,
            problem: MaxEntProblem::new(line(0, 2), vec![(vec![1], mean), (vec![2], var + mean * mean)]),
        };
        let r = reconstruct_one(&cp(0.3, 0.0), 1e-8, 200);
        assert_eq!(r.method, Method::TwoPoint);
        let got: Vec<f64> = r.solution.density.iter().map(|x| x.1).collect();
        assert!((got[0] - 0.7).abs() < 1e-15 && (got[1] - 0.3).abs() < 1e-15);
        let r = reconstruct_one(&cp(1.0, 3.0), 1e-8, 200);
        assert_eq!(r.method, Method::MeanOnly);
        assert!((moments_of(&r.solution.density, &[vec![1]])[0] - 1.0).abs() < 1e-8);
        let r = reconstruct_one(&cp(1.0, 0.5), 1e-8, 200);
        assert_eq!(r.method, Method::MaxEnt);
    }

    /// Feasible targets on a small grid: moments of a random positive density.
    fn small_problem() -> impl Strategy<Value = MaxEntProblem> {
        (2usize..=6, 0i64..5).prop_flat_map(|(n, lo)| {
            proptest::collection::vec(0.05f64..1.0, n).prop_map(move |w| {
                let z: f64 = w.iter().sum();
                let grid = line(lo, lo + n as i64 - 1);
                let dens: Vec<(Vec<i64>, f64)> = grid.iter().cloned().zip(w.iter().map(|v| v / z)).collect();
                let mut cons = vec![(vec![1], moments_of(&dens, &[vec![1]])[0])];
                if n > 2 {
                    cons.push((vec![2], moments_of(&dens, &[vec![2]])[0]));
                }
                MaxEntProblem::new(grid, cons)
            })
        })
    }

    /// Null space of the constraint matrix, by Gram-Schmidt against its rows.
    fn null_directions(p: &MaxEntProblem) -> Vec<Vec<f64>> {
        let rows: Vec<Vec<f64>> = p
            .constraints
            .iter()
            .map(|(m, _)| p.grid.iter().map(|c| monomial(c, m)).collect())
            .collect();
        let n = p.grid.len();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut out = Vec::new();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for r in rows.iter().cloned().chain((0..n).map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })) {
            let mut v = r.clone();
            for b in &basis {
                let k = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= k * y);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-9 {
                v.iter_mut().for_each(|x| *x /= norm);
                if basis.len() >= rows.len() {
                    out.push(v.clone());
                }
                basis.push(v);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn moment_matching_and_positivity(p in small_problem()) {
            let sol = dual_solve(&p, 1e-8, 200).unwrap();
            let idx: Vec<Vec<u32>> = p.constraints.iter().map(|c| c.0.clone()).collect();
            for (got, (_, want)) in moments_of(&sol.density, &idx).iter().zip(&p.constraints) {
                prop_assert!((got - want).abs() <= 1e-8);
            }
            let total: f64 = sol.density.iter().map(|d| d.1).sum();
            prop_assert!((total - 1.0).abs() <= 1e-10);
            prop_assert!(sol.density.iter().all(|d| d.1 > 0.0));
        }

        #[test]
        fn dual_is_monotone(p in small_problem()) {
            let sol = dual_solve(&p, 1e-8, 200).unwrap();
            for w in sol.dual_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }

        #[test]
        fn exponential_family_form(p in small_problem()) {
            let sol = dual_solve(&p, 1e-8, 200).unwrap();
            for (c, prob) in &sol.density {
                let poly: f64 = p.constraints.iter().zip(&sol.multipliers)
                    .map(|((m, _), l)| if m.iter().all(|&e| e == 0) { *l } else { l * monomial(c, m) })
                    .sum();
                prop_assert!((prob.ln() + poly).abs() <= 1e-9, "{} vs {}", prob.ln(), -poly);
            }
        }

        #[test]
        fn entropy_is_maximal(p in small_problem(), seeds in proptest::collection::vec(-1.0f64..1.0, 600)) {
            let sol = dual_solve(&p, 1e-8, 200).unwrap();
            let h = entropy(&sol.density);
            let dirs = null_directions(&p);
            prop_assume!(!dirs.is_empty());
            for trial in 0..100 {
                let mut z = vec![0.0; p.grid.len()];
                for (k, dir) in dirs.iter().enumerate() {
                    let a = seeds[(trial * 6 + k) % seeds.len()];
                    z.iter_mut().zip(dir).for_each(|(x, y)| *x += a * y);
                }
                // largest step keeping the perturbed density nonnegative
                let t = sol.density.iter().zip(&z)
                    .filter(|(_, zi)| **zi < 0.0)
                    .map(|((_, pi), zi)| -pi / zi)
                    .fold(f64::INFINITY, f64::min)
                    .min(1.0);
                let other: Vec<(Vec<i64>, f64)> = sol.density.iter().zip(&z)
                    .map(|((c, pi), zi)| (c.clone(), (pi + t * zi).max(0.0)))
                    .collect();
                prop_assert!(h - entropy(&other) >= -1e-9);
            }
        }
    }
}
