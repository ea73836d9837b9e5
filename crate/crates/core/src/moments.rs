//! Right-hand sides of the conditional-moment system.
//!
//! The hybrid master equation is never integrated as a PDE. Instead each slow
//! counter state `d` carries
//!
//! * the marginal mass `p(d)`,
//! * the conditional means `E[C | d]` of the fast counters,
//! * the centered second moments `E[(C - E[C|d])^M | d]`, `|M| = 2`,
//!
//! and central moments of order three and above are closed to zero.
//!
//! Expectations of propensity-weighted polynomials are evaluated by expanding
//! `F(c) * alpha_k(d, c)` around the relevant conditional mean as a
//! polynomial in the centered counters and truncating at degree two (see
//! [`crate::poly`]). For propensities of total degree at most two in `c` this
//! agrees term by term with the Taylor closure in
//! [`taylor_closed_expectation`] and the binomially shifted form in
//! [`shifted_central_expectation`]; the tests check both routes against each
//! other.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{KineticsForm, PropensityDecomposition, ReactionNetwork};
use crate::poly::QuadPoly;

/// Per-slow-state marginal mass, conditional means and conditional
/// covariance of the fast counters.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentField {
    slow_dims: usize,
    fast_dims: usize,
    states: Vec<Vec<i64>>,
    index: HashMap<Vec<i64>, usize>,
    marginal: Vec<f64>,
    mean: Vec<Vec<f64>>,
    /// Row-major `q x q` covariance per state.
    cov: Vec<Vec<f64>>,
}

impl MomentField {
    pub fn new(slow_dims: usize, fast_dims: usize) -> Self {
        MomentField {
            slow_dims,
            fast_dims,
            states: Vec::new(),
            index: HashMap::new(),
            marginal: Vec::new(),
            mean: Vec::new(),
            cov: Vec::new(),
        }
    }

    /// Appends a slow state. Panics if the state is already present or the
    /// vector lengths are inconsistent.
    pub fn push_state(&mut self, d: Vec<i64>, marginal: f64, mean: Vec<f64>, cov: Vec<f64>) {
        assert_eq!(d.len(), self.slow_dims, "slow state dimension");
        assert_eq!(mean.len(), self.fast_dims, "mean dimension");
        assert_eq!(cov.len(), self.fast_dims * self.fast_dims, "covariance dimension");
        let idx = self.states.len();
        let prev = self.index.insert(d.clone(), idx);
        assert!(prev.is_none(), "duplicate slow state {d:?}");
        self.states.push(d);
        self.marginal.push(marginal);
        self.mean.push(mean);
        self.cov.push(cov);
    }

    pub fn slow_dims(&self) -> usize {
        self.slow_dims
    }

    pub fn fast_dims(&self) -> usize {
        self.fast_dims
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<i64>] {
        &self.states
    }

    pub fn index_of(&self, d: &[i64]) -> Option<usize> {
        self.index.get(d).copied()
    }

    pub fn marginal(&self, idx: usize) -> f64 {
        self.marginal[idx]
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginal
    }

    pub fn mean(&self, idx: usize) -> &[f64] {
        &self.mean[idx]
    }

    pub fn cov(&self, idx: usize) -> &[f64] {
        &self.cov[idx]
    }

    pub fn variance(&self, idx: usize, j: usize) -> f64 {
        self.cov[idx][j * self.fast_dims + j]
    }

    pub fn set_marginal(&mut self, idx: usize, value: f64) {
        self.marginal[idx] = value;
    }

    pub fn mean_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.mean[idx]
    }

    pub fn cov_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.cov[idx]
    }

    pub fn total_mass(&self) -> f64 {
        self.marginal.iter().sum()
    }

    /// Centered conditional moment `E[(C - E[C|d])^M | d]` under `closure`.
    pub fn central(&self, idx: usize, m: &[u32], closure: &ClosureConfig) -> Result<f64> {
        central_closed(&self.cov[idx], self.fast_dims, m, closure)
    }
}

fn central_closed(cov: &[f64], q: usize, m: &[u32], closure: &ClosureConfig) -> Result<f64> {
    let order: u32 = m.iter().sum();
    match order {
        0 => Ok(1.0),
        1 => Ok(0.0),
        2 => {
            let mut it = m
                .iter()
                .enumerate()
                .flat_map(|(j, &mj)| std::iter::repeat_n(j, mj as usize));
            let a = it.next().unwrap();
            let b = it.next().unwrap();
            Ok(cov[a * q + b])
        }
        _ if closure.truncate_above => Ok(0.0),
        _ => Err(Error::UnsupportedOrder(format!(
            "central moment of order {order} is not tracked"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosureConfig {
    pub max_central_order: u32,
    pub truncate_above: bool,
}

impl Default for ClosureConfig {
    fn default() -> Self {
        ClosureConfig {
            max_central_order: 2,
            truncate_above: true,
        }
    }
}

impl ClosureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_central_order < 2 {
            return Err(Error::Config(
                "closure.max_central_order must be at least 2".into(),
            ));
        }
        Ok(())
    }

    fn ensure_supported(&self) -> Result<()> {
        self.validate()?;
        if self.max_central_order > 2 {
            return Err(Error::UnsupportedOrder(format!(
                "moment equations are implemented for central order 2, got {}",
                self.max_central_order
            )));
        }
        Ok(())
    }
}

/// Settings shared by the right-hand-side evaluators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentConfig {
    pub closure: ClosureConfig,
    /// Conditional moments are frozen where `p(d)` is below this value.
    pub mass_floor: f64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        MomentConfig {
            closure: ClosureConfig::default(),
            mass_floor: 1e-12,
        }
    }
}

/// `E[gamma_s(C)^power | d]` closed by a second-order Taylor expansion around
/// `E[C | d]`.
pub fn taylor_closed_expectation(
    decomp: &PropensityDecomposition,
    s: usize,
    power: u32,
    d: &[i64],
    field: &MomentField,
    closure: &ClosureConfig,
) -> Result<f64> {
    if power > 2 && !closure.truncate_above {
        return Err(Error::UnsupportedOrder(format!(
            "power {power} needs central moments above order 2"
        )));
    }
    let idx = field
        .index_of(d)
        .ok_or_else(|| Error::MissingNeighbor(d.to_vec()))?;
    let q = field.fast_dims();
    let grad = decomp.gamma_gradient(s);
    let g = decomp.gamma(field.mean(idx))[s];
    let (value, _, hess) = power_derivatives(g, power);
    let cov = field.cov(idx);
    let mut out = value;
    for k in 0..q {
        for l in 0..q {
            out += 0.5 * hess * grad[k] * grad[l] * cov[k * q + l];
        }
    }
    Ok(out)
}

/// `(g^p, p g^(p-1), p (p-1) g^(p-2))`.
fn power_derivatives(g: f64, p: u32) -> (f64, f64, f64) {
    let pf = f64::from(p);
    let value = g.powi(p as i32);
    let first = if p >= 1 { pf * g.powi(p as i32 - 1) } else { 0.0 };
    let second = if p >= 2 {
        pf * (pf - 1.0) * g.powi(p as i32 - 2)
    } else {
        0.0
    };
    (value, first, second)
}

/// `E[(C - E[C|d])^M gamma_s(C)^power | d_prev]`, rewritten around the mean at
/// `d_prev` with the binomial shift `E[C|d_prev] - E[C|d]` and each term closed
/// by a second-order Taylor expansion of `gamma_s^power`.
pub fn shifted_central_expectation(
    decomp: &PropensityDecomposition,
    s: usize,
    power: u32,
    m: &[u32],
    d: &[i64],
    d_prev: &[i64],
    field: &MomentField,
    closure: &ClosureConfig,
) -> Result<f64> {
    let idx = field
        .index_of(d)
        .ok_or_else(|| Error::MissingNeighbor(d.to_vec()))?;
    let prev = field
        .index_of(d_prev)
        .ok_or_else(|| Error::MissingNeighbor(d_prev.to_vec()))?;
    let q = field.fast_dims();
    let mean_d = field.mean(idx);
    let mean_prev = field.mean(prev);
    let shift: Vec<f64> = mean_prev.iter().zip(mean_d).map(|(a, b)| a - b).collect();

    let grad = decomp.gamma_gradient(s);
    let g = decomp.gamma(mean_prev)[s];
    let (value, first, second) = power_derivatives(g, power);
    let cov = field.cov(prev);

    let mut total = 0.0;
    for k in multi_indices_below(m) {
        let mut coeff = 1.0;
        for j in 0..q {
            coeff *= binomial(m[j], k[j]) * shift[j].powi((m[j] - k[j]) as i32);
        }
        if coeff == 0.0 {
            continue;
        }
        // E[Psi^k gamma^p] via the Taylor polynomial of gamma^p around mean_prev
        let mut inner = value * central_closed(cov, q, &k, closure)?;
        if first != 0.0 {
            for a in 0..q {
                if grad[a] == 0.0 {
                    continue;
                }
                let mut ka = k.clone();
                ka[a] += 1;
                inner += first * grad[a] * central_closed(cov, q, &ka, closure)?;
            }
        }
        if second != 0.0 {
            for a in 0..q {
                for b in 0..q {
                    if grad[a] * grad[b] == 0.0 {
                        continue;
                    }
                    let mut kab = k.clone();
                    kab[a] += 1;
                    kab[b] += 1;
                    inner += 0.5 * second * grad[a] * grad[b] * central_closed(cov, q, &kab, closure)?;
                }
            }
        }
        total += coeff * inner;
    }
    Ok(total)
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// All multi-indices `k` with `0 <= k <= m` componentwise.
fn multi_indices_below(m: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for &mj in m {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..=mj).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Closed expectation of `weight(x) * alpha_k(d_state, mean + x)` over the
/// conditional law at field index `at`, where `x` is centered at that law's
/// mean and `weight` is the product of the affine factors `(a, b)`.
fn weighted_propensity_expectation(
    net: &ReactionNetwork,
    decomp: &PropensityDecomposition,
    field: &MomentField,
    k: usize,
    d_state: &[i64],
    at: usize,
    weight: &[(f64, Vec<f64>)],
    closure: &ClosureConfig,
) -> Result<f64> {
    let q = field.fast_dims();
    let reaction = &net.reactions[k];
    let center = field.mean(at);
    let base = decomp.state(d_state, center);

    let mut poly = QuadPoly::constant(q, reaction.rate_constant);
    for (a, b) in weight {
        poly.mul_affine(*a, b);
    }
    for (s, &order) in reaction.reactant_orders.iter().enumerate() {
        if order == 0 {
            continue;
        }
        let slope = decomp.gamma_gradient(s);
        match reaction.kinetics {
            KineticsForm::PowerLaw => {
                for _ in 0..order {
                    poly.mul_affine(base[s], &slope);
                }
            }
            KineticsForm::Combinatorial => {
                for i in 0..order {
                    poly.mul_affine(base[s] - f64::from(i), &slope);
                }
                let fact: f64 = (1..=order).map(f64::from).product();
                poly.scale(1.0 / fact);
            }
        }
    }
    if poly.was_truncated() && !closure.truncate_above {
        return Err(Error::UnsupportedOrder(
            "expectation needs central moments above order 2".into(),
        ));
    }
    Ok(poly.expectation(field.cov(at)))
}

fn unit(q: usize, j: usize) -> Vec<f64> {
    let mut v = vec![0.0; q];
    v[j] = 1.0;
    v
}

/// Affine factors of `prod_j (x_j + shift_j)^{m_j}`.
fn centered_monomial(m: &[u32], shift: &[f64]) -> Vec<(f64, Vec<f64>)> {
    let q = m.len();
    let mut out = Vec::new();
    for (j, &mj) in m.iter().enumerate() {
        for _ in 0..mj {
            out.push((shift[j], unit(q, j)));
        }
    }
    out
}

fn lookup(field: &MomentField, d: &[i64]) -> Result<usize> {
    field
        .index_of(d)
        .ok_or_else(|| Error::MissingNeighbor(d.to_vec()))
}

/// Slow predecessor `d - e_i`, if it exists in the domain.
fn predecessor(field: &MomentField, d: &[i64], i: usize) -> Option<(Vec<i64>, usize)> {
    if d[i] == 0 {
        return None;
    }
    let mut prev = d.to_vec();
    prev[i] -= 1;
    field.index_of(&prev).map(|idx| (prev, idx))
}

/// Time derivative of the marginal `p(d)`. Predecessors outside the domain
/// carry zero mass.
pub fn marginal_rhs(
    net: &ReactionNetwork,
    decomp: &PropensityDecomposition,
    field: &MomentField,
    d: &[i64],
    closure: &ClosureConfig,
) -> Result<f64> {
    closure.ensure_supported()?;
    let idx = lookup(field, d)?;
    marginal_rhs_at(net, decomp, field, idx, closure)
}

fn marginal_rhs_at(
    net: &ReactionNetwork,
    decomp: &PropensityDecomposition,
    field: &MomentField,
    idx: usize,
    closure: &ClosureConfig,
) -> Result<f64> {
    let d = &field.states()[idx];
    let p = field.marginal(idx);
    let mut rhs = 0.0;
    for (i, &k) in decomp.slow_reactions().iter().enumerate() {
        if let Some((prev, pidx)) = predecessor(field, d, i) {
            let pp = field.marginal(pidx);
            if pp != 0.0 {
                rhs += pp
                    * weighted_propensity_expectation(net, decomp, field, k, &prev, pidx, &[], closure)?;
            }
        }
        if p != 0.0 {
            rhs -= p * weighted_propensity_expectation(net, decomp, field, k, d, idx, &[], closure)?;
        }
    }
    Ok(rhs)
}

/// Time derivative of `E[C_m | d]`.
pub fn cond_mean_rhs(
    net: &ReactionNetwork,
    decomp: &PropensityDecomposition,
    field: &MomentField,
    d: &[i64],
    m: usize,
    cfg: &MomentConfig,
) -> Result<f64> {
    cfg.closure.ensure_supported()?;
    let idx = lookup(field, d)?;
    check_mass(field, idx, cfg)?;
    let dp = marginal_rhs_at(net, decomp, field, idx, &cfg.closure)?;
    cond_mean_rhs_at(net, decomp, field, idx, m, dp, &cfg.closure)
}

fn check_mass(field: &MomentField, idx: usize, cfg: &MomentConfig) -> Result<()> {
    let mass = field.marginal(idx);
    if mass < cfg.mass_floor || mass <= 0.0 {
        return Err(Error::ZeroMass {
            state: field.states()[idx].clone(),
            mass,
            floor: cfg.mass_floor,
        });
    }
    Ok(())
}

fn cond_mean_rhs_at(
    net: &ReactionNetwork,
    decomp: &PropensityDecomposition,
    field: &MomentField,
    idx: usize,
    m: usize,
    marginal_rate: f64,
    closure: &ClosureConfig,
) -> Result<f64> {
    let q = field.fast_dims();
    let d = &field.states()[idx];
    let p = field.marginal(idx);
    let mean = field.mean(idx);
    let mut acc = 0.0;
    for (i, &k) in decomp.slow_reactions().iter().enumerate() {
        if let Some((prev, pidx)) = predecessor(field, d, i) {
            let pp = field.marginal(pidx);
            if pp != 0.0 {
                let w = [(field.mean(pidx)[m], unit(q, m))];
                acc += pp
                    * weighted_propensity_expectation(net, decomp, field, k, &prev, pidx, &w, closure)?;
            }
        }
        let w = [(mean[m], unit(q, m))];
        acc -= p * weighted_propensity_expectation(net, decomp, field, k, d, idx, &w, closure)?;
    }
    // only fast reaction m increments C_m
    let k = decomp.fast_reaction(m);
    acc += p * weighted_propensity_expectation(net, decomp, field, k, d, idx, &[], closure)?;
    acc -= mean[m] * marginal_rate;
    Ok(acc / p)
}

/// Time derivative of the centered moment `E[(C - E[C|d])^M | d]` for
/// `|M| = 2`. `mean_rates` holds the already computed `d/dt E[C_j | d]`.
pub fn central_moment_rhs(
    net: &ReactionNetwork,
    decomp: &PropensityDecomposition,
    field: &MomentField,
    d: &[i64],
    m: &[u32],
    mean_rates: &[f64],
    cfg: &MomentConfig,
) -> Result<f64> {
    cfg.closure.ensure_supported()?;
    if m.iter().sum::<u32>() != 2 {
        return Err(Error::UnsupportedOrder(format!(
            "central moment rhs is tracked for |M| = 2, got {m:?}"
        )));
    }
    let idx = lookup(field, d)?;
    check_mass(field, idx, cfg)?;
    let dp = marginal_rhs_at(net, decomp, field, idx, &cfg.closure)?;
    central_moment_rhs_at(net, decomp, field, idx, m, mean_rates, dp, &cfg.closure)
}

#[allow(clippy::too_many_arguments)]
fn central_moment_rhs_at(
    net: &ReactionNetwork,
    decomp: &PropensityDecomposition,
    field: &MomentField,
    idx: usize,
    m: &[u32],
    mean_rates: &[f64],
    marginal_rate: f64,
    closure: &ClosureConfig,
) -> Result<f64> {
    let q = field.fast_dims();
    let d = &field.states()[idx];
    let p = field.marginal(idx);
    let mean = field.mean(idx);
    let zero = vec![0.0; q];
    let mut acc = 0.0;

    for (i, &k) in decomp.slow_reactions().iter().enumerate() {
        if let Some((prev, pidx)) = predecessor(field, d, i) {
            let pp = field.marginal(pidx);
            if pp != 0.0 {
                let shift: Vec<f64> = field
                    .mean(pidx)
                    .iter()
                    .zip(mean)
                    .map(|(a, b)| a - b)
                    .collect();
                let w = centered_monomial(m, &shift);
                acc += pp
                    * weighted_propensity_expectation(net, decomp, field, k, &prev, pidx, &w, closure)?;
            }
        }
        let w = centered_monomial(m, &zero);
        acc -= p * weighted_propensity_expectation(net, decomp, field, k, d, idx, &w, closure)?;
    }

    for j in 0..q {
        let mj = m[j];
        if mj == 0 {
            continue;
        }
        let k = decomp.fast_reaction(j);
        let mut lower = m.to_vec();
        lower[j] -= 1;
        let drift = weighted_propensity_expectation(
            net,
            decomp,
            field,
            k,
            d,
            idx,
            &centered_monomial(&lower, &zero),
            closure,
        )?;
        acc += f64::from(mj) * p * drift;
        if mj >= 2 {
            let mut lower2 = m.to_vec();
            lower2[j] -= 2;
            let diffusion = weighted_propensity_expectation(
                net,
                decomp,
                field,
                k,
                d,
                idx,
                &centered_monomial(&lower2, &zero),
                closure,
            )?;
            acc += 0.5 * f64::from(mj * (mj - 1)) * p * diffusion;
        }
        // first central moments vanish, kept for higher orders
        let c_lower = central_closed(field.cov(idx), q, &lower, closure)?;
        acc -= f64::from(mj) * c_lower * p * mean_rates[j];
    }
    acc -= central_closed(field.cov(idx), q, m, closure)? * marginal_rate;
    Ok(acc / p)
}

/// Time derivatives of every tracked quantity of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRhs {
    pub marginal: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub cov: Vec<Vec<f64>>,
}

/// Evaluates the full system. Conditional moments of states whose mass is
/// below `cfg.mass_floor` get a zero derivative.
pub fn field_rhs(
    net: &ReactionNetwork,
    decomp: &PropensityDecomposition,
    field: &MomentField,
    cfg: &MomentConfig,
) -> Result<FieldRhs> {
    cfg.closure.ensure_supported()?;
    let q = field.fast_dims();
    let n = field.len();
    let mut out = FieldRhs {
        marginal: vec![0.0; n],
        mean: vec![vec![0.0; q]; n],
        cov: vec![vec![0.0; q * q]; n],
    };
    for idx in 0..n {
        let dp = marginal_rhs_at(net, decomp, field, idx, &cfg.closure)?;
        out.marginal[idx] = dp;
        let p = field.marginal(idx);
        if !(p >= cfg.mass_floor && p > 0.0) {
            continue;
        }
        for m in 0..q {
            out.mean[idx][m] = cond_mean_rhs_at(net, decomp, field, idx, m, dp, &cfg.closure)?;
        }
        let mean_rates = out.mean[idx].clone();
        for a in 0..q {
            for b in a..q {
                let mut mi = vec![0u32; q];
                mi[a] += 1;
                mi[b] += 1;
                let v = central_moment_rhs_at(
                    net,
                    decomp,
                    field,
                    idx,
                    &mi,
                    &mean_rates,
                    dp,
                    &cfg.closure,
                )?;
                out.cov[idx][a * q + b] = v;
                out.cov[idx][b * q + a] = v;
            }
        }
    }
    Ok(out)
}
