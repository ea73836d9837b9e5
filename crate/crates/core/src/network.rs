//! Reaction networks over counting coordinates.
//!
//! A network is described by species counts `y(0)` and a list of reactions.
//! Each reaction is either slow (its firings are counted by a discrete
//! coordinate `d_i`) or fast (counted by a coordinate `c_j` that the hybrid
//! model treats as a diffusion). The species vector at counter state `(d, c)`
//! is
//!
//! ```text
//! y(d, c) = y(0) + sum_i d_i mu_i + sum_j c_j mu_j = beta(d) + gamma(c)
//! ```
//!
//! which is what [`PropensityDecomposition`] tabulates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Slow,
    Fast,
}

/// How the reactant orders enter a propensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KineticsForm {
    /// `kappa * prod_s y_s^r_s`
    #[default]
    PowerLaw,
    /// `kappa * prod_s binom(y_s, r_s)` with falling-factorial binomials.
    Combinatorial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reaction {
    pub name: String,
    pub rate_constant: f64,
    pub reactant_orders: Vec<u32>,
    pub stoichiometry: Vec<i64>,
    pub tier: Tier,
    #[serde(default)]
    pub kinetics: KineticsForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionNetwork {
    pub species: Vec<String>,
    pub initial_state: Vec<f64>,
    pub reactions: Vec<Reaction>,
}

impl ReactionNetwork {
    /// The two-reaction conversion cycle `R1: 2 S1 -> 2 S2` (slow) and
    /// `R2: S2 -> S1` (fast), both with first-order power-law propensities.
    pub fn conversion_cycle(k1: f64, k2: f64, initial_state: [f64; 2]) -> Self {
        ReactionNetwork {
            species: vec!["S1".into(), "S2".into()],
            initial_state: initial_state.to_vec(),
            reactions: vec![
                Reaction {
                    name: "R1".into(),
                    rate_constant: k1,
                    reactant_orders: vec![1, 0],
                    stoichiometry: vec![-2, 2],
                    tier: Tier::Slow,
                    kinetics: KineticsForm::PowerLaw,
                },
                Reaction {
                    name: "R2".into(),
                    rate_constant: k2,
                    reactant_orders: vec![0, 1],
                    stoichiometry: vec![1, -1],
                    tier: Tier::Fast,
                    kinetics: KineticsForm::PowerLaw,
                },
            ],
        }
    }

    pub fn species_count(&self) -> usize {
        self.initial_state.len()
    }

    /// Indices of the slow reactions, in network order.
    pub fn slow_reactions(&self) -> Vec<usize> {
        self.tier_indices(Tier::Slow)
    }

    /// Indices of the fast reactions, in network order.
    pub fn fast_reactions(&self) -> Vec<usize> {
        self.tier_indices(Tier::Fast)
    }

    fn tier_indices(&self, tier: Tier) -> Vec<usize> {
        self.reactions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.tier == tier)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Whether validation should insist on both tiers being populated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    Hybrid,
    Any,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptySpecies,
    SpeciesNameCount { names: usize, species: usize },
    NegativeInitialCount { species: usize },
    NonFiniteInitialCount { species: usize },
    NonPositiveRate { reaction: usize },
    OrdersLength { reaction: usize },
    StoichiometryLength { reaction: usize },
    ConsumptionExceedsOrder { reaction: usize, species: usize },
    EmptySlowTier,
    EmptyFastTier,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpecies => write!(f, "no species"),
            Violation::SpeciesNameCount { names, species } => {
                write!(f, "{names} species names for {species} species")
            }
            Violation::NegativeInitialCount { species } => {
                write!(f, "negative initial count for species {species}")
            }
            Violation::NonFiniteInitialCount { species } => {
                write!(f, "non-finite initial count for species {species}")
            }
            Violation::NonPositiveRate { reaction } => {
                write!(f, "nonpositive rate constant (reaction {reaction})")
            }
            Violation::OrdersLength { reaction } => {
                write!(f, "reactant orders length mismatch (reaction {reaction})")
            }
            Violation::StoichiometryLength { reaction } => {
                write!(f, "stoichiometry length mismatch (reaction {reaction})")
            }
            Violation::ConsumptionExceedsOrder { reaction, species } => write!(
                f,
                "net consumption exceeds reactant order (reaction {reaction}, species {species})"
            ),
            Violation::EmptySlowTier => write!(f, "empty slow tier"),
            Violation::EmptyFastTier => write!(f, "empty fast tier"),
        }
    }
}

/// Collects every invariant violation of `net`. An empty list means the
/// network is well-formed.
///
/// The consumption bound `stoichiometry_s >= -r_s` is only checked for
/// combinatorial kinetics; power-law exponents are kinetic orders and may
/// differ from the molecularity.
pub fn validate_network(net: &ReactionNetwork, mode: ValidationMode) -> Vec<Violation> {
    let mut out = Vec::new();
    let m = net.species_count();
    if m == 0 {
        out.push(Violation::EmptySpecies);
    }
    if !net.species.is_empty() && net.species.len() != m {
        out.push(Violation::SpeciesNameCount {
            names: net.species.len(),
            species: m,
        });
    }
    for (s, &y) in net.initial_state.iter().enumerate() {
        if !y.is_finite() {
            out.push(Violation::NonFiniteInitialCount { species: s });
        } else if y < 0.0 {
            out.push(Violation::NegativeInitialCount { species: s });
        }
    }
    for (k, r) in net.reactions.iter().enumerate() {
        if !(r.rate_constant > 0.0) || !r.rate_constant.is_finite() {
            out.push(Violation::NonPositiveRate { reaction: k });
        }
        if r.reactant_orders.len() != m {
            out.push(Violation::OrdersLength { reaction: k });
        }
        if r.stoichiometry.len() != m {
            out.push(Violation::StoichiometryLength { reaction: k });
        }
        if r.kinetics == KineticsForm::Combinatorial {
            for (s, (&nu, &order)) in r.stoichiometry.iter().zip(&r.reactant_orders).enumerate() {
                if nu < -i64::from(order) {
                    out.push(Violation::ConsumptionExceedsOrder {
                        reaction: k,
                        species: s,
                    });
                }
            }
        }
    }
    if mode == ValidationMode::Hybrid {
        if net.slow_reactions().is_empty() {
            out.push(Violation::EmptySlowTier);
        }
        if net.fast_reactions().is_empty() {
            out.push(Violation::EmptyFastTier);
        }
    }
    out
}

/// Convenience wrapper turning violations into an error.
pub fn ensure_valid(net: &ReactionNetwork, mode: ValidationMode) -> Result<()> {
    let v = validate_network(net, mode);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidNetwork(v.iter().map(ToString::to_string).collect()))
    }
}

/// Splits the species vector into a slow part `beta(d)` and a fast part
/// `gamma(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityDecomposition {
    initial_state: Vec<f64>,
    /// `slow_stoich[i][s]`: change of species `s` per firing of slow reaction `i`.
    slow_stoich: Vec<Vec<f64>>,
    fast_stoich: Vec<Vec<f64>>,
    slow_reactions: Vec<usize>,
    fast_reactions: Vec<usize>,
}

pub fn decompose_propensity(net: &ReactionNetwork) -> PropensityDecomposition {
    let slow_reactions = net.slow_reactions();
    let fast_reactions = net.fast_reactions();
    let column = |k: &usize| -> Vec<f64> {
        net.reactions[*k]
            .stoichiometry
            .iter()
            .map(|&v| v as f64)
            .collect()
    };
    PropensityDecomposition {
        initial_state: net.initial_state.clone(),
        slow_stoich: slow_reactions.iter().map(column).collect(),
        fast_stoich: fast_reactions.iter().map(column).collect(),
        slow_reactions,
        fast_reactions,
    }
}

impl PropensityDecomposition {
    pub fn species_count(&self) -> usize {
        self.initial_state.len()
    }

    /// Number of slow counters `L`.
    pub fn slow_dims(&self) -> usize {
        self.slow_reactions.len()
    }

    /// Number of fast counters `R - L`.
    pub fn fast_dims(&self) -> usize {
        self.fast_reactions.len()
    }

    /// Network index of the `i`-th slow reaction.
    pub fn slow_reaction(&self, i: usize) -> usize {
        self.slow_reactions[i]
    }

    pub fn fast_reaction(&self, j: usize) -> usize {
        self.fast_reactions[j]
    }

    pub fn slow_reactions(&self) -> &[usize] {
        &self.slow_reactions
    }

    pub fn fast_reactions(&self) -> &[usize] {
        &self.fast_reactions
    }

    pub fn beta(&self, d: &[i64]) -> Vec<f64> {
        debug_assert_eq!(d.len(), self.slow_dims());
        let mut out = self.initial_state.clone();
        for (col, &di) in self.slow_stoich.iter().zip(d) {
            for (o, &mu) in out.iter_mut().zip(col) {
                *o += di as f64 * mu;
            }
        }
        out
    }

    pub fn gamma(&self, c: &[f64]) -> Vec<f64> {
        debug_assert_eq!(c.len(), self.fast_dims());
        let mut out = vec![0.0; self.species_count()];
        for (col, &cj) in self.fast_stoich.iter().zip(c) {
            for (o, &mu) in out.iter_mut().zip(col) {
                *o += cj * mu;
            }
        }
        out
    }

    /// Gradient of `gamma_s` with respect to the fast counters (constant,
    /// since `gamma` is linear).
    pub fn gamma_gradient(&self, s: usize) -> Vec<f64> {
        self.fast_stoich.iter().map(|col| col[s]).collect()
    }

    /// Species vector at the counter state `(d, c)`.
    pub fn state(&self, d: &[i64], c: &[f64]) -> Vec<f64> {
        let mut y = self.beta(d);
        for (o, g) in y.iter_mut().zip(self.gamma(c)) {
            *o += g;
        }
        y
    }

    /// The feasibility predicate: all reconstructed species counts are
    /// nonnegative.
    pub fn is_feasible(&self, d: &[i64], c: &[i64]) -> bool {
        let cf: Vec<f64> = c.iter().map(|&v| v as f64).collect();
        self.state(d, &cf).iter().all(|&y| y >= -1e-9)
    }
}

/// Propensity of reaction `k` at counter state `(d, c)`.
pub fn propensity(
    net: &ReactionNetwork,
    decomp: &PropensityDecomposition,
    k: usize,
    d: &[i64],
    c: &[f64],
) -> Result<f64> {
    let reaction = &net.reactions[k];
    let y = decomp.state(d, c);
    let mut value = reaction.rate_constant;
    for (s, (&order, &count)) in reaction.reactant_orders.iter().zip(&y).enumerate() {
        if order == 0 {
            continue;
        }
        if count < 0.0 {
            return Err(Error::DomainViolation {
                reaction: k,
                species: s,
                count,
            });
        }
        value *= match reaction.kinetics {
            KineticsForm::PowerLaw => count.powi(order as i32),
            KineticsForm::Combinatorial => falling_binomial(count, order),
        };
    }
    Ok(value)
}

/// `x (x-1) ... (x-r+1) / r!`, clamped at zero once a factor turns negative.
pub(crate) fn falling_binomial(x: f64, r: u32) -> f64 {
    let mut acc = 1.0;
    for i in 0..r {
        let f = x - f64::from(i);
        if f <= 0.0 {
            return 0.0;
        }
        acc *= f / f64::from(i + 1);
    }
    acc
}
