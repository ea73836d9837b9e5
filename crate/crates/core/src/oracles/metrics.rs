use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{JointDensityGrid, LatticePoint};

fn normalized(g: &JointDensityGrid) -> Result<f64> {
    let m = g.total_mass();
    if m > 0.0 && m.is_finite() {
        Ok(m)
    } else {
        Err(Error::EmptyGrid)
    }
}

/// Half the L1 distance after renormalizing both grids to unit mass.
/// Points missing from one grid count as zero.
pub fn total_variation(a: &JointDensityGrid, b: &JointDensityGrid) -> Result<f64> {
    let (ma, mb) = (normalized(a)?, normalized(b)?);
    let keys: BTreeSet<&LatticePoint> = a.iter().map(|(k, _)| k).chain(b.iter().map(|(k, _)| k)).collect();
    let sum: f64 = keys
        .into_iter()
        .map(|k| (a.get(k) / ma - b.get(k) / mb).abs())
        .sum();
    Ok((0.5 * sum).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateGap {
    pub d: Vec<i64>,
    pub marginal_gap: f64,
    /// Absent when either grid has no mass at `d`.
    pub mean_gap: Option<Vec<f64>>,
    pub variance_gap: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub total_variation: f64,
    pub marginal_l1: f64,
    pub mode_a: Option<LatticePoint>,
    pub mode_b: Option<LatticePoint>,
    pub same_mode: bool,
    pub states: Vec<StateGap>,
}

/// TV distance plus per-slow-state marginal and conditional moment gaps.
pub fn compare_grids(a: &JointDensityGrid, b: &JointDensityGrid) -> Result<ComparisonReport> {
    let tv = total_variation(a, b)?;
    let (ma, mb) = (a.total_mass(), b.total_mass());
    let (pa, pb) = (a.slow_marginals(), b.slow_marginals());
    let (ca, cb) = (a.conditional_moments(), b.conditional_moments());
    let ds: BTreeSet<&Vec<i64>> = pa.keys().chain(pb.keys()).collect();
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u - v).collect::<Vec<f64>>();
    let mut states = Vec::new();
    let mut l1 = 0.0;
    for d in ds {
        let gap = pa.get(d).copied().unwrap_or(0.0) / ma - pb.get(d).copied().unwrap_or(0.0) / mb;
        l1 += gap.abs();
        let (mean_gap, variance_gap) = match (ca.get(d), cb.get(d)) {
            (Some((m1, v1)), Some((m2, v2))) => (Some(diff(m1, m2)), Some(diff(v1, v2))),
            _ => (None, None),
        };
        states.push(StateGap {
            d: d.clone(),
            marginal_gap: gap,
            mean_gap,
            variance_gap,
        });
    }
    let mode_a = a.mode().cloned();
    let mode_b = b.mode().cloned();
    Ok(ComparisonReport {
        total_variation: tv,
        marginal_l1: l1,
        same_mode: mode_a.is_some() && mode_a == mode_b,
        mode_a,
        mode_b,
        states,
    })
}
