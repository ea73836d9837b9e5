//! Ground-truth engines and distribution comparison.
//!
//! Both engines treat every reaction, slow or fast, as a jump on the counting
//! lattice. A jump whose target is infeasible (or outside the lattice caps
//! when caps are given) is suppressed, so probability mass is conserved.

mod cme;
mod metrics;
mod ssa;

pub use crate::grid::JointDensityGrid;
pub use cme::{cme_solve, initial_law, CmeConfig, InitialLaw};
pub use metrics::{compare_grids, total_variation, ComparisonReport, StateGap};
pub use ssa::{ssa_simulate, SsaConfig, SsaOutcome, RNG_ALGORITHM};

use crate::network::PropensityDecomposition;

/// Counter state reached from `(d, c)` by one firing of network reaction `k`.
pub(crate) fn jump(
    decomp: &PropensityDecomposition,
    k: usize,
    d: &[i64],
    c: &[i64],
) -> (Vec<i64>, Vec<i64>) {
    let mut d = d.to_vec();
    let mut c = c.to_vec();
    if let Some(i) = decomp.slow_reactions().iter().position(|&r| r == k) {
        d[i] += 1;
    } else if let Some(j) = decomp.fast_reactions().iter().position(|&r| r == k) {
        c[j] += 1;
    }
    (d, c)
}
