//! Joint reaction-counting densities of jump-diffusion hybrid models.
//!
//! Slow reactions are counted exactly; fast reactions are approximated by a
//! diffusion. The joint density `p(d, c)` is obtained by integrating the
//! system of marginal masses and conditional moments ([`moments`],
//! [`integrator`]), then reconstructing each conditional density on its
//! lattice by maximum entropy ([`maxent`]). Dense master-equation and SSA
//! engines ([`oracles`]) provide ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod config;
pub mod error;
pub mod grid;
pub mod integrator;
pub mod maxent;
pub mod moments;
pub mod network;
pub mod oracles;
pub mod output;
pub mod pipeline;
mod poly;

pub use error::{Error, Result};
