//! Slice configuration optimization toolkit.
//!
//! A mobile network operator assigns multi-dimensional resources (bandwidth,
//! MCS offsets, backhaul, CPU share) to concurrent network slices. Each slice
//! has an unknown performance function of its own allocation and a latency
//! threshold it must meet; the operator wants to meet every threshold at
//! minimum total resource cost.
//!
//! The pipeline here:
//!
//! 1. [`simulator`]: a synthetic ground-truth environment standing in for a
//!    physical testbed: per-slice latency functions, online querying, and
//!    reproducible scenario generation.
//! 2. [`kan`]: Kolmogorov-Arnold networks with B-spline edge activations
//!    learn each slice's latency function from samples, turning the blackbox
//!    constraints into explicit, differentiable ones. A symbolic extraction
//!    pass recovers human-readable closed forms (linear + sine terms).
//! 3. [`problem`]: the constrained program with linear cost, per-slice
//!    performance thresholds, box bounds, shared capacity, and the penalized
//!    scalarization consumed by the gradient-based pieces.
//! 4. [`ga`] + [`trustregion`]: the hybrid solver. A genetic algorithm
//!    explores globally, and every few generations a dogleg trust-region
//!    refinement polishes the incumbent using surrogate gradients.
//! 5. [`gbo`]: the Bayesian-optimization baseline (GP surrogate + expected
//!    improvement over the penalized objective, querying ground truth).
//! 6. [`harness`]: end-to-end runs, budget-fair method comparisons, regret
//!    and normalized-performance metrics, CSV/JSON persistence.

pub mod error;
pub mod ga;
pub mod gbo;
pub mod harness;
pub mod kan;
pub mod problem;
pub mod simulator;
pub mod trustregion;

pub use error::{Error, Result};
