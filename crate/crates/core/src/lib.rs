//! Cost-aware stochastic optimization toolkit.
//!
//! Minimizing a finite sum `f(x) = (1/n) sum_i f_i(x)` where querying the
//! gradient of component `i` costs `c_i` changes which sampling distribution
//! is best: the cheapest route to a target error samples
//! `p*_i ∝ G_i / sqrt(c_i)`, trading each component's gradient magnitude
//! against its price. This crate implements that sampling family and the
//! machinery around it:
//!
//! - [`problem`]: synthetic least-squares instances with per-component costs
//!   and exact measurement oracles;
//! - [`sampling`]: the distributions themselves (uniform, variance-minimizing,
//!   cost-aware optimal, smoothed, cost-biased) and reproducible index draws;
//! - [`analysis`]: second moments, per-step costs, the `J(p) = S(p) C(p)`
//!   objective, closed-form baseline costs, and the chi-square sub-optimality
//!   identities;
//! - [`optimizer`]: projected importance-weighted SGD with exact cost
//!   metering and strategy comparison;
//! - [`subset`]: bias-budgeted component selection via the min-cost covering
//!   knapsack reduction, with a greedy cheapest-first heuristic and an
//!   exhaustive oracle;
//! - [`rollout`]: a desk-scale simulator of the cost-aware GRPO sampling loop
//!   over synthetic rollout pools;
//! - [`verify`]: the named invariant checks behind the CLI `verify` command.
//!
//! The distribution and cost algebra is generic over the scalar type via
//! [`scalar::Real`]; the experiment machinery runs at `f64`.

// Validation sites use `!(x > 0)` instead of `x <= 0` so NaN inputs are
// rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod optimizer;
pub mod problem;
pub mod rollout;
pub mod sampling;
pub mod scalar;
pub mod subset;
pub mod vecmath;
pub mod verify;

pub use problem::{CostedComponent, EvaluationResult, FiniteSumProblem, GeneratorParams};
pub use sampling::Strategy;

/// Scalar used by the experiment machinery and the CLI.
pub type Scalar = f64;

/// Sampling distribution at the default scalar.
pub type Dist = sampling::SamplingDistribution<Scalar>;

/// Cost-complexity report at the default scalar.
pub type Report = analysis::CostComplexityReport<Scalar>;

/// Subset-selection result at the default scalar.
pub type Selection = subset::SubsetSelection<Scalar>;
