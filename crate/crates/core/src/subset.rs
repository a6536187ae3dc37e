//! Bias-budgeted component selection.
//!
//! Excluding components from the finite sum caps the achievable error at the
//! bias floor `beta_pi = (1/n) sum_{j not in pi} G_j` but removes their query
//! costs entirely. Under a bias budget the optimal subset is a min-cost
//! covering knapsack: item cost `omega_i = G_i sqrt(c_i)`, item value
//! `v_i = G_i`, required coverage `V_req`. The greedy density `v_i / omega_i
//! = 1 / sqrt(c_i)` makes cheapest-first selection the right heuristic
//! regardless of the Lipschitz bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::{
    run, IterateMode, OptimizerError, RunConfig, StepSchedule, StoppingRule,
};
use crate::problem::{FiniteSumProblem, ProblemError};
use crate::sampling::SamplingDistribution;
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum SubsetError {
    #[error("subset index {0} out of range for {1} components")]
    IndexOutOfRange(usize, usize),
    #[error("subset contains duplicate index {0}")]
    DuplicateIndex(usize),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("exact search supports at most {max} components, got {n}")]
    TooLargeForExact { n: usize, max: usize },
}

/// Largest instance the exhaustive oracle accepts.
pub const EXACT_ORACLE_MAX_N: usize = 22;

/// Feasibility tolerance on the coverage constraint.
fn coverage_ok<F: Real>(coverage: F, required: F) -> bool {
    coverage >= required - F::c(1e-12) * required.abs().max(F::one())
}

/// Outcome of selecting a component subset against a coverage requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection<F> {
    /// Chosen indices, ascending.
    pub chosen: Vec<usize>,
    /// `(1/n) sum_{j not in chosen} G_j`.
    pub bias_floor: F,
    /// `sum_{i in chosen} G_i`.
    pub coverage_achieved: F,
    pub required_coverage: F,
    /// `sum_{i in chosen} G_i sqrt(c_i)`.
    pub item_cost_total: F,
    pub feasible: bool,
}

fn selection_from_indices<F: Real>(
    lipschitz: &[F],
    costs: &[F],
    mut chosen: Vec<usize>,
    required: F,
) -> SubsetSelection<F> {
    chosen.sort_unstable();
    let mut member = vec![false; lipschitz.len()];
    for &i in &chosen {
        member[i] = true;
    }
    let mut coverage = F::zero();
    let mut omega = F::zero();
    let mut excluded = F::zero();
    for i in 0..lipschitz.len() {
        if member[i] {
            coverage = coverage + lipschitz[i];
            omega = omega + lipschitz[i] * costs[i].sqrt();
        } else {
            excluded = excluded + lipschitz[i];
        }
    }
    let n = F::from_usize(lipschitz.len()).unwrap();
    SubsetSelection {
        chosen,
        bias_floor: excluded / n,
        coverage_achieved: coverage,
        required_coverage: required,
        item_cost_total: omega,
        feasible: coverage_ok(coverage, required),
    }
}

/// Bias upper bound `beta_pi = (1/n) sum_{j not in pi} G_j`.
pub fn bias_floor<F: Real>(lipschitz: &[F], subset: &[usize]) -> Result<F, SubsetError> {
    let n = lipschitz.len();
    let mut member = vec![false; n];
    for &i in subset {
        if i >= n {
            return Err(SubsetError::IndexOutOfRange(i, n));
        }
        if member[i] {
            return Err(SubsetError::DuplicateIndex(i));
        }
        member[i] = true;
    }
    let excluded: F = lipschitz
        .iter()
        .enumerate()
        .filter(|(i, _)| !member[*i])
        .map(|(_, &g)| g)
        .sum();
    Ok(excluded / F::from_usize(n).unwrap())
}

/// Coverage a subset must reach so the bias budget `Gamma` is respected:
/// `sum_j G_j - n Gamma / D` in the convex case, or
/// `sum_j G_j - n sqrt(2 mu Gamma)` with a strong-convexity modulus.
/// A nonpositive result means every subset (including the empty one) is
/// feasible and is returned as-is.
pub fn required_coverage<F: Real>(
    lipschitz: &[F],
    gamma: F,
    diameter: F,
    mu: Option<F>,
) -> Result<F, SubsetError> {
    if !(gamma > F::zero()) {
        return Err(SubsetError::NonPositive("gamma"));
    }
    if !(diameter > F::zero()) {
        return Err(SubsetError::NonPositive("diameter"));
    }
    let n = F::from_usize(lipschitz.len()).unwrap();
    let total: F = lipschitz.iter().copied().sum();
    Ok(match mu {
        None => total - n * gamma / diameter,
        Some(m) => {
            if !(m > F::zero()) {
                return Err(SubsetError::NonPositive("mu"));
            }
            total - n * (F::c(2.0) * m * gamma).sqrt()
        }
    })
}

/// Cheapest-first greedy: visits indices by ascending cost (ties by index)
/// and stops at the first index whose inclusion reaches the coverage. When
/// even the full set cannot cover, returns it with `feasible = false`.
pub fn greedy_select<F: Real>(
    lipschitz: &[F],
    costs: &[F],
    required: F,
) -> Result<SubsetSelection<F>, SubsetError> {
    if lipschitz.len() != costs.len() {
        return Err(SubsetError::LengthMismatch(lipschitz.len(), costs.len()));
    }
    let order = greedy_visitation_order(costs);
    let mut chosen = Vec::new();
    let mut coverage = F::zero();
    if !coverage_ok(coverage, required) {
        for &i in &order {
            chosen.push(i);
            coverage = coverage + lipschitz[i];
            if coverage_ok(coverage, required) {
                break;
            }
        }
    }
    Ok(selection_from_indices(lipschitz, costs, chosen, required))
}

/// The order greedy selection visits indices: ascending cost, ties by index.
/// Depends only on the costs.
pub fn greedy_visitation_order<F: Real>(costs: &[F]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| costs[a].partial_cmp(&costs[b]).unwrap().then(a.cmp(&b)));
    order
}

/// Exhaustive minimum-`omega` feasible subset; ties broken toward the
/// lexicographically smallest index set. Exact oracle for instances with at
/// most [`EXACT_ORACLE_MAX_N`] components.
pub fn exact_select<F: Real>(
    lipschitz: &[F],
    costs: &[F],
    required: F,
) -> Result<SubsetSelection<F>, SubsetError> {
    if lipschitz.len() != costs.len() {
        return Err(SubsetError::LengthMismatch(lipschitz.len(), costs.len()));
    }
    let n = lipschitz.len();
    if n > EXACT_ORACLE_MAX_N {
        return Err(SubsetError::TooLargeForExact {
            n,
            max: EXACT_ORACLE_MAX_N,
        });
    }
    let omegas: Vec<F> = lipschitz
        .iter()
        .zip(costs)
        .map(|(&g, &c)| g * c.sqrt())
        .collect();

    let mut best: Option<(F, Vec<usize>)> = None;
    for mask in 0u32..(1u32 << n) {
        let mut coverage = F::zero();
        let mut omega = F::zero();
        for i in 0..n {
            if mask & (1 << i) != 0 {
                coverage = coverage + lipschitz[i];
                omega = omega + omegas[i];
            }
        }
        if !coverage_ok(coverage, required) {
            continue;
        }
        let indices = || (0..n).filter(|i| mask & (1 << i) != 0).collect::<Vec<_>>();
        match &best {
            None => best = Some((omega, indices())),
            Some((best_omega, best_indices)) => {
                if omega < *best_omega
                    || (omega == *best_omega && indices() < best_indices.clone())
                {
                    best = Some((omega, indices()));
                }
            }
        }
    }
    match best {
        Some((_, chosen)) => Ok(selection_from_indices(lipschitz, costs, chosen, required)),
        // No feasible subset exists; report the full set, infeasible.
        None => Ok(selection_from_indices(
            lipschitz,
            costs,
            (0..n).collect(),
            required,
        )),
    }
}

/// Cost to reach error `epsilon` when optimizing over subset `pi` with the
/// restricted optimal distribution:
/// `D^2 (sum_{i in pi} G_i sqrt(c_i))^2 / (n^2 (epsilon - D beta_pi)^2)`,
/// or `Infeasible` when the bias floor meets or exceeds the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BiasedCost<F> {
    Feasible(F),
    Infeasible { bias_floor: F },
}

impl<F: Real> BiasedCost<F> {
    pub fn value(&self) -> Option<F> {
        match self {
            BiasedCost::Feasible(v) => Some(*v),
            BiasedCost::Infeasible { .. } => None,
        }
    }
}

pub fn biased_cost_to_epsilon<F: Real>(
    lipschitz: &[F],
    costs: &[F],
    subset: &[usize],
    diameter: F,
    epsilon: F,
) -> Result<BiasedCost<F>, SubsetError> {
    if lipschitz.len() != costs.len() {
        return Err(SubsetError::LengthMismatch(lipschitz.len(), costs.len()));
    }
    if !(epsilon > F::zero()) {
        return Err(SubsetError::NonPositive("epsilon"));
    }
    let beta = bias_floor(lipschitz, subset)?;
    if epsilon <= diameter * beta {
        return Ok(BiasedCost::Infeasible { bias_floor: beta });
    }
    let omega: F = subset
        .iter()
        .map(|&i| lipschitz[i] * costs[i].sqrt())
        .sum();
    let n = F::from_usize(lipschitz.len()).unwrap();
    let slack = epsilon - diameter * beta;
    Ok(BiasedCost::Feasible(
        diameter * diameter * omega * omega / (n * n * slack * slack),
    ))
}

/// Bias budget that makes greedy selection keep exactly the `k` cheapest
/// components (up to feasibility tolerance): `Gamma = D * beta(cheapest k)`.
/// Convenience for laying out sweep grids by target subset size.
pub fn gamma_for_prefix_size<F: Real>(
    lipschitz: &[F],
    costs: &[F],
    diameter: F,
    k: usize,
) -> Result<F, SubsetError> {
    if lipschitz.len() != costs.len() {
        return Err(SubsetError::LengthMismatch(lipschitz.len(), costs.len()));
    }
    let k = k.min(lipschitz.len());
    let order = greedy_visitation_order(costs);
    let excluded: F = order[k..].iter().map(|&i| lipschitz[i]).sum();
    let n = F::from_usize(lipschitz.len()).unwrap();
    Ok(diameter * excluded / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Selector {
    Greedy,
    Exact,
}

impl std::str::FromStr for Selector {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Selector::Greedy),
            "exact" => Ok(Selector::Exact),
            other => Err(format!("unknown selector `{other}` (expected greedy or exact)")),
        }
    }
}

/// One row of a bias-budget sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow<F> {
    pub gamma: F,
    pub subset_size: usize,
    pub bias_floor: F,
    pub v_req: F,
    /// Predicted cost to the target error; `None` when infeasible.
    pub predicted_cost: Option<F>,
    pub feasible: bool,
    pub empirical_error: Option<F>,
    pub empirical_cost: Option<F>,
}

/// Predicted-only sweep over a bias-budget grid (no empirical runs).
pub fn sweep_rows<F: Real>(
    lipschitz: &[F],
    costs: &[F],
    diameter: F,
    mu: Option<F>,
    epsilon: F,
    gamma_grid: &[F],
    selector: Selector,
) -> Result<Vec<SweepRow<F>>, SubsetError> {
    let mut rows = Vec::with_capacity(gamma_grid.len());
    for &gamma in gamma_grid {
        let v_req = required_coverage(lipschitz, gamma, diameter, mu)?;
        let selection = match selector {
            Selector::Greedy => greedy_select(lipschitz, costs, v_req)?,
            Selector::Exact => exact_select(lipschitz, costs, v_req)?,
        };
        let predicted = if selection.feasible {
            biased_cost_to_epsilon(lipschitz, costs, &selection.chosen, diameter, epsilon)?.value()
        } else {
            None
        };
        rows.push(SweepRow {
            gamma,
            subset_size: selection.chosen.len(),
            bias_floor: selection.bias_floor,
            v_req,
            predicted_cost: predicted,
            feasible: selection.feasible && predicted.is_some(),
            empirical_error: None,
            empirical_cost: None,
        });
    }
    Ok(rows)
}

/// Settings for the optional empirical run attached to each sweep row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmpiricalRunConfig {
    pub seed: u64,
    pub horizon: usize,
    pub step_scale: f64,
    pub eval_every: usize,
    /// Error target the per-row run stops at (measured on the full objective).
    pub target: f64,
}

impl Default for EmpiricalRunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon: 60_000,
            step_scale: 8.0,
            eval_every: 100,
            target: 1e-2,
        }
    }
}

/// Full bias-budget sweep against a problem instance. For each `Gamma` the
/// row reports the selection and predicted cost; with `empirical` set, SGD
/// restricted to the subset (sampling `q*_i ∝ G_i / sqrt(c_i)` within it)
/// also runs, and the row records the full-objective error it ends at plus
/// either the cost at which it hit the target or its total spend.
pub fn gamma_sweep(
    problem: &FiniteSumProblem,
    epsilon: f64,
    gamma_grid: &[f64],
    selector: Selector,
    empirical: Option<EmpiricalRunConfig>,
) -> Result<Vec<SweepRow<f64>>, SweepError> {
    let lipschitz = problem.lipschitz_bounds();
    let costs = problem.costs();
    let mut rows = sweep_rows(
        lipschitz,
        costs,
        problem.diameter(),
        problem.strong_convexity(),
        epsilon,
        gamma_grid,
        selector,
    )?;
    let Some(run_cfg) = empirical else {
        return Ok(rows);
    };
    for (row, &gamma) in rows.iter_mut().zip(gamma_grid) {
        let v_req = required_coverage(lipschitz, gamma, problem.diameter(), problem.strong_convexity())?;
        let selection = match selector {
            Selector::Greedy => greedy_select(lipschitz, costs, v_req)?,
            Selector::Exact => exact_select(lipschitz, costs, v_req)?,
        };
        if selection.chosen.is_empty() {
            continue; // nothing to sample from; leave empirical fields blank
        }
        let mut weights = vec![0.0; problem.n()];
        for &i in &selection.chosen {
            weights[i] = lipschitz[i] / costs[i].sqrt();
        }
        let q = match SamplingDistribution::from_weights(&weights) {
            Ok(q) => q,
            Err(_) => continue, // all kept bounds are zero; nothing to run
        };
        let config = RunConfig {
            schedule: StepSchedule::ConstantOverSqrtT {
                scale: run_cfg.step_scale,
                horizon: run_cfg.horizon,
            },
            mode: IterateMode::Last,
            stop: StoppingRule::ErrorTarget { target: run_cfg.target },
            seed: run_cfg.seed,
            eval_every: run_cfg.eval_every,
            dynamic: None,
            record_steps: false,
            strategy_name: format!("restricted-optimal:{}", selection.chosen.len()),
        };
        let trace = run(problem, &q, &config)?;
        row.empirical_error = trace.evaluations.last().map(|&(_, e)| e);
        row.empirical_cost = Some(trace.cost_to_target.unwrap_or(trace.total_cost));
    }
    Ok(rows)
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Subset(#[from] SubsetError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}
