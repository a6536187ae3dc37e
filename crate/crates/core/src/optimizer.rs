//! Projected, importance-weighted SGD with exact cost metering.
//!
//! Each step samples a component index from the configured distribution,
//! queries its gradient (incurring that component's cost), applies the
//! importance-weighted update `x <- proj(x - eta * grad / (n p_i))`, and logs
//! the incurred cost. Suboptimality is measured on the mode-consistent output
//! point (average, suffix average, or last iterate) by the unmetered exact
//! oracle on a fixed cadence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::problem::{FiniteSumProblem, ProblemError};
use crate::sampling::{SamplingDistribution, SamplingError, Strategy};
use crate::vecmath::{axpy, norm};

/// Hard per-run iteration cap; desk-scale experiments stay well below it.
pub const MAX_ITERATIONS: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
}

/// Step-size schedule of the two analyzed regimes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    /// `eta = scale * D / sqrt(S(p) * horizon)`, the constant step tuned for a
    /// fixed horizon in the general convex case. `S(p)` is the
    /// support-restricted second-moment bound of the run's initial
    /// distribution.
    ConstantOverSqrtT { scale: f64, horizon: usize },
    /// `eta_t = scale / (mu * t)` for strongly convex objectives.
    InverseMuT { scale: f64, mu: f64 },
}

impl StepSchedule {
    pub fn constant(horizon: usize) -> Self {
        StepSchedule::ConstantOverSqrtT { scale: 1.0, horizon }
    }

    fn validate(&self) -> Result<(), OptimizerError> {
        match self {
            StepSchedule::ConstantOverSqrtT { scale, horizon } => {
                if !(*scale > 0.0) || *horizon == 0 {
                    return Err(OptimizerError::InvalidConfig(
                        "constant schedule needs positive scale and horizon".into(),
                    ));
                }
            }
            StepSchedule::InverseMuT { scale, mu } => {
                if !(*scale > 0.0) || !(*mu > 0.0) {
                    return Err(OptimizerError::InvalidConfig(
                        "inverse-mu schedule needs positive scale and mu".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Which point a run reports (and measures suboptimality on).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IterateMode {
    /// Running average of all projected iterates.
    Average,
    /// Average over the trailing `fraction` of iterates, aligned to the
    /// evaluation grid.
    SuffixAverage { fraction: f64 },
    /// The latest iterate.
    Last,
}

impl IterateMode {
    fn validate(&self) -> Result<(), OptimizerError> {
        if let IterateMode::SuffixAverage { fraction } = self {
            if !(*fraction > 0.0 && *fraction <= 1.0) {
                return Err(OptimizerError::InvalidConfig(
                    "suffix fraction must lie in (0, 1]".into(),
                ));
            }
        }
        Ok(())
    }
}

/// When a run halts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StoppingRule {
    FixedIterations(usize),
    CostBudget(f64),
    /// Stop at the first evaluation whose measured suboptimality reaches the
    /// target; bounded by the schedule horizon (or the hard cap).
    ErrorTarget { target: f64 },
}

/// Why a run halted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StopCause {
    TargetReached,
    HorizonExhausted,
    CostBudgetExhausted,
    IterationCapReached,
}

/// In-run refresh of the sampling distribution from instantaneous gradient
/// norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicResampling {
    pub kind: DynamicKind,
    /// Steps between recomputations of the distribution.
    pub refresh_every: usize,
    /// Uniform mixture floor applied to each refreshed distribution, guarding
    /// against extreme importance weights when an instantaneous norm is tiny.
    pub floor_alpha: f64,
    /// Charge `sum_i c_i` per norm sweep into the trace's refresh account.
    pub charge_sweeps: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DynamicKind {
    /// `p_i ∝ ||grad f_i(x_t)||`.
    Variance,
    /// `p_i ∝ ||grad f_i(x_t)|| / sqrt(c_i)`.
    Optimal,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub schedule: StepSchedule,
    pub mode: IterateMode,
    pub stop: StoppingRule,
    pub seed: u64,
    /// Cadence (in steps) of unmetered suboptimality evaluations.
    pub eval_every: usize,
    pub dynamic: Option<DynamicResampling>,
    /// Keep the per-step log. Aggregate fields are filled either way.
    pub record_steps: bool,
    pub strategy_name: String,
}

impl RunConfig {
    pub fn new(schedule: StepSchedule, mode: IterateMode, stop: StoppingRule, seed: u64) -> Self {
        Self {
            schedule,
            mode,
            stop,
            seed,
            eval_every: 100,
            dynamic: None,
            record_steps: false,
            strategy_name: String::new(),
        }
    }
}

/// One logged SGD step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub index: usize,
    pub cost: f64,
    pub cum_cost: f64,
    /// Suboptimality of the mode-consistent point, when evaluated this step.
    pub error: Option<f64>,
}

/// Auditable log of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub steps: Vec<StepRecord>,
    /// `(step, suboptimality)` at every evaluation point.
    pub evaluations: Vec<(usize, f64)>,
    pub final_point: Vec<f64>,
    pub total_cost: f64,
    pub seed: u64,
    pub strategy_name: String,
    pub eval_every: usize,
    pub iterations: usize,
    pub stop_cause: StopCause,
    pub iters_to_target: Option<usize>,
    pub cost_to_target: Option<f64>,
    /// Dynamic-strategy bookkeeping; refresh cost is accounted separately from
    /// the sampled-query cost so cumulative cost stays exactly replayable.
    pub refresh_sweeps: usize,
    pub refresh_cost_total: f64,
}

/// Euclidean projection onto the ball of the given diameter around `center`.
pub fn project(x: &[f64], center: &[f64], diameter: f64) -> Vec<f64> {
    let radius = diameter / 2.0;
    let offset: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
    let dist = norm(&offset);
    if dist <= radius {
        return x.to_vec();
    }
    let shrink = radius / dist;
    center
        .iter()
        .zip(&offset)
        .map(|(c, o)| c + shrink * o)
        .collect()
}

/// Support-restricted second-moment bound used for the constant step size.
fn step_size_moment(problem: &FiniteSumProblem, p: &SamplingDistribution<f64>) -> f64 {
    let n = problem.n() as f64;
    let mut sum = 0.0;
    for (i, &g) in problem.lipschitz_bounds().iter().enumerate() {
        let pi = p.probability(i);
        if pi > 0.0 {
            sum += g * g / pi;
        }
    }
    sum / (n * n)
}

struct SuffixTracker {
    /// `(step, iterate-sum-up-to-step)` snapshots on the evaluation grid.
    snapshots: Vec<(usize, Vec<f64>)>,
    fraction: f64,
}

impl SuffixTracker {
    fn new(d: usize, fraction: f64) -> Self {
        Self {
            snapshots: vec![(0, vec![0.0; d])],
            fraction,
        }
    }

    /// Average over the trailing `ceil(fraction * t)` iterates, with the
    /// suffix boundary rounded down to the latest snapshot.
    fn suffix_average(&mut self, t: usize, sum: &[f64]) -> Vec<f64> {
        let span = (self.fraction * t as f64).ceil() as usize;
        let start = t.saturating_sub(span.max(1));
        let pos = self
            .snapshots
            .partition_point(|(s, _)| *s <= start)
            .saturating_sub(1);
        self.snapshots.drain(..pos);
        let (t0, base) = &self.snapshots[0];
        let len = (t - t0) as f64;
        sum.iter()
            .zip(base)
            .map(|(s, b)| (s - b) / len)
            .collect()
    }

    fn snapshot(&mut self, t: usize, sum: &[f64]) {
        self.snapshots.push((t, sum.to_vec()));
    }
}

/// Runs cost-aware SGD from the domain center and returns the trace.
pub fn run(
    problem: &FiniteSumProblem,
    p: &SamplingDistribution<f64>,
    config: &RunConfig,
) -> Result<RunTrace, OptimizerError> {
    config.schedule.validate()?;
    config.mode.validate()?;
    if config.eval_every == 0 {
        return Err(OptimizerError::InvalidConfig("eval_every must be positive".into()));
    }
    if p.len() != problem.n() {
        return Err(OptimizerError::InvalidConfig(format!(
            "distribution over {} indices does not match {} components",
            p.len(),
            problem.n()
        )));
    }
    if let Some(dynamic) = &config.dynamic {
        if dynamic.refresh_every == 0 {
            return Err(OptimizerError::InvalidConfig("refresh_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&dynamic.floor_alpha) {
            return Err(OptimizerError::InvalidConfig("floor_alpha must lie in [0, 1]".into()));
        }
    }

    let limit = match config.stop {
        StoppingRule::FixedIterations(t) => {
            if t == 0 {
                return Err(OptimizerError::InvalidConfig("fixed iteration count must be positive".into()));
            }
            t.min(MAX_ITERATIONS)
        }
        StoppingRule::CostBudget(budget) => {
            if !(budget > 0.0) {
                return Err(OptimizerError::InvalidConfig("cost budget must be positive".into()));
            }
            match config.schedule {
                StepSchedule::ConstantOverSqrtT { horizon, .. } => horizon.min(MAX_ITERATIONS),
                StepSchedule::InverseMuT { .. } => MAX_ITERATIONS,
            }
        }
        StoppingRule::ErrorTarget { target } => {
            if !(target > 0.0) {
                return Err(OptimizerError::InvalidConfig("error target must be positive".into()));
            }
            match config.schedule {
                StepSchedule::ConstantOverSqrtT { horizon, .. } => horizon.min(MAX_ITERATIONS),
                StepSchedule::InverseMuT { .. } => MAX_ITERATIONS,
            }
        }
    };

    let (_, f_star) = problem.true_minimizer()?;
    let diameter = problem.diameter();
    let center = problem.domain_center();
    let base_step = match config.schedule {
        StepSchedule::ConstantOverSqrtT { scale, horizon } => {
            let moment = step_size_moment(problem, p);
            if moment <= 0.0 {
                return Err(OptimizerError::InvalidConfig(
                    "second-moment bound is zero; constant step undefined".into(),
                ));
            }
            scale * diameter / (moment * horizon as f64).sqrt()
        }
        StepSchedule::InverseMuT { .. } => 0.0,
    };
    let step_at = |t: usize| -> f64 {
        match config.schedule {
            StepSchedule::ConstantOverSqrtT { .. } => base_step,
            StepSchedule::InverseMuT { scale, mu } => scale / (mu * t as f64),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = p.clone();
    let mut sampler = current.sampler();
    let mut x = center.clone();
    let mut iterate_sum = vec![0.0; problem.dimension()];
    let mut suffix = match config.mode {
        IterateMode::SuffixAverage { fraction } => {
            Some(SuffixTracker::new(problem.dimension(), fraction))
        }
        _ => None,
    };

    let mut steps = Vec::new();
    if config.record_steps {
        steps.reserve(limit.min(1 << 20));
    }
    let mut evaluations = Vec::new();
    let mut cum_cost = 0.0;
    let mut refresh_sweeps = 0usize;
    let mut refresh_cost_total = 0.0;
    let mut iters_to_target = None;
    let mut cost_to_target = None;
    let mut stop_cause = StopCause::HorizonExhausted;
    let mut t = 0usize;

    while t < limit {
        t += 1;
        if let Some(dynamic) = &config.dynamic {
            if (t - 1).is_multiple_of(dynamic.refresh_every) {
                let norms = problem.dynamic_gradient_norms(&x)?;
                let weights: Vec<f64> = match dynamic.kind {
                    DynamicKind::Variance => norms,
                    DynamicKind::Optimal => norms
                        .iter()
                        .zip(problem.costs())
                        .map(|(&s, &c)| s / c.sqrt())
                        .collect(),
                };
                current = match SamplingDistribution::from_weights(&weights) {
                    Ok(d) => d.smooth(dynamic.floor_alpha)?,
                    Err(SamplingError::DegenerateWeights) => {
                        log::warn!(
                            "all instantaneous gradient norms vanished at step {t}; dynamic \
                             strategy falling back to uniform"
                        );
                        SamplingDistribution::uniform(problem.n())?
                    }
                    Err(e) => return Err(e.into()),
                };
                sampler = current.sampler();
                refresh_sweeps += 1;
                if dynamic.charge_sweeps {
                    refresh_cost_total += problem.total_cost();
                }
            }
        }

        let index = sampler.draw(&mut rng);
        let weight = current.importance_weight(index)?;
        let eval = problem.component_gradient(index, &x)?;
        let mut stepped = x.clone();
        axpy(&mut stepped, -step_at(t) * weight, &eval.gradient);
        x = project(&stepped, &center, diameter);
        debug_assert!(norm(&x) <= diameter / 2.0 * (1.0 + 1e-9));
        for (s, v) in iterate_sum.iter_mut().zip(&x) {
            *s += v;
        }
        cum_cost += eval.incurred_cost;

        let budget_hit = matches!(config.stop, StoppingRule::CostBudget(b) if cum_cost >= b);
        let at_eval = t.is_multiple_of(config.eval_every) || t == limit || budget_hit;
        let mut error = None;
        if at_eval {
            let point = match config.mode {
                IterateMode::Last => x.clone(),
                IterateMode::Average => iterate_sum.iter().map(|s| s / t as f64).collect(),
                IterateMode::SuffixAverage { .. } => {
                    let tracker = suffix.as_mut().unwrap();
                    let avg = tracker.suffix_average(t, &iterate_sum);
                    tracker.snapshot(t, &iterate_sum);
                    avg
                }
            };
            let subopt = problem.objective_value(&point)? - f_star;
            evaluations.push((t, subopt));
            error = Some(subopt);
            if let StoppingRule::ErrorTarget { target } = config.stop {
                if subopt <= target && iters_to_target.is_none() {
                    iters_to_target = Some(t);
                    cost_to_target = Some(cum_cost);
                    stop_cause = StopCause::TargetReached;
                }
            }
        }
        if config.record_steps {
            steps.push(StepRecord {
                t,
                index,
                cost: eval.incurred_cost,
                cum_cost,
                error,
            });
        }
        if stop_cause == StopCause::TargetReached {
            break;
        }
        if budget_hit {
            stop_cause = StopCause::CostBudgetExhausted;
            break;
        }
    }
    if stop_cause == StopCause::HorizonExhausted && limit == MAX_ITERATIONS && t == limit {
        stop_cause = StopCause::IterationCapReached;
    }

    let final_point = match config.mode {
        IterateMode::Last => x,
        IterateMode::Average => iterate_sum.iter().map(|s| s / t as f64).collect(),
        IterateMode::SuffixAverage { .. } => {
            suffix.as_mut().unwrap().suffix_average(t, &iterate_sum)
        }
    };

    Ok(RunTrace {
        steps,
        evaluations,
        final_point,
        total_cost: cum_cost,
        seed: config.seed,
        strategy_name: config.strategy_name.clone(),
        eval_every: config.eval_every,
        iterations: t,
        stop_cause,
        iters_to_target,
        cost_to_target,
        refresh_sweeps,
        refresh_cost_total,
    })
}

/// Configuration for a strategy-comparison experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareConfig {
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub error_target: f64,
    pub eval_every: usize,
    /// Iteration budget per run; also the horizon the constant step is tuned
    /// for.
    pub horizon: usize,
    /// Multiplier on the theory-default constant step `D / sqrt(S(p) T)`.
    pub step_scale: f64,
    pub mode: IterateMode,
    pub refresh_every: usize,
    pub floor_alpha: f64,
    pub charge_dynamic_sweeps: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            strategies: vec![Strategy::Uniform, Strategy::Variance, Strategy::Optimal],
            seeds: (0..20).collect(),
            error_target: 1e-2,
            eval_every: 100,
            horizon: 60_000,
            step_scale: 18.0,
            mode: IterateMode::Last,
            refresh_every: 50,
            floor_alpha: 0.01,
            charge_dynamic_sweeps: false,
        }
    }
}

/// One `(strategy, seed)` cell of the comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareCell {
    pub strategy: Strategy,
    pub seed: u64,
    pub iters_to_target: Option<usize>,
    pub cost_to_target: Option<f64>,
    pub reached: bool,
    pub refresh_cost_total: f64,
}

/// Mean/standard-error aggregates per strategy over reached cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyAggregate {
    pub strategy: Strategy,
    pub cells: usize,
    pub reached: usize,
    pub mean_iters: Option<f64>,
    pub sem_iters: Option<f64>,
    pub mean_cost: Option<f64>,
    pub sem_cost: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub cells: Vec<CompareCell>,
    pub aggregates: Vec<StrategyAggregate>,
}

/// Runs one comparison cell to the error target (or the horizon).
pub fn run_cell(
    problem: &FiniteSumProblem,
    strategy: Strategy,
    seed: u64,
    cfg: &CompareConfig,
) -> Result<CompareCell, OptimizerError> {
    let trace = run_cell_trace(problem, strategy, seed, cfg, false)?;
    Ok(CompareCell {
        strategy,
        seed,
        iters_to_target: trace.iters_to_target,
        cost_to_target: trace.cost_to_target,
        reached: trace.iters_to_target.is_some(),
        refresh_cost_total: trace.refresh_cost_total,
    })
}

/// As [`run_cell`] but returning the full trace (optionally with per-step
/// records).
pub fn run_cell_trace(
    problem: &FiniteSumProblem,
    strategy: Strategy,
    seed: u64,
    cfg: &CompareConfig,
    record_steps: bool,
) -> Result<RunTrace, OptimizerError> {
    let p = strategy.static_distribution(problem.lipschitz_bounds(), problem.costs())?;
    let dynamic = match strategy {
        Strategy::DynamicVariance => Some(DynamicResampling {
            kind: DynamicKind::Variance,
            refresh_every: cfg.refresh_every,
            floor_alpha: cfg.floor_alpha,
            charge_sweeps: cfg.charge_dynamic_sweeps,
        }),
        Strategy::DynamicOptimal => Some(DynamicResampling {
            kind: DynamicKind::Optimal,
            refresh_every: cfg.refresh_every,
            floor_alpha: cfg.floor_alpha,
            charge_sweeps: cfg.charge_dynamic_sweeps,
        }),
        _ => None,
    };
    let config = RunConfig {
        schedule: StepSchedule::ConstantOverSqrtT {
            scale: cfg.step_scale,
            horizon: cfg.horizon,
        },
        mode: cfg.mode,
        stop: StoppingRule::ErrorTarget {
            target: cfg.error_target,
        },
        seed,
        eval_every: cfg.eval_every,
        dynamic,
        record_steps,
        strategy_name: strategy.to_string(),
    };
    run(problem, &p, &config)
}

/// Aggregates cells into per-strategy means in the strategies' given order.
pub fn aggregate_cells(strategies: &[Strategy], cells: &[CompareCell]) -> Vec<StrategyAggregate> {
    strategies
        .iter()
        .map(|&strategy| {
            let mine: Vec<&CompareCell> = cells
                .iter()
                .filter(|c| c.strategy == strategy)
                .collect();
            let reached: Vec<&&CompareCell> = mine.iter().filter(|c| c.reached).collect();
            let mean_sem = |values: Vec<f64>| -> (Option<f64>, Option<f64>) {
                if values.is_empty() {
                    return (None, None);
                }
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                if values.len() < 2 {
                    return (Some(mean), None);
                }
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (Some(mean), Some((var / n).sqrt()))
            };
            let (mean_iters, sem_iters) =
                mean_sem(reached.iter().map(|c| c.iters_to_target.unwrap() as f64).collect());
            let (mean_cost, sem_cost) =
                mean_sem(reached.iter().map(|c| c.cost_to_target.unwrap()).collect());
            StrategyAggregate {
                strategy,
                cells: mine.len(),
                reached: reached.len(),
                mean_iters,
                sem_iters,
                mean_cost,
                sem_cost,
            }
        })
        .collect()
}

/// Runs every `(strategy, seed)` cell sequentially in deterministic order.
///
/// Cells are independent; callers needing parallelism can fan out
/// [`run_cell`] themselves and aggregate with [`aggregate_cells`].
pub fn compare_strategies(
    problem: &FiniteSumProblem,
    cfg: &CompareConfig,
) -> Result<CompareReport, OptimizerError> {
    if cfg.strategies.is_empty() || cfg.seeds.is_empty() {
        return Err(OptimizerError::InvalidConfig(
            "comparison needs at least one strategy and one seed".into(),
        ));
    }
    let mut cells = Vec::with_capacity(cfg.strategies.len() * cfg.seeds.len());
    for &strategy in &cfg.strategies {
        for &seed in &cfg.seeds {
            cells.push(run_cell(problem, strategy, seed, cfg)?);
        }
    }
    let aggregates = aggregate_cells(&cfg.strategies, &cells);
    Ok(CompareReport { cells, aggregates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis;
    use crate::problem::{generate_least_squares, random_point_in_ball, GeneratorParams};
    use crate::vecmath::sub;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn small_problem(seed: u64) -> FiniteSumProblem {
        generate_least_squares(&GeneratorParams::new(60, 8, 3.0, 1.0, 20.0, seed)).unwrap()
    }

    #[test]
    fn project_examples() {
        let center = vec![0.0, 0.0];
        assert_eq!(project(&[0.3, 0.4], &center, 2.0), vec![0.3, 0.4]);
        let p = project(&[3.0, 0.0], &center, 2.0);
        assert_relative_eq!(p[0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(p[1], 0.0);
    }

    #[test]
    fn projection_is_nonexpansive_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let center = vec![0.1, -0.4, 0.2];
        for _ in 0..500 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let mut y = random_point_in_ball(&mut rng, 3, 1.0);
            for (yi, c) in y.iter_mut().zip(&center) {
                *yi += c;
            }
            let px = project(&x, &center, 2.0);
            assert!(norm(&sub(&px, &y)) <= norm(&sub(&x, &y)) + 1e-12);
        }
    }

    #[test]
    fn deterministic_descent_on_single_component() {
        // One quadratic component: SGD is plain projected gradient descent and
        // the averaged iterate's suboptimality decreases monotonically.
        let problem = FiniteSumProblem::from_parts(
            vec![vec![1.3]],
            vec![0.4],
            vec![2.0],
            vec![6.0],
            2.0,
            None,
            None,
            0,
        )
        .unwrap();
        let p = SamplingDistribution::uniform(1).unwrap();
        let mut config = RunConfig::new(
            StepSchedule::ConstantOverSqrtT { scale: 1.0, horizon: 2000 },
            IterateMode::Average,
            StoppingRule::FixedIterations(2000),
            0,
        );
        config.eval_every = 50;
        let trace = run(&problem, &p, &config).unwrap();
        let floor = 1e-18;
        for pair in trace.evaluations.windows(2) {
            let (prev, next) = (pair[0].1, pair[1].1);
            if prev > floor {
                assert!(next <= prev * (1.0 + 1e-9), "suboptimality rose: {prev} -> {next}");
            }
        }
    }

    #[test]
    fn cost_accounting_is_exactly_replayable() {
        let problem = small_problem(5);
        let p = SamplingDistribution::optimal(problem.lipschitz_bounds(), problem.costs()).unwrap();
        let mut config = RunConfig::new(
            StepSchedule::ConstantOverSqrtT { scale: 1.0, horizon: 500 },
            IterateMode::Last,
            StoppingRule::FixedIterations(500),
            9,
        );
        config.record_steps = true;
        let trace = run(&problem, &p, &config).unwrap();
        assert_eq!(trace.steps.len(), 500);
        let mut replay = 0.0;
        for step in &trace.steps {
            assert_eq!(step.cost, problem.costs()[step.index]);
            replay += problem.costs()[step.index];
            assert_eq!(step.cum_cost, replay, "cumulative cost differs at step {}", step.t);
        }
        assert_eq!(trace.total_cost, replay);
    }

    #[test]
    fn expected_total_cost_matches_step_cost_times_t() {
        let problem = small_problem(1);
        let p = SamplingDistribution::variance(problem.lipschitz_bounds()).unwrap();
        let c_p = analysis::step_cost(&p, problem.costs()).unwrap();
        let var_c: f64 = p
            .probabilities()
            .iter()
            .zip(problem.costs())
            .map(|(&pi, &ci)| pi * (ci - c_p).powi(2))
            .sum();
        let t = 50usize;
        let runs = 200usize;
        let mut total = 0.0;
        for seed in 0..runs {
            let config = RunConfig::new(
                StepSchedule::ConstantOverSqrtT { scale: 1.0, horizon: t },
                IterateMode::Last,
                StoppingRule::FixedIterations(t),
                seed as u64,
            );
            total += run(&problem, &p, &config).unwrap().total_cost;
        }
        let mean = total / runs as f64;
        let expected = t as f64 * c_p;
        let sigma = (t as f64 * var_c / runs as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * sigma,
            "mean cost {mean} outside {expected} +- {}",
            3.0 * sigma
        );
    }

    #[test]
    fn estimator_is_unbiased_over_many_draws() {
        let problem = small_problem(3);
        let weights: Vec<f64> = (0..problem.n())
            .map(|i| 0.2 + (i % 7) as f64)
            .collect();
        let p = SamplingDistribution::from_weights(&weights).unwrap();
        let sampler = p.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_point_in_ball(&mut rng, problem.dimension(), problem.diameter() / 2.0);
        let full = problem.full_gradient(&x).unwrap();

        let draws = 100_000;
        let d = problem.dimension();
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        for k in 1..=draws {
            let i = sampler.draw(&mut rng);
            let w = p.importance_weight(i).unwrap();
            let g = problem.component_gradient(i, &x).unwrap().gradient;
            for j in 0..d {
                let value = w * g[j];
                let delta = value - mean[j];
                mean[j] += delta / k as f64;
                m2[j] += delta * (value - mean[j]);
            }
        }
        for j in 0..d {
            let se = (m2[j] / (draws as f64 - 1.0) / draws as f64).sqrt();
            assert!(
                (mean[j] - full[j]).abs() <= 3.0 * se.max(1e-12),
                "coordinate {j}: {} vs {} (se {se})",
                mean[j],
                full[j]
            );
        }
    }

    #[test]
    fn inverse_mu_schedule_shows_one_over_t_scaling() {
        // Non-interpolating one-dimensional instance: targets carry noise, so
        // the optimum value is positive and the noise floor is genuine.
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let n = 20;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.5..1.5)]).collect();
        let targets: Vec<f64> = rows
            .iter()
            .map(|r| r[0] * 0.2 + rng.gen_range(-0.5..0.5))
            .collect();
        let costs = vec![1.0; n];
        let radius = 1.0;
        let bounds: Vec<f64> = rows
            .iter()
            .zip(&targets)
            .map(|(r, y)| r[0].abs() * (r[0].abs() * radius + y.abs()))
            .collect();
        let mu = rows.iter().map(|r| r[0] * r[0]).sum::<f64>() / n as f64;
        let problem = FiniteSumProblem::from_parts(
            rows, targets, costs, bounds, 2.0 * radius, Some(mu), None, 0,
        )
        .unwrap();

        let p = SamplingDistribution::uniform(n).unwrap();
        let mean_subopt = |t: usize| -> f64 {
            let mut acc = 0.0;
            for seed in 0..50u64 {
                let config = RunConfig::new(
                    StepSchedule::InverseMuT { scale: 1.0, mu },
                    IterateMode::SuffixAverage { fraction: 0.5 },
                    StoppingRule::FixedIterations(t),
                    seed,
                );
                let trace = run(&problem, &p, &config).unwrap();
                acc += problem.suboptimality(&trace.final_point).unwrap();
            }
            acc / 50.0
        };
        let at_t = mean_subopt(2000);
        let at_4t = mean_subopt(8000);
        assert!(
            at_t / at_4t >= 2.0,
            "rate scaling too weak: {at_t} vs {at_4t}"
        );
    }

    #[test]
    fn runs_are_deterministic() {
        let problem = small_problem(8);
        let cfg = CompareConfig {
            strategies: vec![Strategy::Optimal],
            seeds: vec![3],
            horizon: 2_000,
            ..CompareConfig::default()
        };
        let a = run_cell(&problem, Strategy::Optimal, 3, &cfg).unwrap();
        let b = run_cell(&problem, Strategy::Optimal, 3, &cfg).unwrap();
        assert_eq!(a.iters_to_target, b.iters_to_target);
        assert_eq!(a.cost_to_target, b.cost_to_target);

        let ta = run_cell_trace(&problem, Strategy::DynamicOptimal, 3, &cfg, true).unwrap();
        let tb = run_cell_trace(&problem, Strategy::DynamicOptimal, 3, &cfg, true).unwrap();
        assert_eq!(ta.steps, tb.steps);
        assert_eq!(ta.final_point, tb.final_point);
    }

    #[test]
    fn error_target_stop_is_flagged_when_unreachable() {
        let problem = small_problem(6);
        let p = SamplingDistribution::uniform(problem.n()).unwrap();
        let config = RunConfig::new(
            StepSchedule::ConstantOverSqrtT { scale: 1.0, horizon: 200 },
            IterateMode::Last,
            StoppingRule::ErrorTarget { target: 1e-30 },
            0,
        );
        let trace = run(&problem, &p, &config).unwrap();
        assert_eq!(trace.stop_cause, StopCause::HorizonExhausted);
        assert_eq!(trace.iters_to_target, None);
        assert_eq!(trace.iterations, 200);
    }

    #[test]
    fn cost_budget_stops_the_run() {
        let problem = small_problem(6);
        let p = SamplingDistribution::uniform(problem.n()).unwrap();
        let budget = 40.0;
        let config = RunConfig::new(
            StepSchedule::ConstantOverSqrtT { scale: 1.0, horizon: 10_000 },
            IterateMode::Last,
            StoppingRule::CostBudget(budget),
            1,
        );
        let trace = run(&problem, &p, &config).unwrap();
        assert_eq!(trace.stop_cause, StopCause::CostBudgetExhausted);
        assert!(trace.total_cost >= budget);
        assert!(trace.iterations < 10_000);
    }

    #[test]
    fn iterates_stay_in_domain_under_large_steps() {
        let problem = small_problem(10);
        let p = SamplingDistribution::uniform(problem.n()).unwrap();
        let config = RunConfig::new(
            StepSchedule::ConstantOverSqrtT { scale: 500.0, horizon: 300 },
            IterateMode::Last,
            StoppingRule::FixedIterations(300),
            4,
        );
        // The debug_assert in the run loop checks every iterate.
        let trace = run(&problem, &p, &config).unwrap();
        assert!(norm(&trace.final_point) <= problem.diameter() / 2.0 * (1.0 + 1e-9));
    }

    #[test]
    fn comparison_rows_for_same_cell_are_identical() {
        let problem = small_problem(15);
        let cfg = CompareConfig {
            strategies: vec![Strategy::Optimal, Strategy::Optimal],
            seeds: vec![7],
            horizon: 3_000,
            ..CompareConfig::default()
        };
        let report = compare_strategies(&problem, &cfg).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert_eq!(report.cells[0].iters_to_target, report.cells[1].iters_to_target);
        assert_eq!(report.cells[0].cost_to_target, report.cells[1].cost_to_target);
    }
}
