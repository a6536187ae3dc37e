//! Finite-sum least-squares instances with per-component query costs.
//!
//! Each component is `f_i(x) = 1/2 (a_i' x - y_i)^2` over a Euclidean ball,
//! with a Lipschitz bound `G_i = ||a_i||^2 * 2D` and a positive cost `c_i`
//! charged per gradient query. The generator plants the solution so that
//! suboptimality can be measured exactly; the exact full-gradient and
//! minimizer oracles here are test/measurement utilities and never charge
//! cost.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vecmath::{dot, norm};

/// Relative slack (w.r.t. the diameter) allowed when checking that a query
/// point lies inside the domain; absorbs floating-point projection residue.
pub const DOMAIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("cost range is invalid: high {high} < low {low}")]
    InvalidCostRange { low: f64, high: f64 },
    #[error("{0} must be at least 1")]
    InvalidSize(&'static str),
    #[error("component index {0} out of range for {1} components")]
    IndexOutOfRange(usize, usize),
    #[error("point lies outside the domain (norm {norm}, radius {radius})")]
    OutsideDomain { norm: f64, radius: f64 },
    #[error("dimension mismatch: point has {0} coordinates, problem has {1}")]
    DimensionMismatch(usize, usize),
    #[error("{0}")]
    InvalidInstance(String),
    #[error("unsupported instance: {0}")]
    Unsupported(String),
}

/// One summand of the finite sum: gradient-oracle access priced at `cost`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostedComponent {
    pub index: usize,
    pub lipschitz_bound: f64,
    pub cost: f64,
}

/// Result of a metered gradient query.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    pub gradient: Vec<f64>,
    pub incurred_cost: f64,
}

/// Parameters for [`generate_least_squares`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub n: usize,
    pub d: usize,
    /// Maximum data-vector norm `L`; rows are globally rescaled to attain it.
    pub norm_bound: f64,
    pub cost_low: f64,
    pub cost_high: f64,
    pub seed: u64,
    /// Domain diameter `D`; the domain is the ball of radius `D/2` at the origin.
    pub diameter: f64,
    /// Rank correlation between costs and data-vector norms, in [-1, 1].
    /// Zero keeps the independent i.i.d.-uniform cost draw; nonzero switches
    /// to a Gaussian copula over ranks with evenly spaced cost marginals.
    #[serde(default)]
    pub cost_norm_correlation: f64,
}

impl GeneratorParams {
    pub fn new(n: usize, d: usize, norm_bound: f64, cost_low: f64, cost_high: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            norm_bound,
            cost_low,
            cost_high,
            seed,
            diameter: 2.0,
            cost_norm_correlation: 0.0,
        }
    }
}

/// Finite-sum least-squares problem over a Euclidean ball centered at the
/// origin.
///
/// Serializes to the single-document JSON schema
/// `{n, d, D, mu?, seed, costs[], lipschitz_bounds[], a[][], y[], x0[]}`;
/// round-trips are value-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawProblem", into = "RawProblem")]
pub struct FiniteSumProblem {
    n: usize,
    d: usize,
    diameter: f64,
    mu: Option<f64>,
    seed: u64,
    costs: Vec<f64>,
    lipschitz_bounds: Vec<f64>,
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
    planted: Option<Vec<f64>>,
    row_norms: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawProblem {
    n: usize,
    d: usize,
    #[serde(rename = "D")]
    diameter: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    mu: Option<f64>,
    seed: u64,
    costs: Vec<f64>,
    lipschitz_bounds: Vec<f64>,
    a: Vec<Vec<f64>>,
    y: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    x0: Option<Vec<f64>>,
}

impl From<RawProblem> for FiniteSumProblem {
    fn from(raw: RawProblem) -> Self {
        let row_norms = raw.a.iter().map(|r| norm(r)).collect();
        Self {
            n: raw.n,
            d: raw.d,
            diameter: raw.diameter,
            mu: raw.mu,
            seed: raw.seed,
            costs: raw.costs,
            lipschitz_bounds: raw.lipschitz_bounds,
            rows: raw.a,
            targets: raw.y,
            planted: raw.x0,
            row_norms,
        }
    }
}

impl From<FiniteSumProblem> for RawProblem {
    fn from(p: FiniteSumProblem) -> Self {
        Self {
            n: p.n,
            d: p.d,
            diameter: p.diameter,
            mu: p.mu,
            seed: p.seed,
            costs: p.costs,
            lipschitz_bounds: p.lipschitz_bounds,
            a: p.rows,
            y: p.targets,
            x0: p.planted,
        }
    }
}

/// Generates the synthetic least-squares benchmark instance.
///
/// Pseudorandom scheme (ChaCha8, seeded from `seed`, one stream per purpose):
/// stream 0 draws the data matrix row by row — a per-row scale factor uniform
/// in `[0.1, 1)` followed by `d` standard normal entries multiplied by it —
/// after which all rows are rescaled by one global factor so the maximum row
/// norm equals `norm_bound`. The per-row scales spread the component gradient
/// bounds over roughly an order of magnitude, which d-dimensional Gaussian
/// rows alone would concentrate too tightly. Stream 1 draws costs uniformly
/// in `[cost_low, cost_high]`, independent of the data; with a nonzero
/// `cost_norm_correlation` it instead couples cost ranks to norm ranks
/// through a Gaussian copula (evenly spaced cost marginals), which produces
/// the positively/negatively correlated regimes where the variance strategy
/// loses/beats uniform sampling. Stream 2 plants the solution `x0` uniformly
/// in the ball of radius `D/4`, and targets are `y_i = a_i' x0`, so the
/// optimum is `x0` with objective value exactly zero.
pub fn generate_least_squares(params: &GeneratorParams) -> Result<FiniteSumProblem, ProblemError> {
    if params.n == 0 {
        return Err(ProblemError::InvalidSize("n"));
    }
    if params.d == 0 {
        return Err(ProblemError::InvalidSize("d"));
    }
    if params.cost_high < params.cost_low {
        return Err(ProblemError::InvalidCostRange {
            low: params.cost_low,
            high: params.cost_high,
        });
    }
    if !(params.norm_bound > 0.0) {
        return Err(ProblemError::InvalidInstance(
            "norm bound must be positive".into(),
        ));
    }
    if !(params.cost_low > 0.0) {
        return Err(ProblemError::InvalidInstance("costs must be positive".into()));
    }
    if !(params.diameter > 0.0) {
        return Err(ProblemError::InvalidInstance(
            "diameter must be positive".into(),
        ));
    }

    let mut data_rng = ChaCha8Rng::seed_from_u64(params.seed);
    data_rng.set_stream(0);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(params.n);
    for _ in 0..params.n {
        let scale: f64 = data_rng.gen_range(0.1..1.0);
        rows.push(
            (0..params.d)
                .map(|_| scale * data_rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
    }
    let max_norm = rows.iter().map(|r| norm(r)).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return Err(ProblemError::InvalidInstance(
            "degenerate data draw: all rows zero".into(),
        ));
    }
    let rescale = params.norm_bound / max_norm;
    for row in &mut rows {
        for v in row.iter_mut() {
            *v *= rescale;
        }
    }

    if !(-1.0..=1.0).contains(&params.cost_norm_correlation) {
        return Err(ProblemError::InvalidInstance(
            "cost/norm correlation must lie in [-1, 1]".into(),
        ));
    }
    let mut cost_rng = ChaCha8Rng::seed_from_u64(params.seed);
    cost_rng.set_stream(1);
    let costs: Vec<f64> = if params.cost_norm_correlation == 0.0 {
        (0..params.n)
            .map(|_| {
                if params.cost_low == params.cost_high {
                    params.cost_low
                } else {
                    cost_rng.gen_range(params.cost_low..params.cost_high)
                }
            })
            .collect()
    } else {
        correlated_costs(&rows, params, &mut cost_rng)
    };

    let mut solution_rng = ChaCha8Rng::seed_from_u64(params.seed);
    solution_rng.set_stream(2);
    let mut x0: Vec<f64> = (0..params.d)
        .map(|_| solution_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let direction_norm = norm(&x0);
    let radius = params.diameter / 4.0;
    let u: f64 = solution_rng.gen::<f64>();
    let r = radius * u.powf(1.0 / params.d as f64);
    if direction_norm > 0.0 {
        for v in x0.iter_mut() {
            *v *= r / direction_norm;
        }
    }

    let targets: Vec<f64> = rows.iter().map(|row| dot(row, &x0)).collect();
    let lipschitz_bounds: Vec<f64> = rows
        .iter()
        .map(|row| {
            let sq = dot(row, row);
            sq * (2.0 * params.diameter)
        })
        .collect();
    let row_norms = rows.iter().map(|r| norm(r)).collect();

    Ok(FiniteSumProblem {
        n: params.n,
        d: params.d,
        diameter: params.diameter,
        mu: None,
        seed: params.seed,
        costs,
        lipschitz_bounds,
        rows,
        targets,
        planted: Some(x0),
        row_norms,
    })
}

/// Costs whose ranks follow a Gaussian copula against the data-norm ranks:
/// latent pairs `(x_i, rho x_i + sqrt(1 - rho^2) w_i)` are drawn i.i.d., the
/// component with the k-th smallest norm is matched to the k-th smallest
/// latent `x`, and its cost is the evenly spaced quantile of the paired
/// latent `y`'s rank.
fn correlated_costs<R: Rng + ?Sized>(
    rows: &[Vec<f64>],
    params: &GeneratorParams,
    rng: &mut R,
) -> Vec<f64> {
    let n = rows.len();
    let rho = params.cost_norm_correlation;
    let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y: Vec<f64> = x
        .iter()
        .zip(&w)
        .map(|(&xi, &wi)| rho * xi + (1.0 - rho * rho).sqrt() * wi)
        .collect();

    let sorted_indices = |values: &[f64]| -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        order
    };
    let norm_order = sorted_indices(&rows.iter().map(|r| norm(r)).collect::<Vec<_>>());
    let x_order = sorted_indices(&x);
    let mut y_rank = vec![0usize; n];
    for (rank, &i) in sorted_indices(&y).iter().enumerate() {
        y_rank[i] = rank;
    }

    let mut costs = vec![0.0; n];
    let span = params.cost_high - params.cost_low;
    for k in 0..n {
        let component = norm_order[k];
        let latent = x_order[k];
        let quantile = (y_rank[latent] as f64 + 0.5) / n as f64;
        costs[component] = params.cost_low + span * quantile;
    }
    costs
}

impl FiniteSumProblem {
    /// Builds an instance from explicit data; validates the invariants the
    /// generator guarantees by construction.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        rows: Vec<Vec<f64>>,
        targets: Vec<f64>,
        costs: Vec<f64>,
        lipschitz_bounds: Vec<f64>,
        diameter: f64,
        mu: Option<f64>,
        planted: Option<Vec<f64>>,
        seed: u64,
    ) -> Result<Self, ProblemError> {
        let n = rows.len();
        if n == 0 {
            return Err(ProblemError::InvalidSize("n"));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(ProblemError::InvalidSize("d"));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(ProblemError::InvalidInstance("ragged data rows".into()));
        }
        if targets.len() != n || costs.len() != n || lipschitz_bounds.len() != n {
            return Err(ProblemError::InvalidInstance(
                "targets, costs and bounds must all have length n".into(),
            ));
        }
        if costs.iter().any(|&c| !(c > 0.0)) {
            return Err(ProblemError::InvalidInstance("costs must be positive".into()));
        }
        if lipschitz_bounds.iter().any(|&g| g < 0.0) {
            return Err(ProblemError::InvalidInstance(
                "Lipschitz bounds must be nonnegative".into(),
            ));
        }
        if let Some(m) = mu {
            if !(m > 0.0) {
                return Err(ProblemError::InvalidInstance(
                    "strong-convexity modulus must be positive".into(),
                ));
            }
        }
        if !(diameter > 0.0) {
            return Err(ProblemError::InvalidInstance(
                "diameter must be positive".into(),
            ));
        }
        if let Some(x0) = &planted {
            if x0.len() != d {
                return Err(ProblemError::DimensionMismatch(x0.len(), d));
            }
        }
        let row_norms = rows.iter().map(|r| norm(r)).collect();
        Ok(Self {
            n,
            d,
            diameter,
            mu,
            seed,
            costs,
            lipschitz_bounds,
            rows,
            targets,
            planted,
            row_norms,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn domain_center(&self) -> Vec<f64> {
        vec![0.0; self.d]
    }

    pub fn strong_convexity(&self) -> Option<f64> {
        self.mu
    }

    pub fn set_strong_convexity(&mut self, mu: f64) -> Result<(), ProblemError> {
        if !(mu > 0.0) {
            return Err(ProblemError::InvalidInstance(
                "strong-convexity modulus must be positive".into(),
            ));
        }
        self.mu = Some(mu);
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn lipschitz_bounds(&self) -> &[f64] {
        &self.lipschitz_bounds
    }

    pub fn data_row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn planted_solution(&self) -> Option<&[f64]> {
        self.planted.as_deref()
    }

    pub fn component(&self, index: usize) -> Result<CostedComponent, ProblemError> {
        if index >= self.n {
            return Err(ProblemError::IndexOutOfRange(index, self.n));
        }
        Ok(CostedComponent {
            index,
            lipschitz_bound: self.lipschitz_bounds[index],
            cost: self.costs[index],
        })
    }

    pub fn components(&self) -> impl Iterator<Item = CostedComponent> + '_ {
        (0..self.n).map(|i| CostedComponent {
            index: i,
            lipschitz_bound: self.lipschitz_bounds[i],
            cost: self.costs[i],
        })
    }

    fn check_in_domain(&self, x: &[f64]) -> Result<(), ProblemError> {
        if x.len() != self.d {
            return Err(ProblemError::DimensionMismatch(x.len(), self.d));
        }
        let radius = self.diameter / 2.0;
        let nx = norm(x);
        if nx > radius * (1.0 + DOMAIN_TOLERANCE) {
            return Err(ProblemError::OutsideDomain { norm: nx, radius });
        }
        Ok(())
    }

    /// Metered gradient oracle: the exact `∇f_i(x) = (a_i' x - y_i) a_i`
    /// together with the incurred cost `c_i`.
    pub fn component_gradient(&self, i: usize, x: &[f64]) -> Result<EvaluationResult, ProblemError> {
        if i >= self.n {
            return Err(ProblemError::IndexOutOfRange(i, self.n));
        }
        self.check_in_domain(x)?;
        let residual = dot(&self.rows[i], x) - self.targets[i];
        Ok(EvaluationResult {
            gradient: self.rows[i].iter().map(|&a| residual * a).collect(),
            incurred_cost: self.costs[i],
        })
    }

    /// Unmetered exact oracle `(1/n) sum_i ∇f_i(x)`; for tests and error
    /// measurement only, never on the cost-metered optimizer path.
    pub fn full_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.check_in_domain(x)?;
        let mut acc = vec![0.0; self.d];
        for (row, &target) in self.rows.iter().zip(&self.targets) {
            let residual = dot(row, x) - target;
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += residual * v;
            }
        }
        let inv_n = 1.0 / self.n as f64;
        for a in acc.iter_mut() {
            *a *= inv_n;
        }
        Ok(acc)
    }

    /// Objective value `f(x) = (1/n) sum_i 1/2 (a_i' x - y_i)^2` (unmetered).
    pub fn objective_value(&self, x: &[f64]) -> Result<f64, ProblemError> {
        self.check_in_domain(x)?;
        let mut acc = 0.0;
        for (row, &target) in self.rows.iter().zip(&self.targets) {
            let residual = dot(row, x) - target;
            acc += 0.5 * residual * residual;
        }
        Ok(acc / self.n as f64)
    }

    /// Objective restricted to a component subset,
    /// `f_pi(x) = (1/n) sum_{i in pi} 1/2 (a_i' x - y_i)^2`.
    pub fn restricted_objective_value(&self, subset: &[usize], x: &[f64]) -> Result<f64, ProblemError> {
        self.check_in_domain(x)?;
        let mut acc = 0.0;
        for &i in subset {
            if i >= self.n {
                return Err(ProblemError::IndexOutOfRange(i, self.n));
            }
            let residual = dot(&self.rows[i], x) - self.targets[i];
            acc += 0.5 * residual * residual;
        }
        Ok(acc / self.n as f64)
    }

    /// Domain-constrained minimizer and its objective value.
    ///
    /// Planted instances return the stored solution with value exactly zero;
    /// otherwise the normal equations are solved exactly, which fails for
    /// singular systems or a minimizer outside the domain.
    pub fn true_minimizer(&self) -> Result<(Vec<f64>, f64), ProblemError> {
        if let Some(x0) = &self.planted {
            return Ok((x0.clone(), 0.0));
        }
        let x = self.solve_normal_equations(None)?;
        self.check_in_domain(&x).map_err(|_| {
            ProblemError::Unsupported("unconstrained minimizer lies outside the domain".into())
        })?;
        let value = self.objective_value(&x)?;
        Ok((x, value))
    }

    /// Least-squares minimizer over a component subset (normal equations on
    /// the kept rows). Fails when the restricted system is singular.
    pub fn restricted_minimizer(&self, subset: &[usize]) -> Result<Vec<f64>, ProblemError> {
        self.solve_normal_equations(Some(subset))
    }

    #[allow(clippy::needless_range_loop)]
    fn solve_normal_equations(&self, subset: Option<&[usize]>) -> Result<Vec<f64>, ProblemError> {
        let indices: Vec<usize> = match subset {
            Some(s) => s.to_vec(),
            None => (0..self.n).collect(),
        };
        let d = self.d;
        let mut h = vec![vec![0.0f64; d]; d];
        let mut rhs = vec![0.0f64; d];
        for &i in &indices {
            if i >= self.n {
                return Err(ProblemError::IndexOutOfRange(i, self.n));
            }
            let row = &self.rows[i];
            for j in 0..d {
                rhs[j] += row[j] * self.targets[i];
                for k in j..d {
                    h[j][k] += row[j] * row[k];
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                h[j][k] = h[k][j];
            }
        }
        solve_linear_system(&mut h, &mut rhs)
            .ok_or_else(|| ProblemError::Unsupported("singular normal equations".into()))
    }

    /// Instantaneous gradient norms `||∇f_i(x)||` for all components.
    ///
    /// Benchmark/test utility for the dynamic strategies; it charges no cost
    /// itself — callers that want honest dynamic accounting charge
    /// `sum_i c_i` per sweep separately.
    pub fn dynamic_gradient_norms(&self, x: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.check_in_domain(x)?;
        Ok(self
            .rows
            .iter()
            .zip(&self.targets)
            .zip(&self.row_norms)
            .map(|((row, &target), &rn)| (dot(row, x) - target).abs() * rn)
            .collect())
    }

    /// Sum of all component costs (price of one full dynamic-norm sweep).
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// Suboptimality `f(x) - f(x*)` of a candidate point.
    pub fn suboptimality(&self, x: &[f64]) -> Result<f64, ProblemError> {
        let (_, f_star) = self.true_minimizer()?;
        Ok(self.objective_value(x)? - f_star)
    }
}

/// Gaussian elimination with partial pivoting; `None` on singular systems.
#[allow(clippy::needless_range_loop)]
fn solve_linear_system(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let d = b.len();
    for col in 0..d {
        let pivot = (col..d).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..d {
            let factor = a[row][col] / a[col][col];
            for k in col..d {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for col in (0..d).rev() {
        let mut acc = b[col];
        for k in col + 1..d {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Central finite-difference gradient of one component; test oracle.
pub fn finite_difference_gradient(
    problem: &FiniteSumProblem,
    i: usize,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>, ProblemError> {
    if i >= problem.n() {
        return Err(ProblemError::IndexOutOfRange(i, problem.n()));
    }
    let f = |point: &[f64]| -> f64 {
        let residual = dot(problem.data_row(i), point) - problem.target(i);
        0.5 * residual * residual
    };
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        grad[j] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Uniform draw from the ball of the given radius (test utility).
pub fn random_point_in_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, radius: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let nx = norm(&x);
    if nx == 0.0 {
        return x;
    }
    let u: f64 = rng.gen::<f64>();
    let r = radius * u.powf(1.0 / d as f64);
    for v in x.iter_mut() {
        *v *= r / nx;
    }
    x
}

#[allow(dead_code)]
fn residual_vector(problem: &FiniteSumProblem, x: &[f64]) -> Vec<f64> {
    problem
        .rows
        .iter()
        .zip(&problem.targets)
        .map(|(row, &t)| dot(row, x) - t)
        .collect()
}
