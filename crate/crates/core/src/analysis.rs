//! Cost-complexity algebra for importance-sampled SGD.
//!
//! Second moments, expected per-step costs, the objective `J(p) = S(p) C(p)`
//! that total training cost is proportional to, closed-form costs of the
//! uniform/variance/optimal strategies, and the sub-optimality identities that
//! tie a proxy distribution's overhead to a cost-biased chi-square divergence.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{SamplingDistribution, SamplingError};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("component {0} has positive Lipschitz bound but zero probability; second moment unbounded")]
    UnboundedMoment(usize),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("correlation coefficient {0} outside (0, 1]")]
    RhoOutOfRange(f64),
    #[error("component {0} has zero Lipschitz bound; excluded from the proxy-gap formula")]
    ExcludedComponent(usize),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// Cost-to-accuracy summary for one sampling distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostComplexityReport<F> {
    /// Second-moment bound `S(p) = (1/n^2) sum_i G_i^2 / p_i`.
    pub second_moment_bound: F,
    /// Expected per-step cost `C(p) = sum_i p_i c_i`.
    pub step_cost: F,
    /// `J(p) = S(p) C(p)`.
    pub objective: F,
    /// `D^2 S(p) C(p) / eps^2`.
    pub cost_to_epsilon_convex: F,
    /// `4 S(p) C(p) / (mu eps)` when a strong-convexity modulus is known.
    pub cost_to_epsilon_strongly_convex: Option<F>,
}

/// Closed-form expected costs of the three reference strategies.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaselineCosts<F> {
    pub k_unif: F,
    pub k_var: F,
    pub k_opt: F,
}

/// Both sides of the proxy sub-optimality identity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SuboptimalityGap<F> {
    /// `J(p') / J(p*)` from independent `S` and `C` evaluations.
    pub ratio: F,
    /// Chi-square divergence between the cost-biased optimal and cost-biased
    /// empirical distributions; the identity says `ratio = 1 + chi2`.
    pub chi2_of_cost_biased: F,
}

/// Monte Carlo estimate of the proxy gap under additive norm noise.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MonteCarloProxyGap<F> {
    pub empirical_ratio: F,
    pub rho_hat: F,
    /// Fraction of noise draws rejected for producing a nonpositive proxy norm.
    pub rejection_rate: F,
}

/// `S(p) <= (1/n^2) sum_i G_i^2 / p_i`, summed over the support.
pub fn second_moment_bound<F: Real>(
    lipschitz: &[F],
    p: &SamplingDistribution<F>,
) -> Result<F, AnalysisError> {
    if lipschitz.len() != p.len() {
        return Err(AnalysisError::LengthMismatch(lipschitz.len(), p.len()));
    }
    let n = F::from_usize(lipschitz.len()).unwrap();
    let mut sum = F::zero();
    for (i, &g) in lipschitz.iter().enumerate() {
        let pi = p.probability(i);
        if pi > F::zero() {
            sum = sum + g * g / pi;
        } else if g > F::zero() {
            return Err(AnalysisError::UnboundedMoment(i));
        }
    }
    Ok(sum / (n * n))
}

/// Expected cost per iteration `C(p) = sum_i p_i c_i`.
pub fn step_cost<F: Real>(p: &SamplingDistribution<F>, costs: &[F]) -> Result<F, AnalysisError> {
    if costs.len() != p.len() {
        return Err(AnalysisError::LengthMismatch(p.len(), costs.len()));
    }
    Ok(p.probabilities().iter().zip(costs).map(|(&p, &c)| p * c).sum())
}

/// `J(p) = S(p) C(p)`.
pub fn cost_objective<F: Real>(
    lipschitz: &[F],
    costs: &[F],
    p: &SamplingDistribution<F>,
) -> Result<F, AnalysisError> {
    Ok(second_moment_bound(lipschitz, p)? * step_cost(p, costs)?)
}

/// Closed form `J(p*) = (1/n^2) (sum_i G_i sqrt(c_i))^2`.
pub fn optimal_cost_objective<F: Real>(lipschitz: &[F], costs: &[F]) -> F {
    let n = F::from_usize(lipschitz.len()).unwrap();
    let s: F = lipschitz
        .iter()
        .zip(costs)
        .map(|(&g, &c)| g * c.sqrt())
        .sum();
    s * s / (n * n)
}

/// Expected total cost to reach error `epsilon` under distribution `p`.
pub fn cost_to_epsilon<F: Real>(
    lipschitz: &[F],
    costs: &[F],
    p: &SamplingDistribution<F>,
    diameter: F,
    epsilon: F,
    mu: Option<F>,
) -> Result<CostComplexityReport<F>, AnalysisError> {
    if !(epsilon > F::zero()) {
        return Err(AnalysisError::NonPositive("epsilon"));
    }
    if !(diameter > F::zero()) {
        return Err(AnalysisError::NonPositive("diameter"));
    }
    let s = second_moment_bound(lipschitz, p)?;
    let c = step_cost(p, costs)?;
    let objective = s * c;
    Ok(CostComplexityReport {
        second_moment_bound: s,
        step_cost: c,
        objective,
        cost_to_epsilon_convex: diameter * diameter * objective / (epsilon * epsilon),
        cost_to_epsilon_strongly_convex: mu.map(|m| F::c(4.0) * objective / (m * epsilon)),
    })
}

/// Closed-form costs of uniform, variance, and optimal sampling.
pub fn baseline_costs<F: Real>(
    lipschitz: &[F],
    costs: &[F],
    diameter: F,
    epsilon: F,
) -> Result<BaselineCosts<F>, AnalysisError> {
    if lipschitz.len() != costs.len() {
        return Err(AnalysisError::LengthMismatch(lipschitz.len(), costs.len()));
    }
    if !(epsilon > F::zero()) {
        return Err(AnalysisError::NonPositive("epsilon"));
    }
    let n = F::from_usize(lipschitz.len()).unwrap();
    let scale = diameter * diameter / (epsilon * epsilon * n * n);
    let sum_g: F = lipschitz.iter().copied().sum();
    let sum_g2: F = lipschitz.iter().map(|&g| g * g).sum();
    let sum_c: F = costs.iter().copied().sum();
    let sum_gc: F = lipschitz.iter().zip(costs).map(|(&g, &c)| g * c).sum();
    let sum_gsqrtc: F = lipschitz
        .iter()
        .zip(costs)
        .map(|(&g, &c)| g * c.sqrt())
        .sum();
    Ok(BaselineCosts {
        k_unif: scale * sum_g2 * sum_c,
        k_var: scale * sum_g * sum_gc,
        k_opt: scale * sum_gsqrtc * sum_gsqrtc,
    })
}

/// Chi-square divergence `sum_i P_i^2 / Q_i - 1` over the support of `P`.
///
/// A `P`-supported index with `Q_i = 0` makes the divergence infinite; that is
/// reported as `+inf` rather than an error so sweeps over degenerate
/// distributions can complete.
pub fn chi2_divergence<F: Real>(
    p: &SamplingDistribution<F>,
    q: &SamplingDistribution<F>,
) -> Result<F, AnalysisError> {
    if p.len() != q.len() {
        return Err(AnalysisError::LengthMismatch(p.len(), q.len()));
    }
    let mut sum = F::zero();
    for i in 0..p.len() {
        let pi = p.probability(i);
        if pi > F::zero() {
            let qi = q.probability(i);
            if qi <= F::zero() {
                return Ok(F::infinity());
            }
            sum = sum + pi * pi / qi;
        }
    }
    Ok(sum - F::one())
}

/// Evaluates both sides of the identity `J(p')/J(p*) = 1 + chi2(p̃* || p̃')`
/// independently: the ratio from `S` and `C` evaluations, the divergence from
/// cost-biased transforms. Callers assert their agreement.
pub fn suboptimality_ratio<F: Real>(
    lipschitz: &[F],
    costs: &[F],
    p_prime: &SamplingDistribution<F>,
) -> Result<SuboptimalityGap<F>, AnalysisError> {
    let p_star = SamplingDistribution::optimal(lipschitz, costs)?;
    let ratio = cost_objective(lipschitz, costs, p_prime)?
        / cost_objective(lipschitz, costs, &p_star)?;
    let biased_star = p_star.cost_biased(costs)?;
    let biased_prime = p_prime.cost_biased(costs)?;
    let chi2 = chi2_divergence(&biased_star, &biased_prime)?;
    Ok(SuboptimalityGap {
        ratio,
        chi2_of_cost_biased: chi2,
    })
}

/// Closed-form approximation of the expected proxy gap,
/// `1 + ((1 - rho^2)/rho^2) sigma_G^2 (sum_i sqrt(c_i)/G_i) / (sum_i G_i sqrt(c_i))`.
pub fn proxy_gap_approx<F: Real>(
    lipschitz: &[F],
    costs: &[F],
    rho: F,
    sigma_g_sq: F,
) -> Result<F, AnalysisError> {
    if lipschitz.len() != costs.len() {
        return Err(AnalysisError::LengthMismatch(lipschitz.len(), costs.len()));
    }
    if rho <= F::zero() || rho > F::one() {
        return Err(AnalysisError::RhoOutOfRange(rho.to_f64().unwrap_or(f64::NAN)));
    }
    if sigma_g_sq < F::zero() {
        return Err(AnalysisError::NonPositive("sigma_G^2"));
    }
    for (i, &g) in lipschitz.iter().enumerate() {
        if !(g > F::zero()) {
            return Err(AnalysisError::ExcludedComponent(i));
        }
    }
    let num: F = lipschitz
        .iter()
        .zip(costs)
        .map(|(&g, &c)| c.sqrt() / g)
        .sum();
    let den: F = lipschitz
        .iter()
        .zip(costs)
        .map(|(&g, &c)| g * c.sqrt())
        .sum();
    let noise_factor = (F::one() - rho * rho) / (rho * rho);
    Ok(F::one() + noise_factor * sigma_g_sq * num / den)
}

/// Sample Pearson correlation between two equal-length vectors.
pub fn pearson<F: Real>(x: &[F], y: &[F]) -> Result<F, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::UndefinedCorrelation("need at least 2 points"));
    }
    let n = F::from_usize(x.len()).unwrap();
    let mean_x = x.iter().copied().sum::<F>() / n;
    let mean_y = y.iter().copied().sum::<F>() / n;
    let mut sxx = F::zero();
    let mut syy = F::zero();
    let mut sxy = F::zero();
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
        sxy = sxy + dx * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return Err(AnalysisError::UndefinedCorrelation("constant input vector"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Whether the variance strategy beats uniform sampling, with the signed
/// margin `E[c] Var(G) - E[G] Cov(G, c)` under the uniform-index expectation
/// (population moments). Nonnegative margin means `K_var <= K_unif`.
pub fn variance_vs_uniform_predicate<F: Real>(
    lipschitz: &[F],
    costs: &[F],
) -> Result<(bool, F), AnalysisError> {
    if lipschitz.len() != costs.len() {
        return Err(AnalysisError::LengthMismatch(lipschitz.len(), costs.len()));
    }
    if lipschitz.len() < 2 {
        return Err(AnalysisError::UndefinedCorrelation("need at least 2 components"));
    }
    let n = F::from_usize(lipschitz.len()).unwrap();
    let mean_g = lipschitz.iter().copied().sum::<F>() / n;
    let mean_c = costs.iter().copied().sum::<F>() / n;
    let var_g = lipschitz
        .iter()
        .map(|&g| (g - mean_g) * (g - mean_g))
        .sum::<F>()
        / n;
    let cov_gc = lipschitz
        .iter()
        .zip(costs)
        .map(|(&g, &c)| (g - mean_g) * (c - mean_c))
        .sum::<F>()
        / n;
    let margin = mean_c * var_g - mean_g * cov_gc;
    Ok((margin >= F::zero(), margin))
}

/// Estimates `E[J(p')]/J(p*)` by sampling proxy norms `G'_i = G_i + eps_i`
/// with i.i.d. Gaussian noise; draws that would make a proxy nonpositive are
/// redrawn and counted. `rho_hat` is the mean per-trial Pearson correlation
/// between the true and proxy norms.
pub fn monte_carlo_proxy_gap<F, R>(
    lipschitz: &[F],
    costs: &[F],
    noise_sigma: F,
    trials: usize,
    rng: &mut R,
) -> Result<MonteCarloProxyGap<F>, AnalysisError>
where
    F: Real,
    R: Rng + ?Sized,
    StandardNormal: Distribution<F>,
{
    if trials == 0 {
        return Err(AnalysisError::NonPositive("trials"));
    }
    if noise_sigma < F::zero() {
        return Err(AnalysisError::NonPositive("noise_sigma"));
    }
    for (i, &g) in lipschitz.iter().enumerate() {
        if !(g > F::zero()) {
            return Err(AnalysisError::ExcludedComponent(i));
        }
    }
    let p_star = SamplingDistribution::optimal(lipschitz, costs)?;
    let j_star = cost_objective(lipschitz, costs, &p_star)?;

    let mut ratio_sum = F::zero();
    let mut rho_sum = F::zero();
    let mut rejected: u64 = 0;
    let mut proxy = vec![F::zero(); lipschitz.len()];
    for _ in 0..trials {
        for (slot, &g) in proxy.iter_mut().zip(lipschitz) {
            loop {
                let z: F = StandardNormal.sample(rng);
                let candidate = g + noise_sigma * z;
                if candidate > F::zero() {
                    *slot = candidate;
                    break;
                }
                rejected += 1;
            }
        }
        let p_prime = SamplingDistribution::optimal(&proxy, costs)?;
        ratio_sum = ratio_sum + cost_objective(lipschitz, costs, &p_prime)? / j_star;
        rho_sum = rho_sum
            + if noise_sigma == F::zero() {
                F::one()
            } else {
                pearson(lipschitz, &proxy)?
            };
    }
    let t = F::from_usize(trials).unwrap();
    let accepted = F::from_usize(trials * lipschitz.len()).unwrap();
    Ok(MonteCarloProxyGap {
        empirical_ratio: ratio_sum / t,
        rho_hat: rho_sum / t,
        rejection_rate: F::from_u64(rejected).unwrap() / (F::from_u64(rejected).unwrap() + accepted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(v: &[f64]) -> SamplingDistribution<f64> {
        SamplingDistribution::try_from(v.to_vec()).unwrap()
    }

    #[test]
    fn second_moment_examples() {
        let unif = SamplingDistribution::<f64>::uniform(2).unwrap();
        assert_relative_eq!(second_moment_bound(&[1.0, 1.0], &unif).unwrap(), 1.0);
        // (1/4)(9/0.5 + 1/0.5) = 5.
        assert_relative_eq!(second_moment_bound(&[3.0, 1.0], &unif).unwrap(), 5.0);

        let spiked = dist(&[1.0, 0.0]);
        assert_eq!(
            second_moment_bound(&[3.0, 1.0], &spiked),
            Err(AnalysisError::UnboundedMoment(1))
        );
        // Zero-bound components may sit outside the support.
        assert!(second_moment_bound(&[3.0, 0.0], &spiked).is_ok());
    }

    #[test]
    fn step_cost_examples() {
        let c = [1.0, 4.0];
        let unif = SamplingDistribution::<f64>::uniform(2).unwrap();
        assert_relative_eq!(step_cost(&unif, &c).unwrap(), 2.5);
        let p = dist(&[6.0 / 7.0, 1.0 / 7.0]);
        assert_relative_eq!(step_cost(&p, &c).unwrap(), 10.0 / 7.0, max_relative = 1e-15);
        let point = dist(&[0.0, 1.0]);
        assert_relative_eq!(step_cost(&point, &c).unwrap(), 4.0);
    }

    #[test]
    fn optimal_objective_matches_product_form() {
        let g = [3.0, 1.0];
        let c = [1.0, 4.0];
        let p_star = SamplingDistribution::optimal(&g, &c).unwrap();
        let j = cost_objective(&g, &c, &p_star).unwrap();
        assert_relative_eq!(j, optimal_cost_objective(&g, &c), max_relative = 1e-12);
        assert_relative_eq!(j, 6.25, max_relative = 1e-12);
    }

    #[test]
    fn cost_to_epsilon_examples() {
        let g = [3.0, 1.0];
        let c = [1.0, 4.0];
        let unif = SamplingDistribution::<f64>::uniform(2).unwrap();
        let report = cost_to_epsilon(&g, &c, &unif, 1.0, 1.0, None).unwrap();
        assert_relative_eq!(report.cost_to_epsilon_convex, 12.5, max_relative = 1e-12);
        assert_relative_eq!(
            report.objective,
            report.second_moment_bound * report.step_cost,
            max_relative = 1e-12
        );
        assert!(report.cost_to_epsilon_strongly_convex.is_none());

        let p_star = SamplingDistribution::optimal(&g, &c).unwrap();
        let report = cost_to_epsilon(&g, &c, &p_star, 1.0, 1.0, Some(2.0)).unwrap();
        assert_relative_eq!(report.cost_to_epsilon_convex, 6.25, max_relative = 1e-12);
        assert_relative_eq!(
            report.cost_to_epsilon_strongly_convex.unwrap(),
            4.0 * 6.25 / 2.0,
            max_relative = 1e-12
        );

        assert!(matches!(
            cost_to_epsilon(&g, &c, &unif, 1.0, 0.0, None),
            Err(AnalysisError::NonPositive("epsilon"))
        ));
    }

    #[test]
    fn cost_to_epsilon_is_homogeneous_in_epsilon() {
        let g = [2.0, 5.0, 1.0];
        let c = [3.0, 0.5, 7.0];
        let p = dist(&[0.2, 0.5, 0.3]);
        let base = cost_to_epsilon(&g, &c, &p, 2.0, 0.1, Some(0.7)).unwrap();
        let scaled = cost_to_epsilon(&g, &c, &p, 2.0, 0.3, Some(0.7)).unwrap();
        assert_relative_eq!(
            base.cost_to_epsilon_convex,
            scaled.cost_to_epsilon_convex * 9.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            base.cost_to_epsilon_strongly_convex.unwrap(),
            scaled.cost_to_epsilon_strongly_convex.unwrap() * 3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn baseline_costs_example() {
        let b = baseline_costs(&[3.0, 1.0], &[1.0, 4.0], 1.0, 1.0).unwrap();
        assert_relative_eq!(b.k_unif, 12.5, max_relative = 1e-12);
        assert_relative_eq!(b.k_var, 7.0, max_relative = 1e-12);
        assert_relative_eq!(b.k_opt, 6.25, max_relative = 1e-12);
    }

    #[test]
    fn unit_costs_collapse_optimal_onto_variance() {
        let b = baseline_costs(&[3.0, 1.0, 4.0], &[1.0, 1.0, 1.0], 2.0, 0.5).unwrap();
        assert_relative_eq!(b.k_opt, b.k_var, max_relative = 1e-12);
    }

    #[test]
    fn cost_dominance_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(2..=50);
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..100.0)).collect();
            let b = baseline_costs(&g, &c, 1.0, 1.0).unwrap();
            let slack = 1e-9 * b.k_unif.max(b.k_var);
            assert!(b.k_opt <= b.k_unif + slack, "K_opt > K_unif");
            assert!(b.k_opt <= b.k_var + slack, "K_opt > K_var");
        }
    }

    #[test]
    fn chi2_examples() {
        let p = dist(&[0.6, 0.4]);
        assert_relative_eq!(chi2_divergence(&p, &p).unwrap(), 0.0);
        let q = dist(&[0.2, 0.8]);
        assert_relative_eq!(chi2_divergence(&p, &q).unwrap(), 1.0, max_relative = 1e-12);

        let point = dist(&[1.0, 0.0]);
        let unif = SamplingDistribution::<f64>::uniform(2).unwrap();
        assert_relative_eq!(chi2_divergence(&point, &unif).unwrap(), 1.0);
        // Support violation is a distinguished value, not a crash.
        assert!(chi2_divergence(&unif, &point).unwrap().is_infinite());
    }

    #[test]
    fn suboptimality_identity_examples() {
        let g = [3.0, 1.0];
        let c = [1.0, 4.0];
        let p_star = SamplingDistribution::optimal(&g, &c).unwrap();
        let at_opt = suboptimality_ratio(&g, &c, &p_star).unwrap();
        assert_relative_eq!(at_opt.ratio, 1.0, max_relative = 1e-12);
        assert_relative_eq!(at_opt.chi2_of_cost_biased, 0.0, epsilon = 1e-12);

        let unif = SamplingDistribution::<f64>::uniform(2).unwrap();
        let gap = suboptimality_ratio(&g, &c, &unif).unwrap();
        assert_relative_eq!(gap.ratio, 2.0, max_relative = 1e-12);
        assert_relative_eq!(gap.chi2_of_cost_biased, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn suboptimality_identity_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let n = rng.gen_range(2..=20);
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..50.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let p_prime = SamplingDistribution::from_weights(&w).unwrap();
            let gap = suboptimality_ratio(&g, &c, &p_prime).unwrap();
            let lhs = gap.ratio;
            let rhs = 1.0 + gap.chi2_of_cost_biased;
            assert!(
                (lhs - rhs).abs() <= 1e-10 * rhs.abs(),
                "identity violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn proxy_gap_approx_examples() {
        let g = [3.0, 1.0];
        let c = [1.0, 4.0];
        assert_relative_eq!(proxy_gap_approx(&g, &c, 1.0, 5.0).unwrap(), 1.0);
        assert_relative_eq!(proxy_gap_approx(&g, &c, 0.95, 0.0).unwrap(), 1.0);

        // Direct arithmetic: 1 + (0.0975/0.9025) * 1 * (1/3 + 2) / 5.
        let expected = 1.0 + (0.0975 / 0.9025) * (1.0 / 3.0 + 2.0) / 5.0;
        assert_relative_eq!(
            proxy_gap_approx(&g, &c, 0.95, 1.0).unwrap(),
            expected,
            max_relative = 1e-12
        );

        assert_eq!(
            proxy_gap_approx(&g, &c, 0.0, 1.0),
            Err(AnalysisError::RhoOutOfRange(0.0))
        );
        assert_eq!(
            proxy_gap_approx(&[3.0, 0.0], &c, 0.5, 1.0),
            Err(AnalysisError::ExcludedComponent(1))
        );
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert_relative_eq!(pearson(&x, &y).unwrap(), 1.0, max_relative = 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_relative_eq!(pearson(&x, &neg).unwrap(), -1.0, max_relative = 1e-12);
        assert_relative_eq!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            0.5,
            max_relative = 1e-12
        );
        assert!(matches!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(AnalysisError::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn variance_vs_uniform_examples() {
        // Constant costs: Cov = 0, predicate always true.
        let (ok, margin) = variance_vs_uniform_predicate(&[1.0, 5.0], &[2.0, 2.0]).unwrap();
        assert!(ok && margin >= 0.0);
        // Negative correlation between gradients and costs.
        let (ok, _) = variance_vs_uniform_predicate(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        assert!(ok);
        // Strong positive correlation with near-constant bounds flips it:
        // the variance strategy oversamples the expensive component.
        let (ok, margin) = variance_vs_uniform_predicate(&[1.0, 1.2], &[1.0, 1000.0]).unwrap();
        assert!(!ok && margin < 0.0);
        let b = baseline_costs(&[1.0, 1.2], &[1.0, 1000.0], 1.0, 1.0).unwrap();
        assert!(b.k_var > b.k_unif);
    }

    #[test]
    fn predicate_agrees_with_baseline_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let n = rng.gen_range(2..=30);
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..100.0)).collect();
            let (pred, _) = variance_vs_uniform_predicate(&g, &c).unwrap();
            let b = baseline_costs(&g, &c, 1.0, 1.0).unwrap();
            assert_eq!(pred, b.k_var <= b.k_unif, "predicate mismatch");
        }
    }

    #[test]
    fn monte_carlo_proxy_gap_noiseless() {
        let g = [3.0, 1.0, 2.0];
        let c = [1.0, 4.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mc = monte_carlo_proxy_gap(&g, &c, 0.0, 100, &mut rng).unwrap();
        assert_eq!(mc.empirical_ratio, 1.0);
        assert_eq!(mc.rho_hat, 1.0);
        assert_eq!(mc.rejection_rate, 0.0);
    }

    #[test]
    fn monte_carlo_matches_approximation_at_small_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = [4.0, 6.0, 9.0, 5.0, 7.0];
        let c = [1.0, 9.0, 4.0, 16.0, 2.0];
        let sigma = 0.1 * g.iter().cloned().fold(f64::INFINITY, f64::min);
        let mc = monte_carlo_proxy_gap(&g, &c, sigma, 20_000, &mut rng).unwrap();
        let n = g.len() as f64;
        let mean = g.iter().sum::<f64>() / n;
        let sigma_g_sq = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let approx = proxy_gap_approx(&g, &c, mc.rho_hat, sigma_g_sq).unwrap();
        assert!(
            (mc.empirical_ratio - approx).abs() <= 0.1 * approx,
            "MC {} vs approx {}",
            mc.empirical_ratio,
            approx
        );
    }

    #[test]
    fn monte_carlo_ratio_nondecreasing_in_noise() {
        let g = [4.0, 6.0, 9.0, 5.0, 7.0];
        let c = [1.0, 9.0, 4.0, 16.0, 2.0];
        let min_g = g.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut last = 0.0;
        for (k, scale) in [0.0, 0.05, 0.1].iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mc = monte_carlo_proxy_gap(&g, &c, scale * min_g, 20_000, &mut rng).unwrap();
            if k > 0 {
                assert!(
                    mc.empirical_ratio >= last,
                    "ratio decreased: {} after {last}",
                    mc.empirical_ratio
                );
            }
            last = mc.empirical_ratio;
        }
    }
}
