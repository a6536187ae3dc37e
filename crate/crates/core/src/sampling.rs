//! Sampling distributions over component indices.
//!
//! Builds the distributions compared throughout the toolkit (uniform,
//! variance-minimizing, cost-aware optimal, smoothed mixtures, cost-biased
//! transforms), draws indices from them reproducibly, and produces the
//! importance weights that keep the gradient estimator unbiased.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("distribution must have at least one entry")]
    InvalidSize,
    #[error("all weights are zero; no distribution can be formed")]
    DegenerateWeights,
    #[error("cost at index {0} is not strictly positive")]
    InvalidCost(usize),
    #[error("mixture coefficient {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("index {0} has zero probability")]
    ZeroProbability(usize),
    #[error("index {0} out of range for {1} components")]
    IndexOutOfRange(usize, usize),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("probabilities are invalid: {0}")]
    InvalidProbabilities(String),
    #[error("expected cost under the distribution is zero")]
    ZeroExpectedCost,
}

/// Probability vector over component indices `[0, n)`.
///
/// Entries are exactly zero outside the support; the vector sums to one up to
/// rounding. Values are immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize", deserialize = "F: Deserialize<'de> + Real"))]
#[serde(into = "Vec<F>", try_from = "Vec<F>")]
pub struct SamplingDistribution<F: Real> {
    probs: Vec<F>,
}

impl<F: Real> From<SamplingDistribution<F>> for Vec<F> {
    fn from(dist: SamplingDistribution<F>) -> Self {
        dist.probs
    }
}

impl<F: Real> TryFrom<Vec<F>> for SamplingDistribution<F> {
    type Error = SamplingError;

    fn try_from(probs: Vec<F>) -> Result<Self, SamplingError> {
        if probs.is_empty() {
            return Err(SamplingError::InvalidSize);
        }
        let mut sum = F::zero();
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < F::zero() {
                return Err(SamplingError::InvalidProbabilities(format!(
                    "entry {i} is {p}"
                )));
            }
            sum = sum + p;
        }
        let n = F::from_usize(probs.len()).unwrap();
        let tol = F::c(1e-12).max(F::epsilon() * F::c(16.0) * n);
        if (sum - F::one()).abs() > tol {
            return Err(SamplingError::InvalidProbabilities(format!(
                "sum {sum} differs from 1 beyond tolerance"
            )));
        }
        if !probs.iter().any(|&p| p > F::zero()) {
            return Err(SamplingError::DegenerateWeights);
        }
        Ok(Self { probs })
    }
}

impl<F: Real> SamplingDistribution<F> {
    /// Normalizes nonnegative weights into a distribution. Zero-weight entries
    /// stay at exactly zero probability and fall outside the support.
    pub fn from_weights(weights: &[F]) -> Result<Self, SamplingError> {
        if weights.is_empty() {
            return Err(SamplingError::InvalidSize);
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < F::zero() {
                return Err(SamplingError::InvalidProbabilities(format!(
                    "weight {i} is {w}"
                )));
            }
        }
        let total: F = weights.iter().copied().sum();
        if total <= F::zero() {
            return Err(SamplingError::DegenerateWeights);
        }
        Ok(Self {
            probs: weights.iter().map(|&w| w / total).collect(),
        })
    }

    /// `p_i = 1/n` for every index.
    pub fn uniform(n: usize) -> Result<Self, SamplingError> {
        if n == 0 {
            return Err(SamplingError::InvalidSize);
        }
        let p = F::one() / F::from_usize(n).unwrap();
        Ok(Self { probs: vec![p; n] })
    }

    /// Variance-minimizing distribution `p_i = G_i / sum_j G_j`.
    pub fn variance(lipschitz: &[F]) -> Result<Self, SamplingError> {
        Self::from_weights(lipschitz)
    }

    /// Cost-aware optimal distribution `p_i ∝ G_i / sqrt(c_i)`.
    pub fn optimal(lipschitz: &[F], costs: &[F]) -> Result<Self, SamplingError> {
        if lipschitz.len() != costs.len() {
            return Err(SamplingError::LengthMismatch(lipschitz.len(), costs.len()));
        }
        for (i, &c) in costs.iter().enumerate() {
            if !(c > F::zero()) || !c.is_finite() {
                return Err(SamplingError::InvalidCost(i));
            }
        }
        let weights: Vec<F> = lipschitz
            .iter()
            .zip(costs)
            .map(|(&g, &c)| g / c.sqrt())
            .collect();
        Self::from_weights(&weights)
    }

    /// Length-only distribution `p_i ∝ 1 / sqrt(c_i)` (gradient proxy fixed to 1).
    pub fn length_only(costs: &[F]) -> Result<Self, SamplingError> {
        let ones = vec![F::one(); costs.len()];
        Self::optimal(&ones, costs)
    }

    /// Mixture `(1 - alpha) * p + alpha * uniform`. With `alpha > 0` the
    /// support becomes all of `[0, n)`; `alpha = 0` returns `p` unchanged.
    pub fn smooth(&self, alpha: f64) -> Result<Self, SamplingError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(SamplingError::AlphaOutOfRange(alpha));
        }
        if alpha == 0.0 {
            return Ok(self.clone());
        }
        let a = F::c(alpha);
        let u = F::one() / F::from_usize(self.len()).unwrap();
        if alpha == 1.0 {
            return Ok(Self {
                probs: vec![u; self.len()],
            });
        }
        let keep = F::one() - a;
        Ok(Self {
            probs: self.probs.iter().map(|&p| keep * p + a * u).collect(),
        })
    }

    /// Cost-biased transform `p̃_i = p_i c_i / C(p)` with `C(p) = sum_j p_j c_j`.
    pub fn cost_biased(&self, costs: &[F]) -> Result<Self, SamplingError> {
        if costs.len() != self.len() {
            return Err(SamplingError::LengthMismatch(self.len(), costs.len()));
        }
        let expected: F = self.probs.iter().zip(costs).map(|(&p, &c)| p * c).sum();
        if !(expected > F::zero()) {
            return Err(SamplingError::ZeroExpectedCost);
        }
        Ok(Self {
            probs: self
                .probs
                .iter()
                .zip(costs)
                .map(|(&p, &c)| p * c / expected)
                .collect(),
        })
    }

    /// Importance weight `1 / (n p_i)` for a sampled index.
    pub fn importance_weight(&self, index: usize) -> Result<F, SamplingError> {
        if index >= self.len() {
            return Err(SamplingError::IndexOutOfRange(index, self.len()));
        }
        let p = self.probs[index];
        if p <= F::zero() {
            return Err(SamplingError::ZeroProbability(index));
        }
        Ok((F::from_usize(self.len()).unwrap() * p).recip())
    }

    /// Draws one index via inverse CDF over half-open intervals `[lo, hi)`.
    ///
    /// Zero-probability entries occupy empty intervals and are never returned.
    pub fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = F::c(rng.gen::<f64>());
        let mut acc = F::zero();
        for (i, &p) in self.probs.iter().enumerate() {
            acc = acc + p;
            if u < acc {
                return i;
            }
        }
        // Rounding left u at or above the accumulated total.
        self.last_support_index()
    }

    /// Precomputed-CDF sampler for hot loops; same interval convention as
    /// [`draw_index`](Self::draw_index).
    pub fn sampler(&self) -> CdfSampler<F> {
        CdfSampler::new(self)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probabilities(&self) -> &[F] {
        &self.probs
    }

    pub fn probability(&self, index: usize) -> F {
        self.probs[index]
    }

    /// Indices with strictly positive probability.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > F::zero())
            .map(|(i, _)| i)
    }

    pub fn in_support(&self, index: usize) -> bool {
        index < self.len() && self.probs[index] > F::zero()
    }

    fn last_support_index(&self) -> usize {
        self.probs
            .iter()
            .rposition(|&p| p > F::zero())
            .expect("distribution invariant guarantees nonempty support")
    }
}

/// Cumulative-sum sampler; `O(log n)` per draw.
#[derive(Debug, Clone)]
pub struct CdfSampler<F: Real> {
    cumulative: Vec<F>,
    last_support: usize,
}

impl<F: Real> CdfSampler<F> {
    fn new(dist: &SamplingDistribution<F>) -> Self {
        let mut acc = F::zero();
        let cumulative = dist
            .probs
            .iter()
            .map(|&p| {
                acc = acc + p;
                acc
            })
            .collect();
        Self {
            cumulative,
            last_support: dist.last_support_index(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = F::c(rng.gen::<f64>());
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.last_support)
    }
}

/// Strategy names accepted by the optimizer lane and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Uniform,
    Variance,
    Optimal,
    Smoothed(f64),
    DynamicVariance,
    DynamicOptimal,
    LengthOnly,
}

impl Strategy {
    /// Static distribution this strategy starts from. Dynamic strategies start
    /// at their static counterpart and are refreshed by the optimizer.
    pub fn static_distribution<F: Real>(
        &self,
        lipschitz: &[F],
        costs: &[F],
    ) -> Result<SamplingDistribution<F>, SamplingError> {
        match self {
            Strategy::Uniform => SamplingDistribution::uniform(lipschitz.len()),
            Strategy::Variance | Strategy::DynamicVariance => {
                SamplingDistribution::variance(lipschitz)
            }
            Strategy::Optimal | Strategy::DynamicOptimal => {
                SamplingDistribution::optimal(lipschitz, costs)
            }
            Strategy::Smoothed(alpha) => {
                SamplingDistribution::optimal(lipschitz, costs)?.smooth(*alpha)
            }
            Strategy::LengthOnly => SamplingDistribution::length_only(costs),
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self, Strategy::DynamicVariance | Strategy::DynamicOptimal)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Uniform => write!(f, "uniform"),
            Strategy::Variance => write!(f, "variance"),
            Strategy::Optimal => write!(f, "optimal"),
            Strategy::Smoothed(a) => write!(f, "smoothed:{a}"),
            Strategy::DynamicVariance => write!(f, "dynamic-variance"),
            Strategy::DynamicOptimal => write!(f, "dynamic-optimal"),
            Strategy::LengthOnly => write!(f, "length-only"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "variance" => Ok(Strategy::Variance),
            "optimal" => Ok(Strategy::Optimal),
            "dynamic-variance" => Ok(Strategy::DynamicVariance),
            "dynamic-optimal" => Ok(Strategy::DynamicOptimal),
            "length-only" => Ok(Strategy::LengthOnly),
            other => match other.strip_prefix("smoothed:") {
                Some(alpha) => {
                    let a: f64 = alpha
                        .parse()
                        .map_err(|_| format!("bad smoothing coefficient in `{other}`"))?;
                    if !(0.0..=1.0).contains(&a) {
                        return Err(format!("smoothing coefficient {a} outside [0, 1]"));
                    }
                    Ok(Strategy::Smoothed(a))
                }
                None => Err(format!(
                    "unknown strategy `{other}` (expected uniform, variance, optimal, \
                     smoothed:<alpha>, dynamic-variance, dynamic-optimal, length-only)"
                )),
            },
        }
    }
}
