//! Desk-scale simulation of the cost-aware GRPO sampling loop.
//!
//! No language model is involved: synthetic rollout pools carry rewards,
//! group-normalized advantages, and token costs, and an injected objective
//! oracle stands in for the policy gradient. What is simulated faithfully is
//! the sampling machinery — the `|A_u| / sqrt(c_u)` distribution over the
//! pool, multinomial mini-batch construction with importance weights
//! re-centered around one, and cumulative token accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::sampling::{SamplingDistribution, SamplingError};
use crate::vecmath::norm;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("groups need at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("group {0} has {1} rollouts, expected {2}")]
    RaggedGroup(usize, usize, usize),
    #[error("token cost must be at least 1 (position {0})")]
    InvalidTokenCost(usize),
    #[error("pool is empty")]
    EmptyPool,
    #[error("every advantage is zero; p* is undefined — use the smoothed or uniform strategy")]
    DegeneratePool,
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("all true gradient norms are zero; fidelity metrics undefined")]
    DegenerateNorms,
    #[error("objective oracle failed at pool position {position}: {message}")]
    Oracle { position: usize, message: String },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// One prompt/response pair of a rollout dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub prompt_id: usize,
    pub rollout_id: usize,
    pub reward: f64,
    /// Group-normalized advantage `A = (r - mean) / std` (population moments).
    pub advantage: f64,
    /// Prompt length plus response length, the per-query cost in tokens.
    pub token_cost: u64,
}

/// Group advantages produced by [`normalize_advantages`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAdvantages {
    pub advantages: Vec<f64>,
    /// All rewards in the group were equal; advantages are identically zero.
    pub degenerate: bool,
}

/// Normalizes rewards within each group to mean 0 and population standard
/// deviation 1. Zero-variance groups get all-zero advantages and a
/// degenerate flag instead of a denominator epsilon.
pub fn normalize_advantages(rewards_per_group: &[Vec<f64>]) -> Result<Vec<GroupAdvantages>, RolloutError> {
    let mut out = Vec::with_capacity(rewards_per_group.len());
    for rewards in rewards_per_group {
        let m = rewards.len();
        if m < 2 {
            return Err(RolloutError::GroupTooSmall(m));
        }
        let mean = rewards.iter().sum::<f64>() / m as f64;
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / m as f64;
        if var == 0.0 {
            out.push(GroupAdvantages {
                advantages: vec![0.0; m],
                degenerate: true,
            });
            continue;
        }
        let std = var.sqrt();
        out.push(GroupAdvantages {
            advantages: rewards.iter().map(|r| (r - mean) / std).collect(),
            degenerate: false,
        });
    }
    Ok(out)
}

/// An `n x M` rollout dataset: `M` rollouts for each of `n` prompts, stored
/// prompt-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutPool {
    rollouts: Vec<Rollout>,
    n_prompts: usize,
    group_size: usize,
}

impl RolloutPool {
    pub fn from_rewards(
        rewards: Vec<Vec<f64>>,
        token_costs: Vec<Vec<u64>>,
    ) -> Result<Self, RolloutError> {
        if rewards.is_empty() {
            return Err(RolloutError::EmptyPool);
        }
        if rewards.len() != token_costs.len() {
            return Err(RolloutError::RaggedGroup(0, token_costs.len(), rewards.len()));
        }
        let group_size = rewards[0].len();
        for (g, (r, t)) in rewards.iter().zip(&token_costs).enumerate() {
            if r.len() != group_size {
                return Err(RolloutError::RaggedGroup(g, r.len(), group_size));
            }
            if t.len() != group_size {
                return Err(RolloutError::RaggedGroup(g, t.len(), group_size));
            }
        }
        let groups = normalize_advantages(&rewards)?;
        let mut rollouts = Vec::with_capacity(rewards.len() * group_size);
        for (prompt_id, (group_rewards, group) ) in rewards.iter().zip(&groups).enumerate() {
            for (rollout_id, (&reward, &advantage)) in
                group_rewards.iter().zip(&group.advantages).enumerate()
            {
                let token_cost = token_costs[prompt_id][rollout_id];
                if token_cost == 0 {
                    return Err(RolloutError::InvalidTokenCost(
                        prompt_id * group_size + rollout_id,
                    ));
                }
                rollouts.push(Rollout {
                    prompt_id,
                    rollout_id,
                    reward,
                    advantage,
                    token_cost,
                });
            }
        }
        Ok(Self {
            rollouts,
            n_prompts: rewards.len(),
            group_size,
        })
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn rollouts(&self) -> &[Rollout] {
        &self.rollouts
    }

    pub fn rollout(&self, position: usize) -> &Rollout {
        &self.rollouts[position]
    }

    /// Token costs as floats, in pool-position order.
    pub fn token_costs_f64(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.token_cost as f64).collect()
    }

    /// JSON-lines serialization, one rollout per line.
    pub fn to_jsonl(&self) -> serde_json::Result<String> {
        let mut out = String::new();
        for r in &self.rollouts {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses the JSON-lines format back into a pool.
    pub fn from_jsonl(text: &str) -> Result<Self, RolloutError> {
        let mut rollouts = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Rollout = serde_json::from_str(line).map_err(|e| RolloutError::Oracle {
                position: rollouts.len(),
                message: format!("bad rollout line: {e}"),
            })?;
            rollouts.push(r);
        }
        if rollouts.is_empty() {
            return Err(RolloutError::EmptyPool);
        }
        let n_prompts = rollouts.iter().map(|r| r.prompt_id).max().unwrap() + 1;
        let group_size = rollouts.len() / n_prompts;
        if n_prompts * group_size != rollouts.len() {
            return Err(RolloutError::RaggedGroup(0, rollouts.len(), n_prompts));
        }
        Ok(Self {
            rollouts,
            n_prompts,
            group_size,
        })
    }
}

/// Synthetic pool knobs: per-prompt success probability drawn uniformly from
/// a range, verifiable 0/1 rewards, token costs log-uniform over a range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticPoolSpec {
    pub n_prompts: usize,
    pub group_size: usize,
    pub success_low: f64,
    pub success_high: f64,
    pub token_low: u64,
    pub token_high: u64,
}

impl Default for SyntheticPoolSpec {
    fn default() -> Self {
        Self {
            n_prompts: 32,
            group_size: 8,
            success_low: 0.1,
            success_high: 0.9,
            token_low: 16,
            token_high: 4096,
        }
    }
}

impl SyntheticPoolSpec {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RolloutPool, RolloutError> {
        if self.n_prompts == 0 {
            return Err(RolloutError::EmptyPool);
        }
        if self.group_size < 2 {
            return Err(RolloutError::GroupTooSmall(self.group_size));
        }
        let ln_low = (self.token_low.max(1) as f64).ln();
        let ln_high = (self.token_high.max(self.token_low.max(1)) as f64).ln();
        let mut rewards = Vec::with_capacity(self.n_prompts);
        let mut tokens = Vec::with_capacity(self.n_prompts);
        for _ in 0..self.n_prompts {
            let success = rng.gen_range(self.success_low..=self.success_high);
            rewards.push(
                (0..self.group_size)
                    .map(|_| if rng.gen::<f64>() < success { 1.0 } else { 0.0 })
                    .collect::<Vec<f64>>(),
            );
            tokens.push(
                (0..self.group_size)
                    .map(|_| {
                        let ln = rng.gen_range(ln_low..=ln_high);
                        (ln.exp().round() as u64).max(1)
                    })
                    .collect::<Vec<u64>>(),
            );
        }
        RolloutPool::from_rewards(rewards, tokens)
    }
}

/// Sampling distribution families over pool positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PoolStrategy {
    /// `p_u ∝ |A_u| / sqrt(c_u)`: the gradient-norm proxy over token costs.
    PStar,
    /// `(1 - alpha) p* + alpha uniform`.
    Smoothed(f64),
    Uniform,
    /// `p_u ∝ 1 / sqrt(c_u)`: sequence length only.
    LengthOnly,
}

impl std::fmt::Display for PoolStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolStrategy::PStar => write!(f, "p_star"),
            PoolStrategy::Smoothed(a) => write!(f, "smoothed:{a}"),
            PoolStrategy::Uniform => write!(f, "uniform"),
            PoolStrategy::LengthOnly => write!(f, "length_only"),
        }
    }
}

/// Builds the sampling distribution over all `n * M` pool positions.
///
/// Zero-advantage rollouts carry zero weight under `p*` and stay outside its
/// support; an entirely zero-advantage pool is an error for `p*` and degrades
/// to pure uniform (with a logged warning) for the smoothed family.
pub fn pool_distribution(
    pool: &RolloutPool,
    strategy: PoolStrategy,
) -> Result<SamplingDistribution<f64>, RolloutError> {
    if pool.is_empty() {
        return Err(RolloutError::EmptyPool);
    }
    let p_star_weights = || -> Vec<f64> {
        pool.rollouts()
            .iter()
            .map(|r| r.advantage.abs() / (r.token_cost as f64).sqrt())
            .collect()
    };
    match strategy {
        PoolStrategy::Uniform => Ok(SamplingDistribution::uniform(pool.len())?),
        PoolStrategy::LengthOnly => {
            let weights: Vec<f64> = pool
                .rollouts()
                .iter()
                .map(|r| (r.token_cost as f64).sqrt().recip())
                .collect();
            Ok(SamplingDistribution::from_weights(&weights)?)
        }
        PoolStrategy::PStar => match SamplingDistribution::from_weights(&p_star_weights()) {
            Ok(p) => Ok(p),
            Err(SamplingError::DegenerateWeights) => Err(RolloutError::DegeneratePool),
            Err(e) => Err(e.into()),
        },
        PoolStrategy::Smoothed(alpha) => match SamplingDistribution::from_weights(&p_star_weights()) {
            Ok(p) => Ok(p.smooth(alpha)?),
            Err(SamplingError::DegenerateWeights) => {
                log::warn!("all advantages are zero; smoothed p* degrades to pure uniform");
                Ok(SamplingDistribution::uniform(pool.len())?)
            }
            Err(e) => Err(e.into()),
        },
    }
}

/// One sampled mini-batch entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub position: usize,
    /// `1 / (n M p_u)`.
    pub importance_weight: f64,
    /// Importance weight rescaled so the batch mean is exactly one.
    pub recentered_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniBatch {
    pub entries: Vec<BatchEntry>,
    /// FNV-1a hash of the probability vector the batch was drawn from.
    pub draw_distribution_digest: String,
}

impl MiniBatch {
    pub fn token_cost(&self, pool: &RolloutPool) -> u64 {
        self.entries
            .iter()
            .map(|e| pool.rollout(e.position).token_cost)
            .sum()
    }
}

fn fnv1a_digest(probs: &[f64]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for p in probs {
        for byte in p.to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    }
    format!("{hash:016x}")
}

/// Draws `batch_size` positions i.i.d. with replacement from `p` and attaches
/// importance weights re-centered to batch mean one.
pub fn sample_minibatch<R: Rng + ?Sized>(
    pool: &RolloutPool,
    p: &SamplingDistribution<f64>,
    batch_size: usize,
    rng: &mut R,
) -> Result<MiniBatch, RolloutError> {
    if batch_size == 0 {
        return Err(RolloutError::InvalidBatchSize);
    }
    if p.len() != pool.len() {
        return Err(SamplingError::LengthMismatch(p.len(), pool.len()).into());
    }
    let sampler = p.sampler();
    let mut entries = Vec::with_capacity(batch_size);
    let mut weight_sum = 0.0;
    for _ in 0..batch_size {
        let position = sampler.draw(rng);
        let importance_weight = p.importance_weight(position)?;
        weight_sum += importance_weight;
        entries.push(BatchEntry {
            position,
            importance_weight,
            recentered_weight: 0.0,
        });
    }
    let scale = batch_size as f64 / weight_sum;
    for e in &mut entries {
        e.recentered_weight = e.importance_weight * scale;
    }
    Ok(MiniBatch {
        entries,
        draw_distribution_digest: fnv1a_digest(p.probabilities()),
    })
}

/// Synthetic stand-in for the per-rollout policy gradient.
pub trait RolloutOracle {
    fn dimension(&self) -> usize;

    /// Gradient contribution of one pool position at the given parameters.
    fn gradient(
        &self,
        pool: &RolloutPool,
        position: usize,
        params: &[f64],
    ) -> Result<Vec<f64>, RolloutError>;

    /// Loss contribution of one pool position.
    fn loss(&self, pool: &RolloutPool, position: usize, params: &[f64]) -> Result<f64, RolloutError>;

    /// Pool-average loss.
    fn pool_loss(&self, pool: &RolloutPool, params: &[f64]) -> Result<f64, RolloutError> {
        let mut acc = 0.0;
        for position in 0..pool.len() {
            acc += self.loss(pool, position, params)?;
        }
        Ok(acc / pool.len() as f64)
    }
}

/// Per-rollout quadratic `l_u(theta) = |A_u| / 2 * ||theta - target||^2`, so
/// the gradient norm is exactly proportional to `|A_u|` everywhere.
#[derive(Debug, Clone)]
pub struct QuadraticAdvantageOracle {
    pub target: Vec<f64>,
}

impl QuadraticAdvantageOracle {
    pub fn at_origin(dimension: usize) -> Self {
        Self {
            target: vec![0.0; dimension],
        }
    }
}

impl RolloutOracle for QuadraticAdvantageOracle {
    fn dimension(&self) -> usize {
        self.target.len()
    }

    fn gradient(
        &self,
        pool: &RolloutPool,
        position: usize,
        params: &[f64],
    ) -> Result<Vec<f64>, RolloutError> {
        if params.len() != self.target.len() {
            return Err(RolloutError::Oracle {
                position,
                message: format!(
                    "parameter dimension {} does not match oracle dimension {}",
                    params.len(),
                    self.target.len()
                ),
            });
        }
        let a = pool.rollout(position).advantage.abs();
        Ok(params
            .iter()
            .zip(&self.target)
            .map(|(p, t)| a * (p - t))
            .collect())
    }

    fn loss(&self, pool: &RolloutPool, position: usize, params: &[f64]) -> Result<f64, RolloutError> {
        let a = pool.rollout(position).advantage.abs();
        let dist_sq: f64 = params
            .iter()
            .zip(&self.target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(0.5 * a * dist_sq)
    }
}

/// How one training round fills its mini-batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RoundSampling {
    /// Multinomial sampling with replacement from a pool distribution,
    /// importance-weighted and re-centered.
    Distribution(PoolStrategy),
    /// The no-sampling baseline: one shuffled pass over the pool per round,
    /// each rollout visited exactly once with unit weight.
    EpochTraversal,
}

impl std::fmt::Display for RoundSampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RoundSampling::Distribution(s) => write!(f, "{s}"),
            RoundSampling::EpochTraversal => write!(f, "no_sampling"),
        }
    }
}

impl std::str::FromStr for RoundSampling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no_sampling" => Ok(RoundSampling::EpochTraversal),
            "uniform" => Ok(RoundSampling::Distribution(PoolStrategy::Uniform)),
            "p_star" => Ok(RoundSampling::Distribution(PoolStrategy::PStar)),
            "length_only" => Ok(RoundSampling::Distribution(PoolStrategy::LengthOnly)),
            other => match other.strip_prefix("smoothed:") {
                Some(alpha) => {
                    let a: f64 = alpha
                        .parse()
                        .map_err(|_| format!("bad smoothing coefficient in `{other}`"))?;
                    Ok(RoundSampling::Distribution(PoolStrategy::Smoothed(a)))
                }
                None => Err(format!(
                    "unknown strategy `{other}` (expected no_sampling, uniform, p_star, \
                     smoothed:<alpha>, length_only)"
                )),
            },
        }
    }
}

/// Outcome of one round of `ceil(nM / B)` updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub strategy: String,
    pub updates_applied: usize,
    pub tokens_consumed: u64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub final_params: Vec<f64>,
}

/// Runs `T = ceil(nM / B)` mini-batch updates on the supplied parameters,
/// averaging re-centered importance-weighted oracle gradients per batch.
pub fn simulate_training_round<R: Rng + ?Sized>(
    pool: &RolloutPool,
    sampling: &RoundSampling,
    batch_size: usize,
    learning_rate: f64,
    rng: &mut R,
    oracle: &dyn RolloutOracle,
    params: &[f64],
) -> Result<RoundReport, RolloutError> {
    if batch_size == 0 {
        return Err(RolloutError::InvalidBatchSize);
    }
    if pool.is_empty() {
        return Err(RolloutError::EmptyPool);
    }
    let n_total = pool.len();
    let updates = n_total.div_ceil(batch_size);
    let mut theta = params.to_vec();
    let loss_before = oracle.pool_loss(pool, &theta)?;
    let mut tokens: u64 = 0;

    match sampling {
        RoundSampling::Distribution(strategy) => {
            let p = pool_distribution(pool, *strategy)?;
            for _ in 0..updates {
                let batch = sample_minibatch(pool, &p, batch_size, rng)?;
                tokens += batch.token_cost(pool);
                let mut grad = vec![0.0; theta.len()];
                for entry in &batch.entries {
                    let g = oracle.gradient(pool, entry.position, &theta)?;
                    for (acc, gi) in grad.iter_mut().zip(&g) {
                        *acc += entry.recentered_weight * gi;
                    }
                }
                let scale = learning_rate / batch_size as f64;
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= scale * g;
                }
            }
        }
        RoundSampling::EpochTraversal => {
            let mut order: Vec<usize> = (0..n_total).collect();
            // Fisher-Yates, driven by the caller's rng for reproducibility.
            for i in (1..n_total).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(batch_size) {
                tokens += chunk
                    .iter()
                    .map(|&u| pool.rollout(u).token_cost)
                    .sum::<u64>();
                let mut grad = vec![0.0; theta.len()];
                for &position in chunk {
                    let g = oracle.gradient(pool, position, &theta)?;
                    for (acc, gi) in grad.iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
                let scale = learning_rate / chunk.len() as f64;
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= scale * g;
                }
            }
        }
    }

    let loss_after = oracle.pool_loss(pool, &theta)?;
    Ok(RoundReport {
        strategy: sampling.to_string(),
        updates_applied: updates,
        tokens_consumed: tokens,
        loss_before,
        loss_after,
        final_params: theta,
    })
}

/// One point of a cumulative token curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub cumulative_tokens: u64,
    pub loss: f64,
}

/// Prefix-sums token consumption across rounds (1-based round numbers).
pub fn token_accounting(reports: &[RoundReport]) -> Vec<CurvePoint> {
    let mut cumulative = 0u64;
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            cumulative += r.tokens_consumed;
            CurvePoint {
                round: i + 1,
                cumulative_tokens: cumulative,
                loss: r.loss_after,
            }
        })
        .collect()
}

/// Proxy quality of `|A|` against the oracle's true gradient norms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProxyFidelity {
    /// Pearson correlation between true norms and `|A|`.
    pub pearson: f64,
    /// Chi-square divergence between the cost-biased true `p*` and the
    /// cost-biased proxy distribution (infinite when the proxy misses support).
    pub cost_biased_chi2: f64,
}

pub fn proxy_fidelity_report(
    pool: &RolloutPool,
    oracle: &dyn RolloutOracle,
    params: &[f64],
) -> Result<ProxyFidelity, RolloutError> {
    if pool.is_empty() {
        return Err(RolloutError::EmptyPool);
    }
    let mut true_norms = Vec::with_capacity(pool.len());
    for position in 0..pool.len() {
        true_norms.push(norm(&oracle.gradient(pool, position, params)?));
    }
    if true_norms.iter().all(|&g| g == 0.0) {
        return Err(RolloutError::DegenerateNorms);
    }
    let costs = pool.token_costs_f64();
    let proxies: Vec<f64> = pool.rollouts().iter().map(|r| r.advantage.abs()).collect();
    let p_true = SamplingDistribution::optimal(&true_norms, &costs)?;
    let p_proxy = match SamplingDistribution::optimal(&proxies, &costs) {
        Ok(p) => p,
        Err(SamplingError::DegenerateWeights) => return Err(RolloutError::DegeneratePool),
        Err(e) => return Err(e.into()),
    };
    let pearson = analysis::pearson(&true_norms, &proxies)?;
    let chi2 = analysis::chi2_divergence(
        &p_true.cost_biased(&costs)?,
        &p_proxy.cost_biased(&costs)?,
    )?;
    Ok(ProxyFidelity {
        pearson,
        cost_biased_chi2: chi2,
    })
}

/// Multi-round campaign configuration for the simulator CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub pool: SyntheticPoolSpec,
    pub rounds: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub oracle_dimension: usize,
    /// Loss threshold as a fraction of the first round's starting loss.
    pub loss_threshold_ratio: f64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            pool: SyntheticPoolSpec::default(),
            rounds: 12,
            batch_size: 64,
            learning_rate: 0.1,
            oracle_dimension: 8,
            loss_threshold_ratio: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityPoint {
    pub round: usize,
    pub pearson: Option<f64>,
    pub cost_biased_chi2: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignResult {
    pub strategy: String,
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    pub fidelity: Vec<FidelityPoint>,
    pub loss_threshold: f64,
    /// Cumulative tokens at the end of the first round whose loss crossed the
    /// threshold, when any did.
    pub tokens_to_threshold: Option<u64>,
    pub final_loss: f64,
}

/// Runs a full campaign: a fresh synthetic pool per round (pools depend only
/// on `(seed, round)`, so different strategies at the same seed see identical
/// pools), parameters carried across rounds, and per-round fidelity metrics.
pub fn run_campaign(
    cfg: &CampaignConfig,
    sampling: &RoundSampling,
    seed: u64,
) -> Result<CampaignResult, RolloutError> {
    if cfg.rounds == 0 {
        return Err(RolloutError::EmptyPool);
    }
    let oracle = QuadraticAdvantageOracle::at_origin(cfg.oracle_dimension);
    let mut theta = vec![1.0; cfg.oracle_dimension];
    let mut reports = Vec::with_capacity(cfg.rounds);
    let mut fidelity = Vec::with_capacity(cfg.rounds);
    let mut threshold = None;

    for round in 0..cfg.rounds {
        let mut pool_rng = ChaCha8Rng::seed_from_u64(seed);
        pool_rng.set_stream(round as u64);
        let pool = cfg.pool.generate(&mut pool_rng)?;

        if round == 0 {
            let initial = oracle.pool_loss(&pool, &theta)?;
            threshold = Some(initial * cfg.loss_threshold_ratio);
        }

        fidelity.push(match proxy_fidelity_report(&pool, &oracle, &theta) {
            Ok(f) => FidelityPoint {
                round: round + 1,
                pearson: Some(f.pearson),
                cost_biased_chi2: Some(f.cost_biased_chi2),
            },
            Err(_) => FidelityPoint {
                round: round + 1,
                pearson: None,
                cost_biased_chi2: None,
            },
        });

        let mut draw_rng = ChaCha8Rng::seed_from_u64(seed);
        draw_rng.set_stream(1_000_000 + round as u64);
        let report = simulate_training_round(
            &pool,
            sampling,
            cfg.batch_size,
            cfg.learning_rate,
            &mut draw_rng,
            &oracle,
            &theta,
        )?;
        theta = report.final_params.clone();
        reports.push(report);
    }

    let curve = token_accounting(&reports);
    let threshold = threshold.unwrap();
    let tokens_to_threshold = curve
        .iter()
        .find(|point| point.loss <= threshold)
        .map(|point| point.cumulative_tokens);
    Ok(CampaignResult {
        strategy: sampling.to_string(),
        seed,
        curve,
        fidelity,
        loss_threshold: threshold,
        tokens_to_threshold,
        final_loss: reports.last().unwrap().loss_after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pool_2x2() -> RolloutPool {
        RolloutPool::from_rewards(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1, 4], vec![9, 16]],
        )
        .unwrap()
    }

    #[test]
    fn advantage_normalization_examples() {
        let groups = normalize_advantages(&[vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let sqrt3 = 3.0_f64.sqrt();
        let a = &groups[0].advantages;
        assert_relative_eq!(a[0], sqrt3, max_relative = 1e-12);
        for &v in &a[1..] {
            assert_relative_eq!(v, -1.0 / sqrt3, max_relative = 1e-12);
        }
        assert!(!groups[0].degenerate);

        let degenerate = normalize_advantages(&[vec![1.0, 1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(degenerate[0].advantages, vec![0.0; 4]);
        assert!(degenerate[0].degenerate);

        let pair = normalize_advantages(&[vec![1.0, 0.0]]).unwrap();
        assert_relative_eq!(pair[0].advantages[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(pair[0].advantages[1], -1.0, max_relative = 1e-12);

        assert!(matches!(
            normalize_advantages(&[vec![1.0]]),
            Err(RolloutError::GroupTooSmall(1))
        ));
    }

    #[test]
    fn group_normalization_holds_on_random_pools() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = SyntheticPoolSpec::default();
        let pool = spec.generate(&mut rng).unwrap();
        for g in 0..pool.n_prompts() {
            let group: Vec<&Rollout> = pool
                .rollouts()
                .iter()
                .filter(|r| r.prompt_id == g)
                .collect();
            assert_eq!(group.len(), pool.group_size());
            let mean: f64 =
                group.iter().map(|r| r.advantage).sum::<f64>() / group.len() as f64;
            let var: f64 = group
                .iter()
                .map(|r| (r.advantage - mean).powi(2))
                .sum::<f64>()
                / group.len() as f64;
            if group.iter().all(|r| r.advantage == 0.0) {
                continue; // degenerate group
            }
            assert!(mean.abs() <= 1e-9, "group {g} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() <= 1e-9, "group {g} std {}", var.sqrt());
        }
    }

    #[test]
    fn pool_distribution_examples() {
        // Two rollouts with |A| = 1 each and tokens (1, 4).
        let pool = RolloutPool::from_rewards(vec![vec![1.0, 0.0]], vec![vec![1, 4]]).unwrap();
        let p = pool_distribution(&pool, PoolStrategy::PStar).unwrap();
        assert_relative_eq!(p.probability(0), 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(p.probability(1), 1.0 / 3.0, max_relative = 1e-12);

        // All-zero advantages: p* errors, smoothed degrades to uniform.
        let flat = RolloutPool::from_rewards(vec![vec![1.0, 1.0]], vec![vec![8, 8]]).unwrap();
        assert!(matches!(
            pool_distribution(&flat, PoolStrategy::PStar),
            Err(RolloutError::DegeneratePool)
        ));
        let smoothed = pool_distribution(&flat, PoolStrategy::Smoothed(0.01)).unwrap();
        assert_eq!(smoothed.probabilities(), &[0.5, 0.5]);

        // Group (1,0,0,0) with equal tokens: weights |A| = (sqrt3, 1/sqrt3 x3).
        let pool = RolloutPool::from_rewards(vec![vec![1.0, 0.0, 0.0, 0.0]], vec![vec![7, 7, 7, 7]])
            .unwrap();
        let p = pool_distribution(&pool, PoolStrategy::PStar).unwrap();
        assert_relative_eq!(p.probability(0), 0.5, max_relative = 1e-12);
        for i in 1..4 {
            assert_relative_eq!(p.probability(i), 1.0 / 6.0, max_relative = 1e-12);
        }

        let len_only = pool_distribution(&pool_2x2(), PoolStrategy::LengthOnly).unwrap();
        let w: f64 = [1.0, 0.5, 1.0 / 3.0, 0.25].iter().sum();
        assert_relative_eq!(len_only.probability(0), 1.0 / w, max_relative = 1e-12);
    }

    #[test]
    fn minibatch_weights_recenter_to_one() {
        let pool = pool_2x2();
        let mut rng = ChaCha8Rng::seed_from_u64(1);

        let uniform = pool_distribution(&pool, PoolStrategy::Uniform).unwrap();
        let batch = sample_minibatch(&pool, &uniform, 8, &mut rng).unwrap();
        for e in &batch.entries {
            assert_relative_eq!(e.recentered_weight, 1.0, max_relative = 1e-12);
        }

        let p_star = pool_distribution(&pool, PoolStrategy::PStar).unwrap();
        for _ in 0..50 {
            let batch = sample_minibatch(&pool, &p_star, 5, &mut rng).unwrap();
            let mean: f64 = batch
                .entries
                .iter()
                .map(|e| e.recentered_weight)
                .sum::<f64>()
                / batch.entries.len() as f64;
            assert!((mean - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn minibatch_frequency_and_digest() {
        let pool = RolloutPool::from_rewards(vec![vec![1.0, 0.0]], vec![vec![1, 1]]).unwrap();
        let p = SamplingDistribution::try_from(vec![0.75, 0.25]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut zero_count = 0usize;
        let batches = 25_000;
        let b = 4;
        let mut digest = None;
        for _ in 0..batches {
            let batch = sample_minibatch(&pool, &p, b, &mut rng).unwrap();
            zero_count += batch.entries.iter().filter(|e| e.position == 0).count();
            if let Some(d) = &digest {
                assert_eq!(d, &batch.draw_distribution_digest);
            } else {
                digest = Some(batch.draw_distribution_digest.clone());
            }
        }
        let draws = (batches * b) as f64;
        let freq = zero_count as f64 / draws;
        let sigma = (0.75 * 0.25 / draws).sqrt();
        assert!((freq - 0.75).abs() <= 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn p_star_never_samples_zero_advantage_rollouts() {
        let pool = RolloutPool::from_rewards(
            vec![vec![1.0, 1.0], vec![1.0, 0.0]],
            vec![vec![3, 3], vec![5, 6]],
        )
        .unwrap();
        let p = pool_distribution(&pool, PoolStrategy::PStar).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let batch = sample_minibatch(&pool, &p, 6, &mut rng).unwrap();
            for e in &batch.entries {
                assert!(pool.rollout(e.position).advantage != 0.0);
            }
        }
    }

    #[test]
    fn estimator_summation_identity_before_recentering() {
        // sum_u p_u * (1/(nM p_u)) g_u equals the pool-average gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pool = SyntheticPoolSpec {
            n_prompts: 6,
            group_size: 4,
            ..SyntheticPoolSpec::default()
        }
        .generate(&mut rng)
        .unwrap();
        let oracle = QuadraticAdvantageOracle::at_origin(5);
        let theta = vec![0.7; 5];
        let p = pool_distribution(&pool, PoolStrategy::PStar).unwrap();
        let mut weighted = [0.0; 5];
        let mut average = [0.0; 5];
        for u in 0..pool.len() {
            let g = oracle.gradient(&pool, u, &theta).unwrap();
            for (a, gi) in average.iter_mut().zip(&g) {
                *a += gi / pool.len() as f64;
            }
            if p.in_support(u) {
                let w = p.probability(u) * p.importance_weight(u).unwrap();
                for (acc, gi) in weighted.iter_mut().zip(&g) {
                    *acc += w * gi;
                }
            }
        }
        for (w, a) in weighted.iter().zip(&average) {
            assert!((w - a).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn expected_batch_token_cost_matches_step_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pool = SyntheticPoolSpec::default().generate(&mut rng).unwrap();
        let p = pool_distribution(&pool, PoolStrategy::PStar).unwrap();
        let costs = pool.token_costs_f64();
        let expected: f64 = p.probabilities().iter().zip(&costs).map(|(&pi, &c)| pi * c).sum();
        let var: f64 = p
            .probabilities()
            .iter()
            .zip(&costs)
            .map(|(&pi, &c)| pi * (c - expected).powi(2))
            .sum();
        let draws = 10_000usize;
        let sampler = p.sampler();
        let mut total = 0.0;
        for _ in 0..draws {
            total += costs[sampler.draw(&mut rng)];
        }
        let mean = total / draws as f64;
        let sigma = (var / draws as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * sigma,
            "mean token draw {mean} outside {expected} +- {}",
            3.0 * sigma
        );
    }

    #[test]
    fn epoch_traversal_consumes_every_token_once() {
        let pool = pool_2x2();
        let total: u64 = pool.rollouts().iter().map(|r| r.token_cost).sum();
        let oracle = QuadraticAdvantageOracle::at_origin(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // B = nM means a single update covering the full pool.
        let report = simulate_training_round(
            &pool,
            &RoundSampling::EpochTraversal,
            pool.len(),
            0.05,
            &mut rng,
            &oracle,
            &[1.0, 1.0, 1.0],
        )
        .unwrap();
        assert_eq!(report.updates_applied, 1);
        assert_eq!(report.tokens_consumed, total);
        // Smaller batches still visit each rollout exactly once per round.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = simulate_training_round(
            &pool,
            &RoundSampling::EpochTraversal,
            3,
            0.05,
            &mut rng,
            &oracle,
            &[1.0, 1.0, 1.0],
        )
        .unwrap();
        assert_eq!(report.updates_applied, 2);
        assert_eq!(report.tokens_consumed, total);
    }

    #[test]
    fn token_accounting_prefix_sums() {
        let mk = |tokens| RoundReport {
            strategy: "x".into(),
            updates_applied: 1,
            tokens_consumed: tokens,
            loss_before: 1.0,
            loss_after: 0.5,
            final_params: vec![],
        };
        let curve = token_accounting(&[mk(7)]);
        assert_eq!(curve.len(), 1);
        assert_eq!(curve[0].round, 1);
        assert_eq!(curve[0].cumulative_tokens, 7);

        let curve = token_accounting(&[mk(7), mk(3), mk(0)]);
        let cums: Vec<u64> = curve.iter().map(|c| c.cumulative_tokens).collect();
        assert_eq!(cums, vec![7, 10, 10]);
        assert!(cums.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn proxy_fidelity_proportional_oracle_is_perfect() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pool = SyntheticPoolSpec::default().generate(&mut rng).unwrap();
        let oracle = QuadraticAdvantageOracle::at_origin(4);
        let fidelity = proxy_fidelity_report(&pool, &oracle, &[0.5, -0.5, 1.0, 0.25]).unwrap();
        assert!((fidelity.pearson - 1.0).abs() <= 1e-12);
        assert!(fidelity.cost_biased_chi2.abs() <= 1e-12);
    }

    #[test]
    fn proxy_fidelity_degrades_with_noise() {
        struct NoisyOracle {
            inner: QuadraticAdvantageOracle,
            noise: Vec<f64>,
            scale: f64,
        }
        impl RolloutOracle for NoisyOracle {
            fn dimension(&self) -> usize {
                self.inner.dimension()
            }
            fn gradient(
                &self,
                pool: &RolloutPool,
                position: usize,
                params: &[f64],
            ) -> Result<Vec<f64>, RolloutError> {
                let mut g = self.inner.gradient(pool, position, params)?;
                let factor = 1.0 + self.scale * self.noise[position];
                for v in &mut g {
                    *v *= factor.max(1e-6);
                }
                Ok(g)
            }
            fn loss(&self, pool: &RolloutPool, position: usize, params: &[f64]) -> Result<f64, RolloutError> {
                self.inner.loss(pool, position, params)
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let pool = SyntheticPoolSpec::default().generate(&mut rng).unwrap();
        let noise: Vec<f64> = (0..pool.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let theta = vec![0.4; 4];
        let mut last_pearson = 2.0;
        let mut last_chi2 = -1.0;
        for scale in [0.0, 0.2, 0.6] {
            let oracle = NoisyOracle {
                inner: QuadraticAdvantageOracle::at_origin(4),
                noise: noise.clone(),
                scale,
            };
            let f = proxy_fidelity_report(&pool, &oracle, &theta).unwrap();
            assert!(f.pearson <= last_pearson + 1e-12);
            assert!(f.cost_biased_chi2 >= last_chi2 - 1e-12);
            last_pearson = f.pearson;
            last_chi2 = f.cost_biased_chi2;
        }
    }

    #[test]
    fn proxy_fidelity_null_correlation_for_independent_norms() {
        struct IndependentOracle {
            norms: Vec<f64>,
            dim: usize,
        }
        impl RolloutOracle for IndependentOracle {
            fn dimension(&self) -> usize {
                self.dim
            }
            fn gradient(
                &self,
                _pool: &RolloutPool,
                position: usize,
                _params: &[f64],
            ) -> Result<Vec<f64>, RolloutError> {
                let mut g = vec![0.0; self.dim];
                g[0] = self.norms[position];
                Ok(g)
            }
            fn loss(&self, _pool: &RolloutPool, _position: usize, _params: &[f64]) -> Result<f64, RolloutError> {
                Ok(0.0)
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let spec = SyntheticPoolSpec {
            n_prompts: 64,
            group_size: 8,
            ..SyntheticPoolSpec::default()
        };
        let pool = spec.generate(&mut rng).unwrap();
        let oracle = IndependentOracle {
            norms: (0..pool.len()).map(|_| rng.gen_range(0.1..5.0)).collect(),
            dim: 3,
        };
        let f = proxy_fidelity_report(&pool, &oracle, &[0.0, 0.0, 0.0]).unwrap();
        let bound = 3.0 / (pool.len() as f64).sqrt();
        assert!(
            f.pearson.abs() <= bound,
            "independent norms correlate: {} > {bound}",
            f.pearson
        );
    }

    #[test]
    fn campaigns_are_deterministic() {
        let cfg = CampaignConfig {
            rounds: 3,
            ..CampaignConfig::default()
        };
        let a = run_campaign(&cfg, &RoundSampling::Distribution(PoolStrategy::PStar), 11).unwrap();
        let b = run_campaign(&cfg, &RoundSampling::Distribution(PoolStrategy::PStar), 11).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.final_loss, b.final_loss);
    }

    #[test]
    fn jsonl_round_trip() {
        let pool = pool_2x2();
        let text = pool.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 4);
        let back = RolloutPool::from_jsonl(&text).unwrap();
        assert_eq!(pool, back);
    }
}
