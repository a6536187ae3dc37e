//! Per-command configuration: JSON config files with a versioned schema,
//! overridden field-by-field by CLI flags. The merged effective config is
//! hashed into every output file.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use casgd_core::optimizer::IterateMode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
struct ConfigFile<T> {
    #[serde(default = "default_version")]
    version: u32,
    #[serde(default)]
    command: Option<String>,
    #[serde(flatten)]
    body: T,
}

fn default_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

/// Loads a command config from JSON, checking the schema version and (when
/// present) the command name.
pub fn load_config<T: DeserializeOwned>(path: &Path, command: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let file: ConfigFile<T> = serde_json::from_str(&text)
        .with_context(|| format!("parsing config file {}", path.display()))?;
    if file.version != CONFIG_SCHEMA_VERSION {
        bail!(
            "config schema version {} unsupported (expected {})",
            file.version,
            CONFIG_SCHEMA_VERSION
        );
    }
    if let Some(cmd) = &file.command {
        if cmd != command {
            bail!("config file is for command `{cmd}`, not `{command}`");
        }
    }
    Ok(file.body)
}

/// Instance-generation parameters (defaults follow the synthetic benchmark:
/// 3000 components in dimension 50, norms bounded by 10, costs uniform in
/// [1, 1000]).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub n: usize,
    pub d: usize,
    pub norm_bound: f64,
    pub cost_low: f64,
    pub cost_high: f64,
    pub seed: u64,
    pub diameter: f64,
    /// Rank correlation between costs and data-vector norms (0 = independent).
    pub cost_norm_correlation: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n: 3000,
            d: 50,
            norm_bound: 10.0,
            cost_low: 1.0,
            cost_high: 1000.0,
            seed: 7,
            diameter: 2.0,
            cost_norm_correlation: 0.0,
        }
    }
}

impl GenerateConfig {
    pub fn params(&self) -> casgd_core::GeneratorParams {
        casgd_core::GeneratorParams {
            n: self.n,
            d: self.d,
            norm_bound: self.norm_bound,
            cost_low: self.cost_low,
            cost_high: self.cost_high,
            seed: self.seed,
            diameter: self.diameter,
            cost_norm_correlation: self.cost_norm_correlation,
        }
    }
}

/// Strategy-comparison experiment config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    /// Path to a generated instance file; when absent, `generator` is used.
    pub instance: Option<String>,
    pub generator: GenerateConfig,
    pub strategies: Vec<String>,
    /// Number of seeds; runs use `seed_base .. seed_base + seeds`.
    pub seeds: u64,
    pub seed_base: u64,
    pub error_target: f64,
    pub eval_every: usize,
    pub horizon: usize,
    pub step_scale: f64,
    /// `last`, `average`, or `suffix:<fraction>`.
    pub mode: String,
    pub refresh_every: usize,
    pub floor_alpha: f64,
    pub charge_dynamic_sweeps: bool,
    /// Also write per-step traces (one CSV per cell).
    pub traces: bool,
    pub jobs: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            instance: None,
            generator: GenerateConfig::default(),
            strategies: vec![
                "uniform".into(),
                "variance".into(),
                "optimal".into(),
                "dynamic-variance".into(),
                "dynamic-optimal".into(),
            ],
            seeds: 20,
            seed_base: 0,
            error_target: 1e-2,
            eval_every: 100,
            horizon: 60_000,
            step_scale: 18.0,
            mode: "last".into(),
            refresh_every: 50,
            floor_alpha: 0.01,
            charge_dynamic_sweeps: false,
            traces: false,
            jobs: 1,
        }
    }
}

pub fn parse_mode(mode: &str) -> Result<IterateMode> {
    match mode {
        "last" => Ok(IterateMode::Last),
        "average" => Ok(IterateMode::Average),
        other => match other.strip_prefix("suffix:") {
            Some(frac) => {
                let fraction: f64 = frac
                    .parse()
                    .with_context(|| format!("bad suffix fraction in `{other}`"))?;
                Ok(IterateMode::SuffixAverage { fraction })
            }
            None => bail!("unknown iterate mode `{other}` (expected last, average, suffix:<fraction>)"),
        },
    }
}

/// Bias-budget sweep config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SubsetConfig {
    pub instance: Option<String>,
    pub generator: GenerateConfig,
    pub epsilon: f64,
    /// Explicit bias budgets; takes precedence over `subset_sizes`.
    pub gamma_grid: Vec<f64>,
    /// Target subset sizes converted to budgets via the cheapest-prefix bias
    /// floor, used when `gamma_grid` is empty.
    pub subset_sizes: Vec<usize>,
    /// `greedy` or `exact`.
    pub selector: String,
    /// Attach an empirical restricted-SGD run to each row.
    pub empirical: bool,
    pub seed: u64,
    pub horizon: usize,
    pub step_scale: f64,
    pub eval_every: usize,
}

impl Default for SubsetConfig {
    fn default() -> Self {
        Self {
            instance: None,
            generator: GenerateConfig::default(),
            epsilon: 1e-2,
            gamma_grid: Vec::new(),
            subset_sizes: vec![3000, 1000, 300, 100, 40, 10],
            selector: "greedy".into(),
            empirical: false,
            seed: 0,
            horizon: 60_000,
            step_scale: 8.0,
            eval_every: 100,
        }
    }
}

/// GRPO-simulation campaign config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoSimConfig {
    pub strategies: Vec<String>,
    pub seeds: u64,
    pub seed_base: u64,
    pub rounds: usize,
    pub n_prompts: usize,
    pub group_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_threshold_ratio: f64,
    pub oracle_dimension: usize,
    pub success_low: f64,
    pub success_high: f64,
    pub token_low: u64,
    pub token_high: u64,
    pub jobs: usize,
}

impl Default for GrpoSimConfig {
    fn default() -> Self {
        Self {
            strategies: vec!["no_sampling".into(), "uniform".into(), "p_star".into()],
            seeds: 50,
            seed_base: 0,
            rounds: 12,
            n_prompts: 32,
            group_size: 8,
            batch_size: 64,
            learning_rate: 0.1,
            loss_threshold_ratio: 0.01,
            oracle_dimension: 8,
            success_low: 0.1,
            success_high: 0.9,
            token_low: 16,
            token_high: 4096,
            jobs: 1,
        }
    }
}

impl GrpoSimConfig {
    pub fn campaign(&self) -> casgd_core::rollout::CampaignConfig {
        casgd_core::rollout::CampaignConfig {
            pool: casgd_core::rollout::SyntheticPoolSpec {
                n_prompts: self.n_prompts,
                group_size: self.group_size,
                success_low: self.success_low,
                success_high: self.success_high,
                token_low: self.token_low,
                token_high: self.token_high,
            },
            rounds: self.rounds,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            oracle_dimension: self.oracle_dimension,
            loss_threshold_ratio: self.loss_threshold_ratio,
        }
    }
}
