//! `casgd` — reproducible experiment runner for cost-aware stochastic
//! optimization: instance generation, sampling-strategy comparison,
//! bias-budget subset sweeps, GRPO-style sampling simulation, and invariant
//! verification.

mod commands;
mod config;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use casgd_core::verify::VerifyLevel;
use clap::{Args, Parser, Subcommand};

use config::{CompareConfig, GenerateConfig, GrpoSimConfig, SubsetConfig};

#[derive(Parser)]
#[command(name = "casgd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic least-squares instance file.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        norm_bound: Option<f64>,
        #[arg(long)]
        cost_low: Option<f64>,
        #[arg(long)]
        cost_high: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        diameter: Option<f64>,
        /// Rank correlation between costs and data-vector norms.
        #[arg(long)]
        cost_norm_correlation: Option<f64>,
    },
    /// Compare sampling strategies on one instance (cost and iterations to a
    /// target error).
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Instance file from `generate`; omitted = generate per config.
        #[arg(long)]
        instance: Option<String>,
        /// Comma-separated strategy list (uniform, variance, optimal,
        /// smoothed:<alpha>, dynamic-variance, dynamic-optimal, length-only).
        #[arg(long)]
        strategies: Option<String>,
        /// Number of seeds (base seed + 0..seeds).
        #[arg(long)]
        seeds: Option<u64>,
        /// Base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        target: Option<f64>,
        #[arg(long)]
        eval_every: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        step_scale: Option<f64>,
        /// Iterate mode: last, average, or suffix:<fraction>.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        refresh_every: Option<usize>,
        #[arg(long)]
        floor_alpha: Option<f64>,
        /// Charge a full cost sweep per dynamic-distribution refresh.
        #[arg(long)]
        charge_sweeps: bool,
        /// Write per-step traces for every cell.
        #[arg(long)]
        traces: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Bias-budget subset-selection sweep.
    Subset {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        instance: Option<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Comma-separated bias budgets.
        #[arg(long)]
        gamma_grid: Option<String>,
        /// Comma-separated target subset sizes (alternative to gamma-grid).
        #[arg(long)]
        subset_sizes: Option<String>,
        /// Subset selector: greedy or exact.
        #[arg(long)]
        selector: Option<String>,
        /// Attach an empirical restricted-SGD run to each row.
        #[arg(long)]
        empirical: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        step_scale: Option<f64>,
        #[arg(long)]
        eval_every: Option<usize>,
    },
    /// Simulate cost-aware GRPO sampling over synthetic rollout pools.
    GrpoSim {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated strategies (no_sampling, uniform, p_star,
        /// smoothed:<alpha>, length_only).
        #[arg(long)]
        strategies: Option<String>,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        prompts: Option<usize>,
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        threshold_ratio: Option<f64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the named invariant suites and print a residual table.
    Verify {
        /// fast (closed-form identities) or full (adds Monte Carlo suites).
        #[arg(long, default_value = "fast")]
        level: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb one named invariant to exercise failure detection.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn parse_list<T: std::str::FromStr>(csv: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    csv.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad {what} `{s}`: {e}"))
        })
        .collect()
}

fn run() -> Result<i32> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Generate {
            common,
            n,
            d,
            norm_bound,
            cost_low,
            cost_high,
            seed,
            diameter,
            cost_norm_correlation,
        } => {
            let mut cfg: GenerateConfig = match &common.config {
                Some(path) => config::load_config(path, "generate")?,
                None => GenerateConfig::default(),
            };
            if let Some(v) = n {
                cfg.n = v;
            }
            if let Some(v) = d {
                cfg.d = v;
            }
            if let Some(v) = norm_bound {
                cfg.norm_bound = v;
            }
            if let Some(v) = cost_low {
                cfg.cost_low = v;
            }
            if let Some(v) = cost_high {
                cfg.cost_high = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = diameter {
                cfg.diameter = v;
            }
            if let Some(v) = cost_norm_correlation {
                cfg.cost_norm_correlation = v;
            }
            commands::generate(&cfg, &common.out)?;
            Ok(0)
        }
        Command::Compare {
            common,
            instance,
            strategies,
            seeds,
            seed,
            target,
            eval_every,
            horizon,
            step_scale,
            mode,
            refresh_every,
            floor_alpha,
            charge_sweeps,
            traces,
            jobs,
        } => {
            let mut cfg: CompareConfig = match &common.config {
                Some(path) => config::load_config(path, "compare")?,
                None => CompareConfig::default(),
            };
            if instance.is_some() {
                cfg.instance = instance;
            }
            if let Some(list) = strategies {
                cfg.strategies = parse_list(&list, "strategy")?;
            }
            if let Some(v) = seeds {
                cfg.seeds = v;
            }
            if let Some(v) = seed {
                cfg.seed_base = v;
            }
            if let Some(v) = target {
                cfg.error_target = v;
            }
            if let Some(v) = eval_every {
                cfg.eval_every = v;
            }
            if let Some(v) = horizon {
                cfg.horizon = v;
            }
            if let Some(v) = step_scale {
                cfg.step_scale = v;
            }
            if let Some(v) = mode {
                cfg.mode = v;
            }
            if let Some(v) = refresh_every {
                cfg.refresh_every = v;
            }
            if let Some(v) = floor_alpha {
                cfg.floor_alpha = v;
            }
            if charge_sweeps {
                cfg.charge_dynamic_sweeps = true;
            }
            if traces {
                cfg.traces = true;
            }
            if let Some(v) = jobs {
                cfg.jobs = v;
            }
            commands::compare(&cfg, &common.out)
        }
        Command::Subset {
            common,
            instance,
            epsilon,
            gamma_grid,
            subset_sizes,
            selector,
            empirical,
            seed,
            horizon,
            step_scale,
            eval_every,
        } => {
            let mut cfg: SubsetConfig = match &common.config {
                Some(path) => config::load_config(path, "subset")?,
                None => SubsetConfig::default(),
            };
            if instance.is_some() {
                cfg.instance = instance;
            }
            if let Some(v) = epsilon {
                cfg.epsilon = v;
            }
            if let Some(list) = gamma_grid {
                cfg.gamma_grid = parse_list(&list, "gamma")?;
            }
            if let Some(list) = subset_sizes {
                cfg.subset_sizes = parse_list(&list, "subset size")?;
                cfg.gamma_grid.clear();
            }
            if let Some(v) = selector {
                cfg.selector = v;
            }
            if empirical {
                cfg.empirical = true;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = horizon {
                cfg.horizon = v;
            }
            if let Some(v) = step_scale {
                cfg.step_scale = v;
            }
            if let Some(v) = eval_every {
                cfg.eval_every = v;
            }
            commands::subset_sweep(&cfg, &common.out)?;
            Ok(0)
        }
        Command::GrpoSim {
            common,
            strategies,
            seeds,
            seed,
            rounds,
            prompts,
            group_size,
            batch,
            learning_rate,
            threshold_ratio,
            jobs,
        } => {
            let mut cfg: GrpoSimConfig = match &common.config {
                Some(path) => config::load_config(path, "grpo-sim")?,
                None => GrpoSimConfig::default(),
            };
            if let Some(list) = strategies {
                cfg.strategies = parse_list(&list, "strategy")?;
            }
            if let Some(v) = seeds {
                cfg.seeds = v;
            }
            if let Some(v) = seed {
                cfg.seed_base = v;
            }
            if let Some(v) = rounds {
                cfg.rounds = v;
            }
            if let Some(v) = prompts {
                cfg.n_prompts = v;
            }
            if let Some(v) = group_size {
                cfg.group_size = v;
            }
            if let Some(v) = batch {
                cfg.batch_size = v;
            }
            if let Some(v) = learning_rate {
                cfg.learning_rate = v;
            }
            if let Some(v) = threshold_ratio {
                cfg.loss_threshold_ratio = v;
            }
            if let Some(v) = jobs {
                cfg.jobs = v;
            }
            commands::grpo_sim(&cfg, &common.out)?;
            Ok(0)
        }
        Command::Verify {
            level,
            seed,
            inject_fault,
        } => {
            let level: VerifyLevel = level.parse().map_err(anyhow::Error::msg)?;
            Ok(commands::verify(level, seed, inject_fault.as_deref()))
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
