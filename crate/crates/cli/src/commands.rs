//! Command implementations.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use casgd_core::optimizer::{self, CompareCell};
use casgd_core::rollout::{self, RoundSampling};
use casgd_core::sampling::Strategy;
use casgd_core::subset::{self, Selector};
use casgd_core::verify::{run_checks, VerifyLevel};
use casgd_core::{problem, FiniteSumProblem};
use rayon::prelude::*;

use crate::config::{parse_mode, CompareConfig, GenerateConfig, GrpoSimConfig, SubsetConfig};
use crate::meta::{echo_config, fmt_opt, CsvFile, OutputMeta, TOOL_VERSION};

type CellOutcome = (Strategy, u64, Result<(CompareCell, Option<String>)>);

fn load_or_generate(
    instance: &Option<String>,
    generator: &GenerateConfig,
) -> Result<FiniteSumProblem> {
    match instance {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading instance file {path}"))?;
            let problem: FiniteSumProblem =
                serde_json::from_str(&text).with_context(|| format!("parsing instance {path}"))?;
            Ok(problem)
        }
        None => Ok(problem::generate_least_squares(&generator.params())?),
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?)
}

/// `generate`: write an instance file. The document is fully deterministic
/// for a fixed config (no timestamp), so re-runs are byte-identical.
pub fn generate(cfg: &GenerateConfig, out_dir: &Path) -> Result<()> {
    echo_config(cfg, "generate", out_dir)?;
    let problem = problem::generate_least_squares(&cfg.params())?;
    let mut doc = serde_json::to_value(&problem)?;
    let map = doc.as_object_mut().expect("instance serializes as an object");
    map.insert("tool_version".into(), TOOL_VERSION.into());
    map.insert("config_hash".into(), crate::meta::config_hash(cfg)?.into());
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("instance.json");
    fs::write(&path, serde_json::to_string(&doc)?)
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "wrote {} ({} components, dimension {})",
        path.display(),
        problem.n(),
        problem.dimension()
    );
    Ok(())
}

/// `compare`: run every (strategy, seed) cell, write the per-cell table and
/// per-strategy aggregates, and print the cost ordering.
pub fn compare(cfg: &CompareConfig, out_dir: &Path) -> Result<i32> {
    echo_config(cfg, "compare", out_dir)?;
    let problem = load_or_generate(&cfg.instance, &cfg.generator)?;
    let strategies: Vec<Strategy> = cfg
        .strategies
        .iter()
        .map(|s| s.parse().map_err(anyhow::Error::msg))
        .collect::<Result<_>>()?;
    if strategies.is_empty() || cfg.seeds == 0 {
        bail!("compare needs at least one strategy and one seed");
    }
    let core_cfg = optimizer::CompareConfig {
        strategies: strategies.clone(),
        seeds: (cfg.seed_base..cfg.seed_base + cfg.seeds).collect(),
        error_target: cfg.error_target,
        eval_every: cfg.eval_every,
        horizon: cfg.horizon,
        step_scale: cfg.step_scale,
        mode: parse_mode(&cfg.mode)?,
        refresh_every: cfg.refresh_every,
        floor_alpha: cfg.floor_alpha,
        charge_dynamic_sweeps: cfg.charge_dynamic_sweeps,
    };

    let specs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| core_cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let pool = thread_pool(cfg.jobs)?;
    let results: Vec<CellOutcome> = pool.install(|| {
            specs
                .par_iter()
                .map(|&(strategy, seed)| {
                    let outcome = (|| {
                        if cfg.traces {
                            let trace = optimizer::run_cell_trace(
                                &problem, strategy, seed, &core_cfg, true,
                            )?;
                            let cell = CompareCell {
                                strategy,
                                seed,
                                iters_to_target: trace.iters_to_target,
                                cost_to_target: trace.cost_to_target,
                                reached: trace.iters_to_target.is_some(),
                                refresh_cost_total: trace.refresh_cost_total,
                            };
                            let mut csv = String::new();
                            csv.push_str("step,index,cost,cum_cost,error\n");
                            for s in &trace.steps {
                                csv.push_str(&format!(
                                    "{},{},{},{},{}\n",
                                    s.t,
                                    s.index,
                                    s.cost,
                                    s.cum_cost,
                                    fmt_opt(s.error)
                                ));
                            }
                            Ok((cell, Some(csv)))
                        } else {
                            let cell = optimizer::run_cell(&problem, strategy, seed, &core_cfg)?;
                            Ok((cell, None))
                        }
                    })();
                    (strategy, seed, outcome)
                })
                .collect()
        });

    let meta = OutputMeta::new(
        cfg,
        format!("{}..{}", cfg.seed_base, cfg.seed_base + cfg.seeds),
    )?;
    let mut table = CsvFile::new(&meta, "strategy,seed,iters_to_target,cost_to_target,reached");
    let mut cells = Vec::new();
    let mut hard_failure = false;
    for (strategy, seed, outcome) in results {
        match outcome {
            Ok((cell, trace_csv)) => {
                table.row(&[
                    strategy.to_string(),
                    seed.to_string(),
                    fmt_opt(cell.iters_to_target),
                    fmt_opt(cell.cost_to_target),
                    cell.reached.to_string(),
                ]);
                if let Some(csv) = trace_csv {
                    let path = out_dir
                        .join("traces")
                        .join(format!("{strategy}-{seed}.csv"));
                    fs::create_dir_all(path.parent().unwrap())?;
                    fs::write(&path, csv)?;
                }
                cells.push(cell);
            }
            Err(e) => {
                hard_failure = true;
                eprintln!("cell ({strategy}, seed {seed}) failed: {e:#}");
                table.row(&[
                    strategy.to_string(),
                    seed.to_string(),
                    String::new(),
                    String::new(),
                    "error".into(),
                ]);
            }
        }
    }
    table.write_to(&out_dir.join("comparison.csv"))?;

    let aggregates = optimizer::aggregate_cells(&strategies, &cells);
    let mut summary = CsvFile::new(
        &meta,
        "strategy,cells,reached,mean_iters,sem_iters,mean_cost,sem_cost",
    );
    for a in &aggregates {
        summary.row(&[
            a.strategy.to_string(),
            a.cells.to_string(),
            a.reached.to_string(),
            fmt_opt(a.mean_iters),
            fmt_opt(a.sem_iters),
            fmt_opt(a.mean_cost),
            fmt_opt(a.sem_cost),
        ]);
    }
    summary.write_to(&out_dir.join("summary.csv"))?;

    let mut by_cost: Vec<_> = aggregates
        .iter()
        .filter(|a| a.mean_cost.is_some())
        .collect();
    by_cost.sort_by(|a, b| a.mean_cost.partial_cmp(&b.mean_cost).unwrap());
    println!("strategy ordering by mean cost-to-target:");
    for (rank, a) in by_cost.iter().enumerate() {
        println!(
            "  {}. {:18} mean cost {:14.1}  mean iters {:9.1}  reached {}/{}",
            rank + 1,
            a.strategy.to_string(),
            a.mean_cost.unwrap(),
            a.mean_iters.unwrap_or(f64::NAN),
            a.reached,
            a.cells,
        );
    }
    Ok(if hard_failure { 1 } else { 0 })
}

/// `subset`: bias-budget sweep, optionally with empirical restricted runs.
pub fn subset_sweep(cfg: &SubsetConfig, out_dir: &Path) -> Result<()> {
    echo_config(cfg, "subset", out_dir)?;
    let problem = load_or_generate(&cfg.instance, &cfg.generator)?;
    let selector: Selector = cfg.selector.parse().map_err(anyhow::Error::msg)?;
    let grid: Vec<f64> = if !cfg.gamma_grid.is_empty() {
        cfg.gamma_grid.clone()
    } else if !cfg.subset_sizes.is_empty() {
        let min_g = problem
            .lipschitz_bounds()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let floor_gamma = problem.diameter() * min_g / (2.0 * problem.n() as f64);
        cfg.subset_sizes
            .iter()
            .map(|&k| {
                subset::gamma_for_prefix_size(
                    problem.lipschitz_bounds(),
                    problem.costs(),
                    problem.diameter(),
                    k,
                )
                .map(|g| if g > 0.0 { g } else { floor_gamma })
            })
            .collect::<Result<_, _>>()?
    } else {
        bail!("subset sweep needs gamma_grid or subset_sizes");
    };

    let empirical = cfg.empirical.then_some(subset::EmpiricalRunConfig {
        seed: cfg.seed,
        horizon: cfg.horizon,
        step_scale: cfg.step_scale,
        eval_every: cfg.eval_every,
        target: cfg.epsilon,
    });
    let rows = subset::gamma_sweep(&problem, cfg.epsilon, &grid, selector, empirical)?;

    let meta = OutputMeta::new(cfg, cfg.seed.to_string())?;
    let header = if cfg.empirical {
        "gamma,subset_size,bias_floor,v_req,predicted_cost,feasible,empirical_error,empirical_cost"
    } else {
        "gamma,subset_size,bias_floor,v_req,predicted_cost,feasible"
    };
    let mut csv = CsvFile::new(&meta, header);
    for row in &rows {
        let mut fields = vec![
            row.gamma.to_string(),
            row.subset_size.to_string(),
            row.bias_floor.to_string(),
            row.v_req.to_string(),
            fmt_opt(row.predicted_cost),
            row.feasible.to_string(),
        ];
        if cfg.empirical {
            fields.push(fmt_opt(row.empirical_error));
            fields.push(fmt_opt(row.empirical_cost));
        }
        csv.row(&fields);
    }
    csv.write_to(&out_dir.join("sweep.csv"))?;
    println!(
        "wrote {} ({} rows, selector {})",
        out_dir.join("sweep.csv").display(),
        rows.len(),
        cfg.selector
    );
    Ok(())
}

/// `grpo-sim`: token-efficiency campaigns over synthetic rollout pools.
pub fn grpo_sim(cfg: &GrpoSimConfig, out_dir: &Path) -> Result<()> {
    echo_config(cfg, "grpo-sim", out_dir)?;
    let strategies: Vec<RoundSampling> = cfg
        .strategies
        .iter()
        .map(|s| s.parse().map_err(anyhow::Error::msg))
        .collect::<Result<_>>()?;
    if strategies.is_empty() || cfg.seeds == 0 {
        bail!("grpo-sim needs at least one strategy and one seed");
    }
    let campaign_cfg = cfg.campaign();
    let specs: Vec<(RoundSampling, u64)> = strategies
        .iter()
        .flat_map(|&s| (cfg.seed_base..cfg.seed_base + cfg.seeds).map(move |seed| (s, seed)))
        .collect();
    let pool = thread_pool(cfg.jobs)?;
    let results: Vec<rollout::CampaignResult> = pool.install(|| {
        specs
            .par_iter()
            .map(|&(s, seed)| rollout::run_campaign(&campaign_cfg, &s, seed))
            .collect::<Result<_, _>>()
    })?;

    let meta = OutputMeta::new(
        cfg,
        format!("{}..{}", cfg.seed_base, cfg.seed_base + cfg.seeds),
    )?;
    let mut curves = CsvFile::new(&meta, "round,cumulative_tokens,loss,strategy,seed");
    let mut fidelity = CsvFile::new(&meta, "round,pearson,cost_biased_chi2,strategy,seed");
    for r in &results {
        for point in &r.curve {
            curves.row(&[
                point.round.to_string(),
                point.cumulative_tokens.to_string(),
                point.loss.to_string(),
                r.strategy.clone(),
                r.seed.to_string(),
            ]);
        }
        for f in &r.fidelity {
            fidelity.row(&[
                f.round.to_string(),
                fmt_opt(f.pearson),
                fmt_opt(f.cost_biased_chi2),
                r.strategy.clone(),
                r.seed.to_string(),
            ]);
        }
    }
    curves.write_to(&out_dir.join("curves.csv"))?;
    fidelity.write_to(&out_dir.join("fidelity.csv"))?;

    // Token-advantage summary: for each non-baseline strategy, the fraction of
    // seeds where it hits the loss threshold using no more tokens than each
    // baseline.
    let name = |s: &RoundSampling| s.to_string();
    for s in &strategies {
        let mine: Vec<&rollout::CampaignResult> =
            results.iter().filter(|r| r.strategy == name(s)).collect();
        let reached = mine.iter().filter(|r| r.tokens_to_threshold.is_some()).count();
        println!(
            "{:12} reached threshold on {}/{} seeds",
            name(s),
            reached,
            mine.len()
        );
        for baseline in &strategies {
            if baseline == s {
                continue;
            }
            let theirs: Vec<&rollout::CampaignResult> = results
                .iter()
                .filter(|r| r.strategy == name(baseline))
                .collect();
            let wins = mine
                .iter()
                .zip(&theirs)
                .filter(|(a, b)| match (a.tokens_to_threshold, b.tokens_to_threshold) {
                    (Some(x), Some(y)) => x <= y,
                    (Some(_), None) => true,
                    _ => false,
                })
                .count();
            println!(
                "  vs {:12} fewer-or-equal tokens to threshold on {}/{} seeds",
                name(baseline),
                wins,
                mine.len().min(theirs.len())
            );
        }
    }
    Ok(())
}

/// `verify`: print the invariant table; exit code 2 on any failure.
pub fn verify(level: VerifyLevel, seed: u64, inject_fault: Option<&str>) -> i32 {
    let results = run_checks(level, seed, inject_fault);
    let mut failed = 0;
    println!("{:38} {:>14} {:>14} status", "invariant", "residual", "tolerance");
    for r in &results {
        println!(
            "{:38} {:>14.6e} {:>14.6e} {}",
            r.name,
            r.residual,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        );
        if !r.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} invariant(s) failed");
        2
    } else {
        0
    }
}
