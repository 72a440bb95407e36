//! `weak-mfg`: batch front end for the weak-formulation MFG solver.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 fixed point not converged (reports are still written), 4 model contract violation.

mod config;
mod selftest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use serde::Serialize;
use weak_mfg::fixedpoint::{check_monotonicity, constant_control_pairs, solve_mfg, MfgSolution};
use weak_mfg::hamiltonian::Model;
use weak_mfg::measures::{write_control_histograms, write_marginal_histograms};
use weak_mfg::models::build_model;
use weak_mfg::nplayer::{best_response_gap, rate_sweep, simulate_nplayer, write_rate_csv};
use weak_mfg::paths::simulate_driftless;
use weak_mfg::MfgError;

use config::{Command, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "weak-mfg", version, about = "Mean field games in the weak formulation")]
struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
}

/// A configuration problem detected before any computation.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

enum Outcome {
    Done,
    NotConverged,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<MfgError>() {
        Some(MfgError::Usage { .. }) => 2,
        Some(e) if e.is_contract_violation() => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("fixedpoint::solve_mfg: not converged; reports written");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let mut config = RunConfig::load(&cli.config).map_err(|e| ConfigError(e.to_string()))?;
    config.apply_seed(cli.seed);
    let out = cli
        .output
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("cli::run: thread pool")?;
    }
    config.solve.validate().map_err(|e| ConfigError(e.to_string()))?;
    if config.command == Command::Selftest {
        return selftest::run();
    }
    let model = build_model::<f64>(&config.model.name, &config.model.params).map_err(|e| ConfigError(e.to_string()))?;
    std::fs::create_dir_all(&out).with_context(|| format!("cli::run: cannot create {}", out.display()))?;
    match config.command {
        Command::Solve => {
            let solution = solve(&config, model, &out)?;
            Ok(status(&solution))
        }
        Command::Nplayer => nplayer(&config, model, &out),
        Command::RateSweep => sweep(&config, model, &out),
        Command::CheckMono => monotonicity(&config, model, &out),
        Command::Selftest => unreachable!(),
    }
}

fn status(solution: &MfgSolution<f64>) -> Outcome {
    if solution.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    }
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cli::write: cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    config: &'a RunConfig,
    report: T,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, config: &RunConfig, report: T) -> anyhow::Result<()> {
    let mut f = create(dir, name)?;
    serde_json::to_writer_pretty(&mut f, &Report { config, report })?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Solves the MFG and writes the solve report, residual history and histograms.
fn solve(config: &RunConfig, model: Arc<dyn Model<f64>>, out: &Path) -> anyhow::Result<MfgSolution<f64>> {
    let solution = solve_mfg(model, &config.solve)?;
    write_json(out, "solve_report.json", config, solution.report())?;

    let mut f = create(out, "residuals.csv")?;
    writeln!(f, "iteration,moment_residual,sliced_w1,control_flow_residual")?;
    for (i, r) in solution.residual_history.iter().enumerate() {
        writeln!(f, "{},{:e},{:e},{:e}", i + 1, r.moment_residual, r.sliced_w1, r.control_flow_residual)?;
    }
    f.flush()?;

    let grid = *solution.ensemble.grid();
    let n = grid.num_steps();
    let mut steps = vec![0, n / 4, n / 2, 3 * n / 4, n];
    steps.dedup();
    let mut f = create(out, "marginals.csv")?;
    write_marginal_histograms(&solution.mu_hat, &steps, 40, &mut f)?;
    f.flush()?;
    let mut f = create(out, "controls.csv")?;
    write_control_histograms(&solution.nu_hat, grid.dt(), 40, &mut f)?;
    f.flush()?;
    let mut f = create(out, "value.csv")?;
    solution.bsde.write_diagnostics(grid.dt(), &mut f)?;
    f.flush()?;
    Ok(solution)
}

#[derive(Serialize)]
struct NPlayerReport {
    n: usize,
    rollouts: usize,
    gap: Option<weak_mfg::nplayer::EpsilonGapEstimate>,
    realized_value: f64,
    realized_std_error: f64,
    exchangeability: Option<weak_mfg::nplayer::ExchangeabilityTest>,
    mfg_value: f64,
}

fn nplayer(config: &RunConfig, model: Arc<dyn Model<f64>>, out: &Path) -> anyhow::Result<Outcome> {
    let solution = solve(config, model.clone(), out)?;
    let block = &config.nplayer;
    let grid = *solution.ensemble.grid();
    let run = simulate_nplayer(&*model, &solution.policy_hat, grid, block.n, block.rollouts, config.solve.seed)?;
    let gap = if block.n >= 2 {
        Some(best_response_gap(model.clone(), &run, &block.gap)?)
    } else {
        None
    };
    let (j, se) = run.mean_reward(0);
    let report = NPlayerReport {
        n: block.n,
        rollouts: block.rollouts,
        gap,
        realized_value: j,
        realized_std_error: se,
        exchangeability: run.exchangeability(),
        mfg_value: solution.value,
    };
    write_json(out, "nplayer_report.json", config, report)?;
    Ok(status(&solution))
}

fn sweep(config: &RunConfig, model: Arc<dyn Model<f64>>, out: &Path) -> anyhow::Result<Outcome> {
    let solution = solve(config, model.clone(), out)?;
    let grid = *solution.ensemble.grid();
    let report = rate_sweep(model.clone(), &solution.policy_hat, grid, Some(&solution.nu_hat), &config.sweep())?;
    let mut f = create(out, "rate.csv")?;
    write_rate_csv(&report, &mut f)?;
    f.flush()?;
    write_json(out, "rate_report.json", config, &report)?;
    Ok(status(&solution))
}

fn monotonicity(config: &RunConfig, model: Arc<dyn Model<f64>>, out: &Path) -> anyhow::Result<Outcome> {
    let grid = config.solve.grid::<f64>()?;
    let ensemble = simulate_driftless(&*model, grid, config.solve.num_paths, config.solve.seed)?;
    let pairs = constant_control_pairs(&*model, &ensemble, config.monotonicity.pairs, config.solve.seed)?;
    let report = check_monotonicity(&*model, &pairs)?;
    write_json(out, "mono_report.json", config, &report)?;
    Ok(Outcome::Done)
}
