//! Quick structural checks that need no reference values.

use weak_mfg::fixedpoint::{check_monotonicity, fixed_point_residual_certificate, solve_mfg, MfgSolveConfig};
use weak_mfg::hamiltonian::ClosedLoopPolicy;
use weak_mfg::measures::{discrepancy, girsanov_log_weights, DiscrepancyConfig, WeightedMeasure};
use weak_mfg::models::build_model;
use weak_mfg::nplayer::{best_response_gap, simulate_nplayer, GapConfig};
use weak_mfg::paths::{simulate_driftless, TimeGrid};

use crate::Outcome;

type Check = fn() -> anyhow::Result<bool>;

fn small_solve() -> MfgSolveConfig {
    MfgSolveConfig {
        num_paths: 600,
        num_steps: 20,
        pilot_paths: 64,
        ..MfgSolveConfig::default()
    }
}

fn uncoupled_one_iteration() -> anyhow::Result<bool> {
    let model = build_model::<f64>("uncoupled", &serde_json::Value::Null)?;
    let sol = solve_mfg(model.clone(), &small_solve())?;
    let zero = sol.residual_history.len() == 1 && sol.residual_history[0].max_component() == 0.0;
    Ok(sol.converged && sol.iterations == 1 && zero && fixed_point_residual_certificate(&sol, model)? == 0.0)
}

fn undamped_matches_damped_on_uncoupled() -> anyhow::Result<bool> {
    let model = build_model::<f64>("uncoupled", &serde_json::Value::Null)?;
    let a = solve_mfg(model.clone(), &small_solve())?;
    let b = solve_mfg(model, &MfgSolveConfig { damping: 1.0, ..small_solve() })?;
    Ok(a.value == b.value && a.mu_hat.weights() == b.mu_hat.weights())
}

fn zero_drift_gives_unit_weights() -> anyhow::Result<bool> {
    let model = build_model::<f64>("clipped_lq", &serde_json::Value::Null)?;
    let ens = simulate_driftless(&*model, TimeGrid::new(1.0, 10)?, 200, 3)?;
    let mu = WeightedMeasure::uniform(ens.paths().clone());
    let logw = girsanov_log_weights(&ens, &*model, &ClosedLoopPolicy::constant(vec![0.0]), &mu)?;
    Ok(logw.iter().all(|&l| l == 0.0))
}

fn identical_measures() -> anyhow::Result<bool> {
    let model = build_model::<f64>("price_impact", &serde_json::Value::Null)?;
    let grid = TimeGrid::new(1.0, 10)?;
    let ens = simulate_driftless(&*model, grid, 200, 5)?;
    let mu = WeightedMeasure::uniform(ens.paths().clone());
    let nu = weak_mfg::measures::ControlLawFlow::dirac(&[0.3], 10);
    let d = discrepancy(&mu, &mu, &nu, &nu, &DiscrepancyConfig::for_grid(&grid))?;
    let mono = check_monotonicity(&*model, &[(mu.clone(), mu)])?;
    Ok(d.max_component() == 0.0 && mono.pairs[0].estimate == 0.0 && !mono.any_violation)
}

fn single_flocking_player() -> anyhow::Result<bool> {
    let params = serde_json::json!({"interaction": {"kind": "nearest_neighbor", "radius": 0.1, "scale": 1.0}});
    let model = build_model::<f64>("flocking", &params)?;
    let policy = ClosedLoopPolicy::constant(vec![0.5]);
    let run = simulate_nplayer(&*model, &policy, TimeGrid::new(1.0, 10)?, 1, 4, 1)?;
    Ok(run.rollouts.iter().all(|r| r.mu.num_atoms() == 1 && r.rewards[0].is_finite()))
}

fn uncoupled_gap_vanishes() -> anyhow::Result<bool> {
    let model = build_model::<f64>("uncoupled", &serde_json::Value::Null)?;
    let sol = solve_mfg(model.clone(), &small_solve())?;
    let run = simulate_nplayer(&*model, &sol.policy_hat, *sol.ensemble.grid(), 4, 4, 2)?;
    let gap = best_response_gap(model.clone(), &run, &GapConfig { num_paths: 2000, ..GapConfig::default() })?;
    // both policies carry regression error, so only a gain beyond half a percent of the value counts
    let slack = 3.0 * gap.gap_std_error;
    Ok(gap.gap >= -slack && gap.gap <= slack + 0.005 * gap.equilibrium_value.abs())
}

const CHECKS: &[(&str, Check)] = &[
    ("uncoupled model converges in one iteration with zero residual", uncoupled_one_iteration),
    ("undamped iteration reproduces the damped one on the uncoupled model", undamped_matches_damped_on_uncoupled),
    ("zero drift gives unit Girsanov weights", zero_drift_gives_unit_weights),
    ("identical measures have zero discrepancy and monotonicity integral", identical_measures),
    ("a single flocking player runs with an empty neighbourhood", single_flocking_player),
    ("uncoupled model has no profitable deviation beyond regression error", uncoupled_gap_vanishes),
];

pub fn run() -> anyhow::Result<Outcome> {
    let mut failed = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(true) => println!("PASS {}", name),
            Ok(false) => {
                failed += 1;
                println!("FAIL {}", name);
            }
            Err(e) => {
                failed += 1;
                println!("FAIL {} ({:#})", name, e);
            }
        }
    }
    if failed > 0 {
        anyhow::bail!("cli::selftest: {} of {} checks failed", failed, CHECKS.len());
    }
    Ok(Outcome::Done)
}
