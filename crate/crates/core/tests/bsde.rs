mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use weak_mfg::bsde::{evaluate_reward, optimal_policy, solve_bsde, solve_policy_bsde, RegressionBasis};
use weak_mfg::fixedpoint::random_control;
use weak_mfg::hamiltonian::ClosedLoopPolicy;
use weak_mfg::measures::{ControlLawFlow, ControlSamples, WeightedMeasure};
use weak_mfg::paths::{simulate_driftless, TimeGrid};

use common::{lq_pde_value, mean_se, model, LqData};

/// The clipped instance used against the PDE oracle: `g(x) = x − x²` from `x₀ = 1`.
const CLIPPED: LqData = LqData {
    cost: 1.0,
    bound: 1.0,
    sigma: 1.0,
    terminal: [0.0, 1.0, -1.0],
    x0: 1.0,
    horizon: 1.0,
};

/// Value of the FD oracle on CLIPPED with 2000 cells over ±10 and 2000 steps, frozen.
const CLIPPED_ORACLE: f64 = -0.576_875_887_3;

#[test]
fn pde_oracle_reproduces_closed_forms() {
    // linear terminal: Z ≡ σ, a* = ½, value x₀ + T/4
    let linear = LqData { terminal: [0.0, 1.0, 0.0], ..CLIPPED };
    assert!((lq_pde_value(&linear, 10.0, 2000, 2000) - 1.25).abs() < 1e-9);
    // a bound that never binds: the Riccati solution gives 1/8 − ln 2
    let riccati = LqData { bound: 20.0, ..CLIPPED };
    assert!((lq_pde_value(&riccati, 6.0, 2000, 4000) - (0.125 - 2f64.ln())).abs() < 5e-4);
    // self-convergence on the clipped instance
    let fine = lq_pde_value(&CLIPPED, 12.0, 4000, 4000);
    assert!((lq_pde_value(&CLIPPED, 10.0, 2000, 2000) - fine).abs() < 2e-4);
    assert!((lq_pde_value(&CLIPPED, 10.0, 2000, 2000) - CLIPPED_ORACLE).abs() < 1e-9);
}

fn lq_solve(data: &LqData, n: usize, paths: usize, seed: u64) -> weak_mfg::bsde::BsdeSolution<f64> {
    let m = model("clipped_lq", data.params());
    let ens = simulate_driftless(&*m, TimeGrid::new(data.horizon, n).unwrap(), paths, seed).unwrap();
    let mu = WeightedMeasure::uniform(ens.paths().clone());
    solve_bsde(&ens, &*m, &mu, &ControlLawFlow::dirac(&[0.0], n), &RegressionBasis::default()).unwrap()
}

#[test]
fn bsde_matches_the_pde_oracle() {
    let sol = lq_solve(&CLIPPED, 64, 8000, 0);
    let rel = (sol.value() - CLIPPED_ORACLE).abs() / CLIPPED_ORACLE.abs();
    assert!(rel < 0.02, "value {} oracle {} relative error {}", sol.value(), CLIPPED_ORACLE, rel);
}

#[test]
fn linear_terminal_value_is_unbiased() {
    // Z ≡ σ and the optimal drift is ½ everywhere, so the value is x₀ + T/4
    let linear = LqData { terminal: [0.0, 1.0, 0.0], ..CLIPPED };
    let values: Vec<f64> = (0..8).map(|seed| lq_solve(&linear, 20, 4000, seed).value()).collect();
    let (mean, se) = mean_se(&values);
    assert!((mean - 1.25).abs() <= 3.0 * se + 1e-3, "mean {} se {}", mean, se);
    assert!(values.iter().all(|v| (v - 1.25).abs() < 0.03), "{:?}", values);
}

#[test]
fn shifting_the_terminal_reward_shifts_the_value() {
    let shifted = LqData { terminal: [1.0, 1.0, -1.0], ..CLIPPED };
    let a = lq_solve(&CLIPPED, 32, 4000, 2);
    let b = lq_solve(&shifted, 32, 4000, 2);
    assert!((b.value() - a.value() - 1.0).abs() <= 0.02);
    let violations = (0..4000).filter(|&m| b.y(m, 0) < a.y(m, 0) - 1e-6).count();
    assert!((violations as f64) < 0.005 * 4000.0);
}

#[test]
fn terminal_condition_is_exact() {
    let m = model("price_impact", serde_json::Value::Null);
    let ens = simulate_driftless(&*m, TimeGrid::new(1.0, 10).unwrap(), 500, 3).unwrap();
    let mu = WeightedMeasure::uniform(ens.paths().clone());
    let sol = solve_bsde(&ens, &*m, &mu, &ControlLawFlow::dirac(&[0.2], 10), &RegressionBasis::default()).unwrap();
    for p in 0..500 {
        assert_eq!(sol.y(p, 10), m.terminal_reward(&ens.paths().path(p), &mu.view()));
    }
}

#[test]
fn control_flow_is_irrelevant_without_a_flow_reward() {
    let m = model("clipped_lq", LqData { terminal: [0.0, 1.0, -0.5], ..CLIPPED }.params());
    assert!(m.flow_reward_vanishes());
    let ens = simulate_driftless(&*m, TimeGrid::new(1.0, 10).unwrap(), 500, 4).unwrap();
    let mu = WeightedMeasure::uniform(ens.paths().clone());
    let basis = RegressionBasis::default();
    let a = solve_bsde(&ens, &*m, &mu, &ControlLawFlow::dirac(&[0.9], 10), &basis).unwrap();
    let spread = ControlSamples::uniform(1, vec![-1.0, 0.0, 0.4]).unwrap();
    let b = solve_bsde(&ens, &*m, &mu, &ControlLawFlow::new(1, vec![spread; 10]).unwrap(), &basis).unwrap();
    assert_eq!(a.value(), b.value());
    assert_eq!(a.initial_values(), b.initial_values());
}

#[test]
fn refining_the_time_grid_changes_little() {
    let coarse = lq_solve(&CLIPPED, 32, 8000, 5).value();
    let fine = lq_solve(&CLIPPED, 64, 8000, 5).value();
    assert!((fine - coarse).abs() / fine.abs() < 0.02, "{} vs {}", coarse, fine);
}

#[test]
fn optimal_policy_beats_constant_policies() {
    let m = model("price_impact", serde_json::Value::Null);
    let grid = TimeGrid::new(1.0, 25).unwrap();
    let fit = simulate_driftless(&*m, grid, 4000, 6).unwrap();
    let mu = WeightedMeasure::uniform(fit.paths().clone());
    let nu = ControlLawFlow::dirac(&[0.3], 25);
    let sol = solve_bsde(&fit, &*m, &mu, &nu, &RegressionBasis::default()).unwrap();
    let policy = optimal_policy(&sol, m.clone(), &mu);

    let test = simulate_driftless(&*m, grid, 4000, 7).unwrap();
    let best = evaluate_reward(&test, &*m, &mu, &nu, &policy).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let c = ClosedLoopPolicy::constant(random_control(m.control_set(), &mut rng));
        let other = evaluate_reward(&test, &*m, &mu, &nu, &c).unwrap();
        let se = (best.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        assert!(best.mean >= other.mean - 3.0 * se, "{} < {}", best.mean, other.mean);
    }
}

#[test]
fn policy_bsde_agrees_with_reweighting() {
    let m = model("price_impact", serde_json::Value::Null);
    let grid = TimeGrid::new(1.0, 25).unwrap();
    let ens = simulate_driftless(&*m, grid, 4000, 9).unwrap();
    let mu = WeightedMeasure::uniform(ens.paths().clone());
    let nu = ControlLawFlow::dirac(&[-0.2], 25);
    let policy = ClosedLoopPolicy::from_fn(|_t: f64, x| Ok(vec![(-0.5 * x.current()[0]).clamp(-1.0, 1.0)]));
    let a = solve_policy_bsde(&ens, &*m, &mu, &nu, &policy, &RegressionBasis::default()).unwrap();
    let b = evaluate_reward(&ens, &*m, &mu, &nu, &policy).unwrap();
    let se = (a.value_std_error().powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.value() - b.mean).abs() <= 4.0 * se, "{} vs {} (se {})", a.value(), b.mean, se);
}

#[test]
fn too_few_paths_for_the_basis_is_a_usage_error() {
    let m = model("price_impact", serde_json::Value::Null);
    let ens = simulate_driftless(&*m, TimeGrid::new(1.0, 5).unwrap(), 20, 0).unwrap();
    let mu = WeightedMeasure::uniform(ens.paths().clone());
    let err = solve_bsde(&ens, &*m, &mu, &ControlLawFlow::dirac(&[0.0], 5), &RegressionBasis::default()).unwrap_err();
    assert!(matches!(err, weak_mfg::MfgError::Usage { .. }));
}
