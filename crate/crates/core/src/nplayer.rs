//! Finite-player games driven by the distributed MFG strategy.
//!
//! Each of the `n` players applies `α̂(t, X^i)` to its own path, so players
//! are simulated independently by Euler–Maruyama with drift. The ε-Nash gap of
//! player 1 is estimated by solving its control problem against the frozen
//! empirical environment `(μⁿ, qⁿ)` of each rollout.

use std::io::Write;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bsde::{optimal_policy, solve_bsde, solve_policy_bsde, RegressionBasis};
use crate::error::{MfgError, Result};
use crate::hamiltonian::{ClosedLoopPolicy, Model};
use crate::measures::{sliced_w1, ControlLawFlow, ControlSamples, WeightedMeasure};
use crate::paths::{path_rng, simulate_driftless, PathSet, PathSlice, TimeGrid};
use crate::scalar::{norm, Real};

fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one rollout (or of one auxiliary stream of it, via `tag`).
fn rollout_seed(seed: u64, n: usize, rollout: usize, tag: u64) -> u64 {
    mix_seed(mix_seed(mix_seed(seed ^ tag) ^ n as u64) ^ rollout as u64)
}

/// One simulated game: the empirical environment and every player's realized reward.
#[derive(Debug, Clone)]
pub struct Rollout<S: Real> {
    /// μⁿ, uniform over the `n` player paths.
    pub mu: WeightedMeasure<S>,
    /// qⁿ_t, the players' controls at each step.
    pub q: ControlLawFlow<S>,
    /// `J_{n,i}` for every player.
    pub rewards: Vec<S>,
}

/// `num_rollouts` independent `n`-player games under the distributed strategy.
#[derive(Debug, Clone)]
pub struct NPlayerRun<S: Real> {
    pub n: usize,
    pub grid: TimeGrid<S>,
    pub seed: u64,
    pub policy: ClosedLoopPolicy<S>,
    pub rollouts: Vec<Rollout<S>>,
}

/// Mean and standard error of a sample.
fn mean_se<S: Real>(xs: &[S]) -> (S, S) {
    let count = S::count(xs.len());
    let mean = xs.iter().copied().sum::<S>() / count;
    if xs.len() < 2 {
        return (mean, S::zero());
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / S::count(xs.len() - 1);
    (mean, (var / count).sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic.
fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Two-sample test of `J_{n,1}` against `J_{n,2}` across rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExchangeabilityTest {
    pub statistic: f64,
    /// 5% critical value of the KS statistic.
    pub critical: f64,
    pub passed: bool,
}

impl<S: Real> NPlayerRun<S> {
    /// Rewards of `player` across rollouts.
    pub fn player_rewards(&self, player: usize) -> Vec<S> {
        self.rollouts.iter().map(|r| r.rewards[player]).collect()
    }

    /// Mean realized reward of `player` and its standard error across rollouts.
    pub fn mean_reward(&self, player: usize) -> (S, S) {
        mean_se(&self.player_rewards(player))
    }

    /// `None` when fewer than two players or rollouts.
    pub fn exchangeability(&self) -> Option<ExchangeabilityTest> {
        let r = self.rollouts.len();
        if self.n < 2 || r < 2 {
            return None;
        }
        let a: Vec<f64> = self.player_rewards(0).iter().map(|v| v.to_f64_lossy()).collect();
        let b: Vec<f64> = self.player_rewards(1).iter().map(|v| v.to_f64_lossy()).collect();
        let statistic = ks_statistic(&a, &b);
        let critical = 1.358 * (2.0 / r as f64).sqrt();
        Some(ExchangeabilityTest {
            statistic,
            critical,
            passed: statistic <= critical,
        })
    }
}

/// One player's path under the policy: states and per-step controls.
fn simulate_player<S: Real>(
    model: &dyn Model<S>,
    policy: &ClosedLoopPolicy<S>,
    grid: &TimeGrid<S>,
    placeholder: &WeightedMeasure<S>,
    seed: u64,
    player: usize,
) -> Result<(Vec<S>, Vec<S>)> {
    const OP: &str = "nplayer::simulate_nplayer";
    let d = model.dim();
    let da = model.control_set().dim();
    let n = grid.num_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut rng = path_rng(seed, player as u64);
    let mut xs = vec![S::zero(); (n + 1) * d];
    let mut ints = vec![S::zero(); (n + 1) * d];
    model.initial_law().sampler()?.sample(&mut rng, &mut xs[..d]);
    let mut controls = Vec::with_capacity(n * da);
    let (mut b, mut theta) = (vec![S::zero(); d], vec![S::zero(); d]);
    let mut sigma = vec![S::zero(); d * d];
    let mut dw = vec![S::zero(); d];
    let mut noise = vec![S::zero(); d];
    let view = placeholder.view();
    let bound = model.drift_bound() * (S::one() + S::of(1e-9));
    for k in 0..n {
        let t = grid.time(k);
        {
            let slice = PathSlice::new(&xs, &ints, k, d, dt);
            let a = policy.control(t, &slice)?;
            if !model.control_set().contains(&a) {
                return Err(MfgError::contract(OP, format!("policy left the control set at step {}", k)));
            }
            model.drift(t, &slice, &view, &a, &mut b);
            model.scaled_drift(t, &slice, &view, &a, &mut theta);
            let size = norm(&theta);
            if !size.is_finite() || size > bound {
                return Err(MfgError::contract(OP, format!("|σ⁻¹b| = {} exceeds the declared bound", size)));
            }
            model.volatility(t, &slice, &mut sigma);
            controls.extend_from_slice(&a);
        }
        for w in dw.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = S::of(z) * sqrt_dt;
        }
        crate::linalg::mat_vec(&sigma, &dw, &mut noise);
        for i in 0..d {
            xs[(k + 1) * d + i] = xs[k * d + i] + b[i] * dt + noise[i];
            ints[(k + 1) * d + i] = ints[k * d + i] + xs[k * d + i] * dt;
        }
        if xs[(k + 1) * d..(k + 2) * d].iter().any(|v| !v.is_finite()) {
            return Err(MfgError::Simulation { op: OP, step: k, path: player });
        }
    }
    Ok((xs, controls))
}

/// `J_{n,i}` for every player against the rollout's own `(μⁿ, qⁿ)`.
fn realized_rewards<S: Real>(model: &dyn Model<S>, mu: &WeightedMeasure<S>, q: &ControlLawFlow<S>, controls: &[Vec<S>]) -> Result<Vec<S>> {
    let paths = mu.paths();
    let grid = *paths.grid();
    let dt = grid.dt();
    let da = q.dim();
    let view = mu.view();
    (0..paths.num_paths())
        .into_par_iter()
        .map(|i| {
            let mut j = S::zero();
            for k in 0..grid.num_steps() {
                let slice = paths.slice(i, k);
                let t = grid.time(k);
                let a = &controls[i][k * da..(k + 1) * da];
                j += dt * (model.reward_control(t, &slice, &view, a) + model.reward_flow(t, &slice, &view, &q.at(k)));
            }
            j += model.terminal_reward(&paths.path(i), &view);
            if !j.is_finite() {
                return Err(MfgError::non_finite("nplayer::simulate_nplayer", format!("reward {} of player {}", j, i)));
            }
            Ok(j)
        })
        .collect()
}

/// Simulates `num_rollouts` games of `n` players, each using `policy` on its own path.
///
/// Only models whose drift has no mean-field term are supported, since the
/// players are then independent given their own noise.
pub fn simulate_nplayer<S: Real>(
    model: &dyn Model<S>,
    policy: &ClosedLoopPolicy<S>,
    grid: TimeGrid<S>,
    n: usize,
    num_rollouts: usize,
    seed: u64,
) -> Result<NPlayerRun<S>> {
    const OP: &str = "nplayer::simulate_nplayer";
    if model.drift_depends_on_measure() {
        return Err(MfgError::Unsupported {
            op: OP,
            detail: format!("model `{}` has a mean-field drift; only b = b(t, x, a) is supported", model.name()),
        });
    }
    if n == 0 || num_rollouts == 0 {
        return Err(MfgError::usage(OP, "need at least one player and one rollout"));
    }
    let d = model.dim();
    let da = model.control_set().dim();
    let steps = grid.num_steps();
    let placeholder = WeightedMeasure::uniform(Arc::new(PathSet::from_states(grid, d, vec![S::zero(); (steps + 1) * d])?));

    let mut rollouts = Vec::with_capacity(num_rollouts);
    for r in 0..num_rollouts {
        let rseed = rollout_seed(seed, n, r, 0);
        let players: Vec<(Vec<S>, Vec<S>)> = (0..n)
            .into_par_iter()
            .map(|i| simulate_player(model, policy, &grid, &placeholder, rseed, i))
            .collect::<Result<_>>()?;
        let mut states = Vec::with_capacity(n * (steps + 1) * d);
        let mut controls = Vec::with_capacity(n);
        for (xs, cs) in players {
            states.extend(xs);
            controls.push(cs);
        }
        let mu = WeightedMeasure::uniform(Arc::new(PathSet::from_states(grid, d, states)?));
        let flow = (0..steps)
            .map(|k| {
                let pts: Vec<S> = controls.iter().flat_map(|c| c[k * da..(k + 1) * da].iter().copied()).collect();
                ControlSamples::uniform(da, pts)
            })
            .collect::<Result<Vec<_>>>()?;
        let q = ControlLawFlow::new(da, flow)?;
        let rewards = realized_rewards(model, &mu, &q, &controls)?;
        rollouts.push(Rollout { mu, q, rewards });
    }
    Ok(NPlayerRun {
        n,
        grid,
        seed,
        policy: policy.clone(),
        rollouts,
    })
}

/// Settings of the best-response solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapConfig {
    /// Paths of each of player 1's fresh driftless ensembles. A best response
    /// fitted on fewer paths than the equilibrium policy tends to lose to it.
    pub num_paths: usize,
    pub basis: RegressionBasis,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            num_paths: 8000,
            basis: RegressionBasis::default(),
        }
    }
}

/// Estimate of player 1's gain from deviating, pooled over rollouts.
///
/// Per rollout, player 1's control problem with `(μⁿ, qⁿ)` frozen is solved on
/// one fresh ensemble, and the resulting policy and the distributed strategy
/// are then both evaluated by linear BSDEs on a second, independent ensemble.
/// Evaluating both with the same noise makes the difference precise, and
/// keeping the fit out of sample avoids the upward bias of the maximized
/// driver at a noisy `Z`. The gap is a lower-bound estimate of the supremum
/// over all adapted deviations. It also contains whatever the distributed
/// strategy lost to its own regression error, which does not vanish with `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonGapEstimate {
    pub n: usize,
    /// Reward of the distributed strategy against the frozen environment.
    pub equilibrium_value: f64,
    pub equilibrium_std_error: f64,
    /// Reward of the fitted best response against the frozen environment.
    pub best_response_value: f64,
    pub best_response_std_error: f64,
    pub gap: f64,
    pub gap_std_error: f64,
    /// In-sample value of the best-response BSDE; biased upwards by regression noise.
    pub in_sample_value: f64,
    /// Player 1's realized reward in the simulated games.
    pub realized_value: f64,
    pub realized_std_error: f64,
}

/// ε̂_n for the run's rollouts.
pub fn best_response_gap<S: Real>(model: Arc<dyn Model<S>>, run: &NPlayerRun<S>, config: &GapConfig) -> Result<EpsilonGapEstimate> {
    if run.n < 2 {
        return Err(MfgError::usage("nplayer::best_response_gap", "need at least two players"));
    }
    let r_count = run.rollouts.len();
    let (mut br, mut eq, mut gap, mut fit) = (
        Vec::with_capacity(r_count),
        Vec::with_capacity(r_count),
        Vec::with_capacity(r_count),
        Vec::with_capacity(r_count),
    );
    for (r, rollout) in run.rollouts.iter().enumerate() {
        let train = simulate_driftless(&*model, run.grid, config.num_paths, rollout_seed(run.seed, run.n, r, 0xb7))?;
        let test = simulate_driftless(&*model, run.grid, config.num_paths, rollout_seed(run.seed, run.n, r, 0xe1))?;
        let best = solve_bsde(&train, &*model, &rollout.mu, &rollout.q, &config.basis)?;
        let deviation = optimal_policy(&best, model.clone(), &rollout.mu);
        let b = solve_policy_bsde(&test, &*model, &rollout.mu, &rollout.q, &deviation, &config.basis)?.value();
        let e = solve_policy_bsde(&test, &*model, &rollout.mu, &rollout.q, &run.policy, &config.basis)?.value();
        br.push(b);
        eq.push(e);
        gap.push(b - e);
        fit.push(best.value());
    }
    let (b, b_se) = mean_se(&br);
    let (e, e_se) = mean_se(&eq);
    let (g, g_se) = mean_se(&gap);
    let (f, _) = mean_se(&fit);
    let (j, j_se) = run.mean_reward(0);
    Ok(EpsilonGapEstimate {
        n: run.n,
        equilibrium_value: e.to_f64_lossy(),
        equilibrium_std_error: e_se.to_f64_lossy(),
        best_response_value: b.to_f64_lossy(),
        best_response_std_error: b_se.to_f64_lossy(),
        gap: g.to_f64_lossy(),
        gap_std_error: g_se.to_f64_lossy(),
        in_sample_value: f.to_f64_lossy(),
        realized_value: j.to_f64_lossy(),
        realized_std_error: j_se.to_f64_lossy(),
    })
}

/// Settings of [`rate_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSweepConfig {
    pub n_list: Vec<usize>,
    pub rollouts: usize,
    pub seed: u64,
    pub gap: GapConfig,
}

impl Default for RateSweepConfig {
    fn default() -> Self {
        RateSweepConfig {
            n_list: vec![8, 16, 32, 64, 128],
            rollouts: 32,
            seed: 0,
            gap: GapConfig::default(),
        }
    }
}

/// One row of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub estimate: EpsilonGapEstimate,
    /// Time-averaged W1 between qⁿ_t and the reference ν̂_t, averaged over rollouts.
    pub control_w1: Option<f64>,
    pub exchangeability: Option<ExchangeabilityTest>,
}

/// Least-squares fit of `log ε̂_n = a + slope·log n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval of the slope.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    /// `None` when some ε̂_n is not positive.
    pub fit: Option<SlopeFit>,
    /// False when some ε̂_n is within two standard errors of zero.
    pub fit_meaningful: bool,
    /// Adjacent pairs with `ε̂_{n_j} − ε̂_{n_{j+1}}` above the combined standard error.
    pub significant_decreases: usize,
    /// ε̂ at the smallest n exceeds ε̂ at the largest n beyond the combined standard error.
    pub decreasing_overall: bool,
    /// Control-law W1 at the largest n is below that at the smallest n.
    pub control_w1_decreasing: Option<bool>,
    pub estimator: &'static str,
}

const ESTIMATOR: &str = "best response of one player against the frozen empirical environment; a lower bound on the gain of arbitrary adapted deviations";

/// OLS slope of `y` on `x` with a Student-t confidence interval.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<SlopeFit> {
    let k = x.len();
    if k < 3 || y.len() != k {
        return None;
    }
    let mx = x.iter().sum::<f64>() / k as f64;
    let my = y.iter().sum::<f64>() / k as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = (rss / (k as f64 - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, k as f64 - 2.0).ok()?.inverse_cdf(0.975);
    Some(SlopeFit {
        slope,
        intercept,
        ci_low: slope - t * se,
        ci_high: slope + t * se,
    })
}

fn control_w1<S: Real>(q: &ControlLawFlow<S>, reference: &ControlLawFlow<S>) -> f64 {
    let da = q.dim();
    let axes: Vec<Vec<S>> = (0..da)
        .map(|i| (0..da).map(|j| if i == j { S::one() } else { S::zero() }).collect())
        .collect();
    let steps = q.num_steps().min(reference.num_steps());
    let mut acc = S::zero();
    for k in 0..steps {
        let (a, b) = (q.step(k), reference.step(k));
        acc += sliced_w1(a.points(), a.weights(), b.points(), b.weights(), da, &axes);
    }
    (acc / S::count(steps.max(1))).to_f64_lossy()
}

/// ε̂_n over `n_list` and the log-log slope.
pub fn rate_sweep<S: Real>(
    model: Arc<dyn Model<S>>,
    policy: &ClosedLoopPolicy<S>,
    grid: TimeGrid<S>,
    reference: Option<&ControlLawFlow<S>>,
    config: &RateSweepConfig,
) -> Result<RateReport> {
    const OP: &str = "nplayer::rate_sweep";
    let list = &config.n_list;
    if list.len() < 4 || list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MfgError::usage(OP, "n_list must hold at least four increasing values"));
    }
    let mut rows = Vec::with_capacity(list.len());
    for &n in list {
        let run = simulate_nplayer(&*model, policy, grid, n, config.rollouts, config.seed)?;
        let estimate = best_response_gap(model.clone(), &run, &config.gap)?;
        let control = reference.map(|nu| {
            run.rollouts.iter().map(|r| control_w1(&r.q, nu)).sum::<f64>() / run.rollouts.len() as f64
        });
        log::info!("{}: n = {} gap {:.3e} ± {:.1e}", OP, n, estimate.gap, estimate.gap_std_error);
        rows.push(RateRow {
            estimate,
            control_w1: control,
            exchangeability: run.exchangeability(),
        });
    }

    let gaps: Vec<f64> = rows.iter().map(|r| r.estimate.gap).collect();
    let ses: Vec<f64> = rows.iter().map(|r| r.estimate.gap_std_error).collect();
    let fit = if gaps.iter().all(|&g| g > 0.0) {
        let x: Vec<f64> = list.iter().map(|&n| (n as f64).ln()).collect();
        let y: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
        fit_slope(&x, &y)
    } else {
        None
    };
    let fit_meaningful = fit.is_some() && gaps.iter().zip(&ses).all(|(&g, &s)| g > 2.0 * s);
    let beyond = |i: usize, j: usize| gaps[i] - gaps[j] > (ses[i] * ses[i] + ses[j] * ses[j]).sqrt();
    let significant_decreases = (0..gaps.len() - 1).filter(|&i| beyond(i, i + 1)).count();
    let last = gaps.len() - 1;
    let control_w1_decreasing = match (rows[0].control_w1, rows[last].control_w1) {
        (Some(a), Some(b)) => Some(b < a),
        _ => None,
    };
    Ok(RateReport {
        fit,
        fit_meaningful,
        significant_decreases,
        decreasing_overall: beyond(0, last),
        control_w1_decreasing,
        estimator: ESTIMATOR,
        rows,
    })
}

/// Writes `n,epsilon_hat,stderr,J_eq,J_br`.
pub fn write_rate_csv<W: Write>(report: &RateReport, mut out: W) -> Result<()> {
    const OP: &str = "nplayer::write_rate_csv";
    writeln!(out, "n,epsilon_hat,stderr,J_eq,J_br").map_err(|e| MfgError::io(OP, e))?;
    for row in &report.rows {
        let e = &row.estimate;
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e}",
            e.n, e.gap, e.gap_std_error, e.equilibrium_value, e.best_response_value
        )
        .map_err(|e| MfgError::io(OP, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_identical_samples_is_zero() {
        let a = [0.3, 1.0, -2.0, 4.0];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let x: Vec<f64> = [8.0f64, 16.0, 32.0, 64.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = x.iter().map(|l| 2.0 - 0.5 * l).collect();
        let fit = fit_slope(&x, &y).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.ci_high - fit.ci_low).abs() < 1e-9);
    }

    #[test]
    fn seeds_differ_across_rollouts_and_sizes() {
        assert_ne!(rollout_seed(1, 8, 0, 0), rollout_seed(1, 8, 1, 0));
        assert_ne!(rollout_seed(1, 8, 0, 0), rollout_seed(1, 16, 0, 0));
        assert_ne!(rollout_seed(1, 8, 0, 0), rollout_seed(1, 8, 0, 0xb7));
    }
}
