//! Damped Picard iteration for the equilibrium `(μ, ν) = Φ(μ, ν)` and the
//! Lasry–Lions monotonicity check.
//!
//! One application of Φ solves the value BSDE against `(μ, ν)`, extracts the
//! optimal closed-loop policy and reweights the fixed ensemble with its
//! Girsanov density. The iterate `(μ_i, ν_i)` is a running mixture of earlier
//! outputs of Φ; the residual compares two consecutive outputs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bsde::{optimal_policy, solve_bsde, BsdeSolution, RegressionBasis};
use crate::error::{MfgError, Result};
use crate::hamiltonian::{argmax_spread, policy_from_z, ClosedLoopPolicy, Model, ZField};
use crate::measures::{
    discrepancy, pushforward_measure, ControlLawFlow, DiscrepancyConfig, MeasureDiscrepancy, WeightedMeasure,
};
use crate::paths::{gauge_square_moment, simulate_driftless, PathEnsemble, TimeGrid};
use crate::scalar::Real;

/// Settings of [`solve_mfg`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfgSolveConfig {
    pub max_iters: usize,
    /// Weight λ of the newest best response in the mixture, in `(0, 1]`.
    pub damping: f64,
    pub tol: MeasureDiscrepancy,
    pub num_paths: usize,
    pub num_steps: usize,
    pub horizon: f64,
    pub seed: u64,
    pub basis: RegressionBasis,
    /// Probes used for the argmax-spread diagnostic.
    pub spread_probes: usize,
    /// Spread, as a fraction of the control set's diameter, above which a model is flagged.
    pub spread_threshold: f64,
    /// Paths of the pilot ensemble used for the model self-checks.
    pub pilot_paths: usize,
    /// Keep the per-path initial values `Y₀` of the final solve.
    pub report_initial_values: bool,
}

impl Default for MfgSolveConfig {
    fn default() -> Self {
        MfgSolveConfig {
            max_iters: 100,
            damping: 0.5,
            tol: MeasureDiscrepancy::uniform(1e-3),
            num_paths: 2000,
            num_steps: 50,
            horizon: 1.0,
            seed: 0,
            basis: RegressionBasis::default(),
            spread_probes: 32,
            spread_threshold: 0.05,
            pilot_paths: 256,
            report_initial_values: false,
        }
    }
}

impl MfgSolveConfig {
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "fixedpoint::MfgSolveConfig";
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(MfgError::usage(OP, format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        let t = &self.tol;
        for (name, v) in [
            ("tol.moment_residual", t.moment_residual),
            ("tol.sliced_w1", t.sliced_w1),
            ("tol.control_flow_residual", t.control_flow_residual),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MfgError::usage(OP, format!("{} must be positive, got {}", name, v)));
            }
        }
        if self.num_paths == 0 || self.num_steps == 0 || self.max_iters == 0 {
            return Err(MfgError::usage(OP, "num_paths, num_steps and max_iters must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(MfgError::usage(OP, "horizon must be positive"));
        }
        if !(self.spread_threshold >= 0.0) {
            return Err(MfgError::usage(OP, "spread_threshold must be nonnegative"));
        }
        Ok(())
    }

    pub fn grid<S: Real>(&self) -> Result<TimeGrid<S>> {
        TimeGrid::new(S::of(self.horizon), self.num_steps)
    }
}

/// Outcome of the model self-checks on the pilot ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotReport {
    pub paths: usize,
    /// Empirical `E[ψ²(X)]` under the driftless law.
    pub psi_square_moment: f64,
    /// Set when the ψ² moment is non-finite or implausibly large.
    pub psi_moment_warning: bool,
}

/// Above this the ψ² moment is treated as a sign of a heavy-tailed setup.
const PSI_MOMENT_LIMIT: f64 = 1e12;

/// Checks the drift bound, finiteness of rewards and the ψ² moment on a small
/// driftless ensemble, before any expensive work.
pub fn pilot_check<S: Real>(model: &dyn Model<S>, grid: TimeGrid<S>, num_paths: usize, seed: u64) -> Result<PilotReport> {
    const OP: &str = "fixedpoint::pilot_check";
    let ensemble = simulate_driftless(model, grid, num_paths.max(1), seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let paths = ensemble.paths();
    let mu = WeightedMeasure::uniform(paths.clone());
    let view = mu.view();
    let set = model.control_set();
    let da = set.dim();
    let nu = ControlLawFlow::dirac(&set.smallest(), grid.num_steps());
    let candidates = set.grid(if da <= 2 { 5 } else { 3 });
    let n = grid.num_steps();
    let bound = model.drift_bound() * (S::one() + S::of(1e-9));
    let mut theta = vec![S::zero(); model.dim()];
    let steps = [0, n / 2, n - 1];

    for m in 0..paths.num_paths() {
        for &k in &steps {
            let t = grid.time(k);
            let slice = paths.slice(m, k);
            let mut feasible = false;
            for a in candidates.chunks_exact(da) {
                model.scaled_drift(t, &slice, &view, a, &mut theta);
                let size = crate::scalar::norm(&theta);
                if !size.is_finite() || size > bound {
                    return Err(MfgError::contract(
                        OP,
                        format!("|σ⁻¹b| = {} exceeds the declared bound {} (path {}, step {})", size, model.drift_bound(), m, k),
                    ));
                }
                feasible |= model.reward_control(t, &slice, &view, a).is_finite();
            }
            if !feasible {
                return Err(MfgError::contract(OP, format!("no sampled control has a finite reward (path {}, step {})", m, k)));
            }
            let f2 = model.reward_flow(t, &slice, &view, &nu.at(k));
            if !f2.is_finite() {
                return Err(MfgError::non_finite(OP, format!("f₂ = {} on path {}, step {}", f2, m, k)));
            }
        }
        let g = model.terminal_reward(&paths.path(m), &view);
        if !g.is_finite() {
            return Err(MfgError::non_finite(OP, format!("terminal reward {} on path {}", g, m)));
        }
    }

    let psi = gauge_square_moment(&ensemble, |x| model.growth_gauge(x)).to_f64_lossy();
    let warning = !psi.is_finite() || psi > PSI_MOMENT_LIMIT;
    if warning {
        log::warn!("{}: E[ψ²] = {:e} on the pilot ensemble; the growth assumptions may fail", OP, psi);
    }
    Ok(PilotReport {
        paths: paths.num_paths(),
        psi_square_moment: psi,
        psi_moment_warning: warning,
    })
}

/// Diagnostics attached to a solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    /// `(1/M) Σ w²` of μ̂.
    pub weight_second_moment: f64,
    /// Largest weight second moment over all iterates.
    pub max_weight_second_moment: f64,
    pub pilot: PilotReport,
    /// Largest argmax-set diameter seen on the probes.
    pub argmax_spread: f64,
    /// Set when the spread exceeds the threshold: the fixed point then depends on the tie-break.
    pub argmax_spread_flag: bool,
    pub z_clip_hits: usize,
}

/// The computed equilibrium.
#[derive(Clone)]
pub struct MfgSolution<S: Real> {
    pub mu_hat: WeightedMeasure<S>,
    pub nu_hat: ControlLawFlow<S>,
    /// Optimal policy against `(μ̂, ν̂)`.
    pub policy_hat: ClosedLoopPolicy<S>,
    /// `E[Y₀]` against `(μ̂, ν̂)`.
    pub value: S,
    pub value_std_error: S,
    pub residual_history: Vec<MeasureDiscrepancy>,
    pub converged: bool,
    pub iterations: usize,
    /// Discrepancy between `(μ̂, ν̂)` and `Φ(μ̂, ν̂)`, largest component.
    pub certificate: f64,
    pub diagnostics: SolveDiagnostics,
    /// Per-path `Y₀` of the final solve, when requested.
    pub initial_values: Option<Vec<S>>,
    pub ensemble: Arc<PathEnsemble<S>>,
    /// Final BSDE solve against `(μ̂, ν̂)`.
    pub bsde: BsdeSolution<S>,
    pub config: MfgSolveConfig,
}

impl<S: Real> std::fmt::Debug for MfgSolution<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfgSolution")
            .field("value", &self.value)
            .field("converged", &self.converged)
            .field("iterations", &self.iterations)
            .field("certificate", &self.certificate)
            .finish()
    }
}

/// Serializable summary of a solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub config: MfgSolveConfig,
    pub converged: bool,
    pub iterations: usize,
    pub value: f64,
    pub value_std_error: f64,
    pub certificate: f64,
    pub residual_history: Vec<MeasureDiscrepancy>,
    pub diagnostics: SolveDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_values: Option<Vec<f64>>,
}

impl<S: Real> MfgSolution<S> {
    pub fn report(&self) -> SolveReport {
        SolveReport {
            config: self.config.clone(),
            converged: self.converged,
            iterations: self.iterations,
            value: self.value.to_f64_lossy(),
            value_std_error: self.value_std_error.to_f64_lossy(),
            certificate: self.certificate,
            residual_history: self.residual_history.clone(),
            diagnostics: self.diagnostics.clone(),
            initial_values: self
                .initial_values
                .as_ref()
                .map(|v| v.iter().map(|x| x.to_f64_lossy()).collect()),
        }
    }

    /// The final residual, if any iteration ran.
    pub fn final_residual(&self) -> Option<&MeasureDiscrepancy> {
        self.residual_history.last()
    }
}

struct Step<S: Real> {
    solution: BsdeSolution<S>,
    policy: ClosedLoopPolicy<S>,
    mu: WeightedMeasure<S>,
    nu: ControlLawFlow<S>,
}

/// One application of Φ.
fn best_response_map<S: Real>(
    ensemble: &PathEnsemble<S>,
    model: &Arc<dyn Model<S>>,
    mu: &WeightedMeasure<S>,
    nu: &ControlLawFlow<S>,
    basis: &RegressionBasis,
) -> Result<Step<S>> {
    let solution = solve_bsde(ensemble, &**model, mu, nu, basis)?;
    let policy = optimal_policy(&solution, model.clone(), mu);
    let (mu_out, nu_out) = pushforward_measure(ensemble, &**model, &policy, mu)?;
    Ok(Step {
        solution,
        policy,
        mu: mu_out,
        nu: nu_out,
    })
}

fn discrepancy_config<S: Real>(model: &Arc<dyn Model<S>>, grid: &TimeGrid<S>) -> DiscrepancyConfig<S> {
    let gauge_model = model.clone();
    DiscrepancyConfig::for_grid(grid).with_gauge(Arc::new(move |x| gauge_model.growth_gauge(x)))
}

/// Solves the MFG by damped Picard iteration on a fixed ensemble.
///
/// Starts from the driftless law and the control law of the `Z ≡ 0` policy.
/// Iteration `i` mixes the previous output of Φ into the iterate with weight
/// `damping`, applies Φ and compares the new output with the previous one.
/// Without convergence the output with the smallest residual is returned with
/// `converged = false`.
pub fn solve_mfg<S: Real>(model: Arc<dyn Model<S>>, config: &MfgSolveConfig) -> Result<MfgSolution<S>> {
    config.validate()?;
    let grid = config.grid::<S>()?;
    let pilot = pilot_check(&*model, grid, config.pilot_paths.min(config.num_paths), config.seed)?;
    let ensemble = Arc::new(simulate_driftless(&*model, grid, config.num_paths, config.seed)?);
    let m_paths = config.num_paths;
    let disc = discrepancy_config(&model, &grid);
    let lambda = S::of(config.damping);
    let undamped = config.damping == 1.0;

    let mut mu = WeightedMeasure::uniform(ensemble.paths().clone());
    let zero = policy_from_z(model.clone(), &mu, ZField::zero(model.dim()));
    let (_, mut nu) = pushforward_measure(&ensemble, &*model, &zero, &mu)?;

    let mut prev = best_response_map(&ensemble, &model, &mu, &nu, &config.basis)?;
    let mut max_w2 = prev.mu.weight_second_moment().to_f64_lossy();
    let mut history = Vec::new();
    let mut best: Option<(f64, WeightedMeasure<S>, ControlLawFlow<S>)> = None;
    let mut converged = false;

    for i in 1..=config.max_iters {
        if undamped {
            mu = prev.mu.clone();
            nu = prev.nu.clone();
        } else {
            mu = mu.mix(&prev.mu, lambda)?;
            nu = nu.mix(&prev.nu, lambda, m_paths)?;
        }
        let next = best_response_map(&ensemble, &model, &mu, &nu, &config.basis)?;
        let r = discrepancy(&next.mu, &prev.mu, &next.nu, &prev.nu, &disc)?;
        max_w2 = max_w2.max(next.mu.weight_second_moment().to_f64_lossy());
        log::info!("fixedpoint::solve_mfg: iteration {} residual {:?}", i, r);
        history.push(r);
        if best.as_ref().is_none_or(|(b, _, _)| r.max_component() < *b) {
            best = Some((r.max_component(), next.mu.clone(), next.nu.clone()));
        }
        prev = next;
        if r.within(&config.tol) {
            converged = true;
            break;
        }
    }

    let (mu_hat, nu_hat) = if converged {
        (prev.mu, prev.nu)
    } else {
        let (_, m, n) = best.expect("at least one iteration");
        (m, n)
    };

    let last = best_response_map(&ensemble, &model, &mu_hat, &nu_hat, &config.basis)?;
    let certificate = discrepancy(&mu_hat, &last.mu, &nu_hat, &last.nu, &disc)?.max_component();
    let (spread, flag) = spread_diagnostic(&*model, &ensemble, &mu_hat, &last.solution, config)?;

    Ok(MfgSolution {
        diagnostics: SolveDiagnostics {
            weight_second_moment: mu_hat.weight_second_moment().to_f64_lossy(),
            max_weight_second_moment: max_w2,
            pilot,
            argmax_spread: spread,
            argmax_spread_flag: flag,
            z_clip_hits: last.solution.z_clip_hits(),
        },
        value: last.solution.value(),
        value_std_error: last.solution.value_std_error(),
        initial_values: config.report_initial_values.then(|| last.solution.initial_values()),
        policy_hat: last.policy,
        bsde: last.solution,
        mu_hat,
        nu_hat,
        iterations: history.len(),
        residual_history: history,
        converged,
        certificate,
        ensemble,
        config: config.clone(),
    })
}

/// Largest argmax-set diameter over deterministic probes `(path, step)` at the
/// fitted Z, and whether it exceeds the configured share of `diam(A)`.
fn spread_diagnostic<S: Real>(
    model: &dyn Model<S>,
    ensemble: &PathEnsemble<S>,
    mu: &WeightedMeasure<S>,
    solution: &BsdeSolution<S>,
    config: &MfgSolveConfig,
) -> Result<(f64, bool)> {
    let set = model.control_set();
    let da = set.dim();
    let resolution = ((4096f64).powf(1.0 / da as f64).floor() as usize).clamp(2, 129);
    let grid = ensemble.grid();
    let n = grid.num_steps();
    let m_paths = ensemble.num_paths();
    let probes = config.spread_probes;
    let view = mu.view();
    let mut spread = S::zero();
    for j in 0..probes {
        let m = (j * 7919) % m_paths;
        let k = (j * n) / probes.max(1);
        let slice = ensemble.paths().slice(m, k);
        let z = solution.surrogate().predict(model, &slice);
        spread = spread.max(argmax_spread(model, grid.time(k), &slice, &view, &z, resolution, S::of(1e-9))?);
    }
    let diameter = set.diameter();
    let flag = diameter > S::zero() && spread > S::of(config.spread_threshold) * diameter;
    if flag {
        log::warn!("fixedpoint::solve_mfg: argmax set spread {} of diameter {}; the fixed point depends on the tie-break", spread, diameter);
    }
    Ok((spread.to_f64_lossy(), flag))
}

/// Applies Φ once more at `(μ̂, ν̂)` and returns the largest discrepancy component.
pub fn fixed_point_residual_certificate<S: Real>(solution: &MfgSolution<S>, model: Arc<dyn Model<S>>) -> Result<f64> {
    let grid = *solution.ensemble.grid();
    let disc = discrepancy_config(&model, &grid);
    let next = best_response_map(&solution.ensemble, &model, &solution.mu_hat, &solution.nu_hat, &solution.config.basis)?;
    Ok(discrepancy(&solution.mu_hat, &next.mu, &solution.nu_hat, &next.nu, &disc)?.max_component())
}

/// Monte Carlo estimate of the monotonicity integral for one pair of measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// `(1/M) Σ |w − w′|·|D|`, the size of the integrand.
    pub scale: f64,
    /// `|estimate| / scale` (zero when the integrand vanishes).
    pub relative: f64,
    /// Estimate above three standard errors.
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub pairs: Vec<MonotonicityEstimate>,
    pub any_violation: bool,
}

/// Estimates `∫ [g(x,μ) − g(x,μ′) + ∫₀ᵀ (f₁(t,x,μ) − f₁(t,x,μ′)) dt] (μ − μ′)(dx)`
/// for each pair. `f₁` is evaluated at the smallest control, which is exact for
/// rewards whose measure dependence is separate from the control.
pub fn check_monotonicity<S: Real>(
    model: &dyn Model<S>,
    pairs: &[(WeightedMeasure<S>, WeightedMeasure<S>)],
) -> Result<MonotonicityReport> {
    const OP: &str = "fixedpoint::check_monotonicity";
    let a_ref = model.control_set().smallest();
    let mut out = Vec::with_capacity(pairs.len());
    for (mu, nu) in pairs {
        if !mu.same_support(nu) {
            return Err(MfgError::usage(OP, "pair lives on different ensembles"));
        }
        let paths = mu.paths();
        let grid = *paths.grid();
        let dt = grid.dt();
        let (va, vb) = (mu.view(), nu.view());
        let m_paths = paths.num_paths();
        let mut products = Vec::with_capacity(m_paths);
        let mut scale = S::zero();
        for m in 0..m_paths {
            let dw = mu.weights()[m] - nu.weights()[m];
            let path = paths.path(m);
            let mut d = model.terminal_reward(&path, &va) - model.terminal_reward(&path, &vb);
            for k in 0..grid.num_steps() {
                let slice = paths.slice(m, k);
                let t = grid.time(k);
                d += dt * (model.reward_control(t, &slice, &va, &a_ref) - model.reward_control(t, &slice, &vb, &a_ref));
            }
            if !d.is_finite() {
                return Err(MfgError::non_finite(OP, format!("integrand is {} on path {}", d, m)));
            }
            products.push(dw * d);
            scale += dw.abs() * d.abs();
        }
        let count = S::count(m_paths);
        let mean = products.iter().copied().sum::<S>() / count;
        let var = products.iter().map(|&p| (p - mean) * (p - mean)).sum::<S>() / count;
        let se = (var / count).sqrt();
        let scale = scale / count;
        let relative = if scale > S::zero() { mean.abs() / scale } else { S::zero() };
        out.push(MonotonicityEstimate {
            estimate: mean.to_f64_lossy(),
            std_error: se.to_f64_lossy(),
            scale: scale.to_f64_lossy(),
            relative: relative.to_f64_lossy(),
            violation: mean > S::of(3.0) * se,
        });
    }
    let any_violation = out.iter().any(|p| p.violation);
    Ok(MonotonicityReport { pairs: out, any_violation })
}

/// A uniformly random element of the control set (a random point if finite).
pub fn random_control<S: Real, R: rand::Rng>(set: &crate::hamiltonian::ControlSet<S>, rng: &mut R) -> Vec<S> {
    use crate::hamiltonian::ControlSet;
    match set {
        ControlSet::Box { lower, upper } => lower
            .iter()
            .zip(upper)
            .map(|(&lo, &hi)| lo + (hi - lo) * S::of(rng.random::<f64>()))
            .collect(),
        ControlSet::Finite { dim, points } => {
            let i = rng.random_range(0..points.len() / dim);
            points[i * dim..(i + 1) * dim].to_vec()
        }
    }
}

/// `count` pairs of laws of the state under random constant controls, on one ensemble.
pub fn constant_control_pairs<S: Real>(
    model: &dyn Model<S>,
    ensemble: &PathEnsemble<S>,
    count: usize,
    seed: u64,
) -> Result<Vec<(WeightedMeasure<S>, WeightedMeasure<S>)>> {
    let mut rng = crate::paths::path_rng(seed, u64::MAX);
    let reference = WeightedMeasure::uniform(ensemble.paths().clone());
    let set = model.control_set();
    (0..count)
        .map(|_| {
            let a = ClosedLoopPolicy::constant(random_control(set, &mut rng));
            let b = ClosedLoopPolicy::constant(random_control(set, &mut rng));
            Ok((
                crate::measures::girsanov_weights(ensemble, model, &a, &reference)?,
                crate::measures::girsanov_weights(ensemble, model, &b, &reference)?,
            ))
        })
        .collect()
}
