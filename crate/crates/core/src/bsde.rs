//! Backward regression solver for the value BSDE
//! `Y_t = g(X, μ) + ∫_t^T H(s, X, μ, ν_s, Z_s) ds − ∫_t^T Z_s dW_s` under the
//! driftless law.
//!
//! The sweep is explicit: at each step the conditional expectations of
//! `Y_{k+1}` and of `Y_{k+1}·ΔW_k/dt` are replaced by ridge regressions on a
//! polynomial basis in the current state plus model-supplied path features,
//! and the driver is evaluated at the fitted `Z_k`. Importance weights are never
//! applied here: μ and ν only enter through the driver and the terminal value.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::hamiltonian::{self, policy_from_z, ClosedLoopPolicy, Model, SearchConfig, ZField};
use crate::linalg;
use crate::measures::{ControlLawFlow, WeightedMeasure};
use crate::paths::{PathEnsemble, PathSlice};
use crate::scalar::{dot, Real};

/// Regression settings for the conditional expectations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionBasis {
    /// Highest total degree of the state monomials.
    pub degree: u32,
    /// Ridge penalty on the standardized Gram matrix (i.e. `ridge·M` on the raw one).
    pub ridge: f64,
    /// Append the model's own regression features.
    pub model_features: bool,
    /// Box bound on fitted `Z` components.
    pub z_clip: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis {
            degree: 3,
            ridge: 1e-8,
            model_features: true,
            z_clip: 1e6,
        }
    }
}

/// Paths per basis function required before a regression is attempted.
pub const MIN_PATHS_PER_FEATURE: usize = 20;

impl RegressionBasis {
    fn exponents(&self, dim: usize) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; dim];
        fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if i == cur.len() {
                if cur.iter().sum::<u32>() > 0 {
                    out.push(cur.clone());
                }
                return;
            }
            for e in 0..=left {
                cur[i] = e;
                rec(i + 1, left - e, cur, out);
            }
            cur[i] = 0;
        }
        rec(0, self.degree, &mut cur, &mut out);
        out.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
        out
    }

    /// Number of regression columns, intercept included.
    pub fn size<S: Real>(&self, model: &dyn Model<S>) -> usize {
        1 + self.exponents(model.dim()).len() + if self.model_features { model.num_regression_features() } else { 0 }
    }
}

/// Raw (unstandardized, intercept-free) features of a path slice.
#[derive(Debug, Clone)]
struct FeatureMap {
    exponents: Vec<Vec<u32>>,
    model_features: bool,
}

impl FeatureMap {
    fn new<S: Real>(basis: &RegressionBasis, model: &dyn Model<S>) -> Self {
        FeatureMap {
            exponents: basis.exponents(model.dim()),
            model_features: basis.model_features,
        }
    }

    fn len<S: Real>(&self, model: &dyn Model<S>) -> usize {
        self.exponents.len() + if self.model_features { model.num_regression_features() } else { 0 }
    }

    fn fill<S: Real>(&self, model: &dyn Model<S>, x: &PathSlice<'_, S>, out: &mut [S]) {
        let cur = x.current();
        for (j, e) in self.exponents.iter().enumerate() {
            out[j] = e
                .iter()
                .zip(cur)
                .fold(S::one(), |acc, (&p, &v)| if p == 0 { acc } else { acc * v.powi(p as i32) });
        }
        if self.model_features {
            model.regression_features(x, &mut out[self.exponents.len()..]);
        }
    }
}

/// Standardization and coefficients of one step's regression.
#[derive(Debug, Clone)]
struct StepFit<S> {
    mean: Vec<S>,
    scale: Vec<S>,
    active: Vec<usize>,
    /// `(1 + active.len()) × d`, row-major; row 0 is the intercept.
    z_coef: Vec<S>,
}

/// `Z(t_k, x)` as a per-step regression surrogate, usable on any path on the same grid.
#[derive(Debug, Clone)]
pub struct ZSurrogate<S> {
    features: FeatureMap,
    dim: usize,
    clip: S,
    steps: Vec<StepFit<S>>,
}

impl<S: Real> ZSurrogate<S> {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Predicted `Z` at the slice's step (the last interval's fit is reused at `t_N`).
    pub fn predict(&self, model: &dyn Model<S>, x: &PathSlice<'_, S>) -> Vec<S> {
        let fit = &self.steps[x.step().min(self.steps.len() - 1)];
        let mut raw = vec![S::zero(); fit.mean.len()];
        self.features.fill(model, x, &mut raw);
        let d = self.dim;
        let mut z = fit.z_coef[..d].to_vec();
        for (r, &j) in fit.active.iter().enumerate() {
            let phi = (raw[j] - fit.mean[j]) / fit.scale[j];
            for i in 0..d {
                z[i] += fit.z_coef[(r + 1) * d + i] * phi;
            }
        }
        for v in z.iter_mut() {
            *v = v.max(-self.clip).min(self.clip);
        }
        z
    }
}

/// Value and adjoint processes on the ensemble.
#[derive(Debug, Clone)]
pub struct BsdeSolution<S> {
    num_paths: usize,
    num_steps: usize,
    dim: usize,
    y: Vec<S>,
    z: Vec<S>,
    value: S,
    value_std_error: S,
    surrogate: Arc<ZSurrogate<S>>,
    z_clip_hits: usize,
}

impl<S: Real> BsdeSolution<S> {
    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn y(&self, path: usize, step: usize) -> S {
        self.y[path * (self.num_steps + 1) + step]
    }

    /// `Z` of a path over `[t_k, t_{k+1})`, `k < N`.
    pub fn z(&self, path: usize, step: usize) -> &[S] {
        let base = (path * self.num_steps + step) * self.dim;
        &self.z[base..base + self.dim]
    }

    /// `E[Y₀]` under the initial law, estimated pathwise as the mean of
    /// `g(X) + Σ_k (h_k dt − Z̃_k·ΔW_k)`. The stochastic integral has mean zero
    /// and acts as a control variate; without it the estimate would carry the
    /// full Monte Carlo error of `E[g(X)]`. `Z̃` is the same regression fitted on
    /// the paths of opposite index parity, since a fit that has seen `ΔW_k`
    /// correlates with it and drags the estimate down.
    pub fn value(&self) -> S {
        self.value
    }

    /// Monte Carlo standard error of [`value`](Self::value) given the fitted
    /// regressions. Error in the fitted `Z` moves the driver on every path
    /// the same way and is not included; across ensembles the spread of
    /// [`value`](Self::value) is several times this figure.
    pub fn value_std_error(&self) -> S {
        self.value_std_error
    }

    /// `Y[m][0]` for every path: the value conditional on the initial draw.
    pub fn initial_values(&self) -> Vec<S> {
        (0..self.num_paths).map(|m| self.y(m, 0)).collect()
    }

    pub fn surrogate(&self) -> &Arc<ZSurrogate<S>> {
        &self.surrogate
    }

    /// Number of `Z` components that hit the clip bound.
    pub fn z_clip_hits(&self) -> usize {
        self.z_clip_hits
    }

    /// CSV rows `t,mean_y,mean_abs_z`.
    pub fn write_diagnostics<W: Write>(&self, dt: S, mut out: W) -> Result<()> {
        const OP: &str = "bsde::BsdeSolution::write_diagnostics";
        writeln!(out, "t,mean_y,mean_abs_z").map_err(|e| MfgError::io(OP, e))?;
        let m = S::count(self.num_paths);
        for k in 0..=self.num_steps {
            let mean_y = (0..self.num_paths).map(|p| self.y(p, k)).sum::<S>() / m;
            let mean_z = if k < self.num_steps {
                (0..self.num_paths).map(|p| crate::scalar::norm(self.z(p, k))).sum::<S>() / m
            } else {
                S::zero()
            };
            writeln!(out, "{},{},{}", S::count(k) * dt, mean_y, mean_z).map_err(|e| MfgError::io(OP, e))?;
        }
        Ok(())
    }
}

enum Driver<'p, S> {
    Optimal,
    Policy(&'p ClosedLoopPolicy<S>),
}

fn ridge_fit<S: Real>(design: &[S], cols: usize, targets: &[&[S]], ridge: S) -> Option<Vec<Vec<S>>> {
    let rows = design.len() / cols;
    let mut gram = vec![S::zero(); cols * cols];
    for r in design.chunks_exact(cols) {
        for i in 0..cols {
            let ri = r[i];
            for j in i..cols {
                gram[i * cols + j] += ri * r[j];
            }
        }
    }
    let scale = S::count(rows);
    for i in 0..cols {
        for j in i..cols {
            let v = gram[i * cols + j] / scale;
            gram[i * cols + j] = v;
            gram[j * cols + i] = v;
        }
        if i > 0 {
            gram[i * cols + i] += ridge;
        }
    }
    linalg::cholesky_in_place(&mut gram, cols)?;
    let mut out = Vec::with_capacity(targets.len());
    for y in targets {
        let mut rhs = vec![S::zero(); cols];
        for (r, &v) in design.chunks_exact(cols).zip(y.iter()) {
            for i in 0..cols {
                rhs[i] += r[i] * v;
            }
        }
        rhs.iter_mut().for_each(|v| *v /= scale);
        linalg::cholesky_solve(&gram, cols, &mut rhs);
        if rhs.iter().any(|v| !v.is_finite()) {
            return None;
        }
        out.push(rhs);
    }
    Some(out)
}

/// Per-target coefficient vectors laid out as `coef[r * d + i]`.
fn interleave<S: Real>(beta: &[Vec<S>], cols: usize, d: usize) -> Vec<S> {
    let mut out = vec![S::zero(); cols * d];
    for (i, b) in beta.iter().enumerate() {
        for r in 0..cols {
            out[r * d + i] = b[r];
        }
    }
    out
}

fn predict_component<S: Real>(row: &[S], coef: &[S], d: usize, i: usize) -> S {
    row.iter().enumerate().fold(S::zero(), |acc, (r, &v)| acc + v * coef[r * d + i])
}

fn clamp_finite<S: Real>(v: S, clip: S) -> S {
    if v.is_nan() {
        S::zero()
    } else {
        v.max(-clip).min(clip)
    }
}

fn sweep<S: Real>(
    op: &'static str,
    ensemble: &PathEnsemble<S>,
    model: &dyn Model<S>,
    mu: &WeightedMeasure<S>,
    nu: &ControlLawFlow<S>,
    basis: &RegressionBasis,
    driver: Driver<'_, S>,
) -> Result<BsdeSolution<S>> {
    let grid = *ensemble.grid();
    let n = grid.num_steps();
    let dt = grid.dt();
    let m_paths = ensemble.num_paths();
    let d = ensemble.dim();
    let paths = ensemble.paths();

    if d != model.dim() {
        return Err(MfgError::usage(op, "ensemble and model dimensions differ"));
    }
    if !Arc::ptr_eq(mu.paths(), paths) && mu.paths().grid() != &grid {
        return Err(MfgError::usage(op, "measure lives on a different time grid"));
    }
    if nu.num_steps() != n {
        return Err(MfgError::usage(op, "control flow has the wrong number of steps"));
    }
    if dt * model.drift_bound() >= S::one() {
        return Err(MfgError::usage(
            op,
            format!("dt·c_bd = {} must be below 1 for the explicit scheme", dt * model.drift_bound()),
        ));
    }
    let size = basis.size(model);
    if m_paths < MIN_PATHS_PER_FEATURE * size {
        return Err(MfgError::usage(
            op,
            format!("{} paths for {} basis functions; need at least {}", m_paths, size, MIN_PATHS_PER_FEATURE * size),
        ));
    }

    let features = FeatureMap::new(basis, model);
    let nf = features.len(model);
    let ridge = S::of(basis.ridge);
    let clip = S::of(basis.z_clip);
    let view = mu.view();
    let search = SearchConfig::default();
    let stride = n + 1;

    let mut y = vec![S::zero(); m_paths * stride];
    let mut pathwise = vec![S::zero(); m_paths];
    let mut z = vec![S::zero(); m_paths * n * d];
    let terminal: Vec<S> = (0..m_paths).into_par_iter().map(|m| model.terminal_reward(&paths.path(m), &view)).collect();
    for (m, g) in terminal.into_iter().enumerate() {
        if !g.is_finite() {
            return Err(MfgError::non_finite(op, format!("terminal reward {} on path {}", g, m)));
        }
        y[m * stride + n] = g;
        pathwise[m] = g;
    }

    let mut fits: Vec<StepFit<S>> = Vec::with_capacity(n);
    let mut clip_hits = 0usize;
    let mut raw = vec![S::zero(); m_paths * nf];
    for k in (0..n).rev() {
        raw.par_chunks_mut(nf.max(1)).enumerate().for_each(|(m, row)| {
            if nf > 0 {
                features.fill(model, &paths.slice(m, k), row);
            }
        });
        let count = S::count(m_paths);
        let mut mean = vec![S::zero(); nf];
        for row in raw.chunks_exact(nf.max(1)).take(m_paths) {
            for j in 0..nf {
                mean[j] += row[j];
            }
        }
        mean.iter_mut().for_each(|v| *v /= count);
        let mut scale = vec![S::zero(); nf];
        for row in raw.chunks_exact(nf.max(1)).take(m_paths) {
            for j in 0..nf {
                let c = row[j] - mean[j];
                scale[j] += c * c;
            }
        }
        let mut active = Vec::new();
        for j in 0..nf {
            scale[j] = (scale[j] / count).sqrt();
            if scale[j] > S::of(1e-10) * (S::one() + mean[j].abs()) {
                active.push(j);
            } else {
                scale[j] = S::one();
            }
        }
        let cols = 1 + active.len();
        let mut design = vec![S::zero(); m_paths * cols];
        for (m, row) in design.chunks_exact_mut(cols).enumerate() {
            row[0] = S::one();
            for (r, &j) in active.iter().enumerate() {
                row[r + 1] = (raw[m * nf + j] - mean[j]) / scale[j];
            }
        }

        let next: Vec<S> = (0..m_paths).map(|m| y[m * stride + k + 1]).collect();
        let beta_y = ridge_fit(&design, cols, &[&next], ridge).ok_or(MfgError::SingularRegression { op, step: k })?;
        let fitted: Vec<S> = design.chunks_exact(cols).map(|r| dot(r, &beta_y[0])).collect();
        let targets: Vec<Vec<S>> = (0..d)
            .map(|i| {
                (0..m_paths)
                    .map(|m| (next[m] - fitted[m]) * ensemble.increment(m, k)[i] / dt)
                    .collect()
            })
            .collect();
        let target_refs: Vec<&[S]> = targets.iter().map(|t| t.as_slice()).collect();
        let beta_z = ridge_fit(&design, cols, &target_refs, ridge).ok_or(MfgError::SingularRegression { op, step: k })?;
        let z_coef = interleave(&beta_z, cols, d);
        // Z for the stochastic integral of path m is fitted on the other parity class,
        // so that it is independent of the path's own increment
        let mut cross = Vec::with_capacity(2);
        for fold in 0..2 {
            let rows: Vec<usize> = (0..m_paths).filter(|m| m % 2 != fold).collect();
            let sub_design: Vec<S> = rows.iter().flat_map(|&m| design[m * cols..(m + 1) * cols].iter().copied()).collect();
            let sub_targets: Vec<Vec<S>> = targets.iter().map(|t| rows.iter().map(|&m| t[m]).collect()).collect();
            let refs: Vec<&[S]> = sub_targets.iter().map(|t| t.as_slice()).collect();
            let b = ridge_fit(&sub_design, cols, &refs, ridge).ok_or(MfgError::SingularRegression { op, step: k })?;
            cross.push(interleave(&b, cols, d));
        }

        let t = grid.time(k);
        let q = nu.at(k);
        let step: Vec<Result<(Vec<S>, S, usize, S)>> = (0..m_paths)
            .into_par_iter()
            .map(|m| {
                let row = &design[m * cols..(m + 1) * cols];
                let mut zm = vec![S::zero(); d];
                let mut hits = 0;
                let mut integral = S::zero();
                for (i, zi) in zm.iter_mut().enumerate() {
                    let v = predict_component(row, &z_coef, d, i);
                    if v.abs() > clip || !v.is_finite() {
                        hits += 1;
                    }
                    *zi = clamp_finite(v, clip);
                    let w = clamp_finite(predict_component(row, &cross[m % 2], d, i), clip);
                    integral += w * ensemble.increment(m, k)[i];
                }
                let slice = paths.slice(m, k);
                let h = match &driver {
                    Driver::Optimal => hamiltonian::maximize_hamiltonian_with(model, t, &slice, &view, &q, &zm, &search)?.value,
                    Driver::Policy(policy) => {
                        let a = policy.control(t, &slice)?;
                        hamiltonian::hamiltonian_value(model, t, &slice, &view, &q, &zm, &a)?
                    }
                };
                if !h.is_finite() {
                    return Err(MfgError::non_finite(op, format!("driver is {} at path {}, step {}", h, m, k)));
                }
                Ok((zm, h, hits, integral))
            })
            .collect();
        for (m, r) in step.into_iter().enumerate() {
            let (zm, h, hits, integral) = r?;
            clip_hits += hits;
            pathwise[m] += dt * h - integral;
            z[(m * n + k) * d..(m * n + k + 1) * d].copy_from_slice(&zm);
            y[m * stride + k] = fitted[m] + dt * h;
        }
        fits.push(StepFit {
            mean,
            scale,
            active,
            z_coef,
        });
    }
    fits.reverse();
    if clip_hits > 0 {
        log::warn!("{}: {} Z components clipped to ±{}", op, clip_hits, basis.z_clip);
    }

    let count = S::count(m_paths);
    let value = pathwise.iter().copied().sum::<S>() / count;
    let var = pathwise.iter().map(|&v| (v - value) * (v - value)).sum::<S>() / count;
    Ok(BsdeSolution {
        num_paths: m_paths,
        num_steps: n,
        dim: d,
        y,
        z,
        value,
        value_std_error: (var / count).sqrt(),
        surrogate: Arc::new(ZSurrogate {
            features,
            dim: d,
            clip,
            steps: fits,
        }),
        z_clip_hits: clip_hits,
    })
}

/// Solves the value BSDE with driver `H(t, X, μ, ν_t, Z)` on the ensemble.
pub fn solve_bsde<S: Real>(
    ensemble: &PathEnsemble<S>,
    model: &dyn Model<S>,
    mu: &WeightedMeasure<S>,
    nu: &ControlLawFlow<S>,
    basis: &RegressionBasis,
) -> Result<BsdeSolution<S>> {
    sweep("bsde::solve_bsde", ensemble, model, mu, nu, basis, Driver::Optimal)
}

/// Solves the linear BSDE with driver `h(t, X, μ, ν_t, Z, α(t, X))`, whose
/// initial value is the reward of the fixed policy α.
pub fn solve_policy_bsde<S: Real>(
    ensemble: &PathEnsemble<S>,
    model: &dyn Model<S>,
    mu: &WeightedMeasure<S>,
    nu: &ControlLawFlow<S>,
    policy: &ClosedLoopPolicy<S>,
    basis: &RegressionBasis,
) -> Result<BsdeSolution<S>> {
    sweep("bsde::solve_policy_bsde", ensemble, model, mu, nu, basis, Driver::Policy(policy))
}

/// `α(t, x) = α̂(t, x, μ, Ẑ(t, x))` with `Ẑ` the solution's regression surrogate.
pub fn optimal_policy<S: Real>(
    solution: &BsdeSolution<S>,
    model: Arc<dyn Model<S>>,
    mu: &WeightedMeasure<S>,
) -> ClosedLoopPolicy<S> {
    policy_from_z(model, mu, ZField::Surrogate(solution.surrogate.clone()))
}

/// Importance-weighted Monte Carlo reward and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardEstimate<S> {
    pub mean: S,
    pub std_error: S,
}

/// `J^{μ,ν}(α) = E^{μ,α}[∫ f dt + g]` by reweighting the driftless ensemble.
pub fn evaluate_reward<S: Real>(
    ensemble: &PathEnsemble<S>,
    model: &dyn Model<S>,
    mu: &WeightedMeasure<S>,
    nu: &ControlLawFlow<S>,
    policy: &ClosedLoopPolicy<S>,
) -> Result<RewardEstimate<S>> {
    const OP: &str = "bsde::evaluate_reward";
    let grid = *ensemble.grid();
    let n = grid.num_steps();
    let dt = grid.dt();
    let d = ensemble.dim();
    if nu.num_steps() != n {
        return Err(MfgError::usage(OP, "control flow has the wrong number of steps"));
    }
    let paths = ensemble.paths();
    let view = mu.view();
    let set = model.control_set();
    let bound = model.drift_bound() * (S::one() + S::of(1e-9));
    let half = S::of(0.5);

    let per_path: Vec<Result<(S, S)>> = (0..ensemble.num_paths())
        .into_par_iter()
        .map(|m| {
            let mut log_w = S::zero();
            let mut payoff = S::zero();
            let mut theta = vec![S::zero(); d];
            for k in 0..n {
                let t = grid.time(k);
                let slice = paths.slice(m, k);
                let a = policy.control(t, &slice)?;
                if !set.contains(&a) {
                    return Err(MfgError::contract(OP, format!("policy left the control set at path {}, step {}", m, k)));
                }
                model.scaled_drift(t, &slice, &view, &a, &mut theta);
                let size = crate::scalar::norm(&theta);
                if !size.is_finite() || size > bound {
                    return Err(MfgError::contract(OP, format!("|σ⁻¹b| = {} exceeds the declared bound", size)));
                }
                log_w += dot(&theta, ensemble.increment(m, k)) - half * dot(&theta, &theta) * dt;
                let f = model.reward_control(t, &slice, &view, &a) + model.reward_flow(t, &slice, &view, &nu.at(k));
                payoff += f * dt;
            }
            payoff += model.terminal_reward(&paths.path(m), &view);
            if !payoff.is_finite() {
                return Err(MfgError::non_finite(OP, format!("reward {} on path {}", payoff, m)));
            }
            Ok((log_w, payoff))
        })
        .collect();
    let mut log_w = Vec::with_capacity(per_path.len());
    let mut payoff = Vec::with_capacity(per_path.len());
    for r in per_path {
        let (l, p) = r?;
        log_w.push(l);
        payoff.push(p);
    }
    let w = crate::measures::normalize_log_weights(&log_w);
    let count = S::count(w.len());
    let terms: Vec<S> = w.iter().zip(&payoff).map(|(&a, &b)| a * b).collect();
    let mean = terms.iter().copied().sum::<S>() / count;
    let var = terms.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / count;
    Ok(RewardEstimate {
        mean,
        std_error: (var / count).sqrt(),
    })
}
