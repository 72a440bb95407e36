use std::sync::Arc;

use rayon::prelude::*;

use super::{ControlLawFlow, ControlSamples, WeightedMeasure};
use crate::error::{MfgError, Result};
use crate::hamiltonian::{ClosedLoopPolicy, Model};
use crate::paths::PathEnsemble;
use crate::scalar::{dot, Real};

/// Per-path log density and (optionally) the controls played, `[path][step][component]`.
struct Reweighting<S> {
    log_weights: Vec<S>,
    controls: Option<Vec<Vec<S>>>,
}

fn reweight<S: Real>(
    ensemble: &PathEnsemble<S>,
    model: &dyn Model<S>,
    policy: &ClosedLoopPolicy<S>,
    mu: &WeightedMeasure<S>,
    keep_controls: bool,
) -> Result<Reweighting<S>> {
    const OP: &str = "measures::girsanov_weights";
    let grid = *ensemble.grid();
    let n = grid.num_steps();
    let dt = grid.dt();
    let half = S::of(0.5);
    let bound = model.drift_bound() * (S::one() + S::of(1e-9));
    let view = mu.view();
    let paths = ensemble.paths();
    let d = ensemble.dim();
    let control_set = model.control_set();

    let per_path: Vec<Result<(S, Vec<S>)>> = (0..ensemble.num_paths())
        .into_par_iter()
        .map(|m| {
            let mut log_w = S::zero();
            let mut played = Vec::new();
            let mut theta = vec![S::zero(); d];
            for k in 0..n {
                let t = grid.time(k);
                let slice = paths.slice(m, k);
                let a = policy.control(t, &slice)?;
                if !control_set.contains(&a) {
                    return Err(MfgError::contract(OP, format!("policy left the control set at path {}, step {}", m, k)));
                }
                model.scaled_drift(t, &slice, &view, &a, &mut theta);
                let size = crate::scalar::norm(&theta);
                if !size.is_finite() || size > bound {
                    return Err(MfgError::contract(
                        OP,
                        format!("|σ⁻¹b| = {} exceeds the declared bound {} at path {}, step {}", size, model.drift_bound(), m, k),
                    ));
                }
                log_w += dot(&theta, ensemble.increment(m, k)) - half * dot(&theta, &theta) * dt;
                if keep_controls {
                    played.extend_from_slice(&a);
                }
            }
            Ok((log_w, played))
        })
        .collect();

    let mut log_weights = Vec::with_capacity(per_path.len());
    let mut by_path = Vec::with_capacity(if keep_controls { per_path.len() } else { 0 });
    for r in per_path {
        let (lw, played) = r?;
        log_weights.push(lw);
        if keep_controls {
            by_path.push(played);
        }
    }
    let controls = keep_controls.then(|| {
        let da = control_set.dim();
        (0..n)
            .map(|k| {
                let mut step = Vec::with_capacity(by_path.len() * da);
                for p in &by_path {
                    step.extend_from_slice(&p[k * da..(k + 1) * da]);
                }
                step
            })
            .collect()
    });
    Ok(Reweighting { log_weights, controls })
}

/// Pre-normalization log densities `Σ_k θ·ΔW − ½ Σ_k |θ|² dt` per path.
pub fn girsanov_log_weights<S: Real>(
    ensemble: &PathEnsemble<S>,
    model: &dyn Model<S>,
    policy: &ClosedLoopPolicy<S>,
    mu: &WeightedMeasure<S>,
) -> Result<Vec<S>> {
    Ok(reweight(ensemble, model, policy, mu, false)?.log_weights)
}

/// Exponentiates log densities (shifted by their maximum) and rescales to mean one.
pub fn normalize_log_weights<S: Real>(log_weights: &[S]) -> Vec<S> {
    let top = log_weights.iter().copied().fold(S::neg_infinity(), S::max);
    let mut w: Vec<S> = log_weights.iter().map(|&l| (l - top).exp()).collect();
    let mean = w.iter().copied().sum::<S>() / S::count(w.len());
    w.iter_mut().for_each(|x| *x /= mean);
    w
}

/// Density of P^{μ,α} on the ensemble: the discrete stochastic exponential of
/// `θ = σ⁻¹b(t, X, μ, α(t, X))` against the stored increments, renormalized.
pub fn girsanov_weights<S: Real>(
    ensemble: &PathEnsemble<S>,
    model: &dyn Model<S>,
    policy: &ClosedLoopPolicy<S>,
    mu: &WeightedMeasure<S>,
) -> Result<WeightedMeasure<S>> {
    let logw = girsanov_log_weights(ensemble, model, policy, mu)?;
    WeightedMeasure::new(ensemble.paths().clone(), normalize_log_weights(&logw))
}

/// The map `Φ(μ, α) = (P^{μ,α} ∘ X⁻¹, P^{μ,α} ∘ α_t⁻¹)` on the ensemble.
pub fn pushforward_measure<S: Real>(
    ensemble: &PathEnsemble<S>,
    model: &dyn Model<S>,
    policy: &ClosedLoopPolicy<S>,
    mu: &WeightedMeasure<S>,
) -> Result<(WeightedMeasure<S>, ControlLawFlow<S>)> {
    let rw = reweight(ensemble, model, policy, mu, true)?;
    let measure = WeightedMeasure::new(ensemble.paths().clone(), normalize_log_weights(&rw.log_weights))?;
    let shared = Arc::new(measure.weights().to_vec());
    let da = model.control_set().dim();
    let steps = rw
        .controls
        .expect("controls recorded")
        .into_iter()
        .map(|pts| ControlSamples::new(da, pts, shared.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok((measure, ControlLawFlow::new(da, steps)?))
}
