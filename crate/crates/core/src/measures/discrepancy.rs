use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ControlLawFlow, WeightedMeasure};
use crate::error::{MfgError, Result};
use crate::paths::{PathSlice, TimeGrid};
use crate::scalar::Real;

/// Path functional used as an extra test function (typically the growth gauge ψ).
pub type GaugeFn<S> = Arc<dyn Fn(&PathSlice<'_, S>) -> S + Send + Sync>;

/// Distance proxies between two candidate equilibria on the same ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureDiscrepancy {
    /// `sup_φ |∫φ d(μ-μ')|` over the test-function bank.
    pub moment_residual: f64,
    /// Sliced W1 between time marginals, averaged over the test times.
    pub sliced_w1: f64,
    /// Sliced W1 between control laws, averaged over time steps.
    pub control_flow_residual: f64,
}

impl MeasureDiscrepancy {
    pub const ZERO: MeasureDiscrepancy = MeasureDiscrepancy {
        moment_residual: 0.0,
        sliced_w1: 0.0,
        control_flow_residual: 0.0,
    };

    pub fn max_component(&self) -> f64 {
        self.moment_residual.max(self.sliced_w1).max(self.control_flow_residual)
    }

    /// Componentwise `self ≤ tol`.
    pub fn within(&self, tol: &MeasureDiscrepancy) -> bool {
        self.moment_residual <= tol.moment_residual
            && self.sliced_w1 <= tol.sliced_w1
            && self.control_flow_residual <= tol.control_flow_residual
    }

    pub fn uniform(tol: f64) -> Self {
        MeasureDiscrepancy {
            moment_residual: tol,
            sliced_w1: tol,
            control_flow_residual: tol,
        }
    }
}

/// Test-function bank and projection settings for [`discrepancy`].
#[derive(Clone)]
pub struct DiscrepancyConfig<S> {
    /// Steps at which marginal moments and marginal W1 are compared.
    pub test_steps: Vec<usize>,
    /// Highest monomial degree of each state component.
    pub max_degree: u32,
    pub num_projections: usize,
    pub projection_seed: u64,
    pub gauge: Option<GaugeFn<S>>,
}

impl<S: Real> DiscrepancyConfig<S> {
    /// Monomials up to degree 4 at `N/4, N/2, 3N/4, N`, 16 projections.
    pub fn for_grid(grid: &TimeGrid<S>) -> Self {
        let n = grid.num_steps();
        let mut steps: Vec<usize> = [n / 4, n / 2, (3 * n) / 4, n]
            .into_iter()
            .filter(|&k| k > 0)
            .collect();
        steps.dedup();
        DiscrepancyConfig {
            test_steps: steps,
            max_degree: 4,
            num_projections: 16,
            projection_seed: 0x5eed,
            gauge: None,
        }
    }

    pub fn with_gauge(mut self, gauge: GaugeFn<S>) -> Self {
        self.gauge = Some(gauge);
        self
    }

    fn directions(&self, dim: usize) -> Vec<Vec<S>> {
        if dim == 1 {
            return vec![vec![S::one()]];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.projection_seed);
        (0..self.num_projections.max(1))
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                v.into_iter().map(|x| S::of(x / norm)).collect()
            })
            .collect()
    }
}

/// Wasserstein-1 distance between two weighted samples on the line.
pub fn w1_weighted<S: Real>(xs: &[S], wx: &[S], ys: &[S], wy: &[S]) -> S {
    let sx: S = wx.iter().copied().sum();
    let sy: S = wy.iter().copied().sum();
    // (location, weight, from the first sample); the stable sort keeps equal
    // clouds accumulating in the same order, so their CDFs agree bit for bit
    let mut events: Vec<(S, S, bool)> = Vec::with_capacity(xs.len() + ys.len());
    events.extend(xs.iter().zip(wx).map(|(&x, &w)| (x, w / sx, true)));
    events.extend(ys.iter().zip(wy).map(|(&y, &w)| (y, w / sy, false)));
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let (mut fx, mut fy) = (S::zero(), S::zero());
    let mut total = S::zero();
    for pair in events.windows(2) {
        if pair[0].2 {
            fx += pair[0].1;
        } else {
            fy += pair[0].1;
        }
        total += (fx - fy).abs() * (pair[1].0 - pair[0].0);
    }
    total
}

/// Sliced W1 between two weighted clouds in ℝ^d (row-major points).
pub fn sliced_w1<S: Real>(
    xs: &[S],
    wx: &[S],
    ys: &[S],
    wy: &[S],
    dim: usize,
    directions: &[Vec<S>],
) -> S {
    if dim == 1 {
        return w1_weighted(xs, wx, ys, wy);
    }
    let project = |pts: &[S], dir: &[S]| -> Vec<S> {
        pts.chunks_exact(dim).map(|p| crate::scalar::dot(p, dir)).collect()
    };
    let mut acc = S::zero();
    for dir in directions {
        acc += w1_weighted(&project(xs, dir), wx, &project(ys, dir), wy);
    }
    acc / S::count(directions.len())
}

/// Moment, marginal-W1 and control-flow discrepancies between `(μ, ν)` and `(μ', ν')`.
pub fn discrepancy<S: Real>(
    mu: &WeightedMeasure<S>,
    mu_other: &WeightedMeasure<S>,
    nu: &ControlLawFlow<S>,
    nu_other: &ControlLawFlow<S>,
    config: &DiscrepancyConfig<S>,
) -> Result<MeasureDiscrepancy> {
    const OP: &str = "measures::discrepancy";
    if !mu.same_support(mu_other) {
        return Err(MfgError::usage(OP, "measures live on different ensembles"));
    }
    if nu.num_steps() != nu_other.num_steps() || nu.dim() != nu_other.dim() {
        return Err(MfgError::usage(OP, "control flows have different shapes"));
    }
    let paths = mu.paths();
    let n_paths = paths.num_paths();
    let d = paths.dim();
    let count = S::count(n_paths);
    let diff: Vec<S> = mu
        .weights()
        .iter()
        .zip(mu_other.weights())
        .map(|(&a, &b)| a - b)
        .collect();

    let mut moment = S::zero();
    for &k in &config.test_steps {
        for i in 0..d {
            for p in 1..=config.max_degree {
                let mut acc = S::zero();
                for (m, &dw) in diff.iter().enumerate() {
                    acc += dw * paths.state(m, k)[i].powi(p as i32);
                }
                moment = moment.max((acc / count).abs());
            }
        }
    }
    if let Some(gauge) = &config.gauge {
        let mut acc = S::zero();
        for (m, &dw) in diff.iter().enumerate() {
            acc += dw * gauge(&paths.path(m));
        }
        moment = moment.max((acc / count).abs());
    }

    let state_dirs = config.directions(d);
    let mut marginal = S::zero();
    for &k in &config.test_steps {
        let mut pts = Vec::with_capacity(n_paths * d);
        for m in 0..n_paths {
            pts.extend_from_slice(paths.state(m, k));
        }
        marginal += sliced_w1(&pts, mu.weights(), &pts, mu_other.weights(), d, &state_dirs);
    }
    if !config.test_steps.is_empty() {
        marginal /= S::count(config.test_steps.len());
    }

    let control_dirs = config.directions(nu.dim());
    let mut flow = S::zero();
    for k in 0..nu.num_steps() {
        let (a, b) = (nu.step(k), nu_other.step(k));
        flow += sliced_w1(a.points(), a.weights(), b.points(), b.weights(), nu.dim(), &control_dirs);
    }
    flow /= S::count(nu.num_steps());

    Ok(MeasureDiscrepancy {
        moment_residual: moment.to_f64_lossy(),
        sliced_w1: marginal.to_f64_lossy(),
        control_flow_residual: flow.to_f64_lossy(),
    })
}
