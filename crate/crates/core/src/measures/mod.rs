//! Candidate laws as importance weights on the fixed ensemble.
//!
//! A law μ = P^{μ,α} ∘ X⁻¹ is stored as normalized weights `w[m]` over the
//! driftless paths, so that `∫φ dμ ≈ (1/M) Σ w[m] φ(X[m])`. The paths never
//! change; only the weights do. The control-law flow ν is kept alongside as
//! per-step weighted control samples.

mod discrepancy;
mod export;
mod girsanov;
mod quantile;

use std::sync::{Arc, OnceLock};

use crate::error::{MfgError, Result};
use crate::paths::{PathSet, PathSlice};
use crate::scalar::Real;

pub use discrepancy::{
    discrepancy, sliced_w1, w1_weighted, DiscrepancyConfig, GaugeFn, MeasureDiscrepancy,
};
pub use export::{write_control_histograms, write_marginal_histograms};
pub use girsanov::{girsanov_log_weights, girsanov_weights, pushforward_measure, normalize_log_weights};
pub use quantile::{quantile_radius, SortedLine};

/// Importance weights over a path set, normalized to mean one.
#[derive(Clone)]
pub struct WeightedMeasure<S> {
    paths: Arc<PathSet<S>>,
    weights: Arc<Vec<S>>,
    lines: Arc<LineCache<S>>,
}

struct LineCache<S> {
    integrals: Vec<OnceLock<SortedLine<S>>>,
    states: Vec<OnceLock<SortedLine<S>>>,
}

impl<S> LineCache<S> {
    fn new(nodes: usize) -> Self {
        LineCache {
            integrals: (0..nodes).map(|_| OnceLock::new()).collect(),
            states: (0..nodes).map(|_| OnceLock::new()).collect(),
        }
    }
}

impl<S: Real> std::fmt::Debug for WeightedMeasure<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WeightedMeasure")
            .field("num_paths", &self.paths.num_paths())
            .field("weights", &self.weights.len())
            .finish()
    }
}

/// Tolerance for the mean-one normalization.
pub(crate) fn normalization_tolerance<S: Real>(n: usize) -> S {
    (S::epsilon() * S::of(64.0) * S::count(n).sqrt()).max(S::of(1e-13))
}

impl<S: Real> WeightedMeasure<S> {
    /// The reference (driftless) law: every weight is one.
    pub fn uniform(paths: Arc<PathSet<S>>) -> Self {
        let n = paths.num_paths();
        Self::from_parts(paths, vec![S::one(); n])
    }

    /// Wraps already-normalized weights, checking the invariants.
    pub fn new(paths: Arc<PathSet<S>>, weights: Vec<S>) -> Result<Self> {
        const OP: &str = "measures::WeightedMeasure::new";
        if weights.len() != paths.num_paths() {
            return Err(MfgError::usage(OP, "one weight per path required"));
        }
        if let Some(m) = weights.iter().position(|w| !w.is_finite() || *w < S::zero()) {
            return Err(MfgError::non_finite(OP, format!("weight of path {} is {}", m, weights[m])));
        }
        let mean = weights.iter().copied().sum::<S>() / S::count(weights.len());
        if (mean - S::one()).abs() > normalization_tolerance::<S>(weights.len()) {
            return Err(MfgError::usage(OP, format!("weights have mean {}, expected 1", mean)));
        }
        Ok(Self::from_parts(paths, weights))
    }

    /// Rescales nonnegative raw weights to mean one.
    pub fn normalized(paths: Arc<PathSet<S>>, mut raw: Vec<S>) -> Result<Self> {
        const OP: &str = "measures::WeightedMeasure::normalized";
        let mean = raw.iter().copied().sum::<S>() / S::count(raw.len().max(1));
        if !(mean > S::zero()) || !mean.is_finite() {
            return Err(MfgError::non_finite(OP, format!("raw weight mean {}", mean)));
        }
        raw.iter_mut().for_each(|w| *w /= mean);
        Self::new(paths, raw)
    }

    fn from_parts(paths: Arc<PathSet<S>>, weights: Vec<S>) -> Self {
        let nodes = paths.grid().num_steps() + 1;
        WeightedMeasure {
            paths,
            weights: Arc::new(weights),
            lines: Arc::new(LineCache::new(nodes)),
        }
    }

    pub fn paths(&self) -> &Arc<PathSet<S>> {
        &self.paths
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn num_atoms(&self) -> usize {
        self.weights.len()
    }

    pub fn view(&self) -> MuView<'_, S> {
        MuView { measure: self }
    }

    /// True if both measures live on the same path set.
    pub fn same_support(&self, other: &WeightedMeasure<S>) -> bool {
        Arc::ptr_eq(&self.paths, &other.paths)
    }

    /// `(1-λ)·self + λ·other`, a convex combination of densities.
    pub fn mix(&self, other: &WeightedMeasure<S>, lambda: S) -> Result<Self> {
        if !self.same_support(other) {
            return Err(MfgError::usage("measures::WeightedMeasure::mix", "measures live on different ensembles"));
        }
        let w = self
            .weights
            .iter()
            .zip(other.weights.iter())
            .map(|(&a, &b)| (S::one() - lambda) * a + lambda * b)
            .collect();
        WeightedMeasure::normalized(self.paths.clone(), w)
    }

    /// Empirical second moment of the weights, `(1/M) Σ w²`.
    pub fn weight_second_moment(&self) -> S {
        self.weights.iter().map(|&w| w * w).sum::<S>() / S::count(self.weights.len())
    }

    /// Sorted positions (running integrals) at a step, first component.
    pub fn integral_line(&self, step: usize) -> &SortedLine<S> {
        self.lines.integrals[step].get_or_init(|| {
            let keys: Vec<S> = (0..self.num_atoms()).map(|m| self.paths.integral(m, step)[0]).collect();
            let values: Vec<S> = (0..self.num_atoms()).map(|m| self.paths.state(m, step)[0]).collect();
            SortedLine::new(&keys, &self.weights, &values)
        })
    }

    /// Sorted states at a step, first component.
    pub fn state_line(&self, step: usize) -> &SortedLine<S> {
        self.lines.states[step].get_or_init(|| {
            let keys: Vec<S> = (0..self.num_atoms()).map(|m| self.paths.state(m, step)[0]).collect();
            SortedLine::new(&keys, &self.weights, &keys)
        })
    }
}

/// Read-only handle through which models consume μ.
#[derive(Clone, Copy)]
pub struct MuView<'a, S> {
    measure: &'a WeightedMeasure<S>,
}

impl<'a, S: Real> MuView<'a, S> {
    pub fn num_atoms(&self) -> usize {
        self.measure.num_atoms()
    }

    /// Normalized weight of atom `m` (mean one).
    pub fn weight(&self, m: usize) -> S {
        self.measure.weights[m]
    }

    pub fn weights(&self) -> &'a [S] {
        &self.measure.weights
    }

    pub fn slice(&self, m: usize, step: usize) -> PathSlice<'a, S> {
        self.measure.paths.slice(m, step)
    }

    pub fn state(&self, m: usize, step: usize) -> &'a [S] {
        self.measure.paths.state(m, step)
    }

    pub fn integral(&self, m: usize, step: usize) -> &'a [S] {
        self.measure.paths.integral(m, step)
    }

    /// `∫ φ dμ` for a functional of the path up to `step`.
    pub fn mean_at(&self, step: usize, phi: impl Fn(&PathSlice<'_, S>) -> S) -> S {
        let n = self.num_atoms();
        let mut acc = S::zero();
        for m in 0..n {
            acc += self.weight(m) * phi(&self.slice(m, step));
        }
        acc / S::count(n)
    }

    /// `μ_t(-∞, x]` on the first state component.
    pub fn cdf(&self, step: usize, x: S) -> S {
        self.measure.state_line(step).mass_below(x)
    }

    pub fn integral_line(&self, step: usize) -> &'a SortedLine<S> {
        self.measure.integral_line(step)
    }

    /// Time-marginal point cloud at a step: states (`n × d`, row-major) and weights.
    pub fn marginal(&self, step: usize) -> (Vec<S>, &'a [S]) {
        let d = self.measure.paths.dim();
        let mut pts = Vec::with_capacity(self.num_atoms() * d);
        for m in 0..self.num_atoms() {
            pts.extend_from_slice(self.state(m, step));
        }
        (pts, self.weights())
    }

    /// Radius of the smallest closed ball around `x` holding mass `y` of the
    /// positions `ι(t_k, ·)` under μ.
    pub fn integral_quantile_radius(&self, step: usize, x: &[S], y: S) -> Result<S> {
        if x.len() == 1 {
            return self.integral_line(step).quantile_radius(x[0], y);
        }
        let d = x.len();
        let mut pts = Vec::with_capacity(self.num_atoms() * d);
        for m in 0..self.num_atoms() {
            pts.extend_from_slice(self.integral(m, step));
        }
        quantile_radius(&pts, self.weights(), d, x, y)
    }
}

/// `(1/M) Σ w[m] φ(X[m])` over whole paths.
pub fn expectation<S: Real>(mu: &WeightedMeasure<S>, phi: impl Fn(&PathSlice<'_, S>) -> S) -> Result<S> {
    let paths = mu.paths();
    let mut acc = S::zero();
    for m in 0..mu.num_atoms() {
        let v = phi(&paths.path(m));
        if !v.is_finite() {
            return Err(MfgError::non_finite("measures::expectation", format!("integrand is {} on path {}", v, m)));
        }
        acc += mu.weights()[m] * v;
    }
    Ok(acc / S::count(mu.num_atoms()))
}

/// Weighted control samples at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSamples<S> {
    dim: usize,
    points: Vec<S>,
    weights: Arc<Vec<S>>,
}

impl<S: Real> ControlSamples<S> {
    pub fn new(dim: usize, points: Vec<S>, weights: Arc<Vec<S>>) -> Result<Self> {
        const OP: &str = "measures::ControlSamples::new";
        if dim == 0 || points.len() != weights.len() * dim || weights.is_empty() {
            return Err(MfgError::usage(OP, "sample and weight counts disagree"));
        }
        Ok(ControlSamples { dim, points, weights })
    }

    /// Equally weighted samples.
    pub fn uniform(dim: usize, points: Vec<S>) -> Result<Self> {
        let n = points.len() / dim.max(1);
        Self::new(dim, points, Arc::new(vec![S::one(); n]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[S] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[S] {
        &self.points
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn view(&self) -> QView<'_, S> {
        QView { samples: self }
    }

    /// `(1-λ)·self + λ·other`, compressed back to `size` equally weighted samples.
    ///
    /// One-dimensional controls are compressed by weighted quantiles; higher
    /// dimensions by stratified resampling of the concatenated list.
    pub fn mix(&self, other: &ControlSamples<S>, lambda: S, size: usize) -> Result<Self> {
        if self.dim != other.dim {
            return Err(MfgError::usage("measures::ControlSamples::mix", "control dimensions differ"));
        }
        let sa = self.weights.iter().copied().sum::<S>();
        let sb = other.weights.iter().copied().sum::<S>();
        let mut items: Vec<(usize, S)> = Vec::with_capacity(self.len() + other.len());
        for (i, &w) in self.weights.iter().enumerate() {
            items.push((i, (S::one() - lambda) * w / sa));
        }
        for (i, &w) in other.weights.iter().enumerate() {
            items.push((self.len() + i, lambda * w / sb));
        }
        let point = |idx: usize| -> &[S] {
            if idx < self.len() {
                self.point(idx)
            } else {
                other.point(idx - self.len())
            }
        };
        if self.dim == 1 {
            items.sort_by(|a, b| {
                point(a.0)[0]
                    .partial_cmp(&point(b.0)[0])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.0.cmp(&b.0))
            });
        }
        let total: S = items.iter().map(|x| x.1).sum();
        let mut out = Vec::with_capacity(size * self.dim);
        let mut cum = S::zero();
        let mut cursor = 0usize;
        for j in 0..size {
            let level = (S::count(j) + S::of(0.5)) / S::count(size) * total;
            while cursor + 1 < items.len() && cum + items[cursor].1 < level {
                cum += items[cursor].1;
                cursor += 1;
            }
            out.extend_from_slice(point(items[cursor].0));
        }
        ControlSamples::uniform(self.dim, out)
    }
}

/// Read-only handle to the control law `q_t` at one step.
#[derive(Clone, Copy)]
pub struct QView<'a, S> {
    samples: &'a ControlSamples<S>,
}

impl<'a, S: Real> QView<'a, S> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim
    }

    pub fn point(&self, i: usize) -> &'a [S] {
        self.samples.point(i)
    }

    pub fn weight(&self, i: usize) -> S {
        self.samples.weights[i]
    }

    /// `∫ φ dq`.
    pub fn mean(&self, phi: impl Fn(&[S]) -> S) -> S {
        let mut acc = S::zero();
        let mut total = S::zero();
        for i in 0..self.len() {
            let w = self.weight(i);
            acc += w * phi(self.point(i));
            total += w;
        }
        acc / total
    }
}

/// The flow `t ↦ ν_t` as per-step weighted control samples (steps `0..N`).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLawFlow<S> {
    dim: usize,
    steps: Vec<ControlSamples<S>>,
}

impl<S: Real> ControlLawFlow<S> {
    pub fn new(dim: usize, steps: Vec<ControlSamples<S>>) -> Result<Self> {
        if steps.is_empty() || steps.iter().any(|s| s.dim != dim) {
            return Err(MfgError::usage("measures::ControlLawFlow::new", "empty flow or mixed control dimensions"));
        }
        Ok(ControlLawFlow { dim, steps })
    }

    /// A flow that is `δ_a` at every step.
    pub fn dirac(a: &[S], num_steps: usize) -> Self {
        let sample = ControlSamples::uniform(a.len(), a.to_vec()).expect("non-empty control");
        ControlLawFlow {
            dim: a.len(),
            steps: vec![sample; num_steps],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, k: usize) -> &ControlSamples<S> {
        &self.steps[k.min(self.steps.len() - 1)]
    }

    /// View of `q_{t_k}`; the terminal node reuses the last interval's law.
    pub fn at(&self, k: usize) -> QView<'_, S> {
        self.step(k).view()
    }

    pub fn mix(&self, other: &ControlLawFlow<S>, lambda: S, size: usize) -> Result<Self> {
        if self.steps.len() != other.steps.len() {
            return Err(MfgError::usage("measures::ControlLawFlow::mix", "flows have different lengths"));
        }
        let steps = self
            .steps
            .iter()
            .zip(&other.steps)
            .map(|(a, b)| a.mix(b, lambda, size))
            .collect::<Result<Vec<_>>>()?;
        ControlLawFlow::new(self.dim, steps)
    }
}
