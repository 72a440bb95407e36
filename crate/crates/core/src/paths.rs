//! Time grids and the fixed ensemble of driftless state paths.
//!
//! Every measure and every backward regression in the crate lives on one
//! [`PathEnsemble`]: the paths are simulated once under the reference law
//! `dX = σ(t, X) dW`, and the Brownian increments that produced them are kept
//! so that later changes of measure reuse exactly the same noise.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::linalg;
use crate::scalar::Real;

/// Uniform grid `t_k = k·T/N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<S> {
    horizon: S,
    num_steps: usize,
}

impl<S: Real> TimeGrid<S> {
    pub fn new(horizon: S, num_steps: usize) -> Result<Self> {
        if !(horizon > S::zero()) || !horizon.is_finite() {
            return Err(MfgError::usage("paths::TimeGrid", "horizon must be finite and > 0"));
        }
        if num_steps == 0 {
            return Err(MfgError::usage("paths::TimeGrid", "num_steps must be >= 1"));
        }
        Ok(TimeGrid { horizon, num_steps })
    }

    pub fn horizon(&self) -> S {
        self.horizon
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn dt(&self) -> S {
        self.horizon / S::count(self.num_steps)
    }

    /// Time of step `k`; the last node is `T` exactly.
    pub fn time(&self, k: usize) -> S {
        if k >= self.num_steps {
            self.horizon
        } else {
            S::count(k) * self.dt()
        }
    }
}

/// Initial law λ₀ of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitialLaw<S> {
    PointMass { at: Vec<S> },
    /// Gaussian with row-major covariance.
    Gaussian { mean: Vec<S>, covariance: Vec<S> },
    /// Uniform draw from a finite list of points.
    Empirical { points: Vec<Vec<S>> },
}

impl<S: Real> InitialLaw<S> {
    pub fn point(at: Vec<S>) -> Self {
        InitialLaw::PointMass { at }
    }

    /// The same law over another scalar type.
    pub fn cast<T: Real>(&self) -> InitialLaw<T> {
        let conv = |v: &Vec<S>| v.iter().map(|x| T::of(x.to_f64_lossy())).collect::<Vec<T>>();
        match self {
            InitialLaw::PointMass { at } => InitialLaw::PointMass { at: conv(at) },
            InitialLaw::Gaussian { mean, covariance } => InitialLaw::Gaussian {
                mean: conv(mean),
                covariance: conv(covariance),
            },
            InitialLaw::Empirical { points } => InitialLaw::Empirical {
                points: points.iter().map(conv).collect(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::PointMass { at } => at.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::Empirical { points } => points.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "paths::InitialLaw";
        let d = self.dim();
        if d == 0 {
            return Err(MfgError::usage(OP, "initial law has dimension 0"));
        }
        match self {
            InitialLaw::PointMass { .. } => Ok(()),
            InitialLaw::Gaussian { covariance, .. } => {
                if covariance.len() != d * d {
                    return Err(MfgError::usage(OP, "covariance must be d x d"));
                }
                if !linalg::is_psd(covariance, d) {
                    return Err(MfgError::usage(OP, "covariance must be positive semidefinite"));
                }
                Ok(())
            }
            InitialLaw::Empirical { points } => {
                if points.iter().any(|p| p.len() != d) {
                    return Err(MfgError::usage(OP, "empirical points have mixed dimensions"));
                }
                Ok(())
            }
        }
    }

    /// A sampler with the Gaussian factor precomputed.
    pub fn sampler(&self) -> Result<InitialSampler<'_, S>> {
        self.validate()?;
        let factor = match self {
            InitialLaw::Gaussian { covariance, mean } => {
                let d = mean.len();
                let mut l = covariance.clone();
                // allow singular covariances: factor a slightly jittered copy
                if linalg::cholesky_in_place(&mut l, d).is_none() {
                    l = covariance.clone();
                    for i in 0..d {
                        l[i * d + i] += S::of(1e-12);
                    }
                    linalg::cholesky_in_place(&mut l, d).ok_or_else(|| {
                        MfgError::usage("paths::InitialLaw", "covariance factorisation failed")
                    })?;
                }
                Some(l)
            }
            _ => None,
        };
        Ok(InitialSampler { law: self, factor })
    }
}

pub struct InitialSampler<'a, S> {
    law: &'a InitialLaw<S>,
    factor: Option<Vec<S>>,
}

impl<S: Real> InitialSampler<'_, S> {
    pub fn sample<R: rand::Rng>(&self, rng: &mut R, out: &mut [S]) {
        match self.law {
            InitialLaw::PointMass { at } => out.copy_from_slice(at),
            InitialLaw::Gaussian { mean, .. } => {
                let d = mean.len();
                let l = self.factor.as_ref().expect("gaussian factor");
                let z: Vec<S> = (0..d)
                    .map(|_| S::of(StandardNormal.sample(rng)))
                    .collect();
                for i in 0..d {
                    let mut v = mean[i];
                    for j in 0..=i {
                        v += l[i * d + j] * z[j];
                    }
                    out[i] = v;
                }
            }
            InitialLaw::Empirical { points } => {
                let idx = rng.random_range(0..points.len());
                out.copy_from_slice(&points[idx]);
            }
        }
    }
}

/// The diffusion part of a model: dimension, λ₀ and σ(t, path).
pub trait Diffusion<S: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn initial_law(&self) -> &InitialLaw<S>;

    /// Writes σ(t, x) as a row-major `d × d` matrix into `out`.
    fn volatility(&self, t: S, x: &PathSlice<'_, S>, out: &mut [S]);
}

/// Read-only view of one path's history up to (and including) step `k`.
#[derive(Debug, Clone, Copy)]
pub struct PathSlice<'a, S> {
    states: &'a [S],
    integrals: &'a [S],
    step: usize,
    dim: usize,
    dt: S,
}

impl<'a, S: Real> PathSlice<'a, S> {
    /// Builds a slice from state and running-integral buffers holding at least
    /// `step + 1` nodes; anything past `step` is cut off.
    pub fn new(states: &'a [S], integrals: &'a [S], step: usize, dim: usize, dt: S) -> Self {
        let len = (step + 1) * dim;
        assert!(states.len() >= len && integrals.len() >= len, "path buffer too short");
        PathSlice {
            states: &states[..len],
            integrals: &integrals[..len],
            step,
            dim,
            dt,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> S {
        self.dt
    }

    /// State at the current step.
    pub fn current(&self) -> &'a [S] {
        &self.states[self.step * self.dim..]
    }

    /// State at an earlier step `j ≤ k`.
    pub fn state(&self, j: usize) -> &'a [S] {
        assert!(j <= self.step, "path slice only exposes steps <= {}", self.step);
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    /// Left-endpoint integral ∫₀^{t_k} x_s ds of the path, precomputed.
    pub fn iota(&self) -> &'a [S] {
        &self.integrals[self.step * self.dim..]
    }

    /// The same path cut at an earlier step.
    pub fn truncate(&self, j: usize) -> PathSlice<'a, S> {
        assert!(j <= self.step);
        PathSlice::new(self.states, self.integrals, j, self.dim, self.dt)
    }

    /// `max_{j ≤ k} |x_j|` (Euclidean norm at each node).
    pub fn sup_norm(&self) -> S {
        self.states
            .chunks_exact(self.dim)
            .map(crate::scalar::norm)
            .fold(S::zero(), S::max)
    }
}

/// Left-endpoint Riemann sum `Σ_{j<k} v_j·dt` of a path, the discrete `ι(t_k, v)`.
///
/// This recomputes the integral from the states; ensembles also carry the
/// same sums precomputed (see [`PathSlice::iota`]).
pub fn path_functional_iota<S: Real>(v: &PathSlice<'_, S>, k: usize, grid: &TimeGrid<S>) -> Vec<S> {
    assert!(k <= v.step(), "iota: step {} beyond the slice", k);
    let dt = grid.dt();
    let mut acc = vec![S::zero(); v.dim()];
    for j in 0..k {
        for (a, &x) in acc.iter_mut().zip(v.state(j)) {
            *a += x * dt;
        }
    }
    acc
}

/// A set of paths on a common grid with their running integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet<S> {
    grid: TimeGrid<S>,
    num_paths: usize,
    dim: usize,
    states: Vec<S>,
    integrals: Vec<S>,
}

impl<S: Real> PathSet<S> {
    /// Builds a path set from row-major states `[path][step][component]`.
    pub fn from_states(grid: TimeGrid<S>, dim: usize, states: Vec<S>) -> Result<Self> {
        let stride = (grid.num_steps() + 1) * dim;
        if dim == 0 || stride == 0 || !states.len().is_multiple_of(stride) || states.is_empty() {
            return Err(MfgError::usage("paths::PathSet", "state buffer does not match grid"));
        }
        let num_paths = states.len() / stride;
        let dt = grid.dt();
        let mut integrals = vec![S::zero(); states.len()];
        for (xs, is) in states.chunks_exact(stride).zip(integrals.chunks_exact_mut(stride)) {
            running_integral(xs, is, dim, dt);
        }
        Ok(PathSet {
            grid,
            num_paths,
            dim,
            states,
            integrals,
        })
    }

    pub fn grid(&self) -> &TimeGrid<S> {
        &self.grid
    }

    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn stride(&self) -> usize {
        (self.grid.num_steps() + 1) * self.dim
    }

    pub fn slice(&self, path: usize, step: usize) -> PathSlice<'_, S> {
        let stride = self.stride();
        let base = path * stride;
        PathSlice::new(
            &self.states[base..base + stride],
            &self.integrals[base..base + stride],
            step,
            self.dim,
            self.grid.dt(),
        )
    }

    /// Whole path (slice at the terminal step).
    pub fn path(&self, path: usize) -> PathSlice<'_, S> {
        self.slice(path, self.grid.num_steps())
    }

    pub fn state(&self, path: usize, step: usize) -> &[S] {
        let base = path * self.stride() + step * self.dim;
        &self.states[base..base + self.dim]
    }

    pub fn integral(&self, path: usize, step: usize) -> &[S] {
        let base = path * self.stride() + step * self.dim;
        &self.integrals[base..base + self.dim]
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }
}

fn running_integral<S: Real>(states: &[S], integrals: &mut [S], dim: usize, dt: S) {
    for i in 0..dim {
        integrals[i] = S::zero();
    }
    let nodes = states.len() / dim;
    for k in 1..nodes {
        for i in 0..dim {
            integrals[k * dim + i] = integrals[(k - 1) * dim + i] + states[(k - 1) * dim + i] * dt;
        }
    }
}

/// Driftless Monte Carlo ensemble with its Brownian increments.
#[derive(Debug, Clone)]
pub struct PathEnsemble<S> {
    paths: Arc<PathSet<S>>,
    increments: Vec<S>,
    seed: u64,
}

impl<S: Real> PathEnsemble<S> {
    pub fn paths(&self) -> &Arc<PathSet<S>> {
        &self.paths
    }

    pub fn grid(&self) -> &TimeGrid<S> {
        self.paths.grid()
    }

    pub fn num_paths(&self) -> usize {
        self.paths.num_paths()
    }

    pub fn dim(&self) -> usize {
        self.paths.dim()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// ΔW for path `m` over `[t_k, t_{k+1})`.
    pub fn increment(&self, path: usize, step: usize) -> &[S] {
        let d = self.dim();
        let base = (path * self.grid().num_steps() + step) * d;
        &self.increments[base..base + d]
    }

    pub fn initial_draw(&self, path: usize) -> &[S] {
        self.paths.state(path, 0)
    }

    /// Re-runs the Euler recursion from the stored initial draws and increments.
    pub fn replay<D: Diffusion<S> + ?Sized>(&self, diffusion: &D) -> Result<PathSet<S>> {
        let n = self.grid().num_steps();
        let d = self.dim();
        let stride = (n + 1) * d;
        let per_path: Vec<Result<Vec<S>>> = (0..self.num_paths())
            .into_par_iter()
            .map(|m| {
                let mut xs = vec![S::zero(); stride];
                xs[..d].copy_from_slice(self.initial_draw(m));
                euler_driftless(diffusion, self.grid(), &mut xs, m, |k, dw| {
                    dw.copy_from_slice(self.increment(m, k))
                })?;
                Ok(xs)
            })
            .collect();
        let mut states = Vec::with_capacity(stride * self.num_paths());
        for p in per_path {
            states.extend(p?);
        }
        PathSet::from_states(*self.grid(), d, states)
    }

    /// Writes the ensemble as CSV: a `M,N,d,T,seed` header line followed by one
    /// row of `(N+1)·d` states per path.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        const OP: &str = "paths::PathEnsemble::write_csv";
        let grid = self.grid();
        writeln!(out, "M,N,d,T,seed").map_err(|e| MfgError::io(OP, e))?;
        writeln!(
            out,
            "{},{},{},{},{}",
            self.num_paths(),
            grid.num_steps(),
            self.dim(),
            grid.horizon(),
            self.seed
        )
        .map_err(|e| MfgError::io(OP, e))?;
        let stride = (grid.num_steps() + 1) * self.dim();
        for row in self.paths.states().chunks_exact(stride) {
            let line: Vec<String> = row.iter().map(|v| format!("{:e}", v)).collect();
            writeln!(out, "{}", line.join(",")).map_err(|e| MfgError::io(OP, e))?;
        }
        Ok(())
    }
}

fn euler_driftless<S: Real, D: Diffusion<S> + ?Sized>(
    diffusion: &D,
    grid: &TimeGrid<S>,
    xs: &mut [S],
    path: usize,
    mut noise: impl FnMut(usize, &mut [S]),
) -> Result<()> {
    let d = diffusion.dim();
    let n = grid.num_steps();
    let dt = grid.dt();
    let mut integrals = vec![S::zero(); xs.len()];
    let mut sigma = vec![S::zero(); d * d];
    let mut dw = vec![S::zero(); d];
    let mut step = vec![S::zero(); d];
    for k in 0..n {
        if k > 0 {
            for i in 0..d {
                integrals[k * d + i] = integrals[(k - 1) * d + i] + xs[(k - 1) * d + i] * dt;
            }
        }
        noise(k, &mut dw);
        {
            let slice = PathSlice::new(xs, &integrals, k, d, dt);
            diffusion.volatility(grid.time(k), &slice, &mut sigma);
        }
        if sigma.iter().any(|s| !s.is_finite()) {
            return Err(MfgError::Simulation {
                op: "paths::simulate_driftless",
                step: k,
                path,
            });
        }
        linalg::mat_vec(&sigma, &dw, &mut step);
        for i in 0..d {
            xs[(k + 1) * d + i] = xs[k * d + i] + step[i];
        }
    }
    Ok(())
}

/// Per-path random stream derived from `(seed, path)`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates `M` paths of `dX = σ(t, X) dW`, `X₀ ~ λ₀`, by Euler–Maruyama.
/// Deterministic given the seed: path `m` uses its own stream `(seed, m)`.
pub fn simulate_driftless<S: Real, D: Diffusion<S> + ?Sized>(
    model: &D,
    grid: TimeGrid<S>,
    num_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<S>> {
    const OP: &str = "paths::simulate_driftless";
    if num_paths == 0 {
        return Err(MfgError::usage(OP, "need at least one path"));
    }
    let d = model.dim();
    let law = model.initial_law();
    if law.dim() != d {
        return Err(MfgError::usage(OP, "initial law dimension differs from the model"));
    }
    let sampler = law.sampler()?;
    let n = grid.num_steps();
    let stride = (n + 1) * d;
    let sqrt_dt = grid.dt().sqrt();

    let per_path: Vec<Result<(Vec<S>, Vec<S>)>> = (0..num_paths)
        .into_par_iter()
        .map(|m| {
            let mut rng = path_rng(seed, m as u64);
            let mut xs = vec![S::zero(); stride];
            sampler.sample(&mut rng, &mut xs[..d]);
            let mut incs = vec![S::zero(); n * d];
            euler_driftless(model, &grid, &mut xs, m, |k, dw| {
                for (i, w) in dw.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *w = S::of(z) * sqrt_dt;
                    incs[k * d + i] = *w;
                }
            })?;
            Ok((xs, incs))
        })
        .collect();

    let mut states = Vec::with_capacity(stride * num_paths);
    let mut increments = Vec::with_capacity(n * d * num_paths);
    for p in per_path {
        let (xs, incs) = p?;
        states.extend(xs);
        increments.extend(incs);
    }
    Ok(PathEnsemble {
        paths: Arc::new(PathSet::from_states(grid, d, states)?),
        increments,
        seed,
    })
}

/// Empirical `E[ψ²(X)]` over the ensemble for a growth gauge ψ.
pub fn gauge_square_moment<S: Real>(
    ensemble: &PathEnsemble<S>,
    gauge: impl Fn(&PathSlice<'_, S>) -> S + Sync,
) -> S {
    let paths = ensemble.paths();
    let total: S = (0..paths.num_paths())
        .map(|m| {
            let g = gauge(&paths.path(m));
            g * g
        })
        .sum();
    total / S::count(paths.num_paths())
}
