use serde::{Deserialize, Serialize};

use super::{clipped_quadratic_argmax, nonnegative, positive};
use crate::error::{MfgError, Result};
use crate::hamiltonian::{ControlSet, Model};
use crate::linalg;
use crate::measures::MuView;
use crate::paths::{Diffusion, InitialLaw, PathSlice};
use crate::scalar::Real;

/// How a bird weighs the velocities of the others.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Interaction {
    /// `φ(r) = scale·(1 + r²)^{-β}` applied to the distance between positions.
    CuckerSmale { scale: f64, beta: f64 },
    /// Average over the closed ball of the given radius around the own position.
    NearestNeighbor { radius: f64, scale: f64 },
    /// Average over the smallest ball holding mass `fraction`.
    KNearest { fraction: f64, scale: f64 },
}

/// Velocity-controlled flocking: the state is the velocity `dV = a dt + σ dW`,
/// positions are running integrals of the velocity starting at the origin.
///
/// `f = −aᵀRa − wᵀQw` where `w` is the weighted average of `(v′_t − v_t)` under
/// the interaction rule; there is no terminal reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlockingParams {
    pub dim: usize,
    /// Row-major `d × d`; identity when absent.
    pub q: Option<Vec<f64>>,
    /// Row-major `d × d`; identity when absent.
    pub r: Option<Vec<f64>>,
    pub interaction: Interaction,
    pub sigma: f64,
    pub control_bound: f64,
    /// Standard Gaussian velocities when absent.
    pub initial: Option<InitialLaw<f64>>,
}

impl Default for FlockingParams {
    fn default() -> Self {
        FlockingParams {
            dim: 1,
            q: None,
            r: None,
            interaction: Interaction::CuckerSmale { scale: 1.0, beta: 0.0 },
            sigma: 1.0,
            control_bound: 1.0,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Rule<S> {
    CuckerSmale { scale: S, beta: S },
    NearestNeighbor { radius: S, scale: S },
    KNearest { fraction: S, scale: S },
}

#[derive(Debug, Clone)]
pub struct Flocking<S: Real> {
    params: FlockingParams,
    dim: usize,
    q: Vec<S>,
    r: Vec<S>,
    r_diagonal: bool,
    rule: Rule<S>,
    sigma: S,
    bound: S,
    control: ControlSet<S>,
    initial: InitialLaw<S>,
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

impl<S: Real> Flocking<S> {
    pub fn new(params: FlockingParams) -> Result<Self> {
        const OP: &str = "models::flocking";
        let d = params.dim;
        if d == 0 {
            return Err(MfgError::usage(OP, "dimension must be positive"));
        }
        let q = params.q.clone().unwrap_or_else(|| identity(d));
        let r = params.r.clone().unwrap_or_else(|| identity(d));
        for (name, m) in [("Q", &q), ("R", &r)] {
            if m.len() != d * d || !linalg::is_psd(m, d) {
                return Err(MfgError::usage(OP, format!("{} must be a positive semidefinite {}x{} matrix", name, d, d)));
            }
        }
        let rule = match params.interaction {
            Interaction::CuckerSmale { scale, beta } => {
                nonnegative(OP, "scale", scale)?;
                nonnegative(OP, "beta", beta)?;
                Rule::CuckerSmale {
                    scale: S::of(scale),
                    beta: S::of(beta),
                }
            }
            Interaction::NearestNeighbor { radius, scale } => {
                positive(OP, "radius", radius)?;
                nonnegative(OP, "scale", scale)?;
                Rule::NearestNeighbor {
                    radius: S::of(radius),
                    scale: S::of(scale),
                }
            }
            Interaction::KNearest { fraction, scale } => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(MfgError::usage(OP, format!("fraction must lie in (0, 1), got {}", fraction)));
                }
                nonnegative(OP, "scale", scale)?;
                Rule::KNearest {
                    fraction: S::of(fraction),
                    scale: S::of(scale),
                }
            }
        };
        positive(OP, "sigma", params.sigma)?;
        nonnegative(OP, "control_bound", params.control_bound)?;
        let initial = match &params.initial {
            Some(law) => law.cast::<S>(),
            None => InitialLaw::Gaussian {
                mean: vec![S::zero(); d],
                covariance: identity(d).into_iter().map(S::of).collect(),
            },
        };
        initial.validate()?;
        if initial.dim() != d {
            return Err(MfgError::usage(OP, "initial law dimension differs from `dim`"));
        }
        let r_diagonal = (0..d).all(|i| (0..d).all(|j| i == j || r[i * d + j] == 0.0));
        let control = ControlSet::cube(d, S::of(-params.control_bound), S::of(params.control_bound));
        let sigma = S::of(params.sigma);
        Ok(Flocking {
            dim: d,
            q: q.into_iter().map(S::of).collect(),
            r: r.into_iter().map(S::of).collect(),
            r_diagonal,
            rule,
            sigma,
            bound: control.max_norm() / sigma,
            control,
            initial,
            params,
        })
    }

    pub fn params(&self) -> &FlockingParams {
        &self.params
    }

    /// The alignment vector `w` of the slice's velocity against the flock μ at the slice's step.
    pub fn alignment(&self, x: &PathSlice<'_, S>, mu: &MuView<'_, S>) -> Vec<S> {
        let k = x.step();
        let v = x.current();
        let pos = x.iota();
        let d = self.dim;
        if d == 1 {
            let line = mu.integral_line(k);
            let full = (0, line.len());
            let w = match self.rule {
                Rule::CuckerSmale { scale, beta } if beta == S::zero() => {
                    let (mass, sum) = line.range_sums(full);
                    scale * (sum - v[0] * mass) / mass
                }
                Rule::NearestNeighbor { radius, scale } => {
                    let (mass, sum) = line.range_sums(line.ball(pos[0], radius));
                    if mass > S::zero() {
                        scale * (sum - v[0] * mass) / mass
                    } else {
                        S::zero()
                    }
                }
                Rule::KNearest { fraction, scale } => {
                    let radius = line.quantile_radius(pos[0], fraction).unwrap_or(S::zero());
                    let (mass, sum) = line.range_sums(line.ball(pos[0], radius));
                    scale / fraction * (sum - v[0] * mass) / line.total_weight()
                }
                Rule::CuckerSmale { .. } => self.weighted_sum(x, mu)[0],
            };
            return vec![w];
        }
        match self.rule {
            Rule::KNearest { fraction, scale } => {
                let radius = mu.integral_quantile_radius(k, pos, fraction).unwrap_or(S::zero());
                let (mass, total, sum) = self.ball_sums(x, mu, radius);
                sum.iter().zip(v).map(|(&s, &vi)| scale / fraction * (s - vi * mass) / total).collect()
            }
            Rule::NearestNeighbor { radius, scale } => {
                let (mass, _, sum) = self.ball_sums(x, mu, radius);
                if mass > S::zero() {
                    sum.iter().zip(v).map(|(&s, &vi)| scale * (s - vi * mass) / mass).collect()
                } else {
                    vec![S::zero(); d]
                }
            }
            Rule::CuckerSmale { .. } => self.weighted_sum(x, mu),
        }
    }

    /// Weight, total weight and weighted velocity sum over the closed position ball.
    fn ball_sums(&self, x: &PathSlice<'_, S>, mu: &MuView<'_, S>, radius: S) -> (S, S, Vec<S>) {
        let k = x.step();
        let pos = x.iota();
        let mut mass = S::zero();
        let mut total = S::zero();
        let mut sum = vec![S::zero(); self.dim];
        for m in 0..mu.num_atoms() {
            let w = mu.weight(m);
            total += w;
            if crate::hamiltonian::distance(mu.integral(m, k), pos) <= radius {
                mass += w;
                for (s, &vm) in sum.iter_mut().zip(mu.state(m, k)) {
                    *s += w * vm;
                }
            }
        }
        (mass, total, sum)
    }

    /// Cucker–Smale average `Σ w φ(|ι′ − ι|)(v′ − v) / Σ w`.
    fn weighted_sum(&self, x: &PathSlice<'_, S>, mu: &MuView<'_, S>) -> Vec<S> {
        let (scale, beta) = match self.rule {
            Rule::CuckerSmale { scale, beta } => (scale, beta),
            _ => unreachable!("weighted_sum is only used for Cucker–Smale weights"),
        };
        let k = x.step();
        let pos = x.iota();
        let v = x.current();
        let mut total = S::zero();
        let mut mass = S::zero();
        let mut sum = vec![S::zero(); self.dim];
        for m in 0..mu.num_atoms() {
            let w = mu.weight(m);
            total += w;
            let phi = if beta == S::zero() {
                S::one()
            } else {
                let r2: S = mu.integral(m, k).iter().zip(pos).map(|(&a, &b)| (a - b) * (a - b)).sum();
                if beta == S::one() {
                    (S::one() + r2).recip()
                } else {
                    (S::one() + r2).powf(-beta)
                }
            };
            mass += w * phi;
            for (s, &vm) in sum.iter_mut().zip(mu.state(m, k)) {
                *s += w * phi * vm;
            }
        }
        sum.iter().zip(v).map(|(&s, &vi)| scale * (s - vi * mass) / total).collect()
    }
}

impl<S: Real> Diffusion<S> for Flocking<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn initial_law(&self) -> &InitialLaw<S> {
        &self.initial
    }

    fn volatility(&self, _t: S, _x: &PathSlice<'_, S>, out: &mut [S]) {
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = S::zero());
        for i in 0..d {
            out[i * d + i] = self.sigma;
        }
    }
}

impl<S: Real> Model<S> for Flocking<S> {
    fn name(&self) -> &str {
        "flocking"
    }

    fn control_set(&self) -> &ControlSet<S> {
        &self.control
    }

    fn drift_bound(&self) -> S {
        self.bound
    }

    fn drift(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, a: &[S], out: &mut [S]) {
        out.copy_from_slice(a);
    }

    fn scaled_drift(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, a: &[S], out: &mut [S]) {
        for (o, &ai) in out.iter_mut().zip(a) {
            *o = ai / self.sigma;
        }
    }

    fn reward_control(&self, _t: S, x: &PathSlice<'_, S>, mu: &MuView<'_, S>, a: &[S]) -> S {
        let w = self.alignment(x, mu);
        -linalg::quad_form(&self.r, a) - linalg::quad_form(&self.q, &w)
    }

    fn control_part(&self, _t: S, _x: &PathSlice<'_, S>, a: &[S]) -> Option<S> {
        Some(-linalg::quad_form(&self.r, a))
    }

    fn terminal_reward(&self, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>) -> S {
        S::zero()
    }

    fn analytic_argmax(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, z: &[S]) -> Option<Vec<S>> {
        if !self.r_diagonal {
            return None;
        }
        let d = self.dim;
        let b = S::of(self.params.control_bound);
        Some((0..d).map(|i| clipped_quadratic_argmax(self.r[i * d + i], z[i] / self.sigma, b)).collect())
    }

    fn concave_in_control(&self) -> bool {
        true
    }

    fn drift_depends_on_measure(&self) -> bool {
        false
    }

    fn num_regression_features(&self) -> usize {
        self.dim
    }

    fn regression_features(&self, x: &PathSlice<'_, S>, out: &mut [S]) {
        out[..self.dim].copy_from_slice(x.iota());
    }
}
