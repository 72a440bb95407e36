use serde::{Deserialize, Serialize};

use super::{clipped_quadratic_argmax, nonnegative, positive};
use crate::error::{MfgError, Result};
use crate::hamiltonian::{ControlSet, Model};
use crate::measures::MuView;
use crate::paths::{Diffusion, InitialLaw, PathSlice};
use crate::scalar::Real;

/// Continuous nondecreasing `G : [0, 1] → ℝ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum RankFunction {
    /// `G(u) = scale·u`.
    Linear { scale: f64 },
    /// `G(u) = scale·u^exponent`.
    Power { scale: f64, exponent: f64 },
    /// `G(u) = scale / (1 + exp(−steepness·(u − ½)))`.
    Logistic { scale: f64, steepness: f64 },
}

impl RankFunction {
    pub fn eval<S: Real>(&self, u: S) -> S {
        match *self {
            RankFunction::Linear { scale } => S::of(scale) * u,
            RankFunction::Power { scale, exponent } => S::of(scale) * u.powf(S::of(exponent)),
            RankFunction::Logistic { scale, steepness } => {
                S::of(scale) / (S::one() + (-S::of(steepness) * (u - S::of(0.5))).exp())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            RankFunction::Linear { scale } => scale.is_finite(),
            RankFunction::Power { scale, exponent } => scale.is_finite() && exponent > 0.0 && exponent.is_finite(),
            RankFunction::Logistic { scale, steepness } => scale.is_finite() && steepness.is_finite(),
        };
        // continuity, checked on a fine grid: no step may carry a visible share of the range
        let values: Vec<f64> = (0..=10_000).map(|i| self.eval(i as f64 / 10_000.0)).collect();
        let finite = values.iter().all(|v| v.is_finite());
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let jump = values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        if !ok || !finite || jump > 0.01 * (hi - lo) {
            return Err(MfgError::usage("models::rank", "rank function must be finite and continuous on [0, 1]"));
        }
        Ok(())
    }
}

/// `G(μ_t(−∞, x_t])` with the rank read off the first state component at the slice's step.
pub fn rank_reward<S: Real>(g: &RankFunction, x: &PathSlice<'_, S>, mu: &MuView<'_, S>) -> S {
    g.eval(mu.cdf(x.step(), x.current()[0]))
}

/// Rank-based competition: `dX = a dt + σ dW`,
/// `f = −k a² + G_run(μ_t(−∞, x_t])`, `g = G_term(μ_T(−∞, x_T])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankParams {
    pub cost: f64,
    pub running: RankFunction,
    pub terminal: RankFunction,
    pub sigma: f64,
    pub control_bound: f64,
    pub initial: InitialLaw<f64>,
}

impl Default for RankParams {
    fn default() -> Self {
        RankParams {
            cost: 1.0,
            running: RankFunction::Linear { scale: 0.0 },
            terminal: RankFunction::Linear { scale: 1.0 },
            sigma: 1.0,
            control_bound: 1.0,
            initial: InitialLaw::Gaussian {
                mean: vec![0.0],
                covariance: vec![1.0],
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rank<S: Real> {
    params: RankParams,
    cost: S,
    sigma: S,
    bound: S,
    control: ControlSet<S>,
    initial: InitialLaw<S>,
}

impl<S: Real> Rank<S> {
    pub fn new(params: RankParams) -> Result<Self> {
        const OP: &str = "models::rank";
        nonnegative(OP, "cost", params.cost)?;
        positive(OP, "sigma", params.sigma)?;
        nonnegative(OP, "control_bound", params.control_bound)?;
        params.running.validate()?;
        params.terminal.validate()?;
        let initial = params.initial.cast::<S>();
        initial.validate()?;
        if initial.dim() != 1 {
            return Err(MfgError::usage(OP, "the rank model is one-dimensional"));
        }
        let bound = S::of(params.control_bound);
        Ok(Rank {
            cost: S::of(params.cost),
            sigma: S::of(params.sigma),
            bound,
            control: ControlSet::interval(-bound, bound),
            initial,
            params,
        })
    }

    pub fn params(&self) -> &RankParams {
        &self.params
    }
}

impl<S: Real> Diffusion<S> for Rank<S> {
    fn dim(&self) -> usize {
        1
    }

    fn initial_law(&self) -> &InitialLaw<S> {
        &self.initial
    }

    fn volatility(&self, _t: S, _x: &PathSlice<'_, S>, out: &mut [S]) {
        out[0] = self.sigma;
    }
}

impl<S: Real> Model<S> for Rank<S> {
    fn name(&self) -> &str {
        "rank"
    }

    fn control_set(&self) -> &ControlSet<S> {
        &self.control
    }

    fn drift_bound(&self) -> S {
        self.bound / self.sigma
    }

    fn drift(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, a: &[S], out: &mut [S]) {
        out[0] = a[0];
    }

    fn scaled_drift(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, a: &[S], out: &mut [S]) {
        out[0] = a[0] / self.sigma;
    }

    fn reward_control(&self, _t: S, x: &PathSlice<'_, S>, mu: &MuView<'_, S>, a: &[S]) -> S {
        -self.cost * a[0] * a[0] + rank_reward(&self.params.running, x, mu)
    }

    fn terminal_reward(&self, x: &PathSlice<'_, S>, mu: &MuView<'_, S>) -> S {
        rank_reward(&self.params.terminal, x, mu)
    }

    fn analytic_argmax(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, z: &[S]) -> Option<Vec<S>> {
        Some(vec![clipped_quadratic_argmax(self.cost, z[0] / self.sigma, self.bound)])
    }

    fn concave_in_control(&self) -> bool {
        true
    }

    fn drift_depends_on_measure(&self) -> bool {
        false
    }
}
