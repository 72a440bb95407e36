use serde::{Deserialize, Serialize};

use super::{clipped_quadratic_argmax, nonnegative, positive};
use crate::error::{MfgError, Result};
use crate::hamiltonian::{ControlSet, Model};
use crate::measures::MuView;
use crate::paths::{Diffusion, InitialLaw, PathSlice};
use crate::scalar::Real;

/// Geometric dynamics `dX = a·X dt + σ̂·X dW`: the drift rate is controlled, so
/// `σ⁻¹b = a/σ̂` does not depend on the state.
///
/// Rewards: `f = −k a²`, `g = x_T + κ·(x_T − ∫x_T dμ)²`, so a player gains by
/// ending away from the population mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbmParams {
    pub cost: f64,
    pub sigma_hat: f64,
    pub control_bound: f64,
    /// κ, the reward for deviating from the population's terminal mean.
    pub deviation_reward: f64,
    pub initial: InitialLaw<f64>,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            cost: 1.0,
            sigma_hat: 0.3,
            control_bound: 0.5,
            deviation_reward: 0.0,
            initial: InitialLaw::point(vec![1.0]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gbm<S: Real> {
    params: GbmParams,
    cost: S,
    sigma_hat: S,
    bound: S,
    kappa: S,
    control: ControlSet<S>,
    initial: InitialLaw<S>,
}

impl<S: Real> Gbm<S> {
    pub fn new(params: GbmParams) -> Result<Self> {
        const OP: &str = "models::gbm";
        nonnegative(OP, "cost", params.cost)?;
        positive(OP, "sigma_hat", params.sigma_hat)?;
        nonnegative(OP, "control_bound", params.control_bound)?;
        nonnegative(OP, "deviation_reward", params.deviation_reward)?;
        let initial = params.initial.cast::<S>();
        initial.validate()?;
        if initial.dim() != 1 {
            return Err(MfgError::usage(OP, "the initial law must be one-dimensional"));
        }
        let bound = S::of(params.control_bound);
        Ok(Gbm {
            cost: S::of(params.cost),
            sigma_hat: S::of(params.sigma_hat),
            bound,
            kappa: S::of(params.deviation_reward),
            control: ControlSet::interval(-bound, bound),
            initial,
            params,
        })
    }

    pub fn params(&self) -> &GbmParams {
        &self.params
    }
}

impl<S: Real> Diffusion<S> for Gbm<S> {
    fn dim(&self) -> usize {
        1
    }

    fn initial_law(&self) -> &InitialLaw<S> {
        &self.initial
    }

    fn volatility(&self, _t: S, x: &PathSlice<'_, S>, out: &mut [S]) {
        out[0] = self.sigma_hat * x.current()[0];
    }
}

impl<S: Real> Model<S> for Gbm<S> {
    fn name(&self) -> &str {
        "gbm"
    }

    fn control_set(&self) -> &ControlSet<S> {
        &self.control
    }

    fn drift_bound(&self) -> S {
        self.bound / self.sigma_hat
    }

    fn drift(&self, _t: S, x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, a: &[S], out: &mut [S]) {
        out[0] = a[0] * x.current()[0];
    }

    fn scaled_drift(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, a: &[S], out: &mut [S]) {
        out[0] = a[0] / self.sigma_hat;
    }

    fn reward_control(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, a: &[S]) -> S {
        -self.cost * a[0] * a[0]
    }

    fn terminal_reward(&self, x: &PathSlice<'_, S>, mu: &MuView<'_, S>) -> S {
        let xt = x.current()[0];
        if self.kappa == S::zero() {
            return xt;
        }
        let mean = mu.mean_at(x.step(), |p| p.current()[0]);
        xt + self.kappa * (xt - mean) * (xt - mean)
    }

    fn analytic_argmax(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, z: &[S]) -> Option<Vec<S>> {
        Some(vec![clipped_quadratic_argmax(self.cost, z[0] / self.sigma_hat, self.bound)])
    }

    fn concave_in_control(&self) -> bool {
        true
    }

    fn drift_depends_on_measure(&self) -> bool {
        false
    }

    fn coupled(&self) -> bool {
        self.kappa != S::zero()
    }
}
