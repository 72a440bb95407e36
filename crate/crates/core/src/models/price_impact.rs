use serde::{Deserialize, Serialize};

use super::{clipped_quadratic_argmax, nonnegative, positive};
use crate::error::{MfgError, Result};
use crate::hamiltonian::{ControlSet, Model};
use crate::measures::{MuView, QView};
use crate::paths::{Diffusion, InitialLaw, PathSlice};
use crate::scalar::Real;

/// Transaction cost `c(a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TransactionCost {
    /// `c(a) = scale·a²`.
    Quadratic { scale: f64 },
    /// `scale·a²` up to `|a| ≤ max_volume`, infinite beyond: volume that the book cannot supply.
    FiniteVolume { scale: f64, max_volume: f64 },
}

impl TransactionCost {
    fn scale(&self) -> f64 {
        match *self {
            TransactionCost::Quadratic { scale } | TransactionCost::FiniteVolume { scale, .. } => scale,
        }
    }

    fn max_volume(&self) -> Option<f64> {
        match *self {
            TransactionCost::Quadratic { .. } => None,
            TransactionCost::FiniteVolume { max_volume, .. } => Some(max_volume),
        }
    }
}

/// Risk-neutral inventory control with permanent price impact.
///
/// The state is the inventory `dX = a dt + σ dW`. Rewards are
/// `f = γ·x_t·⟨c′, q_t⟩ − c(a) − φ·x_t²` and `g = −κ·x_T²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriceImpactParams {
    pub gamma: f64,
    pub cost: TransactionCost,
    /// φ in the running agency cost `φ·x²`.
    pub running_penalty: f64,
    /// κ in the terminal agency cost `κ·x_T²`.
    pub terminal_penalty: f64,
    pub sigma: f64,
    pub control_bound: f64,
    pub initial: InitialLaw<f64>,
    /// `c₁` in the growth gauge `ψ(x) = exp(c₁·sup|x|)`.
    pub gauge_rate: f64,
}

impl Default for PriceImpactParams {
    fn default() -> Self {
        PriceImpactParams {
            gamma: 1.0,
            cost: TransactionCost::Quadratic { scale: 1.0 },
            running_penalty: 0.0,
            terminal_penalty: 0.5,
            sigma: 1.0,
            control_bound: 1.0,
            initial: InitialLaw::point(vec![1.0]),
            gauge_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PriceImpact<S: Real> {
    params: PriceImpactParams,
    gamma: S,
    scale: S,
    max_volume: Option<S>,
    running: S,
    terminal: S,
    sigma: S,
    bound: S,
    gauge_rate: S,
    control: ControlSet<S>,
    initial: InitialLaw<S>,
}

impl<S: Real> PriceImpact<S> {
    pub fn new(params: PriceImpactParams) -> Result<Self> {
        const OP: &str = "models::price_impact";
        nonnegative(OP, "gamma", params.gamma)?;
        nonnegative(OP, "cost scale", params.cost.scale())?;
        if let Some(v) = params.cost.max_volume() {
            positive(OP, "max_volume", v)?;
        }
        nonnegative(OP, "running_penalty", params.running_penalty)?;
        nonnegative(OP, "terminal_penalty", params.terminal_penalty)?;
        positive(OP, "sigma", params.sigma)?;
        nonnegative(OP, "control_bound", params.control_bound)?;
        nonnegative(OP, "gauge_rate", params.gauge_rate)?;
        let initial = params.initial.cast::<S>();
        initial.validate()?;
        if initial.dim() != 1 {
            return Err(MfgError::usage(OP, "the initial law must be one-dimensional"));
        }
        let bound = S::of(params.control_bound);
        Ok(PriceImpact {
            gamma: S::of(params.gamma),
            scale: S::of(params.cost.scale()),
            max_volume: params.cost.max_volume().map(S::of),
            running: S::of(params.running_penalty),
            terminal: S::of(params.terminal_penalty),
            sigma: S::of(params.sigma),
            bound,
            gauge_rate: S::of(params.gauge_rate),
            control: ControlSet::interval(-bound, bound),
            initial,
            params,
        })
    }

    pub fn params(&self) -> &PriceImpactParams {
        &self.params
    }

    /// `c(a)`, infinite for volumes the book cannot absorb.
    pub fn cost(&self, a: S) -> S {
        match self.max_volume {
            Some(v) if a.abs() > v => S::infinity(),
            _ => self.scale * a * a,
        }
    }

    /// `c′(a)`.
    pub fn marginal_cost(&self, a: S) -> S {
        S::of(2.0) * self.scale * a
    }

    /// `⟨c′, q⟩`.
    pub fn mean_marginal_cost(&self, q: &QView<'_, S>) -> S {
        q.mean(|a| self.marginal_cost(a[0]))
    }

    /// Full running reward `f(t, x, μ, q, a)`.
    pub fn running_reward(&self, x: &PathSlice<'_, S>, q: &QView<'_, S>, a: S) -> S {
        let xt = x.current()[0];
        self.gamma * xt * self.mean_marginal_cost(q) - self.cost(a) - self.running * xt * xt
    }
}

impl<S: Real> Diffusion<S> for PriceImpact<S> {
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

impl<S: Real> Model<S> for PriceImpact<S> {
    fn name(&self) -> &str {
        "price_impact"
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

    fn reward_control(&self, _t: S, x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, a: &[S]) -> S {
        let xt = x.current()[0];
        -self.cost(a[0]) - self.running * xt * xt
    }

    fn reward_flow(&self, _t: S, x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, q: &QView<'_, S>) -> S {
        self.gamma * x.current()[0] * self.mean_marginal_cost(q)
    }

    fn flow_reward_vanishes(&self) -> bool {
        self.gamma == S::zero()
    }

    fn terminal_reward(&self, x: &PathSlice<'_, S>, _mu: &MuView<'_, S>) -> S {
        let v = x.current()[0];
        -self.terminal * v * v
    }

    fn growth_gauge(&self, x: &PathSlice<'_, S>) -> S {
        (self.gauge_rate * x.sup_norm()).exp()
    }

    fn analytic_argmax(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, z: &[S]) -> Option<Vec<S>> {
        let reach = match self.max_volume {
            Some(v) => v.min(self.bound),
            None => self.bound,
        };
        Some(vec![clipped_quadratic_argmax(self.scale, z[0] / self.sigma, reach)])
    }

    fn concave_in_control(&self) -> bool {
        true
    }

    fn drift_depends_on_measure(&self) -> bool {
        false
    }

    fn coupled(&self) -> bool {
        self.gamma != S::zero()
    }
}
