use serde::{Deserialize, Serialize};

use super::{clipped_quadratic_argmax, nonnegative, positive};
use crate::error::Result;
use crate::hamiltonian::{ControlSet, Model};
use crate::measures::MuView;
use crate::paths::{Diffusion, InitialLaw, PathSlice};
use crate::scalar::Real;

/// `g(x) = shift + slope·x_T + curvature·x_T²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticTerminal {
    pub shift: f64,
    pub slope: f64,
    pub curvature: f64,
}

impl Default for QuadraticTerminal {
    fn default() -> Self {
        QuadraticTerminal {
            shift: 0.0,
            slope: 1.0,
            curvature: 0.0,
        }
    }
}

/// One-dimensional `dX = a dt + σ dW`, `f = -k a²`, `A = [-bound, bound]`,
/// quadratic terminal reward. No mean-field interaction at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClippedLqParams {
    pub cost: f64,
    pub control_bound: f64,
    pub sigma: f64,
    pub terminal: QuadraticTerminal,
    pub initial: InitialLaw<f64>,
}

impl Default for ClippedLqParams {
    fn default() -> Self {
        ClippedLqParams {
            cost: 1.0,
            control_bound: 1.0,
            sigma: 1.0,
            terminal: QuadraticTerminal::default(),
            initial: InitialLaw::point(vec![1.0]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClippedLq<S: Real> {
    params: ClippedLqParams,
    cost: S,
    bound: S,
    sigma: S,
    terminal: [S; 3],
    control: ControlSet<S>,
    initial: InitialLaw<S>,
}

impl<S: Real> ClippedLq<S> {
    pub fn new(params: ClippedLqParams) -> Result<Self> {
        const OP: &str = "models::clipped_lq";
        nonnegative(OP, "cost", params.cost)?;
        nonnegative(OP, "control_bound", params.control_bound)?;
        positive(OP, "sigma", params.sigma)?;
        let initial = params.initial.cast::<S>();
        initial.validate()?;
        if initial.dim() != 1 {
            return Err(crate::MfgError::usage(OP, "the initial law must be one-dimensional"));
        }
        let b = S::of(params.control_bound);
        Ok(ClippedLq {
            cost: S::of(params.cost),
            bound: b,
            sigma: S::of(params.sigma),
            terminal: [
                S::of(params.terminal.shift),
                S::of(params.terminal.slope),
                S::of(params.terminal.curvature),
            ],
            control: ControlSet::interval(-b, b),
            initial,
            params,
        })
    }

    pub fn params(&self) -> &ClippedLqParams {
        &self.params
    }
}

impl<S: Real> Diffusion<S> for ClippedLq<S> {
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

impl<S: Real> Model<S> for ClippedLq<S> {
    fn name(&self) -> &str {
        "clipped_lq"
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

    fn reward_control(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, a: &[S]) -> S {
        -self.cost * a[0] * a[0]
    }

    fn terminal_reward(&self, x: &PathSlice<'_, S>, _mu: &MuView<'_, S>) -> S {
        let v = x.current()[0];
        self.terminal[0] + self.terminal[1] * v + self.terminal[2] * v * v
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

    fn coupled(&self) -> bool {
        false
    }
}
