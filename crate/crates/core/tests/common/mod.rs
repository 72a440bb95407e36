//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use weak_mfg::hamiltonian::Model;
use weak_mfg::models::build_model;

pub fn model(name: &str, params: serde_json::Value) -> Arc<dyn Model<f64>> {
    build_model::<f64>(name, &params).unwrap()
}

/// Clipped-LQ problem data for the PDE oracle.
#[derive(Debug, Clone, Copy)]
pub struct LqData {
    pub cost: f64,
    pub bound: f64,
    pub sigma: f64,
    /// `g(x) = c0 + c1·x + c2·x²`.
    pub terminal: [f64; 3],
    pub x0: f64,
    pub horizon: f64,
}

impl LqData {
    pub fn params(&self) -> serde_json::Value {
        serde_json::json!({
            "cost": self.cost,
            "control_bound": self.bound,
            "sigma": self.sigma,
            "terminal": {"shift": self.terminal[0], "slope": self.terminal[1], "curvature": self.terminal[2]},
            "initial": {"kind": "point_mass", "at": [self.x0]},
        })
    }

    /// sup over |a| ≤ bound of −k a² + a p.
    fn hamiltonian(&self, p: f64) -> f64 {
        let k = self.cost;
        if k == 0.0 {
            return self.bound * p.abs();
        }
        let a = (p / (2.0 * k)).clamp(-self.bound, self.bound);
        -k * a * a + a * p
    }
}

/// `u(0, x0)` for `u_t + ½σ²u_xx + H(u_x) = 0`, `u(T) = g`, on a uniform grid of
/// `nx` cells over `x0 ± half_width`, with `nt` steps: explicit in `H`
/// (central differences), implicit in the diffusion (Thomas algorithm).
/// Boundary rows carry the curvature of `g`.
pub fn lq_pde_value(data: &LqData, half_width: f64, nx: usize, nt: usize) -> f64 {
    let lo = data.x0 - half_width;
    let dx = 2.0 * half_width / nx as f64;
    let dt = data.horizon / nt as f64;
    let [c0, c1, c2] = data.terminal;
    let xs: Vec<f64> = (0..=nx).map(|j| lo + j as f64 * dx).collect();
    let mut u: Vec<f64> = xs.iter().map(|&x| c0 + c1 * x + c2 * x * x).collect();
    let diff = 0.5 * data.sigma * data.sigma * dt / (dx * dx);
    let n = nx + 1;
    let (mut cp, mut dp) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..nt {
        let mut v = u.clone();
        for j in 1..nx {
            let p = (u[j + 1] - u[j - 1]) / (2.0 * dx);
            v[j] += dt * data.hamiltonian(p);
        }
        let edge = dt * data.sigma * data.sigma * c2;
        v[0] = u[0] + edge + dt * data.hamiltonian((u[1] - u[0]) / dx);
        v[nx] = u[nx] + edge + dt * data.hamiltonian((u[nx] - u[nx - 1]) / dx);
        // tridiagonal: rows 1..nx-1 are (-diff, 1 + 2 diff, -diff); boundary rows are identity
        cp[0] = 0.0;
        dp[0] = v[0];
        for j in 1..n {
            let (a, b, c) = if j == nx { (0.0, 1.0, 0.0) } else { (-diff, 1.0 + 2.0 * diff, -diff) };
            let m = b - a * cp[j - 1];
            cp[j] = c / m;
            dp[j] = (v[j] - a * dp[j - 1]) / m;
        }
        u[nx] = dp[nx];
        for j in (0..nx).rev() {
            u[j] = dp[j] - cp[j] * u[j + 1];
        }
    }
    let j = ((data.x0 - lo) / dx).round() as usize;
    u[j]
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

use weak_mfg::hamiltonian::ControlSet;
use weak_mfg::measures::{MuView, QView};
use weak_mfg::paths::{Diffusion, InitialLaw, PathSlice};

/// Delegates to a model but hides its closed-form argmax (and reward split),
/// forcing the numerical search. `concave` selects golden section or grid scan.
pub struct Searched {
    pub inner: Arc<dyn Model<f64>>,
    pub concave: bool,
}

impl Diffusion<f64> for Searched {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn initial_law(&self) -> &InitialLaw<f64> {
        self.inner.initial_law()
    }
    fn volatility(&self, t: f64, x: &PathSlice<'_, f64>, out: &mut [f64]) {
        self.inner.volatility(t, x, out)
    }
}

impl Model<f64> for Searched {
    fn name(&self) -> &str {
        "searched"
    }
    fn control_set(&self) -> &ControlSet<f64> {
        self.inner.control_set()
    }
    fn drift_bound(&self) -> f64 {
        self.inner.drift_bound()
    }
    fn drift(&self, t: f64, x: &PathSlice<'_, f64>, mu: &MuView<'_, f64>, a: &[f64], out: &mut [f64]) {
        self.inner.drift(t, x, mu, a, out)
    }
    fn scaled_drift(&self, t: f64, x: &PathSlice<'_, f64>, mu: &MuView<'_, f64>, a: &[f64], out: &mut [f64]) {
        self.inner.scaled_drift(t, x, mu, a, out)
    }
    fn reward_control(&self, t: f64, x: &PathSlice<'_, f64>, mu: &MuView<'_, f64>, a: &[f64]) -> f64 {
        self.inner.reward_control(t, x, mu, a)
    }
    fn reward_flow(&self, t: f64, x: &PathSlice<'_, f64>, mu: &MuView<'_, f64>, q: &QView<'_, f64>) -> f64 {
        self.inner.reward_flow(t, x, mu, q)
    }
    fn flow_reward_vanishes(&self) -> bool {
        self.inner.flow_reward_vanishes()
    }
    fn terminal_reward(&self, x: &PathSlice<'_, f64>, mu: &MuView<'_, f64>) -> f64 {
        self.inner.terminal_reward(x, mu)
    }
    fn concave_in_control(&self) -> bool {
        self.concave
    }
    fn drift_depends_on_measure(&self) -> bool {
        self.inner.drift_depends_on_measure()
    }
    fn coupled(&self) -> bool {
        self.inner.coupled()
    }
}
