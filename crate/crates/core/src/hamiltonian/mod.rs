//! Model interface and the Hamiltonian `h = f + z·σ⁻¹b`, its supremum `H` over
//! the control set and the closed-loop policy built from a maximizer.

mod model;
mod policy;

use crate::error::{MfgError, Result};
use crate::measures::{MuView, QView};
use crate::paths::PathSlice;
use crate::scalar::{dot, norm, Real};

pub use model::{ControlSet, Model};
pub use policy::{policy_from_z, ClosedLoopPolicy, PolicyFn, ZField};

pub(crate) use model::distance;

/// Tuning of the numerical maximization used when a model has no closed-form argmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Points per axis of the exhaustive grid.
    pub resolution: usize,
    /// Points per axis of the coarse scan that brackets the golden-section search.
    pub coarse: usize,
    /// Maximum coordinate-ascent sweeps for concave multi-dimensional controls.
    pub max_sweeps: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            resolution: 129,
            coarse: 33,
            max_sweeps: 50,
        }
    }
}

/// A maximizer `a*` and the maximized Hamiltonian `H = h(a*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Maximizer<S> {
    pub control: Vec<S>,
    pub value: S,
}

fn checked_theta<S: Real>(
    model: &dyn Model<S>,
    t: S,
    x: &PathSlice<'_, S>,
    mu: &MuView<'_, S>,
    a: &[S],
    theta: &mut [S],
) -> Result<()> {
    model.scaled_drift(t, x, mu, a, theta);
    let size = norm(theta);
    let bound = model.drift_bound();
    if !size.is_finite() || size > bound * (S::one() + S::of(1e-9)) {
        return Err(MfgError::contract(
            "hamiltonian::scaled_drift",
            format!("|σ⁻¹b| = {} exceeds the declared bound {} at step {}", size, bound, x.step()),
        ));
    }
    Ok(())
}

/// `h(t, x, μ, q, z, a) = f₁ + f₂ + z·σ⁻¹b`.
pub fn hamiltonian_value<S: Real>(
    model: &dyn Model<S>,
    t: S,
    x: &PathSlice<'_, S>,
    mu: &MuView<'_, S>,
    q: &QView<'_, S>,
    z: &[S],
    a: &[S],
) -> Result<S> {
    if !model.control_set().contains(a) {
        return Err(MfgError::usage("hamiltonian::hamiltonian_value", "control outside the control set"));
    }
    let mut theta = vec![S::zero(); model.dim()];
    checked_theta(model, t, x, mu, a, &mut theta)?;
    Ok(model.reward_control(t, x, mu, a) + model.reward_flow(t, x, mu, q) + dot(z, &theta))
}

/// Evaluates `a ↦ f₁ + z·σ⁻¹b`; `None` marks a control with non-finite reward.
struct Objective<'m, 'x, 'v, S: Real> {
    model: &'m dyn Model<S>,
    t: S,
    x: &'x PathSlice<'x, S>,
    mu: &'v MuView<'v, S>,
    z: &'v [S],
    theta: Vec<S>,
    split: bool,
}

impl<'m, 'x, 'v, S: Real> Objective<'m, 'x, 'v, S> {
    fn new(model: &'m dyn Model<S>, t: S, x: &'x PathSlice<'x, S>, mu: &'v MuView<'v, S>, z: &'v [S]) -> Self {
        let probe = model.control_set().smallest();
        Objective {
            model,
            t,
            x,
            mu,
            z,
            theta: vec![S::zero(); model.dim()],
            split: model.control_part(t, x, &probe).is_some(),
        }
    }

    /// Objective used for ranking controls: differs from `f₁ + z·σ⁻¹b` by a
    /// control-independent constant when the model declares a reward split.
    fn eval(&mut self, a: &[S]) -> Result<Option<S>> {
        let f1 = if self.split {
            self.model.control_part(self.t, self.x, a).unwrap_or(S::nan())
        } else {
            self.model.reward_control(self.t, self.x, self.mu, a)
        };
        if !f1.is_finite() {
            return Ok(None);
        }
        checked_theta(self.model, self.t, self.x, self.mu, a, &mut self.theta)?;
        Ok(Some(f1 + dot(self.z, &self.theta)))
    }

    /// The true `f₁ + z·σ⁻¹b`.
    fn full(&mut self, a: &[S]) -> Result<Option<S>> {
        let f1 = self.model.reward_control(self.t, self.x, self.mu, a);
        if !f1.is_finite() {
            return Ok(None);
        }
        checked_theta(self.model, self.t, self.x, self.mu, a, &mut self.theta)?;
        Ok(Some(f1 + dot(self.z, &self.theta)))
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search of coordinate `axis` over `[lo, hi]`; returns the best
/// point seen, which only replaces `a` if it is strictly better than `best`.
fn golden_axis<S: Real>(
    obj: &mut Objective<'_, '_, '_, S>,
    a: &mut [S],
    best: &mut S,
    axis: usize,
    lo: S,
    hi: S,
) -> Result<()> {
    let score = |v: Option<S>| v.unwrap_or(S::neg_infinity());
    let mut probe = a.to_vec();
    let mut eval_at = |obj: &mut Objective<'_, '_, '_, S>, v: S| -> Result<S> {
        probe[axis] = v;
        Ok(score(obj.eval(&probe)?))
    };
    let r = S::of(INV_PHI);
    let (mut lo, mut hi) = (lo, hi);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = eval_at(obj, x1)?;
    let mut f2 = eval_at(obj, x2)?;
    let tol = S::epsilon().sqrt() * S::of(1e-4) * (S::one() + lo.abs().max(hi.abs()));
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        // ties move left, towards the lexicographically smaller end
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = eval_at(obj, x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = eval_at(obj, x2)?;
        }
    }
    let (xc, fc) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    if fc > *best {
        a[axis] = xc;
        *best = fc;
    }
    Ok(())
}

/// Exhaustive scan in lexicographic order; strict improvement keeps the smallest maximizer.
fn scan<S: Real>(obj: &mut Objective<'_, '_, '_, S>, candidates: &[S], dim: usize) -> Result<Option<(Vec<S>, S)>> {
    let mut best: Option<(usize, S)> = None;
    for (i, a) in candidates.chunks_exact(dim).enumerate() {
        if let Some(v) = obj.eval(a)? {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    Ok(best.map(|(i, v)| (candidates[i * dim..(i + 1) * dim].to_vec(), v)))
}

/// A maximizer of `f₁ + z·σ⁻¹b` over A and the attained value (without `f₂`).
///
/// Order of preference: the model's closed form, a bracketed golden-section
/// search for concave models, otherwise a grid scan with one local refinement.
/// Ties resolve to the lexicographically smallest candidate examined.
pub fn argmax_control<S: Real>(
    model: &dyn Model<S>,
    t: S,
    x: &PathSlice<'_, S>,
    mu: &MuView<'_, S>,
    z: &[S],
    search: &SearchConfig,
) -> Result<(Vec<S>, S)> {
    const OP: &str = "hamiltonian::maximize_hamiltonian";
    let mut obj = Objective::new(model, t, x, mu, z);
    let a = select(&mut obj, search)?;
    match obj.full(&a)? {
        Some(v) => Ok((a, v)),
        None => Err(MfgError::contract(OP, "reward split disagrees with the full reward")),
    }
}

/// The same maximizer as [`argmax_control`] without evaluating the Hamiltonian there.
pub(crate) fn argmax_only<S: Real>(
    model: &dyn Model<S>,
    t: S,
    x: &PathSlice<'_, S>,
    mu: &MuView<'_, S>,
    z: &[S],
    search: &SearchConfig,
) -> Result<Vec<S>> {
    select(&mut Objective::new(model, t, x, mu, z), search)
}

fn select<S: Real>(obj: &mut Objective<'_, '_, '_, S>, search: &SearchConfig) -> Result<Vec<S>> {
    const OP: &str = "hamiltonian::maximize_hamiltonian";
    let model = obj.model;
    let set = model.control_set();
    if let Some(a) = model.analytic_argmax(obj.t, obj.x, obj.mu, obj.z) {
        if !set.contains(&a) {
            return Err(MfgError::contract(OP, "closed-form argmax left the control set"));
        }
        if obj.eval(&a)?.is_none() {
            return Err(MfgError::contract(OP, "closed-form argmax has a non-finite reward"));
        }
        return Ok(a);
    }
    search_argmax(obj, set, search)
}

fn search_argmax<S: Real>(obj: &mut Objective<'_, '_, '_, S>, set: &ControlSet<S>, search: &SearchConfig) -> Result<Vec<S>> {
    const OP: &str = "hamiltonian::maximize_hamiltonian";
    let da = set.dim();
    let model = obj.model;

    let (lower, upper) = match set {
        ControlSet::Finite { points, .. } => {
            return scan(obj, points, da)?.map(|(a, _)| a).ok_or(MfgError::Infeasible { op: OP });
        }
        ControlSet::Box { lower, upper } => (lower, upper),
    };

    if model.concave_in_control() {
        let coarse = if da <= 2 { search.coarse } else { 9 };
        let (mut a, mut best) = scan(obj, &set.grid(coarse), da)?.ok_or(MfgError::Infeasible { op: OP })?;
        let res = coarse.max(2);
        if da == 1 {
            let h = (upper[0] - lower[0]) / S::count(res - 1);
            let lo = (a[0] - h).max(lower[0]);
            let hi = (a[0] + h).min(upper[0]);
            golden_axis(obj, &mut a, &mut best, 0, lo, hi)?;
        } else {
            for _ in 0..search.max_sweeps {
                let before = best;
                for i in 0..da {
                    golden_axis(obj, &mut a, &mut best, i, lower[i], upper[i])?;
                }
                if best - before <= S::epsilon() * (S::one() + best.abs()) {
                    break;
                }
            }
        }
        return Ok(a);
    }

    let res = search.resolution.max(2);
    let (mut a, mut best) = scan(obj, &set.grid(res), da)?.ok_or(MfgError::Infeasible { op: OP })?;
    for i in 0..da {
        let h = (upper[i] - lower[i]) / S::count(res - 1);
        let lo = (a[i] - h).max(lower[i]);
        let hi = (a[i] + h).min(upper[i]);
        golden_axis(obj, &mut a, &mut best, i, lo, hi)?;
    }
    Ok(a)
}

/// `(a*, H)` with `H = sup_a h(t, x, μ, q, z, a)`. The maximizer ignores `q`;
/// `f₂(q)` is added afterwards.
pub fn maximize_hamiltonian<S: Real>(
    model: &dyn Model<S>,
    t: S,
    x: &PathSlice<'_, S>,
    mu: &MuView<'_, S>,
    q: &QView<'_, S>,
    z: &[S],
) -> Result<Maximizer<S>> {
    maximize_hamiltonian_with(model, t, x, mu, q, z, &SearchConfig::default())
}

pub fn maximize_hamiltonian_with<S: Real>(
    model: &dyn Model<S>,
    t: S,
    x: &PathSlice<'_, S>,
    mu: &MuView<'_, S>,
    q: &QView<'_, S>,
    z: &[S],
    search: &SearchConfig,
) -> Result<Maximizer<S>> {
    let (control, value) = argmax_control(model, t, x, mu, z, search)?;
    let value = value + model.reward_flow(t, x, mu, q);
    if !value.is_finite() {
        return Err(MfgError::non_finite("hamiltonian::maximize_hamiltonian", format!("H = {}", value)));
    }
    Ok(Maximizer { control, value })
}

/// Diameter of the set of grid controls within `tol·(1 + |H|)` of the grid maximum
/// (bounding-box diagonal). Large values flag a non-unique argmax.
pub fn argmax_spread<S: Real>(
    model: &dyn Model<S>,
    t: S,
    x: &PathSlice<'_, S>,
    mu: &MuView<'_, S>,
    z: &[S],
    resolution: usize,
    tol: S,
) -> Result<S> {
    let set = model.control_set();
    let da = set.dim();
    let mut obj = Objective::new(model, t, x, mu, z);
    let grid = set.grid(resolution);
    let mut values = Vec::with_capacity(grid.len() / da);
    for a in grid.chunks_exact(da) {
        values.push(obj.eval(a)?.unwrap_or(S::neg_infinity()));
    }
    let top = values.iter().copied().fold(S::neg_infinity(), S::max);
    if !top.is_finite() {
        return Err(MfgError::Infeasible { op: "hamiltonian::argmax_spread" });
    }
    let cut = top - tol * (S::one() + top.abs());
    let mut lo = vec![S::infinity(); da];
    let mut hi = vec![S::neg_infinity(); da];
    for (a, &v) in grid.chunks_exact(da).zip(&values) {
        if v >= cut {
            for i in 0..da {
                lo[i] = lo[i].min(a[i]);
                hi[i] = hi[i].max(a[i]);
            }
        }
    }
    Ok(distance(&lo, &hi))
}
