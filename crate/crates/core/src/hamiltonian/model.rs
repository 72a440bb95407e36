use crate::linalg;
use crate::measures::{MuView, QView};
use crate::paths::{Diffusion, PathSlice};
use crate::scalar::Real;

/// Compact control set `A ⊂ ℝ^{d_A}`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet<S> {
    /// Axis-aligned box `[lower, upper]`.
    Box { lower: Vec<S>, upper: Vec<S> },
    /// Finitely many points, row-major, kept in lexicographic order.
    Finite { dim: usize, points: Vec<S> },
}

impl<S: Real> ControlSet<S> {
    pub fn interval(lower: S, upper: S) -> Self {
        assert!(lower <= upper, "empty control interval");
        ControlSet::Box {
            lower: vec![lower],
            upper: vec![upper],
        }
    }

    pub fn cube(dim: usize, lower: S, upper: S) -> Self {
        assert!(lower <= upper, "empty control box");
        ControlSet::Box {
            lower: vec![lower; dim],
            upper: vec![upper; dim],
        }
    }

    /// A finite set; the points are sorted lexicographically and deduplicated.
    pub fn finite(dim: usize, points: Vec<S>) -> Self {
        assert!(dim > 0 && !points.is_empty() && points.len().is_multiple_of(dim), "malformed finite control set");
        let mut rows: Vec<&[S]> = points.chunks_exact(dim).collect();
        rows.sort_by(|a, b| lex_cmp(a, b));
        rows.dedup();
        let points = rows.concat();
        ControlSet::Finite { dim, points }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { lower, .. } => lower.len(),
            ControlSet::Finite { dim, .. } => *dim,
        }
    }

    pub fn contains(&self, a: &[S]) -> bool {
        if a.len() != self.dim() {
            return false;
        }
        match self {
            ControlSet::Box { lower, upper } => a
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(&x, (&lo, &hi))| lo <= x && x <= hi),
            ControlSet::Finite { dim, points } => points.chunks_exact(*dim).any(|p| p == a),
        }
    }

    /// Lexicographically smallest element.
    pub fn smallest(&self) -> Vec<S> {
        match self {
            ControlSet::Box { lower, .. } => lower.clone(),
            ControlSet::Finite { dim, points } => points[..*dim].to_vec(),
        }
    }

    /// Largest Euclidean norm over the set.
    pub fn max_norm(&self) -> S {
        match self {
            ControlSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&lo, &hi)| {
                    let m = lo.abs().max(hi.abs());
                    m * m
                })
                .sum::<S>()
                .sqrt(),
            ControlSet::Finite { dim, points } => points
                .chunks_exact(*dim)
                .map(crate::scalar::norm)
                .fold(S::zero(), S::max),
        }
    }

    /// Euclidean diameter.
    pub fn diameter(&self) -> S {
        match self {
            ControlSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&lo, &hi)| (hi - lo) * (hi - lo))
                .sum::<S>()
                .sqrt(),
            ControlSet::Finite { dim, points } => {
                let mut best = S::zero();
                for p in points.chunks_exact(*dim) {
                    for q in points.chunks_exact(*dim) {
                        best = best.max(distance(p, q));
                    }
                }
                best
            }
        }
    }

    /// Projection onto a box (identity on finite sets, which must already contain `a`).
    pub fn clip(&self, a: &mut [S]) {
        if let ControlSet::Box { lower, upper } = self {
            for (x, (&lo, &hi)) in a.iter_mut().zip(lower.iter().zip(upper)) {
                *x = x.max(lo).min(hi);
            }
        }
    }

    /// Tensor grid with `resolution` points per axis (box) or the points themselves,
    /// enumerated in lexicographic order.
    pub fn grid(&self, resolution: usize) -> Vec<S> {
        match self {
            ControlSet::Finite { points, .. } => points.clone(),
            ControlSet::Box { lower, upper } => {
                let d = lower.len();
                let res = resolution.max(2);
                let axis = |i: usize, j: usize| {
                    if j + 1 == res {
                        upper[i]
                    } else {
                        lower[i] + (upper[i] - lower[i]) * S::count(j) / S::count(res - 1)
                    }
                };
                let total = res.pow(d as u32);
                let mut out = Vec::with_capacity(total * d);
                for flat in 0..total {
                    let mut rem = flat;
                    let mut idx = vec![0usize; d];
                    for i in (0..d).rev() {
                        idx[i] = rem % res;
                        rem /= res;
                    }
                    for (i, &j) in idx.iter().enumerate() {
                        out.push(axis(i, j));
                    }
                }
                out
            }
        }
    }
}

pub(crate) fn lex_cmp<S: Real>(a: &[S], b: &[S]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

pub(crate) fn distance<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<S>().sqrt()
}

/// The data of a game: dynamics, rewards, control set and initial law.
///
/// The running reward is split as `f = f₁(t, x, μ, a) + f₂(t, x, μ, q)`; only
/// `f₁` may depend on the control and only `f₂` may depend on the control law.
/// Implementations must be pure: every method may be called concurrently.
pub trait Model<S: Real>: Diffusion<S> {
    fn name(&self) -> &str;

    fn control_set(&self) -> &ControlSet<S>;

    /// Declared bound `c_bd` on `|σ⁻¹b|`; enforced wherever the drift is used.
    fn drift_bound(&self) -> S;

    /// `b(t, x, μ, a)`.
    fn drift(&self, t: S, x: &PathSlice<'_, S>, mu: &MuView<'_, S>, a: &[S], out: &mut [S]);

    /// `σ⁻¹b(t, x, μ, a)`. The default solves the linear system with σ.
    fn scaled_drift(&self, t: S, x: &PathSlice<'_, S>, mu: &MuView<'_, S>, a: &[S], out: &mut [S]) {
        let d = self.dim();
        let mut b = vec![S::zero(); d];
        self.drift(t, x, mu, a, &mut b);
        if d == 1 {
            let mut sigma = [S::zero()];
            self.volatility(t, x, &mut sigma);
            out[0] = b[0] / sigma[0];
            return;
        }
        let mut sigma = vec![S::zero(); d * d];
        self.volatility(t, x, &mut sigma);
        match linalg::solve_dense(&sigma, &b, d) {
            Some(theta) => out.copy_from_slice(&theta),
            None => out.iter_mut().for_each(|v| *v = S::nan()),
        }
    }

    /// `f₁(t, x, μ, a)`. May be `+∞`-costly (non-finite) for unavailable controls.
    fn reward_control(&self, t: S, x: &PathSlice<'_, S>, mu: &MuView<'_, S>, a: &[S]) -> S;

    /// The control-dependent part `κ(t, x, a)` of rewards split as
    /// `f₁ = κ(t, x, a) + ℓ(t, x, μ)`, if the model declares such a split.
    /// Numerical maximizers then avoid re-evaluating the mean-field part.
    fn control_part(&self, _t: S, _x: &PathSlice<'_, S>, _a: &[S]) -> Option<S> {
        None
    }

    /// `f₂(t, x, μ, q)`.
    fn reward_flow(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, _q: &QView<'_, S>) -> S {
        S::zero()
    }

    /// True if `f₂` is identically zero.
    fn flow_reward_vanishes(&self) -> bool {
        true
    }

    /// `g(x, μ)` on a whole path.
    fn terminal_reward(&self, x: &PathSlice<'_, S>, mu: &MuView<'_, S>) -> S;

    /// Growth gauge ψ; defaults to `1 + sup_t |x_t|²`.
    fn growth_gauge(&self, x: &PathSlice<'_, S>) -> S {
        let s = x.sup_norm();
        S::one() + s * s
    }

    /// Closed-form maximizer of `a ↦ f₁(t, x, μ, a) + z·σ⁻¹b(t, x, μ, a)`, if known.
    fn analytic_argmax(&self, _t: S, _x: &PathSlice<'_, S>, _mu: &MuView<'_, S>, _z: &[S]) -> Option<Vec<S>> {
        None
    }

    /// True if `a ↦ f₁ + z·σ⁻¹b` is concave for every `(t, x, μ, z)`.
    fn concave_in_control(&self) -> bool {
        false
    }

    /// False when `b` has no mean-field term, i.e. `b = b(t, x, a)`.
    fn drift_depends_on_measure(&self) -> bool {
        true
    }

    /// False when neither `b`, `f` nor `g` depend on `(μ, q)`.
    fn coupled(&self) -> bool {
        true
    }

    /// Number of extra regression features supplied by the model.
    fn num_regression_features(&self) -> usize {
        0
    }

    /// Extra regression features of the path slice, written into `out`.
    fn regression_features(&self, _x: &PathSlice<'_, S>, _out: &mut [S]) {}
}
