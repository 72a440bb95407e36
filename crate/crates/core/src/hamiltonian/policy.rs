use std::sync::Arc;

use super::{argmax_only, Model, SearchConfig};
use crate::bsde::ZSurrogate;
use crate::error::{MfgError, Result};
use crate::measures::WeightedMeasure;
use crate::paths::PathSlice;
use crate::scalar::Real;

pub type PolicyFn<S> = dyn Fn(S, &PathSlice<'_, S>) -> Result<Vec<S>> + Send + Sync;

/// A control as a deterministic function of `(t_k, path up to t_k)`.
#[derive(Clone)]
pub enum ClosedLoopPolicy<S> {
    Constant(Vec<S>),
    Feedback(Arc<PolicyFn<S>>),
}

impl<S: Real> std::fmt::Debug for ClosedLoopPolicy<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClosedLoopPolicy::Constant(a) => f.debug_tuple("Constant").field(a).finish(),
            ClosedLoopPolicy::Feedback(_) => f.write_str("Feedback(..)"),
        }
    }
}

impl<S: Real> ClosedLoopPolicy<S> {
    pub fn constant(a: Vec<S>) -> Self {
        ClosedLoopPolicy::Constant(a)
    }

    pub fn from_fn(f: impl Fn(S, &PathSlice<'_, S>) -> Result<Vec<S>> + Send + Sync + 'static) -> Self {
        ClosedLoopPolicy::Feedback(Arc::new(f))
    }

    pub fn control(&self, t: S, x: &PathSlice<'_, S>) -> Result<Vec<S>> {
        match self {
            ClosedLoopPolicy::Constant(a) => Ok(a.clone()),
            ClosedLoopPolicy::Feedback(f) => f(t, x),
        }
    }
}

/// Source of the adjoint `Z(t_k, x)` fed into the maximizer.
#[derive(Clone)]
pub enum ZField<S> {
    Constant(Vec<S>),
    /// Per-step regression coefficients from a BSDE solve.
    Surrogate(Arc<ZSurrogate<S>>),
    Function(Arc<dyn Fn(S, &PathSlice<'_, S>) -> Vec<S> + Send + Sync>),
}

impl<S: Real> ZField<S> {
    pub fn zero(dim: usize) -> Self {
        ZField::Constant(vec![S::zero(); dim])
    }

    pub fn eval(&self, model: &dyn Model<S>, t: S, x: &PathSlice<'_, S>) -> Vec<S> {
        match self {
            ZField::Constant(z) => z.clone(),
            ZField::Surrogate(s) => s.predict(model, x),
            ZField::Function(f) => f(t, x),
        }
    }
}

/// `α̂(t, x) = argmax_a h(t, x, μ, ·, Z(t, x), a)` as a closed-loop policy.
///
/// The policy keeps its own handle on μ so it can be evaluated on paths that
/// are not part of μ's ensemble, as long as they share its time grid.
pub fn policy_from_z<S: Real>(model: Arc<dyn Model<S>>, mu: &WeightedMeasure<S>, z: ZField<S>) -> ClosedLoopPolicy<S> {
    let mu = mu.clone();
    let search = SearchConfig::default();
    let steps = mu.paths().grid().num_steps();
    ClosedLoopPolicy::from_fn(move |t, x| {
        if x.step() > steps {
            return Err(MfgError::usage("hamiltonian::policy_from_z", "path slice is past the measure's horizon"));
        }
        let zk = z.eval(&*model, t, x);
        argmax_only(&*model, t, x, &mu.view(), &zk, &search)
    })
}
