//! Model zoo and a name-keyed registry for configuration files.
//!
//! Every model's parameter block is a serde struct with defaults; unknown keys
//! are rejected.

mod clipped_lq;
mod flocking;
mod gbm;
mod price_impact;
mod rank;

use std::sync::Arc;

use serde::de::DeserializeOwned;

use crate::error::{MfgError, Result};
use crate::hamiltonian::Model;
use crate::scalar::Real;

pub use clipped_lq::{ClippedLq, ClippedLqParams, QuadraticTerminal};
pub use flocking::{Flocking, FlockingParams, Interaction};
pub use gbm::{Gbm, GbmParams};
pub use price_impact::{PriceImpact, PriceImpactParams, TransactionCost};
pub use rank::{rank_reward, Rank, RankFunction, RankParams};

/// Names accepted by [`build_model`].
pub const MODEL_NAMES: &[&str] = &["price_impact", "flocking", "rank", "gbm", "clipped_lq", "uncoupled"];

fn parse<P: DeserializeOwned + Default>(name: &str, params: &serde_json::Value) -> Result<P> {
    if params.is_null() {
        return Ok(P::default());
    }
    serde_json::from_value(params.clone())
        .map_err(|e| MfgError::usage("models::build_model", format!("parameters of `{}`: {}", name, e)))
}

/// Instantiates a registered model from its parameter block (`null` means defaults).
///
/// `uncoupled` is the clipped linear-quadratic model, whose data ignore the
/// measure and control flows.
pub fn build_model<S: Real>(name: &str, params: &serde_json::Value) -> Result<Arc<dyn Model<S>>> {
    Ok(match name {
        "price_impact" => Arc::new(PriceImpact::new(parse::<PriceImpactParams>(name, params)?)?),
        "flocking" => Arc::new(Flocking::new(parse::<FlockingParams>(name, params)?)?),
        "rank" => Arc::new(Rank::new(parse::<RankParams>(name, params)?)?),
        "gbm" => Arc::new(Gbm::new(parse::<GbmParams>(name, params)?)?),
        "clipped_lq" | "uncoupled" => Arc::new(ClippedLq::new(parse::<ClippedLqParams>(name, params)?)?),
        other => {
            return Err(MfgError::usage(
                "models::build_model",
                format!("unknown model `{}`; known models: {}", other, MODEL_NAMES.join(", ")),
            ))
        }
    })
}

fn positive(op: &'static str, what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(MfgError::usage(op, format!("{} must be positive, got {}", what, v)))
    }
}

fn nonnegative(op: &'static str, what: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(MfgError::usage(op, format!("{} must be nonnegative, got {}", what, v)))
    }
}

/// Maximizer of `-k a² + s·a` over `[-bound, bound]`; for `k = 0` the bang-bang
/// choice, resolving `s = 0` to the lower end.
fn clipped_quadratic_argmax<S: Real>(k: S, s: S, bound: S) -> S {
    if k > S::zero() {
        (s / (S::of(2.0) * k)).max(-bound).min(bound)
    } else if s > S::zero() {
        bound
    } else {
        -bound
    }
}
