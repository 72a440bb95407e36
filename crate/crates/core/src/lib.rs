//! Mean field games in the weak formulation.
//!
//! Candidate equilibria are importance weights over one fixed ensemble of
//! driftless paths. A fixed point of the best-response map is found by damped
//! Picard iteration, each step solving the value BSDE by regression and
//! reweighting the ensemble with the Girsanov density of the optimal control.
//! The resulting distributed strategies can then be tested as approximate Nash
//! equilibria of finite-player games.

pub mod bsde;
pub mod error;
pub mod fixedpoint;
pub mod hamiltonian;
pub mod linalg;
pub mod measures;
pub mod models;
pub mod nplayer;
pub mod paths;
pub mod scalar;

pub use error::{MfgError, Result};
pub use scalar::Real;

/// Double-precision instantiations.
pub type WeightedMeasureF64 = measures::WeightedMeasure<f64>;
pub type ControlLawFlowF64 = measures::ControlLawFlow<f64>;
pub type PathEnsembleF64 = paths::PathEnsemble<f64>;
pub type MfgSolutionF64 = fixedpoint::MfgSolution<f64>;
pub type ModelF64 = dyn hamiltonian::Model<f64>;

/// Single-precision instantiations.
pub type WeightedMeasureF32 = measures::WeightedMeasure<f32>;
pub type ControlLawFlowF32 = measures::ControlLawFlow<f32>;
pub type PathEnsembleF32 = paths::PathEnsemble<f32>;
pub type MfgSolutionF32 = fixedpoint::MfgSolution<f32>;
pub type ModelF32 = dyn hamiltonian::Model<f32>;
