//! Fixed step-size distributed gradient descent (DGD) and its noisy, saddle-escaping variant
//! (NDGD) over an agent network, with the penalized auxiliary function `Q_α`, bound evaluators,
//! and an experiment harness.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix the
//! scalar for the common cases.

pub mod diagnostics;
pub mod dynamics;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod mixing;
pub mod noise;
pub mod objective;
pub mod scalar;
pub mod state;

pub use graph::{GraphError, NetworkGraph};
pub use linalg::DenseMatrix;
pub use mixing::{
    consensus_average, validate_mixing, validate_mixing_with_tol, MixingError, MixingMatrix, SpectralInfo,
};
pub use objective::{
    classify_stationary, LocalObjective, Problem, StationaryClass, StationaryKind, StepSize, ToleranceSpec,
};
pub use scalar::Scalar;
pub use state::StackedState;

pub type Problem64 = objective::Problem<f64>;
pub type Problem32 = objective::Problem<f32>;
pub type StackedState64 = state::StackedState<f64>;
pub type StackedState32 = state::StackedState<f32>;
pub type MixingMatrix64 = mixing::MixingMatrix<f64>;
pub type MixingMatrix32 = mixing::MixingMatrix<f32>;
