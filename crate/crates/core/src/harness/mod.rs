//! Configuration, experiment orchestration and file output for the `ndgd` command-line tool.
//!
//! The harness works in `f64`.

pub mod config;
pub mod experiment;
pub mod output;

use thiserror::Error;

use crate::graph::NetworkGraph;
use crate::linalg::DenseMatrix;

pub use config::{load_config, parse_config, ConfigError, DiagnosticsSpec, EscapeSpec, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentOptions, ExperimentSummary, HarnessError, RunSummary};

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "NDGD_OUTPUT_DIR";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerateError {
    #[error("beta must lie in (0, 0.5), got {0}")]
    Beta(f64),
}

/// Lazy Metropolis-style weights: `W_ij = β / deg_max` on edges and `W_ii = 1 − Σ_{j≠i} W_ij`.
///
/// Every off-diagonal row sum is at most `β < 1/2`, so the result is strictly diagonally dominant,
/// and it is symmetric and doubly stochastic by construction.
pub fn generate_mixing(graph: &NetworkGraph, beta: f64) -> Result<DenseMatrix<f64>, GenerateError> {
    if !(beta > 0.0 && beta < 0.5) {
        return Err(GenerateError::Beta(beta));
    }
    let m = graph.num_agents();
    let mut w = DenseMatrix::zeros(m, m);
    let off = if graph.max_degree() == 0 {
        0.0
    } else {
        beta / graph.max_degree() as f64
    };
    for (i, j) in graph.edges() {
        w[(i, j)] = off;
        w[(j, i)] = off;
    }
    for i in 0..m {
        w[(i, i)] = 1.0 - off * graph.degree(i) as f64;
    }
    Ok(w)
}
