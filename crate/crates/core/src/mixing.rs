//! Mixing matrix validation, spectral summary, and the lifted operator `W ⊗ I_n`.

use thiserror::Error;

use crate::graph::NetworkGraph;
use crate::linalg::{symmetric_eigenvalues, DenseMatrix};
use crate::scalar::Scalar;
use crate::state::StackedState;

/// Eigenvalue tolerance used for the spectral invariants (`λ_max = 1`, `λ₂ < 1`).
pub const SPECTRAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixingError {
    #[error("mixing matrix is {rows}x{cols}, graph has {agents} agents")]
    Dimension {
        rows: usize,
        cols: usize,
        agents: usize,
    },
    #[error("mixing matrix has a non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("mixing matrix is not symmetric: |W[{i}][{j}] - W[{j}][{i}]| = {diff:e}")]
    Asymmetric { i: usize, j: usize, diff: f64 },
    #[error("row {row} of the mixing matrix sums to {sum} (must be 1)")]
    RowSum { row: usize, sum: f64 },
    #[error("column {col} of the mixing matrix sums to {sum} (must be 1)")]
    ColumnSum { col: usize, sum: f64 },
    #[error("diagonal entry W[{0}][{0}] = {1} must be positive")]
    NonPositiveDiagonal(usize, f64),
    #[error("edge ({i}, {j}) exists but W[{i}][{j}] = {value} is not positive")]
    MissingEdgeWeight { i: usize, j: usize, value: f64 },
    #[error("W[{i}][{j}] = {value} is nonzero but ({i}, {j}) is not an edge")]
    SpuriousWeight { i: usize, j: usize, value: f64 },
    #[error("row {row} is not strictly diagonally dominant: W_ii = {diagonal} <= off-diagonal sum {off_diagonal}")]
    NotDiagonallyDominant {
        row: usize,
        diagonal: f64,
        off_diagonal: f64,
    },
    #[error("largest eigenvalue is {0}, expected 1")]
    LargestEigenvalue(f64),
    #[error("smallest eigenvalue {0} is not positive")]
    NotPositiveDefinite(f64),
    #[error("lifted operator expects {expected} agent blocks, got {found}")]
    BlockCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInfo<T> {
    pub lambda_max: T,
    /// Second-largest eigenvalue counted with multiplicity; `None` for a single agent.
    pub lambda_2: Option<T>,
    pub lambda_min: T,
    /// All eigenvalues in descending order.
    pub eigenvalues: Vec<T>,
}

impl<T: Scalar> SpectralInfo<T> {
    /// `1 − λ₂`; a single agent has no disagreement subspace and is treated as `λ₂ = 0`.
    pub fn spectral_gap(&self) -> T {
        T::one() - self.lambda_2.unwrap_or_else(T::zero)
    }
}

/// Validated symmetric, doubly stochastic, strictly diagonally dominant mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix<T> {
    weights: DenseMatrix<T>,
    /// Nonzero pattern per row, `(column, weight)` sorted by column. Always includes the diagonal.
    support: Vec<Vec<(usize, T)>>,
    spectral: SpectralInfo<T>,
}

/// Validates with the default tolerance (`1e-12` in double precision).
pub fn validate_mixing<T: Scalar>(
    w: &DenseMatrix<T>,
    graph: &NetworkGraph,
) -> Result<MixingMatrix<T>, MixingError> {
    validate_mixing_with_tol(w, graph, T::default_validation_tol())
}

pub fn validate_mixing_with_tol<T: Scalar>(
    w: &DenseMatrix<T>,
    graph: &NetworkGraph,
    tol: T,
) -> Result<MixingMatrix<T>, MixingError> {
    let m = graph.num_agents();
    if w.rows() != m || w.cols() != m {
        return Err(MixingError::Dimension {
            rows: w.rows(),
            cols: w.cols(),
            agents: m,
        });
    }
    for i in 0..m {
        for j in 0..m {
            if !w[(i, j)].is_finite() {
                return Err(MixingError::NonFinite(i, j));
            }
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let diff = (w[(i, j)] - w[(j, i)]).abs();
            if diff > tol {
                return Err(MixingError::Asymmetric {
                    i,
                    j,
                    diff: diff.as_f64(),
                });
            }
        }
    }
    for i in 0..m {
        let sum: T = w.row(i).iter().copied().sum();
        if (sum - T::one()).abs() > tol {
            return Err(MixingError::RowSum {
                row: i,
                sum: sum.as_f64(),
            });
        }
    }
    for j in 0..m {
        let sum: T = (0..m).map(|i| w[(i, j)]).sum();
        if (sum - T::one()).abs() > tol {
            return Err(MixingError::ColumnSum {
                col: j,
                sum: sum.as_f64(),
            });
        }
    }
    for i in 0..m {
        if w[(i, i)] <= T::zero() {
            return Err(MixingError::NonPositiveDiagonal(i, w[(i, i)].as_f64()));
        }
        for j in 0..m {
            if i == j {
                continue;
            }
            let value = w[(i, j)];
            if graph.has_edge(i, j) {
                if value <= T::zero() {
                    return Err(MixingError::MissingEdgeWeight {
                        i,
                        j,
                        value: value.as_f64(),
                    });
                }
            } else if value != T::zero() {
                return Err(MixingError::SpuriousWeight {
                    i,
                    j,
                    value: value.as_f64(),
                });
            }
        }
    }
    for i in 0..m {
        let off: T = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        if w[(i, i)] <= off {
            return Err(MixingError::NotDiagonallyDominant {
                row: i,
                diagonal: w[(i, i)].as_f64(),
                off_diagonal: off.as_f64(),
            });
        }
    }

    let mut eigenvalues = symmetric_eigenvalues(w);
    eigenvalues.reverse();
    let lambda_max = eigenvalues[0];
    let lambda_min = eigenvalues[m - 1];
    let spectral_tol = T::lit(SPECTRAL_TOL).max(tol);
    if (lambda_max - T::one()).abs() > spectral_tol {
        return Err(MixingError::LargestEigenvalue(lambda_max.as_f64()));
    }
    if lambda_min <= T::zero() {
        return Err(MixingError::NotPositiveDefinite(lambda_min.as_f64()));
    }
    let spectral = SpectralInfo {
        lambda_max,
        lambda_2: eigenvalues.get(1).copied(),
        lambda_min,
        eigenvalues,
    };

    let support = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| j == i || w[(i, j)] != T::zero())
                .map(|j| (j, w[(i, j)]))
                .collect()
        })
        .collect();

    Ok(MixingMatrix {
        weights: w.clone(),
        support,
        spectral,
    })
}

impl<T: Scalar> MixingMatrix<T> {
    pub fn num_agents(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &DenseMatrix<T> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> T {
        self.weights[(i, j)]
    }

    pub fn spectral(&self) -> &SpectralInfo<T> {
        &self.spectral
    }

    pub fn lambda_min(&self) -> T {
        self.spectral.lambda_min
    }

    /// Nonzero entries of row `i` (the agent itself and its graph neighbours).
    pub fn row_support(&self, i: usize) -> &[(usize, T)] {
        &self.support[i]
    }

    /// `(W ⊗ I_n) x̂` computed blockwise.
    pub fn apply_lifted(&self, x: &StackedState<T>) -> Result<StackedState<T>, MixingError> {
        let mut out = StackedState::zeros(x.num_agents().max(1), x.dim());
        self.apply_lifted_into(x, &mut out)?;
        Ok(out)
    }

    pub fn apply_lifted_into(
        &self,
        x: &StackedState<T>,
        out: &mut StackedState<T>,
    ) -> Result<(), MixingError> {
        let m = self.num_agents();
        if x.num_agents() != m {
            return Err(MixingError::BlockCount {
                expected: m,
                found: x.num_agents(),
            });
        }
        assert!(x.same_shape(out), "output buffer shape mismatch");
        for i in 0..m {
            let dst = out.block_mut(i);
            dst.iter_mut().for_each(|v| *v = T::zero());
            for &(j, wij) in &self.support[i] {
                for (d, &s) in dst.iter_mut().zip(x.block(j)) {
                    *d += wij * s;
                }
            }
        }
        Ok(())
    }

    /// `x̂ᵀ(I − Ŵ)x̂`, the consensus penalty quadratic form (without the `1/2α` factor).
    pub fn disagreement_form(&self, x: &StackedState<T>) -> Result<T, MixingError> {
        let wx = self.apply_lifted(x)?;
        Ok(x.dot(x) - x.dot(&wx))
    }
}

/// Arithmetic mean of the agent blocks.
pub fn consensus_average<T: Scalar>(x: &StackedState<T>) -> Vec<T> {
    x.consensus_average()
}
