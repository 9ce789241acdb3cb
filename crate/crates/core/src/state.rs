//! Stacked iterate: one length-`n` block per agent, stored block-major.

use thiserror::Error;

use crate::linalg::{distance, dot, norm2};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("stacked state needs {expected} entries ({agents} agents x dimension {dim}), got {found}")]
    Length {
        agents: usize,
        dim: usize,
        expected: usize,
        found: usize,
    },
    #[error("agent count and dimension must be positive")]
    Empty,
    #[error("block {agent} has length {found}, expected {expected}")]
    RaggedBlock {
        agent: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedState<T> {
    agents: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> StackedState<T> {
    pub fn new(agents: usize, dim: usize, data: Vec<T>) -> Result<Self, StateError> {
        if agents == 0 || dim == 0 {
            return Err(StateError::Empty);
        }
        if data.len() != agents * dim {
            return Err(StateError::Length {
                agents,
                dim,
                expected: agents * dim,
                found: data.len(),
            });
        }
        Ok(Self { agents, dim, data })
    }

    pub fn zeros(agents: usize, dim: usize) -> Self {
        assert!(agents > 0 && dim > 0, "empty stacked state");
        Self {
            agents,
            dim,
            data: vec![T::zero(); agents * dim],
        }
    }

    /// `1_m ⊗ x`: every agent holds a copy of `x`.
    pub fn broadcast(agents: usize, x: &[T]) -> Self {
        assert!(agents > 0 && !x.is_empty(), "empty stacked state");
        let mut data = Vec::with_capacity(agents * x.len());
        for _ in 0..agents {
            data.extend_from_slice(x);
        }
        Self {
            agents,
            dim: x.len(),
            data,
        }
    }

    pub fn from_blocks<B: AsRef<[T]>>(blocks: &[B]) -> Result<Self, StateError> {
        let dim = blocks.first().map_or(0, |b| b.as_ref().len());
        let mut data = Vec::with_capacity(blocks.len() * dim);
        for (agent, b) in blocks.iter().enumerate() {
            let b = b.as_ref();
            if b.len() != dim {
                return Err(StateError::RaggedBlock {
                    agent,
                    expected: dim,
                    found: b.len(),
                });
            }
            data.extend_from_slice(b);
        }
        Self::new(blocks.len(), dim, data)
    }

    pub fn num_agents(&self) -> usize {
        self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total length `m · n`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn block(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn blocks(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.dim)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.agents == other.agents && self.dim == other.dim
    }

    pub fn norm(&self) -> T {
        norm2(&self.data)
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.data, &other.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean distance in ℝ^{mn}.
    pub fn distance(&self, other: &Self) -> T {
        distance(&self.data, &other.data)
    }

    /// Arithmetic mean of the agent blocks, `x̄ = (1/m)(1ᵀ ⊗ I) x̂`.
    pub fn consensus_average(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.dim];
        for b in self.blocks() {
            for (acc, &v) in mean.iter_mut().zip(b) {
                *acc += v;
            }
        }
        let m = T::from_usize_lossy(self.agents);
        mean.iter_mut().for_each(|v| *v /= m);
        mean
    }

    /// `max_i ‖x̂_i − x̄‖`.
    pub fn consensus_error(&self) -> T {
        let mean = self.consensus_average();
        self.blocks()
            .map(|b| distance(b, &mean))
            .fold(T::zero(), T::max)
    }

    /// Elementwise `self + a · other`.
    pub fn add_scaled(&self, a: T, other: &Self) -> Self {
        assert!(self.same_shape(other), "shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| x + a * y)
            .collect();
        Self {
            agents: self.agents,
            dim: self.dim,
            data,
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> StackedState<U> {
        StackedState {
            agents: self.agents,
            dim: self.dim,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
