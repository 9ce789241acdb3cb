//! Undirected agent communication topology.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("a network needs at least one agent")]
    NoAgents,
    #[error("agent index {index} out of range for {num_agents} agents")]
    IndexOutOfRange { index: usize, num_agents: usize },
    #[error("self-loop on agent {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
}

/// Undirected simple graph over agents `0..num_agents`. Adjacency lists are kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    num_agents: usize,
    adjacency: Vec<Vec<usize>>,
}

impl NetworkGraph {
    /// Builds from 0-based unordered pairs.
    pub fn new<I>(num_agents: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if num_agents == 0 {
            return Err(GraphError::NoAgents);
        }
        let mut adjacency = vec![Vec::new(); num_agents];
        for (a, b) in edges {
            for index in [a, b] {
                if index >= num_agents {
                    return Err(GraphError::IndexOutOfRange { index, num_agents });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if adjacency[a].contains(&b) {
                return Err(GraphError::DuplicateEdge(a.min(b), a.max(b)));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            num_agents,
            adjacency,
        })
    }

    /// Builds from 1-based pairs as written in configuration files.
    pub fn from_one_based<I>(num_agents: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut shifted = Vec::new();
        for (a, b) in edges {
            for index in [a, b] {
                if index == 0 || index > num_agents {
                    return Err(GraphError::IndexOutOfRange { index, num_agents });
                }
            }
            shifted.push((a - 1, b - 1));
        }
        Self::new(num_agents, shifted)
    }

    pub fn cycle(num_agents: usize) -> Result<Self, GraphError> {
        match num_agents {
            0 => Err(GraphError::NoAgents),
            1 => Self::new(1, []),
            2 => Self::new(2, [(0, 1)]),
            m => Self::new(m, (0..m).map(|i| (i, (i + 1) % m))),
        }
    }

    pub fn path(num_agents: usize) -> Result<Self, GraphError> {
        Self::new(num_agents, (1..num_agents).map(|i| (i - 1, i)))
    }

    pub fn complete(num_agents: usize) -> Result<Self, GraphError> {
        Self::new(
            num_agents,
            (0..num_agents).flat_map(|i| ((i + 1)..num_agents).map(move |j| (i, j))),
        )
    }

    /// Star with agent 0 at the hub.
    pub fn star(num_agents: usize) -> Result<Self, GraphError> {
        Self::new(num_agents, (1..num_agents).map(|i| (0, i)))
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize], GraphError> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or(GraphError::IndexOutOfRange {
                index: i,
                num_agents: self.num_agents,
            })
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency
            .get(i)
            .is_some_and(|list| list.binary_search(&j).is_ok())
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.get(i).map_or(0, Vec::len)
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Breadth-first reachability from agent 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.num_agents];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    reached += 1;
                    queue.push_back(w);
                }
            }
        }
        reached == self.num_agents
    }
}
