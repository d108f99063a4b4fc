//! Undirected communication graphs and their Laplacian constants.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;

/// Connected undirected simple graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    n_nodes: usize,
    /// Sorted, each stored as `(lo, hi)`.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConstants {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub algebraic_connectivity: f64,
}

impl Network {
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::InvalidSize(format!("a network needs at least 2 nodes, got {n_nodes}")));
        }
        let mut norm = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            for node in [a, b] {
                if node >= n_nodes {
                    return Err(Error::NodeOutOfRange { node, n_nodes });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        if let Some(w) = norm.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateEdge(w[0].0, w[0].1));
        }
        let mut adjacency = vec![Vec::new(); n_nodes];
        for &(a, b) in &norm {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let net = Self {
            n_nodes,
            edges: norm,
            adjacency,
        };
        if !net.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(net)
    }

    /// Ring 0-1-…-(N-1)-0. For N = 2 the ring degenerates to a single edge.
    pub fn cycle(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("cycle needs at least 2 nodes, got {n}")));
        }
        if n == 2 {
            return Self::from_edges(2, &[(0, 1)]);
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("path needs at least 2 nodes, got {n}")));
        }
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("complete graph needs at least 2 nodes, got {n}")));
        }
        let edges: Vec<_> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        Self::from_edges(n, &edges)
    }

    /// Six-node ring with one chord between opposite nodes.
    pub fn default_six() -> Self {
        Self::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)])
            .expect("static edge list is valid")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::NodeOutOfRange {
                node: i,
                n_nodes: self.n_nodes,
            })
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_nodes];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// L = D - A
    pub fn laplacian(&self) -> SymMatrix {
        let n = self.n_nodes;
        SymMatrix::from_upper_fn(n, |i, j| {
            if i == j {
                self.degree(i) as f64
            } else if self.adjacency[i].binary_search(&j).is_ok() {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Ascending Laplacian spectrum.
    pub fn laplacian_spectrum(&self) -> Vec<f64> {
        self.laplacian().eigenvalues()
    }

    /// Second-smallest Laplacian eigenvalue.
    pub fn algebraic_connectivity(&self) -> Result<f64> {
        let spec = self.laplacian_spectrum();
        let lambda2 = spec[1];
        if lambda2 <= 1e-12 * spec[spec.len() - 1].max(1.0) {
            return Err(Error::Disconnected);
        }
        Ok(lambda2)
    }

    pub fn constants(&self) -> Result<GraphConstants> {
        Ok(GraphConstants {
            n_nodes: self.n_nodes,
            n_edges: self.n_edges(),
            algebraic_connectivity: self.algebraic_connectivity()?,
        })
    }
}
