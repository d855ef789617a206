//! Graphs, normalized adjacency and the sparse algebra used everywhere else.

mod grouping;
pub mod io;
mod sparse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grouping::{assign_degree_groups, DegreeGrouping, GroupAssignment};
pub(crate) use sparse::{aggregate_all, aggregate_column, merge_columns, node_major};
pub use sparse::{dense_l1_norm, matrix_l1_norm, right_multiply, SparseMatrix};

/// Undirected simple graph. Edges are stored as `(u, v)` with `u < v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Validates endpoints, rejects self-loops and duplicate unordered pairs.
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut normalized = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            for node in [u, v] {
                if node >= num_nodes {
                    return Err(Error::NodeOutOfRange { node, num_nodes });
                }
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            normalized.push((u.min(v), u.max(v)));
        }
        let mut sorted = normalized.clone();
        sorted.sort_unstable();
        let dups: Vec<_> = sorted.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0]).collect();
        if let Some(&(u, v)) = dups.first() {
            return Err(Error::DuplicateEdges {
                count: dups.len(),
                u,
                v,
            });
        }
        Ok(Self {
            num_nodes,
            edges: normalized,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Sorted neighbor lists.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj.iter_mut().for_each(|l| l.sort_unstable());
        adj
    }
}

/// How the degree matrix `D` in `D^{-1/2}(Ã + I)D^{-1/2}` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeMode {
    /// `D_ii = 1 + deg(i)`, always well defined.
    #[default]
    FromTildePlusIdentity,
    /// `D_ii = deg(i)`; isolated nodes are an error.
    FromTilde,
}

pub fn build_normalized_adjacency(graph: &Graph, mode: DegreeMode) -> Result<SparseMatrix> {
    let deg = graph.degrees();
    let dvals: Vec<f64> = match mode {
        DegreeMode::FromTildePlusIdentity => deg.iter().map(|&d| d as f64 + 1.0).collect(),
        DegreeMode::FromTilde => {
            if let Some(i) = deg.iter().position(|&d| d == 0) {
                return Err(Error::IsolatedNode(i));
            }
            deg.iter().map(|&d| d as f64).collect()
        }
    };
    let n = graph.num_nodes();
    let mut adj = graph.adjacency_lists();
    for (i, list) in adj.iter_mut().enumerate() {
        let pos = list.binary_search(&i).unwrap_err();
        list.insert(pos, i);
    }
    let columns = adj
        .into_iter()
        .enumerate()
        .map(|(c, rows)| {
            rows.into_iter()
                // product is commutative in IEEE arithmetic, so A is exactly symmetric
                .map(|r| (r, 1.0 / (dvals[r] * dvals[c]).sqrt()))
                .collect()
        })
        .collect();
    Ok(SparseMatrix::from_sorted_columns(n, columns))
}
