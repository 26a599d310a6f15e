//! Graphs and datasets.
//!
//! A [`SparseGraph`] is a square CSR matrix whose entries are edge weights.
//! Raw graphs (citations, KNN feature graphs) carry unit weights and no
//! self-loops; [`normalize_adjacency`] turns them into the symmetric
//! `D^{-1/2}(A+I)D^{-1/2}` propagation matrix.

mod dataset;
mod io;
mod knn;
mod split;
mod synthetic;

pub use dataset::{row_normalize_features, Dataset};
pub use io::{load_cora_format, load_cora_format_with_stats, load_generic, save_generic, CoraLoadStats};
pub use knn::{build_knn_graph, cosine_distance, knn_lists, MIN_SIMILARITY};
pub use split::{make_split, Split, SplitSpec};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use std::collections::VecDeque;
use std::sync::Arc;


use crate::error::{contract, Result};
use crate::tensor::CsrMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseGraph {
    adj: Arc<CsrMatrix>,
    symmetric: bool,
}

impl SparseGraph {
    /// Unit-weight graph from an edge list. Self-loops are dropped and
    /// repeated edges merged; with `symmetrize`, every edge is mirrored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], symmetrize: bool) -> Result<Self> {
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(contract(format!("edge ({u},{v}) references a node outside 0..{n}")));
            }
            if u == v {
                continue;
            }
            pairs.push((u, v));
            if symmetrize {
                pairs.push((v, u));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let trip = pairs.into_iter().map(|(u, v)| (u, v, 1.0)).collect();
        let adj = CsrMatrix::from_triplets(n, n, trip)?;
        let symmetric = symmetrize || is_symmetric(&adj);
        Ok(Self {
            adj: Arc::new(adj),
            symmetric,
        })
    }

    pub fn from_csr(adj: CsrMatrix) -> Result<Self> {
        if adj.rows() != adj.cols() {
            return Err(contract(format!("graph adjacency must be square, got {}x{}", adj.rows(), adj.cols())));
        }
        adj.validate()?;
        let symmetric = is_symmetric(&adj);
        Ok(Self {
            adj: Arc::new(adj),
            symmetric,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.rows()
    }

    /// Stored (directed) entries, including self-loops if present.
    pub fn nnz(&self) -> usize {
        self.adj.nnz()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn adjacency(&self) -> &Arc<CsrMatrix> {
        &self.adj
    }

    pub fn indptr(&self) -> &[usize] {
        self.adj.indptr()
    }

    pub fn indices(&self) -> &[usize] {
        self.adj.indices()
    }

    pub fn weights(&self) -> &[f64] {
        self.adj.values()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj.indices()[self.adj.row_range(v)]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj.find(u, v).is_some()
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.adj.get(u, v)
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.num_nodes() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Nodes at hop distance `1..=m` from `v`, sorted ascending.
    pub fn within_hops(&self, v: usize, m: usize) -> Vec<usize> {
        let n = self.num_nodes();
        let mut dist = vec![usize::MAX; n];
        dist[v] = 0;
        let mut queue = VecDeque::from([v]);
        let mut out = Vec::new();
        while let Some(u) = queue.pop_front() {
            if dist[u] == m {
                continue;
            }
            for &w in self.neighbors(u) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    out.push(w);
                    queue.push_back(w);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Number of connected components (ignoring edge direction).
    pub fn connected_components(&self) -> Vec<usize> {
        let n = self.num_nodes();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &w in self.neighbors(u) {
                    if comp[w] == usize::MAX {
                        comp[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

fn is_symmetric(adj: &CsrMatrix) -> bool {
    (0..adj.rows()).all(|u| {
        adj.row_range(u)
            .all(|k| adj.find(adj.indices()[k], u).is_some())
    })
}

/// Symmetric normalisation `D^{-1/2}(A+I)D^{-1/2}`, or `D^{-1/2}AD^{-1/2}`
/// when `add_self_loops` is false.
pub fn normalize_adjacency(graph: &SparseGraph, add_self_loops: bool) -> Result<SparseGraph> {
    if !graph.is_symmetric() {
        return Err(contract("normalize_adjacency needs a symmetric graph"));
    }
    let n = graph.num_nodes();
    let adj = graph.adjacency();
    let mut trip = Vec::with_capacity(adj.nnz() + n);
    for u in 0..n {
        let mut has_loop = false;
        for k in adj.row_range(u) {
            let v = adj.indices()[k];
            let mut w = adj.values()[k];
            if u == v && add_self_loops {
                w += 1.0;
                has_loop = true;
            }
            trip.push((u, v, w));
        }
        if add_self_loops && !has_loop {
            trip.push((u, u, 1.0));
        }
    }
    let mut degree = vec![0.0; n];
    for &(u, _, w) in &trip {
        degree[u] += w;
    }
    if let Some(v) = degree.iter().position(|&d| d <= 0.0) {
        return Err(contract(format!("node {v} has zero degree; enable self-loops or remove it")));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let trip = trip
        .into_iter()
        .map(|(u, v, w)| (u, v, w * inv_sqrt[u] * inv_sqrt[v]))
        .collect();
    Ok(SparseGraph {
        adj: Arc::new(CsrMatrix::from_triplets(n, n, trip)?),
        symmetric: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn single_node_self_loop() {
        let g = SparseGraph::from_edges(1, &[], true).unwrap();
        let a = normalize_adjacency(&g, true).unwrap();
        assert_eq!(a.weight(0, 0), 1.0);
        assert_eq!(a.nnz(), 1);
    }

    #[test]
    fn two_connected_nodes() {
        let g = SparseGraph::from_edges(2, &[(0, 1)], true).unwrap();
        let a = normalize_adjacency(&g, true).unwrap();
        for u in 0..2 {
            for v in 0..2 {
                assert_abs_diff_eq!(a.weight(u, v), 0.5, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn star_hub_leaf_weight() {
        let g = SparseGraph::from_edges(4, &[(0, 1), (0, 2), (0, 3)], true).unwrap();
        let a = normalize_adjacency(&g, true).unwrap();
        assert_abs_diff_eq!(a.weight(0, 1), 1.0 / (4.0f64 * 2.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(a.weight(0, 1), 0.3536, epsilon = 1e-4);
    }

    #[test]
    fn isolated_node_without_loops_is_an_error() {
        let g = SparseGraph::from_edges(3, &[(0, 1)], true).unwrap();
        let err = normalize_adjacency(&g, false).unwrap_err();
        assert!(err.to_string().contains("node 2"));
    }

    #[test]
    fn asymmetric_graph_rejected() {
        let g = SparseGraph::from_edges(2, &[(0, 1)], false).unwrap();
        assert!(!g.is_symmetric());
        assert!(normalize_adjacency(&g, true).is_err());
    }

    #[test]
    fn edges_deduplicated_and_loops_dropped() {
        let g = SparseGraph::from_edges(3, &[(0, 1), (1, 0), (0, 1), (2, 2)], true).unwrap();
        assert_eq!(g.nnz(), 2);
        assert_eq!(g.undirected_edges(), vec![(0, 1)]);
    }

    #[test]
    fn hops_on_a_path() {
        let g = SparseGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)], true).unwrap();
        assert_eq!(g.within_hops(0, 1), vec![1]);
        assert_eq!(g.within_hops(0, 2), vec![1, 2]);
        assert_eq!(g.within_hops(1, 5), vec![0, 2, 3]);
    }

    fn random_graph() -> impl Strategy<Value = SparseGraph> {
        (2usize..30).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..4 * n)
                .prop_map(move |e| SparseGraph::from_edges(n, &e, true).unwrap())
        })
    }

    proptest! {
        #[test]
        fn normalized_weights_bounded_and_symmetric(g in random_graph()) {
            let a = normalize_adjacency(&g, true).unwrap();
            let n = a.num_nodes();
            // sqrt(degree) is the eigenvector for eigenvalue 1
            let sq: Vec<f64> = (0..n).map(|u| ((g.neighbors(u).len() + 1) as f64).sqrt()).collect();
            for u in 0..n {
                let s: f64 = a.adjacency().row_range(u).map(|k| a.weights()[k] * sq[a.indices()[k]]).sum();
                prop_assert!((s - sq[u]).abs() < 1e-9);
                for &v in a.neighbors(u) {
                    let w = a.weight(u, v);
                    prop_assert!(w > 0.0 && w <= 1.0);
                    prop_assert!((w - a.weight(v, u)).abs() < 1e-12);
                }
            }
        }
    }
}
