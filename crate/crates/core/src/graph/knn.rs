//! Cosine k-nearest-neighbour feature graph.
//!
//! Distance between two feature rows is the reciprocal cosine similarity
//! `|x_i||x_j| / (x_i . x_j)`. Pairs whose similarity is at or below
//! [`MIN_SIMILARITY`] have no finite distance and are never linked.

use super::SparseGraph;
use crate::error::{contract, Result};
use crate::tensor::{gemm, Tensor};

/// Smallest cosine similarity a neighbour pair may have.
pub const MIN_SIMILARITY: f64 = 1e-12;

const BLOCK_ROWS: usize = 256;

/// Reciprocal cosine distance between two vectors (`inf` when the cosine
/// is not positive).
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if dot <= 0.0 {
        return f64::INFINITY;
    }
    na * nb / dot
}

/// Each node's `k` nearest admissible neighbours, closest first, ties to the
/// lower node index. Nodes with fewer than `k` admissible candidates keep
/// what they have.
pub fn knn_lists(x: &Tensor, k: usize) -> Result<Vec<Vec<usize>>> {
    let (n, d) = x.shape();
    if k == 0 {
        return Err(contract("knn needs k >= 1"));
    }
    if k >= n {
        return Err(contract(format!("knn needs k < n, got k={k} with n={n}")));
    }
    let norms: Vec<f64> = (0..n).map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(contract(format!("knn: feature row of node {i} has zero norm")));
    }

    let mut lists = Vec::with_capacity(n);
    let mut gram = vec![0.0; BLOCK_ROWS * n];
    for start in (0..n).step_by(BLOCK_ROWS) {
        let rows = BLOCK_ROWS.min(n - start);
        let block = &x.data()[start * d..(start + rows) * d];
        let g = &mut gram[..rows * n];
        gemm(false, true, rows, d, n, 1.0, block, x.data(), 0.0, g);
        for r in 0..rows {
            let i = start + r;
            let mut cands: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (g[r * n + j] / (norms[i] * norms[j]), j))
                .filter(|&(s, _)| s > MIN_SIMILARITY)
                .collect();
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            cands.truncate(k);
            let mut nb: Vec<usize> = cands.into_iter().map(|(_, j)| j).collect();
            nb.sort_unstable();
            lists.push(nb);
        }
    }
    Ok(lists)
}

/// KNN feature graph, symmetrised by union, unit weights.
pub fn build_knn_graph(x: &Tensor, k: usize) -> Result<SparseGraph> {
    let lists = knn_lists(x, k)?;
    let edges: Vec<(usize, usize)> = lists
        .iter()
        .enumerate()
        .flat_map(|(i, nb)| nb.iter().map(move |&j| (i, j)))
        .collect();
    SparseGraph::from_edges(x.rows(), &edges, true)
}
