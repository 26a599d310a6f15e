//! Agreement partition and neighbourhood calibration.
//!
//! A node is high confidence iff both channels give it the same argmax
//! class. A low-confidence node's embedding is replaced by the
//! influence-weighted sum of the embeddings of the high-confidence nodes
//! within `m` hops of it on the topology graph.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::confidence::{mahalanobis_distance, pair_distances, BeliefParams};
use crate::error::{contract, dim, Result};
use crate::graph::SparseGraph;
use crate::tensor::{CsrMatrix, SegmentNorm, Tape, Tensor, Var};

/// Disjoint high/low confidence node sets covering every node. Both lists
/// are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidencePartition {
    pub high: Vec<usize>,
    pub low: Vec<usize>,
    is_high: Vec<bool>,
}

impl ConfidencePartition {
    /// Every node high confidence.
    pub fn all_high(n: usize) -> Self {
        Self::from_mask(vec![true; n])
    }

    pub fn from_mask(is_high: Vec<bool>) -> Self {
        let (mut high, mut low) = (Vec::new(), Vec::new());
        for (v, &h) in is_high.iter().enumerate() {
            if h {
                high.push(v);
            } else {
                low.push(v);
            }
        }
        Self { high, low, is_high }
    }

    pub fn num_nodes(&self) -> usize {
        self.is_high.len()
    }

    pub fn is_high(&self, v: usize) -> bool {
        self.is_high[v]
    }

    pub fn mask(&self) -> &[bool] {
        &self.is_high
    }
}

/// Splits nodes by whether the row argmaxes of the two channel outputs agree.
pub fn partition_by_agreement(logits1: &Tensor, logits2: &Tensor) -> Result<ConfidencePartition> {
    if logits1.shape() != logits2.shape() {
        return Err(dim(
            "partition_by_agreement",
            format!("{:?} vs {:?}", logits1.shape(), logits2.shape()),
        ));
    }
    let a = logits1.argmax_rows();
    let b = logits2.argmax_rows();
    Ok(ConfidencePartition::from_mask(a.iter().zip(&b).map(|(x, y)| x == y).collect()))
}

/// Every node's neighbours within `m` hops (self excluded), sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodIndex {
    m: usize,
    lists: Vec<Vec<usize>>,
}

impl NeighborhoodIndex {
    pub fn build(graph: &SparseGraph, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(contract("calibration hop count m must be >= 1"));
        }
        let lists = (0..graph.num_nodes()).map(|v| graph.within_hops(v, m)).collect();
        Ok(Self { m, lists })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.lists[v]
    }

    /// For each low-confidence node, its high-confidence neighbours; empty
    /// for high-confidence nodes.
    pub fn candidates(&self, partition: &ConfidencePartition) -> Result<Vec<Vec<usize>>> {
        if partition.num_nodes() != self.lists.len() {
            return Err(dim(
                "candidates",
                format!("partition of {} nodes, index of {}", partition.num_nodes(), self.lists.len()),
            ));
        }
        Ok(self
            .lists
            .iter()
            .enumerate()
            .map(|(u, nb)| {
                if partition.is_high(u) {
                    Vec::new()
                } else {
                    nb.iter().copied().filter(|&v| partition.is_high(v)).collect()
                }
            })
            .collect())
    }
}

/// One-shot form of [`NeighborhoodIndex::candidates`].
pub fn m_hop_high_conf_neighbors(
    graph: &SparseGraph,
    partition: &ConfidencePartition,
    m: usize,
) -> Result<Vec<Vec<usize>>> {
    NeighborhoodIndex::build(graph, m)?.candidates(partition)
}

/// The sparse mixing matrix that maps channel embeddings to calibrated ones.
///
/// Row `u` holds a single fixed unit entry at `(u, u)` when `u` is high
/// confidence or has no candidates; otherwise one entry per candidate whose
/// weight is the influence between `u` and that candidate.
#[derive(Clone, Debug)]
pub struct CalibrationPlan {
    pattern: Arc<CsrMatrix>,
    rows: Arc<Vec<usize>>,
    cols: Arc<Vec<usize>>,
    indptr: Arc<Vec<usize>>,
    fixed: Arc<Vec<bool>>,
}

impl CalibrationPlan {
    pub fn new(partition: &ConfidencePartition, candidates: &[Vec<usize>]) -> Result<Self> {
        let n = partition.num_nodes();
        if candidates.len() != n {
            return Err(dim("calibration", format!("{} candidate lists for {n} nodes", candidates.len())));
        }
        let (mut indptr, mut rows, mut cols, mut fixed) = (vec![0], Vec::new(), Vec::new(), Vec::new());
        for (u, cands) in candidates.iter().enumerate() {
            if partition.is_high(u) || cands.is_empty() {
                rows.push(u);
                cols.push(u);
                fixed.push(true);
            } else {
                for &v in cands {
                    rows.push(u);
                    cols.push(v);
                    fixed.push(false);
                }
            }
            indptr.push(cols.len());
        }
        let pattern = CsrMatrix::new(n, n, indptr.clone(), cols.clone(), vec![1.0; cols.len()])?;
        Ok(Self {
            pattern: Arc::new(pattern),
            rows: Arc::new(rows),
            cols: Arc::new(cols),
            indptr: Arc::new(indptr),
            fixed: Arc::new(fixed),
        })
    }

    /// True when every row passes its embedding through unchanged.
    pub fn is_identity(&self) -> bool {
        self.fixed.iter().all(|&f| f)
    }

    /// Calibrated embeddings `z` for channel embeddings `h` on the tape.
    /// Differentiable in `h`, `mu` and `log_var`. With `normalize`, each
    /// rebuilt row is divided by the sum of its influences.
    pub fn apply(&self, tape: &mut Tape, h: Var, mu: Var, log_var: Var, eps: f64, normalize: bool) -> Result<Var> {
        if self.is_identity() {
            return Ok(h);
        }
        let d = pair_distances(tape, mu, log_var, &self.rows, &self.cols)?;
        let d = tape.clamp_min(d, eps)?;
        let r = tape.reciprocal(d)?;
        let norm = if normalize { SegmentNorm::Sum } else { SegmentNorm::None };
        let w = tape.segment_normalize(r, &self.indptr, &self.fixed, norm)?;
        tape.spmm_weighted(&self.pattern, w, h)
    }
}

/// Reference calibration on plain tensors.
pub fn calibrate_embeddings(
    h: &Tensor,
    partition: &ConfidencePartition,
    candidates: &[Vec<usize>],
    beliefs: &BeliefParams,
    eps: f64,
    normalize: bool,
) -> Result<Tensor> {
    if h.rows() != partition.num_nodes() || candidates.len() != h.rows() || beliefs.num_nodes() != h.rows() {
        return Err(dim("calibrate_embeddings", "embedding, partition, candidates and beliefs disagree on n"));
    }
    let mut z = h.clone();
    for &u in &partition.low {
        let cands = &candidates[u];
        if cands.is_empty() {
            continue;
        }
        let r: Vec<f64> = cands
            .iter()
            .map(|&v| 1.0 / mahalanobis_distance(u, v, beliefs).max(eps))
            .collect();
        let total: f64 = if normalize { r.iter().sum() } else { 1.0 };
        let row = z.row_mut(u);
        row.iter_mut().for_each(|x| *x = 0.0);
        for (&v, &rv) in cands.iter().zip(&r) {
            for (o, &x) in row.iter_mut().zip(h.row(v)) {
                *o += rv / total * x;
            }
        }
    }
    Ok(z)
}
