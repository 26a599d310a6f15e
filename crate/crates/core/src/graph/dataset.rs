use super::{Split, SparseGraph};
use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Node features, labels, the topology graph and a train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub graph: SparseGraph,
    pub train_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    /// External identifier of each node, in node order.
    pub node_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize, graph: SparseGraph) -> Result<Self> {
        let n = features.rows();
        let ds = Self {
            node_names: (0..n).map(|i| i.to_string()).collect(),
            train_mask: vec![false; n],
            test_mask: vec![false; n],
            features,
            labels,
            num_classes,
            graph,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.num_features() == 0 {
            return Err(contract("dataset has no feature columns"));
        }
        if !self.features.is_finite() {
            return Err(contract("dataset features contain non-finite values"));
        }
        if self.labels.len() != n || self.graph.num_nodes() != n || self.node_names.len() != n {
            return Err(contract(format!(
                "dataset sizes disagree: {n} feature rows, {} labels, {} graph nodes",
                self.labels.len(),
                self.graph.num_nodes()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(contract(format!("label {l} outside 0..{}", self.num_classes)));
        }
        if self.train_mask.len() != n || self.test_mask.len() != n {
            return Err(contract("mask length differs from node count"));
        }
        if self.train_mask.iter().zip(&self.test_mask).any(|(a, b)| *a && *b) {
            return Err(contract("train and test masks overlap"));
        }
        Ok(())
    }

    pub fn apply_split(&mut self, split: &Split) -> Result<()> {
        if split.train.len() != self.num_nodes() || split.test.len() != self.num_nodes() {
            return Err(contract("split size differs from node count"));
        }
        self.train_mask = split.train.clone();
        self.test_mask = split.test.clone();
        self.validate()
    }

    pub fn train_nodes(&self) -> Vec<usize> {
        mask_indices(&self.train_mask)
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        mask_indices(&self.test_mask)
    }

    /// Node count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

pub(crate) fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

/// Scales each nonzero row to unit L1 norm; zero rows stay zero.
pub fn row_normalize_features(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm: f64 = row.iter().map(|v| v.abs()).sum();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}
