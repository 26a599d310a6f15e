use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{contract, Result};

/// Accuracy and macro-F1 of `pred` against `labels` on `nodes`.
///
/// Macro-F1 averages over all `c` classes; a class with no true positives
/// (including one absent from both predictions and truth) scores 0.
pub fn classification_scores(pred: &[usize], labels: &[usize], nodes: &[usize], c: usize) -> Result<(f64, f64)> {
    if nodes.is_empty() {
        return Err(contract("cannot score an empty node set"));
    }
    let (mut tp, mut fp, mut fn_) = (vec![0usize; c], vec![0usize; c], vec![0usize; c]);
    let mut correct = 0;
    for &v in nodes {
        let (p, y) = (pred[v], labels[v]);
        if p == y {
            correct += 1;
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let f1_sum: f64 = (0..c)
        .map(|k| {
            if tp[k] == 0 {
                return 0.0;
            }
            let precision = tp[k] as f64 / (tp[k] + fp[k]) as f64;
            let recall = tp[k] as f64 / (tp[k] + fn_[k]) as f64;
            2.0 * precision * recall / (precision + recall)
        })
        .sum();
    Ok((correct as f64 / nodes.len() as f64, f1_sum / c as f64))
}

/// Accuracy on `nodes`, or `None` when it is empty.
pub(crate) fn accuracy_on(pred: &[usize], labels: &[usize], nodes: &[usize]) -> Option<f64> {
    if nodes.is_empty() {
        return None;
    }
    Some(nodes.iter().filter(|&&v| pred[v] == labels[v]).count() as f64 / nodes.len() as f64)
}

/// Scores of a trained model on one node mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Masked nodes on which the two channels disagree.
    pub low_conf_count: usize,
    /// Accuracy on those nodes with embeddings left uncalibrated.
    pub low_conf_acc_before: Option<f64>,
    /// Accuracy on those nodes after calibration.
    pub low_conf_acc_after: Option<f64>,
    /// Accuracy on masked nodes on which the channels agree.
    pub high_conf_acc: Option<f64>,
}

/// Result of a training run, serialised as `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub loss_trace: Vec<f64>,
    /// Fused-classifier cross-entropy per epoch.
    pub cross_entropy_trace: Vec<f64>,
    pub low_conf_count: usize,
    pub low_conf_acc_before: Option<f64>,
    pub low_conf_acc_after: Option<f64>,
    pub high_conf_acc: Option<f64>,
    pub train_accuracy: f64,
    pub config: TrainConfig,
    pub seed: u64,
}

impl Metrics {
    pub fn new(test: Evaluation, train_accuracy: f64, loss_trace: Vec<f64>, cross: Vec<f64>, config: TrainConfig) -> Self {
        Self {
            accuracy: test.accuracy,
            macro_f1: test.macro_f1,
            loss_trace,
            cross_entropy_trace: cross,
            low_conf_count: test.low_conf_count,
            low_conf_acc_before: test.low_conf_acc_before,
            low_conf_acc_after: test.low_conf_acc_after,
            high_conf_acc: test.high_conf_acc,
            train_accuracy,
            seed: config.seed,
            config,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        let labels = [0, 1, 2, 1];
        let all: Vec<usize> = (0..4).collect();
        assert_eq!(classification_scores(&labels, &labels, &all, 3).unwrap(), (1.0, 1.0));
        let (acc, f1) = classification_scores(&[0, 0, 0, 0], &[0, 1, 0, 1], &all, 2).unwrap();
        assert_eq!(acc, 0.5);
        assert!((f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!(classification_scores(&labels, &labels, &[], 3).is_err());
        // a class missing everywhere still counts in the average
        let (_, f1) = classification_scores(&labels, &labels, &all, 4).unwrap();
        assert_eq!(f1, 0.75);
    }
}
