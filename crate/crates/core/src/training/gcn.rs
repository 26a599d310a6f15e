use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::classification_scores;
use super::{train, Metrics, TrainConfig, PROB_FLOOR};
use crate::error::{contract, Error, Result};
use crate::graph::{normalize_adjacency, row_normalize_features, Dataset};
use crate::rng::Rng;
use crate::tensor::{xavier_init, Adam, AdamConfig, CsrMatrix, ParamStore, Tape, Var};

/// A two-layer GCN `softmax(A relu(A X W1) W2)` with mean cross-entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcnConfig {
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            lr: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            epochs: 200,
            seed: 0,
        }
    }
}

impl GcnConfig {
    /// Same optimiser, width, dropout, epochs and seed as a dual-channel run.
    pub fn matching(cfg: &TrainConfig) -> Self {
        Self {
            hidden: cfg.hidden1,
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            dropout: cfg.dropout,
            epochs: cfg.epochs,
            seed: cfg.seed,
        }
    }
}

/// Extra supervised nodes whose loss is switched on after `start_epoch`.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    pub nodes: Vec<usize>,
    pub labels: Vec<usize>,
    pub alpha: f64,
    pub start_epoch: usize,
}

impl PseudoLabels {
    /// Weight of the pseudo-label loss at 1-based `epoch`.
    pub fn alpha_at(&self, epoch: usize) -> f64 {
        if epoch > self.start_epoch {
            self.alpha
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnResult {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub loss_trace: Vec<f64>,
}

fn mean_cross(tape: &mut Tape, probs: Var, targets: &Arc<Vec<(usize, usize)>>) -> Result<Var> {
    let p = tape.pick(probs, targets)?;
    let p = tape.clamp_min(p, PROB_FLOOR)?;
    let l = tape.log(p)?;
    let m = tape.mean(l)?;
    tape.scale(m, -1.0)
}

/// Trains the plain GCN on the training mask (plus `pseudo`, if given) and
/// scores it on the test mask.
pub fn train_gcn(ds: &Dataset, cfg: &GcnConfig, pseudo: Option<&PseudoLabels>) -> Result<GcnResult> {
    ds.validate()?;
    if cfg.epochs == 0 || cfg.hidden == 0 {
        return Err(contract("plain GCN needs epochs >= 1 and hidden >= 1"));
    }
    let train_nodes = ds.train_nodes();
    let test_nodes = ds.test_nodes();
    if train_nodes.is_empty() {
        return Err(contract("training mask is empty"));
    }
    let adj = normalize_adjacency(&ds.graph, true)?.adjacency().clone();
    let x = Arc::new(CsrMatrix::from_dense(&row_normalize_features(&ds.features)));
    let mut rng = Rng::new(cfg.seed).derive(2);
    let mut params = ParamStore::new();
    params.add("w1", xavier_init(ds.num_features(), cfg.hidden, &mut rng)?);
    params.add("w2", xavier_init(cfg.hidden, ds.num_classes, &mut rng)?);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg, &params)?;
    let targets = Arc::new(train_nodes.iter().map(|&v| (v, ds.labels[v])).collect::<Vec<_>>());
    let pseudo_targets = pseudo
        .filter(|p| !p.nodes.is_empty())
        .map(|p| (Arc::new(p.nodes.iter().copied().zip(p.labels.iter().copied()).collect::<Vec<_>>()), p));

    let forward = |tape: &mut Tape, params: &ParamStore, rng: &mut Rng, train: bool| -> Result<(Var, Vec<Var>)> {
        let v = params.load(tape);
        let xw = tape.spmm(&x, v[0])?;
        let h = tape.spmm(&adj, xw)?;
        let h = tape.relu(h)?;
        let h = tape.dropout(h, cfg.dropout, rng, train)?;
        let hw = tape.matmul(h, v[1])?;
        let s = tape.spmm(&adj, hw)?;
        Ok((tape.row_softmax(s)?, v))
    };

    let mut tape = Tape::new();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        tape.clear();
        let (probs, vars) = forward(&mut tape, &params, &mut rng, true)?;
        let mut loss = mean_cross(&mut tape, probs, &targets)?;
        if let Some((pt, p)) = &pseudo_targets {
            let alpha = p.alpha_at(epoch);
            if alpha > 0.0 {
                let lp = mean_cross(&mut tape, probs, pt)?;
                let lp = tape.scale(lp, alpha)?;
                loss = tape.add(loss, lp)?;
            }
        }
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        loss_trace.push(lv);
        let mut grads = tape.backward(loss)?;
        let g = params.collect_grads(&vars, &mut grads);
        adam.step(&mut params, &g)?;
    }
    tape.clear();
    let (probs, _) = forward(&mut tape, &params, &mut rng, false)?;
    let pred = tape.value(probs).argmax_rows();
    let (accuracy, macro_f1) = classification_scores(&pred, &ds.labels, &test_nodes, ds.num_classes)?;
    Ok(GcnResult {
        accuracy,
        macro_f1,
        loss_trace,
    })
}

/// How many high-confidence nodes to pseudo-label and when their loss
/// starts counting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    pub count: usize,
    pub alpha: f64,
    pub start_epoch: usize,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            count: 100,
            alpha: 0.3,
            start_epoch: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelOutcome {
    /// The dual-channel run that supplied the pseudo-labels.
    pub teacher: Metrics,
    pub pseudo: PseudoLabels,
    pub student: GcnResult,
}

/// Trains a dual-channel model, draws `count` unlabelled high-confidence
/// nodes uniformly, labels them with the fused prediction, and trains a
/// fresh plain GCN on the labelled plus pseudo-labelled nodes.
pub fn pseudo_label_train(ds: &Dataset, cfg: &TrainConfig, gcn: &GcnConfig, plc: &PseudoLabelConfig) -> Result<PseudoLabelOutcome> {
    let (model, teacher) = train(ds, cfg)?;
    let (probs, partition) = model.predict(!cfg.no_calibration)?;
    let pred = probs.argmax_rows();
    let mut pool: Vec<usize> = partition.high.iter().copied().filter(|&v| !ds.train_mask[v]).collect();
    if pool.len() < plc.count {
        return Err(contract(format!(
            "only {} unlabelled high-confidence nodes, cannot draw {}",
            pool.len(),
            plc.count
        )));
    }
    Rng::new(cfg.seed).derive(3).shuffle(&mut pool);
    pool.truncate(plc.count);
    pool.sort_unstable();
    let pseudo = PseudoLabels {
        labels: pool.iter().map(|&v| pred[v]).collect(),
        nodes: pool,
        alpha: plc.alpha,
        start_epoch: plc.start_epoch,
    };
    let student = train_gcn(ds, gcn, Some(&pseudo))?;
    Ok(PseudoLabelOutcome { teacher, pseudo, student })
}
