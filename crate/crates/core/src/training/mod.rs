//! The dual-channel model, its training loop and evaluation, plus the plain
//! GCN used as a baseline and for pseudo-label training.

mod config;
mod gcn;
mod losses;
mod metrics;

pub use config::{Preset, TrainConfig};
pub use gcn::{pseudo_label_train, train_gcn, GcnConfig, GcnResult, PseudoLabelConfig, PseudoLabelOutcome, PseudoLabels};
pub use losses::{
    loss_cross, loss_cross_value, loss_label, loss_label_value, loss_smooth, loss_smooth_value, total_loss, LossParts,
    AUX_WEIGHT, PROB_FLOOR,
};
pub use metrics::{classification_scores, Evaluation, Metrics};

use std::io::{Read, Write};
use std::sync::Arc;

use crate::calibration::{partition_by_agreement, CalibrationPlan, ConfidencePartition, NeighborhoodIndex};
use crate::confidence::{channel_forward, fuse_and_classify, BeliefParams, ChannelNet, ChannelVars, InfluenceOptions, PropagationGraph};
use crate::error::{contract, Error, Result};
use crate::graph::{build_knn_graph, normalize_adjacency, row_normalize_features, Dataset};
use crate::rng::Rng;
use crate::tensor::{xavier_init, Adam, AdamConfig, CsrMatrix, ParamId, ParamStore, Tape, Tensor, Var};
use metrics::accuracy_on;

/// Dataset-derived inputs shared by every forward pass.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub features: Arc<CsrMatrix>,
    pub topology: PropagationGraph,
    pub feature_graph: PropagationGraph,
    pub hops: NeighborhoodIndex,
    edge_u: Arc<Vec<usize>>,
    edge_v: Arc<Vec<usize>>,
}

impl Prepared {
    /// L1-normalises features, builds the KNN feature graph and normalises
    /// both graphs with self-loops.
    pub fn new(ds: &Dataset, k: usize, m: usize) -> Result<Self> {
        ds.validate()?;
        let x = row_normalize_features(&ds.features);
        let knn = build_knn_graph(&x, k)?;
        let topology = PropagationGraph::new(&normalize_adjacency(&ds.graph, true)?);
        let feature_graph = PropagationGraph::new(&normalize_adjacency(&knn, true)?);
        let edges = ds.graph.undirected_edges();
        Ok(Self {
            features: Arc::new(CsrMatrix::from_dense(&x)),
            topology,
            feature_graph,
            hops: NeighborhoodIndex::build(&ds.graph, m)?,
            edge_u: Arc::new(edges.iter().map(|e| e.0).collect()),
            edge_v: Arc::new(edges.iter().map(|e| e.1).collect()),
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct ChannelIds([ParamId; 6]);

impl ChannelIds {
    fn vars(&self, v: &[Var]) -> ChannelVars {
        let i = self.0.map(|p| v[p.0]);
        ChannelVars {
            theta1: i[0],
            theta2: i[1],
            w_exp: i[2],
            b_exp: i[3],
            w_cls: i[4],
            b_cls: i[5],
        }
    }
}

/// Tape handles and values of one forward pass.
#[derive(Clone, Debug)]
pub struct Pass {
    pub fused: Var,
    pub channel_probs: [Var; 2],
    pub h2: [Var; 2],
    pub z: [Var; 2],
    pub mu: Var,
    pub log_var: Var,
    pub partition: ConfidencePartition,
    pub params: Vec<Var>,
}

/// A dual-channel model bound to the graph it was built for.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub params: ParamStore,
    prepared: Prepared,
    num_classes: usize,
    mu: ParamId,
    log_var: ParamId,
    channels: [ChannelIds; 2],
    w_fuse: ParamId,
    b_fuse: ParamId,
}

impl Model {
    pub fn new(ds: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let prepared = Prepared::new(ds, cfg.k, cfg.m)?;
        let (n, d, c) = (ds.num_nodes(), ds.num_features(), ds.num_classes);
        let mut rng = Rng::new(cfg.seed).derive(0);
        let beliefs = if cfg.uniform_beliefs {
            BeliefParams::uniform(n, c)
        } else {
            BeliefParams::init(n, c, &mut rng)?
        };
        let mut params = ParamStore::new();
        let mu = params.add("mu", beliefs.mu);
        let log_var = params.add("log_var", beliefs.log_var);
        let mut channels = Vec::new();
        for ch in ["topology", "feature"] {
            let net = ChannelNet::init(d, cfg.hidden1, cfg.hidden2, c, cfg.dropout, &mut rng)?;
            channels.push(ChannelIds([
                params.add(format!("{ch}.theta1"), net.theta1),
                params.add(format!("{ch}.theta2"), net.theta2),
                params.add(format!("{ch}.w_exp"), net.w_exp),
                params.add(format!("{ch}.b_exp"), net.b_exp),
                params.add(format!("{ch}.w_cls"), net.w_cls),
                params.add(format!("{ch}.b_cls"), net.b_cls),
            ]));
        }
        let fuse_in = if cfg.no_aggregation { cfg.hidden2 } else { 2 * cfg.hidden2 };
        let w_fuse = params.add("fuse.w", xavier_init(fuse_in, c, &mut rng)?);
        let b_fuse = params.add("fuse.b", Tensor::zeros(1, c));
        Ok(Self {
            config: cfg.clone(),
            params,
            prepared,
            num_classes: c,
            mu,
            log_var,
            channels: [channels[0], channels[1]],
            w_fuse,
            b_fuse,
        })
    }

    pub fn prepared(&self) -> &Prepared {
        &self.prepared
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn beliefs(&self) -> BeliefParams {
        BeliefParams {
            mu: self.params.get(self.mu).clone(),
            log_var: self.params.get(self.log_var).clone(),
        }
    }

    /// Weights of channel 0 (topology graph) or 1 (feature graph).
    pub fn channel_net(&self, channel: usize) -> ChannelNet {
        let ids = self.channels[channel].0;
        let get = |i: usize| self.params.get(ids[i]).clone();
        ChannelNet {
            theta1: get(0),
            theta2: get(1),
            w_exp: get(2),
            b_exp: get(3),
            w_cls: get(4),
            b_cls: get(5),
            dropout: self.config.dropout,
        }
    }

    fn influence(&self) -> InfluenceOptions {
        InfluenceOptions {
            eps: self.config.eps,
            norm: self.config.influence_norm,
        }
    }

    /// Runs both channels, partitions by agreement when `calibrate` is set
    /// (otherwise every node counts as high confidence), calibrates and
    /// fuses.
    pub fn forward(&self, tape: &mut Tape, rng: &mut Rng, train: bool, calibrate: bool) -> Result<Pass> {
        let cfg = &self.config;
        let params = self.params.load(tape);
        let (mu, lv) = (params[self.mu.0], params[self.log_var.0]);
        let opts = self.influence();
        let p = &self.prepared;
        let mut outs = Vec::with_capacity(2);
        for (graph, ids) in [&p.topology, &p.feature_graph].into_iter().zip(&self.channels) {
            let w = graph.edge_weights(tape, mu, lv, &opts)?;
            outs.push(channel_forward(tape, graph, w, &p.features, &ids.vars(&params), cfg.dropout, rng, train)?);
        }
        let partition = if calibrate {
            partition_by_agreement(tape.value(outs[0].probs), tape.value(outs[1].probs))?
        } else {
            ConfidencePartition::all_high(p.topology.num_nodes())
        };
        let plan = CalibrationPlan::new(&partition, &p.hops.candidates(&partition)?)?;
        let z1 = plan.apply(tape, outs[0].h2, mu, lv, cfg.eps, cfg.calibrate_normalize)?;
        let z2 = plan.apply(tape, outs[1].h2, mu, lv, cfg.eps, cfg.calibrate_normalize)?;
        let second = if cfg.no_aggregation { None } else { Some(z2) };
        let fused = fuse_and_classify(tape, z1, second, params[self.w_fuse.0], params[self.b_fuse.0])?;
        Ok(Pass {
            fused,
            channel_probs: [outs[0].probs, outs[1].probs],
            h2: [outs[0].h2, outs[1].h2],
            z: [z1, z2],
            mu,
            log_var: lv,
            partition,
            params,
        })
    }

    /// Objective parts for a forward pass, supervised on `train_nodes`.
    pub fn loss_parts(&self, tape: &mut Tape, pass: &Pass, labels: &[usize], train_nodes: &Arc<Vec<usize>>) -> Result<LossParts> {
        let targets: Arc<Vec<(usize, usize)>> = Arc::new(train_nodes.iter().map(|&v| (v, labels[v])).collect());
        let cross = loss_cross(tape, pass.fused, &targets)?;
        let a1 = loss_cross(tape, pass.channel_probs[0], &targets)?;
        let a2 = loss_cross(tape, pass.channel_probs[1], &targets)?;
        let aux = tape.add(a1, a2)?;
        let p = &self.prepared;
        let smooth = loss_smooth(tape, pass.mu, pass.log_var, &p.edge_u, &p.edge_v)?;
        let label = loss_label(tape, pass.mu, pass.log_var, train_nodes, labels, self.config.phi)?;
        Ok(LossParts { cross, smooth, label, aux })
    }

    /// Eval-mode forward values: `(fused probabilities, partition)`.
    pub fn predict(&self, calibrate: bool) -> Result<(Tensor, ConfidencePartition)> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, &mut Rng::new(0), false, calibrate)?;
        let partition = partition_by_agreement(tape.value(pass.channel_probs[0]), tape.value(pass.channel_probs[1]))?;
        Ok((tape.value(pass.fused).clone(), partition))
    }

    /// Eval-mode fused representation `[z | z']` (just `z` without
    /// aggregation), one row per node.
    pub fn embeddings(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, &mut Rng::new(0), false, !self.config.no_calibration)?;
        if self.config.no_aggregation {
            return Ok(tape.value(pass.z[0]).clone());
        }
        let cat = tape.concat_cols(pass.z[0], pass.z[1])?;
        Ok(tape.value(cat).clone())
    }

    /// Writes every parameter as `name length (u32), name, rows (u64),
    /// cols (u64), values (f64)`, little endian, after a magic and count.
    pub fn write_params<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(PARAM_MAGIC)?;
        out.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for (name, t) in self.params.iter() {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(t.rows() as u64).to_le_bytes())?;
            out.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

const PARAM_MAGIC: &[u8; 8] = b"DCCGCN01";

/// Reads a parameter dump written by [`Model::write_params`].
pub fn read_params<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != PARAM_MAGIC {
        return Err(contract("not a parameter dump"));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |input: &mut R| -> Result<u64> {
        input.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let count = read_u64(&mut input)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut name)?;
        let rows = read_u64(&mut input)? as usize;
        let cols = read_u64(&mut input)? as usize;
        let mut data = vec![0.0; rows * cols];
        for v in &mut data {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let name = String::from_utf8(name).map_err(|_| contract("parameter name is not UTF-8"))?;
        out.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

fn as_divergence(err: Error, epoch: usize) -> Error {
    match err {
        Error::Numeric { .. } => Error::Divergence { epoch },
        other => other,
    }
}

/// Trains a model on `ds`'s training mask and scores it on the test mask.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(Model, Metrics)> {
    let mut model = Model::new(ds, cfg)?;
    let train_nodes = Arc::new(ds.train_nodes());
    if train_nodes.is_empty() {
        return Err(contract("training mask is empty"));
    }
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg, &model.params)?;
    let mut rng = Rng::new(cfg.seed).derive(1);
    let mut tape = Tape::new();
    let (mut loss_trace, mut cross_trace) = (Vec::with_capacity(cfg.epochs), Vec::with_capacity(cfg.epochs));
    for epoch in 1..=cfg.epochs {
        let calibrate = !cfg.no_calibration && epoch > cfg.warmup;
        let step = |tape: &mut Tape, model: &Model, rng: &mut Rng| -> Result<(Vec<Option<Tensor>>, f64, f64)> {
            tape.clear();
            let pass = model.forward(tape, rng, true, calibrate)?;
            let parts = model.loss_parts(tape, &pass, &ds.labels, &train_nodes)?;
            let loss = total_loss(tape, &parts, cfg.lambda1, cfg.lambda2)?;
            let (lv, cv) = (tape.value(loss).item(), tape.value(parts.cross).item());
            if !lv.is_finite() {
                return Err(Error::Numeric { op: "loss" });
            }
            let mut grads = tape.backward(loss)?;
            let mut g = model.params.collect_grads(&pass.params, &mut grads);
            if cfg.uniform_beliefs {
                for id in [model.mu, model.log_var] {
                    let t = model.params.get(id);
                    g[id.0] = Some(Tensor::zeros(t.rows(), t.cols()));
                }
            }
            Ok((g, lv, cv))
        };
        let (grads, lv, cv) = step(&mut tape, &model, &mut rng).map_err(|e| as_divergence(e, epoch))?;
        loss_trace.push(lv);
        cross_trace.push(cv);
        adam.step(&mut model.params, &grads)?;
        if !model.params.iter().all(|(_, t)| t.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("epoch {epoch}: loss {lv:.6} cross {cv:.6}");
    }
    let test = evaluate(&model, ds, &ds.test_mask)?;
    let (pred, _) = model.predict(!cfg.no_calibration)?;
    let train_acc = accuracy_on(&pred.argmax_rows(), &ds.labels, &train_nodes).unwrap_or(0.0);
    let metrics = Metrics::new(test, train_acc, loss_trace, cross_trace, cfg.clone());
    Ok((model, metrics))
}

/// Scores `model` on the nodes selected by `mask`.
pub fn evaluate(model: &Model, ds: &Dataset, mask: &[bool]) -> Result<Evaluation> {
    let nodes: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    if nodes.is_empty() {
        return Err(contract("evaluation mask is empty"));
    }
    let calibrate = !model.config.no_calibration;
    let (after, partition) = model.predict(calibrate)?;
    let after = after.argmax_rows();
    let before = if calibrate { model.predict(false)?.0.argmax_rows() } else { after.clone() };
    let (accuracy, macro_f1) = classification_scores(&after, &ds.labels, &nodes, ds.num_classes)?;
    let (high, low): (Vec<usize>, Vec<usize>) = nodes.iter().partition(|&&v| partition.is_high(v));
    Ok(Evaluation {
        accuracy,
        macro_f1,
        low_conf_count: low.len(),
        low_conf_acc_before: accuracy_on(&before, &ds.labels, &low),
        low_conf_acc_after: accuracy_on(&after, &ds.labels, &low),
        high_conf_acc: accuracy_on(&after, &ds.labels, &high),
    })
}
