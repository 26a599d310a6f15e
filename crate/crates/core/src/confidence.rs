//! Per-node label beliefs, the influence weights they induce on graph edges,
//! and the confidence-weighted two-layer channel network.
//!
//! A belief is a mean score vector `mu_v` and a diagonal covariance
//! `exp(log_var_v)`. The distance between two beliefs is
//! `sum_k (mu_u,k - mu_v,k)^2 (exp(-log_var_u,k) + exp(-log_var_v,k))` and
//! the influence of `u` on `v` is its reciprocal, clamped at `eps`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{contract, dim, Result};
use crate::graph::SparseGraph;
use crate::rng::Rng;
use crate::tensor::{xavier_init, CsrMatrix, SegmentNorm, Tape, Tensor, Var};

/// Default lower clamp on belief distances.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Mean scores and log-variances of every node's label belief (`n x c`
/// each). The covariance `exp(log_var)` is positive by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefParams {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl BeliefParams {
    /// Xavier-initialised means and identity covariances.
    pub fn init(n: usize, c: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            mu: xavier_init(n, c, rng)?,
            log_var: Tensor::zeros(n, c),
        })
    }

    /// Identical beliefs everywhere: all pairwise distances are zero.
    pub fn uniform(n: usize, c: usize) -> Self {
        Self {
            mu: Tensor::zeros(n, c),
            log_var: Tensor::zeros(n, c),
        }
    }

    pub fn new(mu: Tensor, log_var: Tensor) -> Result<Self> {
        if mu.shape() != log_var.shape() {
            return Err(dim("beliefs", format!("mu {:?} vs log_var {:?}", mu.shape(), log_var.shape())));
        }
        Ok(Self { mu, log_var })
    }

    pub fn num_nodes(&self) -> usize {
        self.mu.rows()
    }
}

/// Covariance-weighted symmetric distance between the beliefs of `u` and `v`.
pub fn mahalanobis_distance(u: usize, v: usize, beliefs: &BeliefParams) -> f64 {
    let (mu, lv) = (&beliefs.mu, &beliefs.log_var);
    (0..mu.cols())
        .map(|k| {
            let d = mu.get(u, k) - mu.get(v, k);
            d * d * ((-lv.get(u, k)).exp() + (-lv.get(v, k)).exp())
        })
        .sum()
}

/// `1 / max(d, eps)` for every stored entry of `graph`, in CSR order.
pub fn influence_weights(beliefs: &BeliefParams, graph: &SparseGraph, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(contract(format!("influence clamp eps={eps} must be positive")));
    }
    let mut out = Vec::with_capacity(graph.nnz());
    for u in 0..graph.num_nodes() {
        for &v in graph.neighbors(u) {
            out.push(1.0 / mahalanobis_distance(u, v, beliefs).max(eps));
        }
    }
    Ok(out)
}

/// Belief distances for node pairs `(us[i], vs[i])`, as a `len x 1` column
/// on the tape.
pub fn pair_distances(tape: &mut Tape, mu: Var, log_var: Var, us: &Arc<Vec<usize>>, vs: &Arc<Vec<usize>>) -> Result<Var> {
    let mu_u = tape.gather_rows(mu, us)?;
    let mu_v = tape.gather_rows(mu, vs)?;
    let diff = tape.sub(mu_u, mu_v)?;
    let sq = tape.mul(diff, diff)?;
    let lv_u = tape.gather_rows(log_var, us)?;
    let lv_v = tape.gather_rows(log_var, vs)?;
    let nu = tape.scale(lv_u, -1.0)?;
    let nv = tape.scale(lv_v, -1.0)?;
    let pu = tape.exp(nu)?;
    let pv = tape.exp(nv)?;
    let prec = tape.add(pu, pv)?;
    let weighted = tape.mul(sq, prec)?;
    tape.row_sum(weighted)
}

/// How influence weights enter the propagation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceOptions {
    pub eps: f64,
    /// `None` multiplies every normalised-adjacency entry by its raw
    /// influence. `Mean`/`Sum` rescale the influences of each node's
    /// neighbours to mean/sum one and keep the self-loop factor at one.
    pub norm: SegmentNorm,
}

impl Default for InfluenceOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            norm: SegmentNorm::Mean,
        }
    }
}

/// A normalised adjacency with the index arrays needed to reweight its
/// entries on the tape.
#[derive(Clone, Debug)]
pub struct PropagationGraph {
    pub adj: Arc<CsrMatrix>,
    rows: Arc<Vec<usize>>,
    cols: Arc<Vec<usize>>,
    indptr: Arc<Vec<usize>>,
    self_loop: Arc<Vec<bool>>,
}

impl PropagationGraph {
    pub fn new(normalized: &SparseGraph) -> Self {
        let adj = normalized.adjacency().clone();
        let rows = adj.entry_rows();
        let cols = adj.indices().to_vec();
        let self_loop = rows.iter().zip(&cols).map(|(r, c)| r == c).collect();
        Self {
            rows: Arc::new(rows),
            cols: Arc::new(cols),
            indptr: Arc::new(adj.indptr().to_vec()),
            self_loop: Arc::new(self_loop),
            adj,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.rows()
    }

    pub fn nnz(&self) -> usize {
        self.adj.nnz()
    }

    /// Entry weights `r_uv * a_uv` (an `nnz x 1` column) from the beliefs.
    pub fn edge_weights(&self, tape: &mut Tape, mu: Var, log_var: Var, opts: &InfluenceOptions) -> Result<Var> {
        if !(opts.eps > 0.0) {
            return Err(contract(format!("influence clamp eps={} must be positive", opts.eps)));
        }
        let d = pair_distances(tape, mu, log_var, &self.rows, &self.cols)?;
        let d = tape.clamp_min(d, opts.eps)?;
        let r = tape.reciprocal(d)?;
        let r = match opts.norm {
            SegmentNorm::None => r,
            norm => tape.segment_normalize(r, &self.indptr, &self.self_loop, norm)?,
        };
        let a = tape.constant(Tensor::column(self.adj.values().to_vec()));
        tape.mul(r, a)
    }

    /// `(r o A) x` for entry weights from [`PropagationGraph::edge_weights`].
    pub fn propagate(&self, tape: &mut Tape, weights: Var, x: Var) -> Result<Var> {
        tape.spmm_weighted(&self.adj, weights, x)
    }
}

/// Parameters of one channel: two graph convolutions, an expansion layer
/// doubling the width, and a softmax classifier head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelNet {
    pub theta1: Tensor,
    pub theta2: Tensor,
    pub w_exp: Tensor,
    pub b_exp: Tensor,
    pub w_cls: Tensor,
    pub b_cls: Tensor,
    pub dropout: f64,
}

impl ChannelNet {
    pub fn init(d: usize, h1: usize, h2: usize, c: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            theta1: xavier_init(d, h1, rng)?,
            theta2: xavier_init(h1, h2, rng)?,
            w_exp: xavier_init(h2, 2 * h2, rng)?,
            b_exp: Tensor::zeros(1, 2 * h2),
            w_cls: xavier_init(2 * h2, c, rng)?,
            b_cls: Tensor::zeros(1, c),
            dropout,
        })
    }

    /// Loads the weights onto `tape` as trainable leaves.
    pub fn load(&self, tape: &mut Tape) -> ChannelVars {
        ChannelVars {
            theta1: tape.param(self.theta1.clone()),
            theta2: tape.param(self.theta2.clone()),
            w_exp: tape.param(self.w_exp.clone()),
            b_exp: tape.param(self.b_exp.clone()),
            w_cls: tape.param(self.w_cls.clone()),
            b_cls: tape.param(self.b_cls.clone()),
        }
    }

    /// Untaped forward pass returning `(h2, channel probabilities)`.
    pub fn forward(
        &self,
        graph: &PropagationGraph,
        x: &Arc<CsrMatrix>,
        beliefs: &BeliefParams,
        opts: &InfluenceOptions,
        rng: &mut Rng,
        train: bool,
    ) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.load(&mut tape);
        let mu = tape.constant(beliefs.mu.clone());
        let lv = tape.constant(beliefs.log_var.clone());
        let w = graph.edge_weights(&mut tape, mu, lv, opts)?;
        let out = channel_forward(&mut tape, graph, w, x, &vars, self.dropout, rng, train)?;
        Ok((tape.value(out.h2).clone(), tape.value(out.probs).clone()))
    }
}

/// Tape handles of a [`ChannelNet`]'s weights.
#[derive(Clone, Copy, Debug)]
pub struct ChannelVars {
    pub theta1: Var,
    pub theta2: Var,
    pub w_exp: Var,
    pub b_exp: Var,
    pub w_cls: Var,
    pub b_cls: Var,
}

impl ChannelVars {
    pub fn all(&self) -> [Var; 6] {
        [self.theta1, self.theta2, self.w_exp, self.b_exp, self.w_cls, self.b_cls]
    }
}

/// Tape handles produced by one channel.
#[derive(Clone, Copy, Debug)]
pub struct ChannelOutput {
    pub h1: Var,
    pub h2: Var,
    pub probs: Var,
}

/// Two confidence-weighted convolutions followed by the expansion layer and
/// classifier head. `x` is the (constant) feature matrix; the first layer is
/// evaluated as `(r o A)(x theta1)`.
#[allow(clippy::too_many_arguments)]
pub fn channel_forward(
    tape: &mut Tape,
    graph: &PropagationGraph,
    edge_weights: Var,
    x: &Arc<CsrMatrix>,
    net: &ChannelVars,
    dropout: f64,
    rng: &mut Rng,
    train: bool,
) -> Result<ChannelOutput> {
    if x.rows() != graph.num_nodes() {
        return Err(dim("channel_forward", format!("{} feature rows for {} nodes", x.rows(), graph.num_nodes())));
    }
    let xw = tape.spmm(x, net.theta1)?;
    let a1 = graph.propagate(tape, edge_weights, xw)?;
    let h1 = tape.relu(a1)?;
    let h1 = tape.dropout(h1, dropout, rng, train)?;
    let a2 = graph.propagate(tape, edge_weights, h1)?;
    let h2 = tape.matmul(a2, net.theta2)?;
    let e = tape.matmul(h2, net.w_exp)?;
    let e = tape.add_row(e, net.b_exp)?;
    let e = tape.relu(e)?;
    let s = tape.matmul(e, net.w_cls)?;
    let s = tape.add_row(s, net.b_cls)?;
    let probs = tape.row_softmax(s)?;
    Ok(ChannelOutput { h1, h2, probs })
}

/// `softmax([z | z2] w + b)`, or `softmax(z w + b)` when `z2` is absent.
pub fn fuse_and_classify(tape: &mut Tape, z: Var, z2: Option<Var>, w: Var, b: Var) -> Result<Var> {
    let input = match z2 {
        Some(z2) => tape.concat_cols(z, z2)?,
        None => z,
    };
    let s = tape.matmul(input, w)?;
    let s = tape.add_row(s, b)?;
    tape.row_softmax(s)
}
