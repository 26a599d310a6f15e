//! Objective terms, on the tape and as plain reference computations.

use std::sync::Arc;

use crate::confidence::{mahalanobis_distance, pair_distances, BeliefParams};
use crate::error::{contract, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Weight of the per-channel auxiliary cross-entropy.
pub const AUX_WEIGHT: f64 = 0.5;

/// `-sum_i ln max(p[i, label_i], floor)` over `(node, label)` pairs.
pub fn loss_cross(tape: &mut Tape, probs: Var, targets: &Arc<Vec<(usize, usize)>>) -> Result<Var> {
    let p = tape.pick(probs, targets)?;
    let p = tape.clamp_min(p, PROB_FLOOR)?;
    let l = tape.log(p)?;
    let s = tape.sum(l)?;
    tape.scale(s, -1.0)
}

/// Sum of belief distances over undirected edges `(us[i], vs[i])`.
pub fn loss_smooth(tape: &mut Tape, mu: Var, log_var: Var, us: &Arc<Vec<usize>>, vs: &Arc<Vec<usize>>) -> Result<Var> {
    if us.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let d = pair_distances(tape, mu, log_var, us, vs)?;
    tape.sum(d)
}

/// `sum_v (mu_v - y_v)^2 . (exp(-log_var_v) + 1/phi)` over labelled nodes,
/// with `y` the one-hot label rows.
pub fn loss_label(
    tape: &mut Tape,
    mu: Var,
    log_var: Var,
    nodes: &Arc<Vec<usize>>,
    labels: &[usize],
    phi: f64,
) -> Result<Var> {
    if !(phi > 0.0) {
        return Err(contract(format!("phi={phi} must be > 0")));
    }
    let c = tape.shape(mu).1;
    let mut y = Tensor::zeros(nodes.len(), c);
    for (i, &v) in nodes.iter().enumerate() {
        y.set(i, labels[v], 1.0);
    }
    let y = tape.constant(y);
    let m = tape.gather_rows(mu, nodes)?;
    let diff = tape.sub(m, y)?;
    let sq = tape.mul(diff, diff)?;
    let lv = tape.gather_rows(log_var, nodes)?;
    let nlv = tape.scale(lv, -1.0)?;
    let prec = tape.exp(nlv)?;
    let iso = tape.constant(Tensor::full(nodes.len(), c, 1.0 / phi));
    let w = tape.add(prec, iso)?;
    let t = tape.mul(sq, w)?;
    tape.sum(t)
}

/// Tape handles of the objective's parts.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub cross: Var,
    pub smooth: Var,
    pub label: Var,
    /// Summed cross-entropies of the two channel heads.
    pub aux: Var,
}

/// `cross + lambda1 smooth + lambda2 label + AUX_WEIGHT aux`.
pub fn total_loss(tape: &mut Tape, parts: &LossParts, lambda1: f64, lambda2: f64) -> Result<Var> {
    let s = tape.scale(parts.smooth, lambda1)?;
    let l = tape.scale(parts.label, lambda2)?;
    let a = tape.scale(parts.aux, AUX_WEIGHT)?;
    let t = tape.add(parts.cross, s)?;
    let t = tape.add(t, l)?;
    tape.add(t, a)
}

/// Reference smoothness term.
pub fn loss_smooth_value(beliefs: &BeliefParams, edges: &[(usize, usize)]) -> f64 {
    edges.iter().map(|&(u, v)| mahalanobis_distance(u, v, beliefs)).sum()
}

/// Reference label-fit term.
pub fn loss_label_value(beliefs: &BeliefParams, labels: &[usize], nodes: &[usize], phi: f64) -> f64 {
    let mut total = 0.0;
    for &v in nodes {
        for k in 0..beliefs.mu.cols() {
            let y = if labels[v] == k { 1.0 } else { 0.0 };
            let d = beliefs.mu.get(v, k) - y;
            total += d * d * ((-beliefs.log_var.get(v, k)).exp() + 1.0 / phi);
        }
    }
    total
}

/// Reference cross-entropy.
pub fn loss_cross_value(probs: &Tensor, labels: &[usize], nodes: &[usize]) -> f64 {
    nodes.iter().map(|&v| -probs.get(v, labels[v]).max(PROB_FLOOR).ln()).sum()
}
