//! Closed-form accuracy bounds for pairs of symmetric-error classifiers and a
//! Monte Carlo simulator to check them against.
//!
//! A classifier with accuracy `p` over `c` classes errs symmetrically: when
//! wrong it outputs each of the other `c - 1` classes with equal probability.
//! `gamma` is the agreement in excess of what two independent such
//! classifiers would show.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::rng::Rng;

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(contract(format!("{name}={p} outside [0, 1]")));
    }
    Ok(())
}

fn check_classes(c: usize) -> Result<()> {
    if c < 2 {
        return Err(contract(format!("need at least 2 classes, got {c}")));
    }
    Ok(())
}

/// Agreement rate of two independent symmetric-error classifiers.
fn independent_agreement(p1: f64, p2: f64, c: usize) -> f64 {
    p1 * p2 + (1.0 - p1) * (1.0 - p2) / (c as f64 - 1.0)
}

/// `p1 (1 - p2) / (1 - p1 p2)`.
pub fn theorem1_bound(p1: f64, p2: f64) -> Result<f64> {
    check_prob("p1", p1)?;
    check_prob("p2", p2)?;
    if p1 * p2 >= 1.0 {
        return Err(contract("agreement bound undefined when p1 * p2 = 1"));
    }
    Ok(p1 * (1.0 - p2) / (1.0 - p1 * p2))
}

/// `(p1 - A) / (1 - A)` with `A` the agreement fraction.
pub fn lowconf_accuracy_exact(p1: f64, p2: f64, c: usize, gamma: f64) -> Result<f64> {
    check_prob("p1", p1)?;
    check_prob("p2", p2)?;
    check_classes(c)?;
    let a = independent_agreement(p1, p2, c) + gamma;
    let den = 1.0 - a;
    if den <= 0.0 {
        return Err(contract(format!("low-confidence accuracy undefined: 1 - agreement = {den}")));
    }
    Ok((p1 - a) / den)
}

/// `p1 p2 + (1 - p1)(1 - p2)/(c - 1) + gamma`, which must lie in `[0, 1]`.
pub fn agreement_fraction(p1: f64, p2: f64, c: usize, gamma: f64) -> Result<f64> {
    check_prob("p1", p1)?;
    check_prob("p2", p2)?;
    check_classes(c)?;
    let a = independent_agreement(p1, p2, c) + gamma;
    if !(0.0..=1.0).contains(&a) {
        return Err(contract(format!("agreement fraction {a} outside [0, 1]")));
    }
    Ok(a)
}

/// `(1 - p1) A`.
pub fn theorem2_bound(p1: f64, p2: f64, c: usize, gamma: f64) -> f64 {
    (1.0 - p1) * (independent_agreement(p1, p2, c) + gamma)
}

/// `A + (1 - A) min(p1, p2) - p1`.
pub fn effective_gain_bound(p1: f64, p2: f64, c: usize, gamma: f64) -> f64 {
    let a = independent_agreement(p1, p2, c) + gamma;
    a + (1.0 - a) * p1.min(p2) - p1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Theorem1,
    Theorem1Refined,
    Theorem2,
    EffectiveGain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub p1: f64,
    pub p2: f64,
    pub c: usize,
    pub gamma: f64,
    pub value: f64,
    pub kind: BoundKind,
}

pub fn evaluate_bound(kind: BoundKind, p1: f64, p2: f64, c: usize, gamma: f64) -> Result<BoundPoint> {
    check_prob("p1", p1)?;
    check_prob("p2", p2)?;
    let value = match kind {
        BoundKind::Theorem1 => theorem1_bound(p1, p2)?,
        BoundKind::Theorem1Refined => lowconf_accuracy_exact(p1, p2, c, gamma)?,
        BoundKind::Theorem2 => {
            check_classes(c)?;
            theorem2_bound(p1, p2, c, gamma)
        }
        BoundKind::EffectiveGain => {
            check_classes(c)?;
            effective_gain_bound(p1, p2, c, gamma)
        }
    };
    if !value.is_finite() {
        return Err(contract(format!("{kind:?} bound is not finite")));
    }
    Ok(BoundPoint { p1, p2, c, gamma, value, kind })
}

/// Monte Carlo setup: `n` samples, `c` classes, channel accuracies and the
/// probability `rho` that channel 2 reuses channel 1's uniform draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: u64,
    pub c: usize,
    pub p1: f64,
    pub p2: f64,
    pub rho: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(contract("simulation needs n >= 1"));
        }
        check_classes(self.c)?;
        for (name, p) in [("p1", self.p1), ("p2", self.p2)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(contract(format!("{name}={p} outside (0, 1)")));
            }
        }
        check_prob("rho", self.rho)
    }
}

/// Tallies of a simulation run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub spec: SimSpec,
    /// Both channels correct.
    pub n_r: u64,
    /// Both wrong with the same output.
    pub n_w: u64,
    /// Agreements, `n_r + n_w`.
    pub n_a: u64,
    /// Channel 1 correct, over all samples.
    pub n1_correct: u64,
    /// Channel 1 correct among disagreements.
    pub n1_correct_dis: u64,
    pub agreement: f64,
    /// Channel-1 accuracy on the samples where the channels disagree.
    pub p_lowconf: f64,
    /// `(n1_correct - n_a) / (n - n_a)`: the low-confidence accuracy obtained
    /// when every agreement is booked as a channel-1 success.
    pub p_lowconf_all_agreements_correct: f64,
    /// Measured agreement minus the independent-channel agreement rate.
    pub gamma_hat: f64,
}

const SIM_CHUNK: u64 = 1 << 16;

#[derive(Default)]
struct Tally {
    n_r: u64,
    n_w: u64,
    n1: u64,
    n1_dis: u64,
}

fn simulate_chunk(spec: &SimSpec, len: u64, rng: &mut Rng) -> Tally {
    let c = spec.c;
    let wrong = |truth: usize, rng: &mut Rng| (truth + 1 + rng.below(c - 1)) % c;
    let mut t = Tally::default();
    for _ in 0..len {
        let truth = rng.below(c);
        let u1 = rng.uniform();
        let u2 = if rng.bernoulli(spec.rho) { u1 } else { rng.uniform() };
        let ok1 = u1 < spec.p1;
        let ok2 = u2 < spec.p2;
        let g1 = if ok1 { truth } else { wrong(truth, rng) };
        let g2 = if ok2 { truth } else { wrong(truth, rng) };
        t.n1 += ok1 as u64;
        if g1 == g2 {
            if ok1 {
                t.n_r += 1;
            } else {
                t.n_w += 1;
            }
        } else {
            t.n1_dis += ok1 as u64;
        }
    }
    t
}

/// Runs the simulation in fixed-size chunks, each seeded from `(seed,
/// chunk index)`, so results depend only on the spec.
pub fn simulate(spec: &SimSpec) -> Result<SimResult> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut total = Tally::default();
    let chunks = spec.n.div_ceil(SIM_CHUNK);
    for i in 0..chunks {
        let len = SIM_CHUNK.min(spec.n - i * SIM_CHUNK);
        let t = simulate_chunk(spec, len, &mut root.derive(i));
        total.n_r += t.n_r;
        total.n_w += t.n_w;
        total.n1 += t.n1;
        total.n1_dis += t.n1_dis;
    }
    let n = spec.n as f64;
    let n_a = total.n_r + total.n_w;
    let n_dis = (spec.n - n_a) as f64;
    let ratio = |num: f64| if n_dis > 0.0 { num / n_dis } else { f64::NAN };
    Ok(SimResult {
        spec: *spec,
        n_r: total.n_r,
        n_w: total.n_w,
        n_a,
        n1_correct: total.n1,
        n1_correct_dis: total.n1_dis,
        agreement: n_a as f64 / n,
        p_lowconf: ratio(total.n1_dis as f64),
        p_lowconf_all_agreements_correct: ratio(total.n1 as f64 - n_a as f64),
        gamma_hat: n_a as f64 / n - independent_agreement(spec.p1, spec.p2, spec.c),
    })
}

/// One row of the gain surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub c: usize,
    pub p1: f64,
    pub p2: f64,
    pub gamma: f64,
    pub theorem2_bound: f64,
    pub effective_gain_bound: f64,
}

/// Accuracy grid `step, 2 step, ...` strictly inside `(0, 1)`.
pub fn accuracy_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step < 0.5) {
        return Err(contract(format!("grid step {step} outside (0, 0.5)")));
    }
    let count = (1.0 / step).round() as usize;
    Ok((1..count)
        .map(|i| i as f64 * step)
        .filter(|&p| p < 1.0 - 1e-12)
        .collect())
}

/// Both gain bounds over the `(p1, p2)` grid for each class count.
pub fn sweep_gain_surface(c_list: &[usize], step: f64, gamma: f64) -> Result<Vec<SurfaceRow>> {
    let grid = accuracy_grid(step)?;
    let mut rows = Vec::with_capacity(c_list.len() * grid.len() * grid.len());
    for &c in c_list {
        check_classes(c)?;
        for &p1 in &grid {
            for &p2 in &grid {
                rows.push(SurfaceRow {
                    c,
                    p1,
                    p2,
                    gamma,
                    theorem2_bound: theorem2_bound(p1, p2, c, gamma),
                    effective_gain_bound: effective_gain_bound(p1, p2, c, gamma),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_surface_csv<W: Write>(rows: &[SurfaceRow], mut out: W) -> Result<()> {
    writeln!(out, "c,p1,p2,gamma,theorem2_bound,effective_gain_bound")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.c, r.p1, r.p2, r.gamma, r.theorem2_bound, r.effective_gain_bound
        )?;
    }
    Ok(())
}
