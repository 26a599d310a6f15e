use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::confidence::DEFAULT_EPS;
use crate::error::{contract, Error, Result};
use crate::tensor::SegmentNorm;

/// Hyperparameters of a dual-channel training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: f64,
    /// Neighbours per node in the feature graph.
    pub k: usize,
    /// Weight of the neighbour smoothness term.
    pub lambda1: f64,
    /// Weight of the label-fit term.
    pub lambda2: f64,
    /// Scale of the isotropic part of the label-fit weighting.
    pub phi: f64,
    /// Calibration hop count.
    pub m: usize,
    /// Epochs before the agreement partition and calibration switch on.
    pub warmup: usize,
    pub seed: u64,
    pub no_calibration: bool,
    /// Drop the feature-graph channel from the fused classifier.
    pub no_aggregation: bool,
    /// Lower clamp on belief distances.
    pub eps: f64,
    /// Rescaling of the influence weights within each node's neighbourhood.
    pub influence_norm: SegmentNorm,
    /// Divide calibrated embeddings by the sum of their influences.
    pub calibrate_normalize: bool,
    /// Freeze all beliefs at one shared value, making every influence equal.
    pub uniform_beliefs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Preset::Cora.config()
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(contract(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad(format!("invalid lr={} / weight_decay={}", self.lr, self.weight_decay));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 || self.k == 0 {
            return bad("hidden sizes and k must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!("lambda1={} and lambda2={} must be >= 0", self.lambda1, self.lambda2));
        }
        if !(self.phi > 0.0) {
            return bad(format!("phi={} must be > 0", self.phi));
        }
        if self.m == 0 {
            return bad("calibration hop count m must be >= 1".into());
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps={} must be > 0", self.eps));
        }
        Ok(())
    }
}

/// Built-in hyperparameter rows for the standard benchmark datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Cora,
    Citeseer,
    Pubmed,
    CoraFull,
    Acm,
    Flickr,
    Uai2010,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Cora,
        Preset::Citeseer,
        Preset::Pubmed,
        Preset::CoraFull,
        Preset::Acm,
        Preset::Flickr,
        Preset::Uai2010,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Cora => "cora",
            Preset::Citeseer => "citeseer",
            Preset::Pubmed => "pubmed",
            Preset::CoraFull => "corafull",
            Preset::Acm => "acm",
            Preset::Flickr => "flickr",
            Preset::Uai2010 => "uai2010",
        }
    }

    pub fn config(self) -> TrainConfig {
        // (epochs, lr, weight decay, h1, h2, k, lambda1, lambda2)
        let (epochs, lr, weight_decay, hidden1, hidden2, k, lambda1, lambda2) = match self {
            Preset::Cora => (200, 5e-3, 1e-5, 256, 128, 6, 0.25, 0.5),
            Preset::Citeseer => (200, 1e-3, 1e-5, 768, 128, 6, 0.25, 0.5),
            Preset::Pubmed => (500, 1e-3, 1e-5, 768, 256, 3, 0.25, 0.5),
            Preset::CoraFull => (1000, 2e-4, 1e-5, 512, 128, 10, 0.25, 0.5),
            Preset::Acm => (300, 1e-4, 5e-4, 768, 256, 9, 0.2, 0.8),
            Preset::Flickr => (200, 1e-4, 5e-4, 512, 128, 5, 0.4, 0.8),
            Preset::Uai2010 => (200, 1e-4, 5e-4, 512, 128, 6, 0.35, 0.7),
        };
        TrainConfig {
            epochs,
            lr,
            weight_decay,
            hidden1,
            hidden2,
            dropout: 0.5,
            k,
            lambda1,
            lambda2,
            phi: 1.0,
            m: 2,
            warmup: 20,
            seed: 0,
            no_calibration: false,
            no_aggregation: false,
            eps: DEFAULT_EPS,
            influence_norm: SegmentNorm::Mean,
            calibrate_normalize: true,
            uniform_beliefs: false,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == lower)
            .ok_or_else(|| contract(format!("unknown preset {s:?}")))
    }
}
