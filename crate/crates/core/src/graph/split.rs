use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{contract, Result};
use crate::rng::Rng;

/// How many labelled training nodes to draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Exactly this many nodes from every class.
    PerClass(usize),
    /// This fraction of all nodes (rounded up), with at least one node per
    /// class.
    Fraction(f64),
}

/// Train/test masks. Every node not in the training set is a test node;
/// there is no validation set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<bool>,
    pub test: Vec<bool>,
}

impl Split {
    pub fn train_count(&self) -> usize {
        self.train.iter().filter(|&&m| m).count()
    }
}

pub fn make_split(ds: &Dataset, spec: SplitSpec, seed: u64) -> Result<Split> {
    let n = ds.num_nodes();
    let c = ds.num_classes;
    let mut rng = Rng::new(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (v, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(v);
    }
    for nodes in &mut by_class {
        rng.shuffle(nodes);
    }

    let mut train = vec![false; n];
    match spec {
        SplitSpec::PerClass(k) => {
            for (class, nodes) in by_class.iter().enumerate() {
                if nodes.len() < k {
                    return Err(contract(format!(
                        "class {class} has {} nodes, cannot draw {k} for training",
                        nodes.len()
                    )));
                }
                for &v in &nodes[..k] {
                    train[v] = true;
                }
            }
        }
        SplitSpec::Fraction(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(contract(format!("label fraction {f} outside (0, 1)")));
            }
            if let Some(class) = by_class.iter().position(Vec::is_empty) {
                return Err(contract(format!("class {class} has no nodes")));
            }
            let target = ((f * n as f64).ceil() as usize).max(c);
            // one node per class first, the rest uniformly from what is left
            let mut rest = Vec::with_capacity(n);
            for nodes in &by_class {
                train[nodes[0]] = true;
                rest.extend_from_slice(&nodes[1..]);
            }
            rest.sort_unstable();
            rng.shuffle(&mut rest);
            for &v in rest.iter().take(target - c) {
                train[v] = true;
            }
        }
    }
    let test = train.iter().map(|t| !t).collect();
    Ok(Split { train, test })
}
