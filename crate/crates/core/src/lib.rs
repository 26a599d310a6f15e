// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Dual-channel consistency graph convolutional networks.
//!
//! Two confidence-weighted GCN channels, one over the given topology graph and
//! one over a cosine k-nearest-neighbour feature graph, classify every node.
//! Nodes on which the channels agree are treated as high confidence; the
//! embeddings of the remaining low-confidence nodes are rebuilt from their
//! high-confidence m-hop neighbours before a fused classifier makes the final
//! prediction.
//!
//! Modules, bottom up:
//!
//! - [`tensor`]: dense/sparse matrices, reverse-mode tape, Adam.
//! - [`graph`]: CSR graphs, normalisation, KNN graphs, loaders, splits,
//!   synthetic data.
//! - [`confidence`]: per-node label beliefs, influence weights and the
//!   per-channel network.
//! - [`calibration`]: agreement partition and neighbourhood calibration.
//! - [`training`]: objective, training loop, metrics, pseudo-labelling.
//! - [`theory`]: closed-form accuracy bounds and a Monte Carlo simulator of
//!   two correlated symmetric-error classifiers.

pub mod calibration;
pub mod confidence;
pub mod error;
pub mod graph;
pub mod rng;
pub mod tensor;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Tape, Tensor, Var};
