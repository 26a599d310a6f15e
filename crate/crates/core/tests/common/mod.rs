#![allow(dead_code)]

use std::sync::Arc;

use dccgcn::graph::{generate_synthetic, make_split, Dataset, SplitSpec, SyntheticSpec};
use dccgcn::training::{total_loss, train, Metrics, Model, TrainConfig};
use dccgcn::{Rng, Tape};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub struct GradientReport {
    pub seed: u64,
    pub checked: usize,
    pub low_conf: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

fn tiny_dataset(seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        n: 12,
        c: 2,
        d: 4,
        separation: 1.0,
        p_intra: 0.4,
        p_inter: 0.1,
        seed,
    };
    let mut ds = generate_synthetic(&spec).unwrap();
    let split = make_split(&ds, SplitSpec::PerClass(2), seed).unwrap();
    ds.apply_split(&split).unwrap();
    ds
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        hidden1: 5,
        hidden2: 3,
        k: 3,
        dropout: 0.0,
        warmup: 0,
        seed,
        ..TrainConfig::default()
    }
}

/// The full objective (fused and auxiliary cross-entropy, smoothness and
/// label terms) of an untrained model with calibration active.
fn objective(model: &Model, ds: &Dataset, train_nodes: &Arc<Vec<usize>>) -> (f64, Tape, Vec<dccgcn::Var>, Vec<bool>, dccgcn::Var) {
    let cfg = &model.config;
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, &mut Rng::new(0), true, true).unwrap();
    let parts = model.loss_parts(&mut tape, &pass, &ds.labels, train_nodes).unwrap();
    let loss = total_loss(&mut tape, &parts, cfg.lambda1, cfg.lambda2).unwrap();
    (tape.value(loss).item(), tape, pass.params, pass.partition.mask().to_vec(), loss)
}

/// Compares the taped gradient of every parameter entry with central
/// differences on a 12-node, 2-class instance whose partition has at least
/// one calibrated low-confidence node.
pub fn objective_gradient_check() -> GradientReport {
    let (seed, ds, mut model) = (0..50)
        .find_map(|seed| {
            let ds = tiny_dataset(seed);
            let model = Model::new(&ds, &tiny_config(seed)).unwrap();
            let (_, partition) = model.predict(true).unwrap();
            let cands = model.prepared().hops.candidates(&partition).unwrap();
            let calibrated = partition.low.iter().any(|&v| !cands[v].is_empty());
            calibrated.then_some((seed, ds, model))
        })
        .expect("some seed yields a calibrated low-confidence node");
    let train_nodes = Arc::new(ds.train_nodes());
    let (_, mut tape, vars, mask, loss) = objective(&model, &ds, &train_nodes);
    let low_conf = mask.iter().filter(|&&h| !h).count();
    let mut grads = tape.backward(loss).unwrap();
    let analytic = model.params.collect_grads(&vars, &mut grads);

    let ids: Vec<_> = model.params.ids().collect();
    let mut report = GradientReport { seed, checked: 0, low_conf, max_rel_err: 0.0, worst: String::new() };
    for (slot, id) in ids.into_iter().enumerate() {
        let name = model.params.name(id).to_string();
        let len = model.params.get(id).len();
        let grad = analytic[slot].clone().unwrap_or_else(|| dccgcn::Tensor::zeros(model.params.get(id).rows(), model.params.get(id).cols()));
        for i in 0..len {
            let orig = model.params.get(id).data()[i];
            let mut eval = |delta: f64| {
                model.params.get_mut(id).data_mut()[i] = orig + delta;
                let (v, _, _, m, _) = objective(&model, &ds, &train_nodes);
                assert_eq!(m, mask, "partition flipped while perturbing {name}[{i}]");
                v
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            model.params.get_mut(id).data_mut()[i] = orig;
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{name}[{i}]: analytic {a:.9e} numeric {numeric:.9e}");
            }
            report.checked += 1;
        }
    }
    report
}

pub const SUITE_SEEDS: std::ops::Range<u64> = 0..5;

/// The default synthetic graph for `seed` with 20 training nodes per class.
pub fn synthetic_suite_dataset(seed: u64) -> Dataset {
    let mut ds = generate_synthetic(&SyntheticSpec { seed, ..SyntheticSpec::default() }).unwrap();
    let split = make_split(&ds, SplitSpec::PerClass(20), seed).unwrap();
    ds.apply_split(&split).unwrap();
    ds
}

/// Trains `variant` (with its seed overwritten) on every suite dataset.
pub fn run_suite(variant: &TrainConfig) -> Vec<Metrics> {
    SUITE_SEEDS
        .map(|seed| {
            let ds = synthetic_suite_dataset(seed);
            train(&ds, &TrainConfig { seed, ..variant.clone() }).unwrap().1
        })
        .collect()
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}
