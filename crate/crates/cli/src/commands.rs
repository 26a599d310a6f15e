use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use dccgcn::graph::{generate_synthetic, save_generic, SyntheticSpec};
use dccgcn::theory::{evaluate_bound, simulate, sweep_gain_surface, write_surface_csv, BoundKind, SimSpec};
use dccgcn::training::{train, Metrics, TrainConfig};
use serde::Serialize;

use crate::run::{load_dataset, RunConfig};
use crate::CliError;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(e.into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Core(e.into()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    run: &'a RunConfig,
    metrics: &'a Metrics,
}

pub fn train_command(run: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(run)?;
    log::info!(
        "{} nodes, {} classes, {} training nodes, preset {}",
        ds.num_nodes(),
        ds.num_classes,
        ds.train_nodes().len(),
        run.preset
    );
    let (model, metrics) = train(&ds, &run.train)?;
    create_dir(out)?;
    write_json(&out.join("run.json"), run)?;
    write_json(&out.join("metrics.json"), &MetricsFile { run, metrics: &metrics })?;

    let emb = model.embeddings()?;
    let mut csv = String::from("node_id");
    for j in 0..emb.cols() {
        write!(csv, ",e{j}").unwrap();
    }
    csv.push('\n');
    for (v, name) in ds.node_names.iter().enumerate() {
        csv.push_str(name);
        for x in emb.row(v) {
            write!(csv, ",{x}").unwrap();
        }
        csv.push('\n');
    }
    fs::write(out.join("embeddings.csv"), csv).map_err(|e| CliError::Core(e.into()))?;

    let file = fs::File::create(out.join("model.bin")).map_err(|e| CliError::Core(e.into()))?;
    let mut w = BufWriter::new(file);
    model.write_params(&mut w)?;
    w.flush().map_err(|e| CliError::Core(e.into()))?;

    println!("accuracy {:.4} macro_f1 {:.4}", metrics.accuracy, metrics.macro_f1);
    if let (Some(before), Some(after)) = (metrics.low_conf_acc_before, metrics.low_conf_acc_after) {
        println!(
            "low-confidence nodes {}: accuracy {before:.4} before calibration, {after:.4} after",
            metrics.low_conf_count
        );
    }
    Ok(())
}

pub fn bound_command(kind: BoundKind, p1: f64, p2: f64, c: usize, gamma: f64) -> Result<(), CliError> {
    let point = evaluate_bound(kind, p1, p2, c, gamma).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{:.4}", point.value);
    Ok(())
}

pub fn simulate_command(spec: &SimSpec, out: &Path) -> Result<(), CliError> {
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let result = simulate(spec)?;
    create_dir(out)?;
    write_json(&out.join("sim.json"), &result)?;
    println!(
        "agreement {:.5} low-confidence accuracy {:.5} gamma_hat {:.5}",
        result.agreement, result.p_lowconf, result.gamma_hat
    );
    Ok(())
}

pub fn sweep_command(classes: &[usize], step: f64, gamma: f64, out: &Path) -> Result<(), CliError> {
    let rows = sweep_gain_surface(classes, step, gamma).map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(out)?;
    let path = out.join("surface.csv");
    let file = fs::File::create(&path).map_err(|e| CliError::Core(e.into()))?;
    write_surface_csv(&rows, BufWriter::new(file))?;
    println!("{} rows written to {}", rows.len(), path.display());
    Ok(())
}

/// One training run per `(m, seed)`; each seed also fixes the split (and
/// the graph, for synthetic data).
pub fn hop_sweep_command(base: &RunConfig, hops: &[usize], seeds: u64, out: &Path) -> Result<(), CliError> {
    if hops.is_empty() || seeds == 0 {
        return Err(CliError::Usage("hop sweep needs at least one m and one seed".into()));
    }
    create_dir(out)?;
    write_json(&out.join("run.json"), base)?;
    let mut csv = String::from("m,seed,accuracy\n");
    let mut rows = Vec::new();
    for &m in hops {
        for seed in 0..seeds {
            let run = RunConfig {
                train: TrainConfig { m, seed, ..base.train.clone() },
                ..base.clone()
            };
            run.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let ds = load_dataset(&run)?;
            let (_, metrics) = train(&ds, &run.train)?;
            log::info!("m={m} seed={seed}: accuracy {:.4}", metrics.accuracy);
            writeln!(csv, "{m},{seed},{}", metrics.accuracy).unwrap();
            rows.push((m, metrics.accuracy));
        }
    }
    fs::write(out.join("hops.csv"), csv).map_err(|e| CliError::Core(e.into()))?;
    for &m in hops {
        let accs: Vec<f64> = rows.iter().filter(|r| r.0 == m).map(|r| r.1).collect();
        println!("m={m} mean accuracy {:.4} over {} seeds", accs.iter().sum::<f64>() / accs.len() as f64, accs.len());
    }
    Ok(())
}

pub fn synth_command(spec: &SyntheticSpec, out: &Path) -> Result<(), CliError> {
    let ds = generate_synthetic(spec).map_err(|e| CliError::Usage(e.to_string()))?;
    save_generic(&ds, out)?;
    write_json(&out.join("synth.json"), spec)?;
    println!("{} nodes, {} edges written to {}", ds.num_nodes(), ds.graph.undirected_edges().len(), out.display());
    Ok(())
}
