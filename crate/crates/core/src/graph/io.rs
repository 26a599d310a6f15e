//! Dataset readers and writers.
//!
//! Two on-disk layouts are understood:
//!
//! * Cora text format: a content file with `id f1 ... fd label` per line and a
//!   cites file with `cited citing` per line (whitespace separated).
//! * Generic format: a directory with `features.tsv`, `labels.tsv`,
//!   `edges.tsv` (zero-based `u<TAB>v`) and an optional `split.json`
//!   (`{"train": [...], "test": [...]}`).

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, SparseGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Counts gathered while reading Cora-format files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CoraLoadStats {
    pub nodes: usize,
    pub edges_read: usize,
    /// Citation lines naming an id absent from the content file.
    pub dropped_edges: usize,
}

pub fn load_cora_format(content: impl AsRef<Path>, cites: impl AsRef<Path>) -> Result<Dataset> {
    load_cora_format_with_stats(content, cites).map(|(ds, _)| ds)
}

pub fn load_cora_format_with_stats(
    content: impl AsRef<Path>,
    cites: impl AsRef<Path>,
) -> Result<(Dataset, CoraLoadStats)> {
    let content = content.as_ref();
    let cites = cites.as_ref();
    let text = fs::read_to_string(content)?;

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut names = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 3 {
            return Err(format_err(content, lineno, "expected id, features and label"));
        }
        let feats = &toks[1..toks.len() - 1];
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(format_err(content, lineno, format!("{} features, expected {w}", feats.len())));
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(feats.len());
        for t in feats {
            row.push(
                t.parse::<f64>()
                    .map_err(|_| format_err(content, lineno, format!("bad feature value '{t}'")))?,
            );
        }
        if ids.insert(toks[0].to_string(), names.len()).is_some() {
            return Err(format_err(content, lineno, format!("duplicate node id '{}'", toks[0])));
        }
        names.push(toks[0].to_string());
        rows.push(row);
        raw_labels.push(toks[toks.len() - 1].to_string());
    }
    if rows.is_empty() {
        return Err(format_err(content, 0, "no nodes"));
    }

    let classes: BTreeSet<&str> = raw_labels.iter().map(String::as_str).collect();
    let class_index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let labels = raw_labels.iter().map(|l| class_index[l.as_str()]).collect();

    let mut stats = CoraLoadStats {
        nodes: names.len(),
        ..Default::default()
    };
    let mut edges = Vec::new();
    for (lineno, line) in fs::read_to_string(cites)?.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            return Err(format_err(cites, lineno, "expected 'cited citing'"));
        }
        stats.edges_read += 1;
        match (ids.get(toks[0]), ids.get(toks[1])) {
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => stats.dropped_edges += 1,
        }
    }
    if stats.dropped_edges > 0 {
        log::warn!(
            "{}: dropped {} citation(s) referencing unknown ids",
            cites.display(),
            stats.dropped_edges
        );
    }

    let n = names.len();
    let graph = SparseGraph::from_edges(n, &edges, true)?;
    let mut ds = Dataset::new(Tensor::from_rows(&rows)?, labels, classes.len(), graph)?;
    ds.node_names = names;
    Ok((ds, stats))
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

pub fn load_generic(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let fpath = dir.join("features.tsv");
    let lpath = dir.join("labels.tsv");
    let epath = dir.join("edges.tsv");

    let mut rows = Vec::new();
    for (lineno, line) in read_lines(&fpath)? {
        let row = line
            .split('\t')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| format_err(&fpath, lineno, format!("bad feature value '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first().map(Vec::len) {
            if first != row.len() {
                return Err(format_err(&fpath, lineno, format!("{} columns, expected {first}", row.len())));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(format_err(&fpath, 0, "no feature rows"));
    }

    let mut labels = Vec::with_capacity(n);
    for (lineno, line) in read_lines(&lpath)? {
        let l = line
            .trim()
            .parse::<usize>()
            .map_err(|_| format_err(&lpath, lineno, format!("label '{}' is not a non-negative integer", line.trim())))?;
        labels.push(l);
    }
    if labels.len() != n {
        return Err(format_err(&lpath, labels.len(), format!("{} labels for {n} feature rows", labels.len())));
    }

    let mut edges = Vec::new();
    for (lineno, line) in read_lines(&epath)? {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let parse = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| format_err(&epath, lineno, format!("bad node index '{t}'")))
        };
        if toks.len() != 2 {
            return Err(format_err(&epath, lineno, "expected 'u<TAB>v'"));
        }
        let (u, v) = (parse(toks[0])?, parse(toks[1])?);
        if u >= n || v >= n {
            return Err(format_err(&epath, lineno, format!("edge ({u},{v}) outside 0..{n}")));
        }
        edges.push((u, v));
    }

    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let graph = SparseGraph::from_edges(n, &edges, true)?;
    let mut ds = Dataset::new(Tensor::from_rows(&rows)?, labels, num_classes, graph)?;

    let spath = dir.join("split.json");
    if spath.exists() {
        let split: SplitFile = serde_json::from_str(&fs::read_to_string(&spath)?)?;
        for &i in split.train.iter().chain(&split.test) {
            if i >= n {
                return Err(format_err(&spath, 0, format!("node {i} outside 0..{n}")));
            }
            if split.train.contains(&i) && split.test.contains(&i) {
                return Err(format_err(&spath, 0, format!("node {i} in both train and test")));
            }
        }
        for i in split.train {
            ds.train_mask[i] = true;
        }
        for i in split.test {
            ds.test_mask[i] = true;
        }
    }
    ds.validate()?;
    Ok(ds)
}

/// Writes `ds` in the generic format. Floats use the shortest exact
/// representation, so reloading reproduces the features bit for bit.
pub fn save_generic(ds: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut buf = String::new();
    for i in 0..ds.num_nodes() {
        for (j, v) in ds.features.row(i).iter().enumerate() {
            if j > 0 {
                buf.push('\t');
            }
            write!(buf, "{v}").unwrap();
        }
        buf.push('\n');
    }
    fs::write(dir.join("features.tsv"), &buf)?;

    buf.clear();
    for l in &ds.labels {
        writeln!(buf, "{l}").unwrap();
    }
    fs::write(dir.join("labels.tsv"), &buf)?;

    buf.clear();
    for (u, v) in ds.graph.undirected_edges() {
        writeln!(buf, "{u}\t{v}").unwrap();
    }
    fs::write(dir.join("edges.tsv"), &buf)?;

    let train = ds.train_nodes();
    let test = ds.test_nodes();
    let spath = dir.join("split.json");
    if !train.is_empty() || !test.is_empty() {
        fs::write(&spath, serde_json::to_string(&SplitFile { train, test })?)?;
    } else if spath.exists() {
        fs::remove_file(&spath)?;
    }
    Ok(dir.to_path_buf())
}
