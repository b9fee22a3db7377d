//! Plain-text graph bundle: a directory with `meta.json`, `nodes.tsv`,
//! `edges.tsv` and optionally `splits.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Graph, SplitMasks};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const NODES_FILE: &str = "nodes.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    n: usize,
    feature_dim: usize,
    num_classes: usize,
    name: String,
}

/// A graph together with its optional fixed split.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub graph: Graph,
    pub splits: Option<SplitMasks>,
}

/// 17 significant digits; parses back to the identical `f64`.
pub(crate) fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn save_bundle(g: &Graph, splits: Option<&SplitMasks>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        n: g.num_nodes(),
        feature_dim: g.feature_dim(),
        num_classes: g.num_classes(),
        name: g.name().to_string(),
    };
    let meta_json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serde(e.to_string()))?;
    write_file(&dir.join(META_FILE), &(meta_json + "\n"))?;

    let mut nodes = String::new();
    for i in 0..g.num_nodes() {
        nodes.push_str(&format!("{i}\t{}", g.labels()[i]));
        for &f in g.features().row(i) {
            nodes.push('\t');
            nodes.push_str(&format_f64(f));
        }
        nodes.push('\n');
    }
    write_file(&dir.join(NODES_FILE), &nodes)?;

    let edges: String = g.edges().iter().map(|(u, v)| format!("{u}\t{v}\n")).collect();
    write_file(&dir.join(EDGES_FILE), &edges)?;

    let splits_path = dir.join(SPLITS_FILE);
    match splits {
        Some(s) => {
            let json = serde_json::to_string(s).map_err(|e| Error::Serde(e.to_string()))?;
            write_file(&splits_path, &(json + "\n"))?;
        }
        None if splits_path.exists() => {
            fs::remove_file(&splits_path).map_err(|e| Error::io(&splits_path, e))?;
        }
        None => {}
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let meta_path = dir.join(META_FILE);
    let meta_text = read_file(&meta_path)?;
    let meta: Meta = serde_json::from_str(&meta_text).map_err(|e| Error::Parse {
        file: meta_path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;

    let nodes_path = dir.join(NODES_FILE);
    let nodes_text = read_file(&nodes_path)?;
    let mut labels = Vec::with_capacity(meta.n);
    let mut features = Vec::with_capacity(meta.n * meta.feature_dim);
    for (lineno, line) in numbered_lines(&nodes_text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != meta.feature_dim + 2 {
            return Err(parse_err(
                &nodes_path,
                lineno,
                format!("expected {} fields, found {}", meta.feature_dim + 2, fields.len()),
            ));
        }
        let id: usize = parse_field(&nodes_path, lineno, fields[0], "node id")?;
        if id != labels.len() {
            return Err(Error::Integrity(format!(
                "{}:{lineno}: node id {id} out of order, expected {}",
                nodes_path.display(),
                labels.len()
            )));
        }
        labels.push(parse_field(&nodes_path, lineno, fields[1], "label")?);
        for f in &fields[2..] {
            features.push(parse_field::<f64>(&nodes_path, lineno, f, "feature")?);
        }
    }
    if labels.len() != meta.n {
        return Err(Error::Integrity(format!(
            "meta declares {} nodes but {} lists {}",
            meta.n,
            NODES_FILE,
            labels.len()
        )));
    }

    let edges_path = dir.join(EDGES_FILE);
    let edges_text = read_file(&edges_path)?;
    let mut edges = Vec::new();
    for (lineno, line) in numbered_lines(&edges_text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(parse_err(&edges_path, lineno, format!("expected 2 fields, found {}", fields.len())));
        }
        let u: usize = parse_field(&edges_path, lineno, fields[0], "edge endpoint")?;
        let v: usize = parse_field(&edges_path, lineno, fields[1], "edge endpoint")?;
        if u >= meta.n || v >= meta.n {
            return Err(Error::Integrity(format!(
                "{}:{lineno}: edge ({u}, {v}) references an unknown node",
                edges_path.display()
            )));
        }
        if u >= v {
            return Err(Error::Integrity(format!(
                "{}:{lineno}: edge ({u}, {v}) must satisfy u < v",
                edges_path.display()
            )));
        }
        edges.push((u, v));
    }

    let features = Matrix::from_vec(meta.n, meta.feature_dim, features)?;
    let graph = Graph::new(meta.name, edges, features, labels, meta.num_classes)?;

    let splits_path = dir.join(SPLITS_FILE);
    let splits = if splits_path.exists() {
        let text = read_file(&splits_path)?;
        let s: SplitMasks = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: splits_path.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        s.validate(graph.num_nodes())?;
        Some(s)
    } else {
        None
    };
    Ok(Bundle { graph, splits })
}

fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_field<T: std::str::FromStr>(file: &Path, line: usize, raw: &str, what: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| parse_err(file, line, format!("invalid {what} `{raw}`")))
}

fn parse_err(file: &Path, line: usize, msg: String) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg,
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: 0,
        msg: format!("cannot read file: {e}"),
    })
}

/// Writes through a temporary sibling and renames into place.
pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let tmp: PathBuf = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        path.with_file_name(name)
    };
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
