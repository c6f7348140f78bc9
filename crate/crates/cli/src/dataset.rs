//! Dataset directory IO.
//!
//! A dataset is a directory of whitespace-delimited UTF-8 text files plus a
//! small JSON header:
//!
//! * `meta.json` — `{ "n_nodes", "edge_types": [names], "n_classes" }`,
//!   optionally `"edge_endpoints": [[src_type, dst_type], ...]` and
//!   `"target_node_type"`.
//! * `edges_<type>.tsv` — one `src dst [weight]` per line, weight default 1.
//! * `node_types.tsv` — optional `node_id type_id` lines; default type 0.
//! * `features.tsv` — line `i` holds the feature row of node `i`.
//! * `labels.tsv` — `node_id class_id` lines; unlisted nodes are unlabeled.
//! * `splits.tsv` — `node_id {train|valid|test}` lines.
//!
//! Edges are stored destination-major in memory: a line `src dst w` becomes
//! entry `(dst, src)`, so feature propagation aggregates from sources into
//! destinations.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mpf_core::graph::{HeteroGraph, Splits};
use mpf_core::{DenseMatrix, SparseMatrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {detail}")]
    Parse {
        file: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("bad meta.json: {0}")]
    Meta(String),
    #[error("features.tsv has {found} rows, meta declares {expected} nodes")]
    FeatureRows { expected: usize, found: usize },
    #[error(transparent)]
    Graph(#[from] mpf_core::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaJson {
    n_nodes: usize,
    edge_types: Vec<String>,
    n_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_endpoints: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_node_type: Option<usize>,
}

fn read_text(path: &Path) -> Result<String, LoadError> {
    if !path.exists() {
        return Err(LoadError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_index(
    token: &str,
    limit: usize,
    file: &Path,
    line: usize,
    what: &str,
) -> Result<usize, LoadError> {
    let id: usize = token.parse().map_err(|_| LoadError::Parse {
        file: file.to_path_buf(),
        line,
        detail: format!("{what} `{token}` is not a non-negative integer"),
    })?;
    if id >= limit {
        return Err(LoadError::Parse {
            file: file.to_path_buf(),
            line,
            detail: format!("{what} {id} out of range (limit {limit})"),
        });
    }
    Ok(id)
}

/// Loads and validates a dataset directory.
pub fn load_graph(dir: &Path) -> Result<HeteroGraph, LoadError> {
    let meta_path = dir.join("meta.json");
    let meta: MetaJson = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| LoadError::Meta(e.to_string()))?;
    if meta.n_nodes == 0 || meta.n_classes == 0 || meta.edge_types.is_empty() {
        return Err(LoadError::Meta(
            "n_nodes, n_classes, and edge_types must all be non-empty".into(),
        ));
    }
    let n = meta.n_nodes;

    let mut adjacency = Vec::with_capacity(meta.edge_types.len());
    for name in &meta.edge_types {
        let path = dir.join(format!("edges_{name}.tsv"));
        let text = read_text(&path)?;
        let mut trips = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let mut it = line.split_whitespace();
            let Some(src_tok) = it.next() else { continue };
            let dst_tok = it.next().ok_or_else(|| LoadError::Parse {
                file: path.clone(),
                line: line_no,
                detail: "expected `src dst [weight]`".into(),
            })?;
            let src = parse_index(src_tok, n, &path, line_no, "source id")?;
            let dst = parse_index(dst_tok, n, &path, line_no, "destination id")?;
            let weight = match it.next() {
                Some(tok) => tok.parse::<f64>().map_err(|_| LoadError::Parse {
                    file: path.clone(),
                    line: line_no,
                    detail: format!("weight `{tok}` is not a number"),
                })?,
                None => 1.0,
            };
            if it.next().is_some() {
                return Err(LoadError::Parse {
                    file: path.clone(),
                    line: line_no,
                    detail: "trailing tokens after `src dst weight`".into(),
                });
            }
            trips.push((dst, src, weight));
        }
        if trips.is_empty() {
            eprintln!("warning: edge file {} is empty", path.display());
        }
        adjacency.push(SparseMatrix::from_triplets(n, n, &trips)?);
    }

    let node_types_path = dir.join("node_types.tsv");
    let mut node_type_of = vec![0usize; n];
    if node_types_path.exists() {
        let text = read_text(&node_types_path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let mut it = line.split_whitespace();
            let Some(id_tok) = it.next() else { continue };
            let ty_tok = it.next().ok_or_else(|| LoadError::Parse {
                file: node_types_path.clone(),
                line: line_no,
                detail: "expected `node_id type_id`".into(),
            })?;
            let id = parse_index(id_tok, n, &node_types_path, line_no, "node id")?;
            let ty = ty_tok.parse::<usize>().map_err(|_| LoadError::Parse {
                file: node_types_path.clone(),
                line: line_no,
                detail: format!("type id `{ty_tok}` is not a non-negative integer"),
            })?;
            node_type_of[id] = ty;
        }
    }

    let features_path = dir.join("features.tsv");
    let text = read_text(&features_path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|_| LoadError::Parse {
            file: features_path.clone(),
            line: line_no,
            detail: "non-numeric feature value".into(),
        })?;
        if let Some(w) = width {
            if row.len() != w {
                return Err(LoadError::Parse {
                    file: features_path.clone(),
                    line: line_no,
                    detail: format!("expected {w} features, found {}", row.len()),
                });
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(LoadError::FeatureRows {
            expected: n,
            found: rows.len(),
        });
    }
    let width = width.unwrap_or(0);
    let mut values = Vec::with_capacity(n * width);
    for row in rows {
        values.extend(row);
    }
    let features = DenseMatrix::from_vec(n, width, values)?;

    let labels_path = dir.join("labels.tsv");
    let text = read_text(&labels_path)?;
    let mut labels = vec![-1i64; n];
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let mut it = line.split_whitespace();
        let Some(id_tok) = it.next() else { continue };
        let class_tok = it.next().ok_or_else(|| LoadError::Parse {
            file: labels_path.clone(),
            line: line_no,
            detail: "expected `node_id class_id`".into(),
        })?;
        let id = parse_index(id_tok, n, &labels_path, line_no, "node id")?;
        let class = parse_index(class_tok, meta.n_classes, &labels_path, line_no, "class id")?;
        if labels[id] >= 0 {
            return Err(LoadError::Parse {
                file: labels_path.clone(),
                line: line_no,
                detail: format!("node {id} labeled twice"),
            });
        }
        labels[id] = class as i64;
    }

    let splits_path = dir.join("splits.tsv");
    let text = read_text(&splits_path)?;
    let mut splits = Splits::default();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let mut it = line.split_whitespace();
        let Some(id_tok) = it.next() else { continue };
        let split_tok = it.next().ok_or_else(|| LoadError::Parse {
            file: splits_path.clone(),
            line: line_no,
            detail: "expected `node_id {train|valid|test}`".into(),
        })?;
        let id = parse_index(id_tok, n, &splits_path, line_no, "node id")?;
        match split_tok {
            "train" => splits.train.push(id),
            "valid" => splits.valid.push(id),
            "test" => splits.test.push(id),
            other => {
                return Err(LoadError::Parse {
                    file: splits_path.clone(),
                    line: line_no,
                    detail: format!("unknown split `{other}`"),
                })
            }
        }
    }

    let endpoints = meta
        .edge_endpoints
        .map(|eps| eps.into_iter().map(|[s, d]| (s, d)).collect());
    Ok(HeteroGraph::new(
        n,
        node_type_of,
        meta.edge_types,
        adjacency,
        features,
        labels,
        meta.n_classes,
        splits,
        endpoints,
        meta.target_node_type,
    )?)
}

fn fmt_f64(v: f64) -> String {
    // 17 significant digits: enough to round-trip any f64 exactly.
    format!("{v:.16e}")
}

/// Writes a graph back out in the dataset directory layout.
pub fn save_graph(g: &HeteroGraph, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let meta = MetaJson {
        n_nodes: g.n_nodes,
        edge_types: g.edge_type_names.clone(),
        n_classes: g.n_classes,
        edge_endpoints: g
            .edge_endpoints
            .as_ref()
            .map(|eps| eps.iter().map(|&(s, d)| [s, d]).collect()),
        target_node_type: g.target_node_type,
    };
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;
    for (name, a) in g.edge_type_names.iter().zip(&g.adjacency) {
        let mut out = String::new();
        for (dst, src, w) in a.iter() {
            out.push_str(&format!("{src} {dst} {}\n", fmt_f64(w)));
        }
        fs::write(dir.join(format!("edges_{name}.tsv")), out)?;
    }
    let mut out = String::new();
    for (id, ty) in g.node_type_of.iter().enumerate() {
        out.push_str(&format!("{id} {ty}\n"));
    }
    fs::write(dir.join("node_types.tsv"), out)?;
    let mut file = fs::File::create(dir.join("features.tsv"))?;
    for i in 0..g.n_nodes {
        let row: Vec<String> = g.features.row(i).iter().map(|&v| fmt_f64(v)).collect();
        writeln!(file, "{}", row.join(" "))?;
    }
    let mut out = String::new();
    for (id, &label) in g.labels.iter().enumerate() {
        if label >= 0 {
            out.push_str(&format!("{id} {label}\n"));
        }
    }
    fs::write(dir.join("labels.tsv"), out)?;
    let mut out = String::new();
    for (name, split) in [
        ("train", &g.splits.train),
        ("valid", &g.splits.valid),
        ("test", &g.splits.test),
    ] {
        for &id in split {
            out.push_str(&format!("{id} {name}\n"));
        }
    }
    fs::write(dir.join("splits.tsv"), out)?;
    Ok(())
}
