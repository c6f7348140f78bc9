//! Heterogeneous graph data model and the candidate adjacency set.
//!
//! A [`HeteroGraph`] stores one square adjacency matrix per edge type with the
//! convention that entry `(i, j)` is the weight of an edge from node `j` to
//! node `i`; propagating features through a matrix therefore aggregates from
//! sources into destinations. Loading and saving directory layouts live in
//! the `mpf` companion crate; this module owns the in-memory invariants.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::sparse::{row_normalize, DenseMatrix, SparseMatrix};

/// Disjoint train/validation/test node index sets. Indices are kept sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Node- and edge-typed graph with dense features and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub n_nodes: usize,
    /// Node type per node, in `0..n_node_types`.
    pub node_type_of: Vec<usize>,
    pub edge_type_names: Vec<String>,
    /// One square `n_nodes x n_nodes` matrix per edge type, raw weights as
    /// supplied (normalization happens at candidate construction).
    pub adjacency: Vec<SparseMatrix>,
    pub features: DenseMatrix,
    /// Class per node; `-1` marks unlabeled nodes.
    pub labels: Vec<i64>,
    pub n_classes: usize,
    pub splits: Splits,
    /// Optional per-edge-type `(source node type, destination node type)`
    /// schema, used by meta-path reports to filter paths between target nodes.
    pub edge_endpoints: Option<Vec<(usize, usize)>>,
    /// Node type carrying the classification labels, when declared.
    pub target_node_type: Option<usize>,
}

impl HeteroGraph {
    /// Validates every structural invariant and returns the graph.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_nodes: usize,
        node_type_of: Vec<usize>,
        edge_type_names: Vec<String>,
        adjacency: Vec<SparseMatrix>,
        features: DenseMatrix,
        labels: Vec<i64>,
        n_classes: usize,
        splits: Splits,
        edge_endpoints: Option<Vec<(usize, usize)>>,
        target_node_type: Option<usize>,
    ) -> Result<Self> {
        let mut g = Self {
            n_nodes,
            node_type_of,
            edge_type_names,
            adjacency,
            features,
            labels,
            n_classes,
            splits,
            edge_endpoints,
            target_node_type,
        };
        g.splits.train.sort_unstable();
        g.splits.valid.sort_unstable();
        g.splits.test.sort_unstable();
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.adjacency.len() != self.edge_type_names.len() {
            return Err(Error::InvalidParams(format!(
                "{} adjacency matrices for {} edge type names",
                self.adjacency.len(),
                self.edge_type_names.len()
            )));
        }
        for (t, a) in self.adjacency.iter().enumerate() {
            if a.n_rows() != self.n_nodes || a.n_cols() != self.n_nodes {
                return Err(Error::Shape {
                    op: "HeteroGraph",
                    detail: format!(
                        "edge type {t} is {}x{}, expected {n}x{n}",
                        a.n_rows(),
                        a.n_cols(),
                        n = self.n_nodes
                    ),
                });
            }
        }
        if self.node_type_of.len() != self.n_nodes {
            return Err(Error::InvalidParams(format!(
                "node_type_of has {} entries for {} nodes",
                self.node_type_of.len(),
                self.n_nodes
            )));
        }
        if self.features.n_rows() != self.n_nodes {
            return Err(Error::Shape {
                op: "HeteroGraph",
                detail: format!(
                    "feature matrix has {} rows for {} nodes",
                    self.features.n_rows(),
                    self.n_nodes
                ),
            });
        }
        if self.labels.len() != self.n_nodes {
            return Err(Error::InvalidParams(format!(
                "labels has {} entries for {} nodes",
                self.labels.len(),
                self.n_nodes
            )));
        }
        for (node, &label) in self.labels.iter().enumerate() {
            if label >= self.n_classes as i64 || label < -1 {
                return Err(Error::InvalidLabel {
                    node,
                    label,
                    n_classes: self.n_classes,
                });
            }
        }
        if let Some(ep) = &self.edge_endpoints {
            if ep.len() != self.adjacency.len() {
                return Err(Error::InvalidParams(format!(
                    "{} endpoint pairs for {} edge types",
                    ep.len(),
                    self.adjacency.len()
                )));
            }
        }
        let mut seen = vec![0u8; self.n_nodes];
        for (name, split) in [
            ("train", &self.splits.train),
            ("valid", &self.splits.valid),
            ("test", &self.splits.test),
        ] {
            for &node in split {
                if node >= self.n_nodes {
                    return Err(Error::NodeOutOfRange {
                        node,
                        n_nodes: self.n_nodes,
                    });
                }
                if self.labels[node] < 0 {
                    return Err(Error::InvalidParams(format!(
                        "{name} split contains unlabeled node {node}"
                    )));
                }
                if seen[node] != 0 {
                    return Err(Error::InvalidParams(format!(
                        "node {node} appears in more than one split"
                    )));
                }
                seen[node] = 1;
            }
        }
        Ok(())
    }

    pub fn n_edge_types(&self) -> usize {
        self.adjacency.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_cols()
    }

    /// Total stored entries across all edge types.
    pub fn total_nnz(&self) -> usize {
        self.adjacency.iter().map(|a| a.nnz()).sum()
    }
}

/// The candidate adjacency set: row-normalized per-type matrices optionally
/// augmented with the identity matrix, which lets stacked selection steps
/// realize paths shorter than the stack depth.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub mats: Vec<SparseMatrix>,
    pub names: Vec<String>,
    pub identity_index: Option<usize>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }
}

/// Row-normalizes every per-type adjacency matrix with the given `epsilon`
/// (applied once here, never re-applied per layer) and appends the identity
/// candidate named `"I"` when requested.
pub fn build_candidates(
    g: &HeteroGraph,
    include_identity: bool,
    epsilon: f64,
) -> Result<CandidateSet> {
    let mut mats = Vec::with_capacity(g.adjacency.len() + 1);
    let mut names = Vec::with_capacity(g.adjacency.len() + 1);
    for (a, name) in g.adjacency.iter().zip(&g.edge_type_names) {
        mats.push(row_normalize(a, epsilon)?);
        names.push(name.clone());
    }
    let identity_index = if include_identity {
        mats.push(SparseMatrix::identity(g.n_nodes));
        names.push("I".to_string());
        Some(mats.len() - 1)
    } else {
        None
    };
    Ok(CandidateSet {
        mats,
        names,
        identity_index,
    })
}

/// Union of all per-type adjacency matrices with per-entry type provenance.
/// Overlapping coordinates keep one structural entry per `(row, col, type)`,
/// so [`split_by_type`] inverts the merge exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedAdjacency {
    pub n_nodes: usize,
    pub n_types: usize,
    row_offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    types: Vec<usize>,
}

impl MergedAdjacency {
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Entries of row `i` as parallel slices `(cols, weights, types)`,
    /// sorted by `(col, type)`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64], &[usize]) {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        (
            &self.cols[lo..hi],
            &self.weights[lo..hi],
            &self.types[lo..hi],
        )
    }

    /// Distinct column indices of row `i` in ascending order.
    pub fn row_neighbors(&self, i: usize) -> Vec<usize> {
        let (cols, _, _) = self.row(i);
        let mut out: Vec<usize> = Vec::with_capacity(cols.len());
        for &c in cols {
            if out.last() != Some(&c) {
                out.push(c);
            }
        }
        out
    }
}

/// Combines the typed adjacency list into one tagged union matrix for
/// subgraph sampling.
pub fn merge_for_sampling(g: &HeteroGraph) -> MergedAdjacency {
    let n = g.n_nodes;
    let mut per_row: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n];
    for (t, a) in g.adjacency.iter().enumerate() {
        for (i, j, v) in a.iter() {
            per_row[i].push((j, t, v));
        }
    }
    let mut row_offsets = Vec::with_capacity(n + 1);
    row_offsets.push(0usize);
    let mut cols = Vec::new();
    let mut weights = Vec::new();
    let mut types = Vec::new();
    for row in &mut per_row {
        row.sort_unstable_by_key(|&(c, t, _)| (c, t));
        for &(c, t, w) in row.iter() {
            cols.push(c);
            types.push(t);
            weights.push(w);
        }
        row_offsets.push(cols.len());
    }
    MergedAdjacency {
        n_nodes: n,
        n_types: g.adjacency.len(),
        row_offsets,
        cols,
        weights,
        types,
    }
}

/// Splits a merged union back into one matrix per edge type. Round trip with
/// [`merge_for_sampling`] reproduces the original adjacency list exactly.
pub fn split_by_type(merged: &MergedAdjacency) -> Result<Vec<SparseMatrix>> {
    let mut trips: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); merged.n_types];
    for i in 0..merged.n_nodes {
        let (cols, weights, types) = merged.row(i);
        for k in 0..cols.len() {
            trips[types[k]].push((i, cols[k], weights[k]));
        }
    }
    trips
        .into_iter()
        .map(|t| SparseMatrix::from_triplets(merged.n_nodes, merged.n_nodes, &t))
        .collect()
}
