//! Deterministic synthetic heterogeneous graphs for benchmarks and tests.
//!
//! Out-degrees follow a rounded continuous Pareto law with a configurable
//! tail exponent. Destinations are drawn from a rank-skewed distribution
//! whose tail matches the same exponent, so in-degrees are heavy-tailed as
//! well; that is what makes explicit meta-path products densify the way they
//! do on real graphs. Everything is a pure function of the seed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, Splits};
use crate::num;
use crate::sparse::{DenseMatrix, SparseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub n_edge_types: usize,
    /// Target mean out-degree per edge type.
    pub avg_degree: f64,
    /// Tail exponent of the degree density `p(k) ~ k^-exponent`; must exceed
    /// 2 for the mean to match `avg_degree`.
    pub exponent: f64,
    pub n_features: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_nodes: usize, n_edge_types: usize, avg_degree: f64, seed: u64) -> Self {
        Self {
            n_nodes,
            n_edge_types,
            avg_degree,
            exponent: 2.5,
            n_features: 16,
            n_classes: 4,
            seed,
        }
    }
}

fn pareto_degree(rng: &mut ChaCha8Rng, x_min: f64, shape: f64, max: usize) -> usize {
    let u: f64 = rng.random();
    let x = x_min * num::powf(1.0 - u, -1.0 / shape);
    let d = num::round(x);
    if d < 0.0 {
        0
    } else {
        (d as usize).min(max)
    }
}

/// Generates a seeded graph with per-type power-law out-degrees, uniform
/// random features in `[0, 1)`, uniform random labels, and a 60/20/20
/// train/valid/test split.
pub fn synth_graph(cfg: &SynthConfig) -> Result<HeteroGraph> {
    if cfg.n_nodes < 2 {
        return Err(Error::Domain {
            op: "synth_graph",
            detail: format!("need at least 2 nodes, got {}", cfg.n_nodes),
        });
    }
    if cfg.n_edge_types == 0 || cfg.n_features == 0 || cfg.n_classes == 0 {
        return Err(Error::Domain {
            op: "synth_graph",
            detail: "edge types, features, and classes must all be at least 1".into(),
        });
    }
    if cfg.avg_degree <= 0.0 || !cfg.avg_degree.is_finite() {
        return Err(Error::Domain {
            op: "synth_graph",
            detail: format!("average degree {} must be positive", cfg.avg_degree),
        });
    }
    if cfg.exponent <= 1.0 || !cfg.exponent.is_finite() {
        return Err(Error::Domain {
            op: "synth_graph",
            detail: format!("tail exponent {} must exceed 1", cfg.exponent),
        });
    }
    let n = cfg.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Pareto shape for density exponent gamma is gamma - 1; the scale is
    // chosen so the (untruncated) mean hits avg_degree when gamma > 2.
    let shape = cfg.exponent - 1.0;
    let x_min = if cfg.exponent > 2.0 {
        cfg.avg_degree * (cfg.exponent - 2.0) / (cfg.exponent - 1.0)
    } else {
        cfg.avg_degree / 3.0
    };
    // Destination weights: rank r gets mass (r+1)^(-1/shape), giving the
    // in-degree distribution the same tail exponent as the out-degrees.
    let dest_skew = 1.0 / shape;
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for r in 0..n {
        acc += num::powf((r + 1) as f64, -dest_skew);
        cumulative.push(acc);
    }
    let total_weight = acc;
    let mut adjacency = Vec::with_capacity(cfg.n_edge_types);
    let mut seen = vec![usize::MAX; n];
    for ty in 0..cfg.n_edge_types {
        let mut trips = Vec::new();
        for u in 0..n {
            let d = pareto_degree(&mut rng, x_min, shape, n - 1);
            let stamp = ty * n + u;
            for _ in 0..d {
                let x: f64 = rng.random::<f64>() * total_weight;
                let v = cumulative.partition_point(|&c| c < x).min(n - 1);
                // Skip self-loops and duplicate draws.
                if v == u || seen[v] == stamp {
                    continue;
                }
                seen[v] = stamp;
                // Entry (dst, src): the edge runs from u into v.
                trips.push((v, u, 1.0));
            }
        }
        adjacency.push(SparseMatrix::from_triplets(n, n, &trips)?);
    }
    let features = DenseMatrix::from_vec(
        n,
        cfg.n_features,
        (0..n * cfg.n_features).map(|_| rng.random::<f64>()).collect(),
    )?;
    let labels: Vec<i64> = (0..n)
        .map(|_| rng.random_range(0..cfg.n_classes) as i64)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (n * 6) / 10;
    let n_valid = (n * 2) / 10;
    let splits = Splits {
        train: order[..n_train].to_vec(),
        valid: order[n_train..n_train + n_valid].to_vec(),
        test: order[n_train + n_valid..].to_vec(),
    };
    HeteroGraph::new(
        n,
        vec![0; n],
        (0..cfg.n_edge_types).map(|t| format!("T{t}")).collect(),
        adjacency,
        features,
        labels,
        cfg.n_classes,
        splits,
        None,
        None,
    )
}
