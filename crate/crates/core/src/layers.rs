//! Per-layer machinery: soft adjacency selection, the explicit
//! graph-materializing transformation step, the implicit feature-propagating
//! step, non-local adjacency construction, and channel aggregation helpers.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::CandidateSet;
use crate::num;
use crate::sparse::{row_normalize, spmm, weighted_sum_impl, DenseMatrix, SparseMatrix};

/// Per-step selection logits, one row per channel and one column per
/// candidate. The softmax over the candidate axis is the convex-combination
/// weight vector used by [`soft_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionWeights {
    pub logits: DenseMatrix,
    pub layer_index: usize,
}

impl SelectionWeights {
    /// Zero logits: uniform attention over candidates.
    pub fn uniform(channels: usize, candidates: usize, layer_index: usize) -> Self {
        Self {
            logits: DenseMatrix::zeros(channels, candidates),
            layer_index,
        }
    }

    pub fn channels(&self) -> usize {
        self.logits.n_rows()
    }

    pub fn candidates(&self) -> usize {
        self.logits.n_cols()
    }

    /// Softmax of the channel's logit row.
    pub fn alpha(&self, channel: usize) -> Result<Vec<f64>> {
        if channel >= self.channels() {
            return Err(Error::ChannelOutOfRange {
                channel,
                channels: self.channels(),
            });
        }
        Ok(num::softmax(self.logits.row(channel)))
    }
}

/// Configuration and parameters of the non-local adjacency builder: an
/// affine projection followed by tanh, inner-product affinities, top-n
/// row sparsification, and a row softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct NonLocalConfig {
    pub enabled: bool,
    /// Entries retained per row (at least 1).
    pub top_n: usize,
    pub proj_dim: usize,
    /// `hidden_dim x proj_dim` projection.
    pub proj_w: DenseMatrix,
    /// Length `proj_dim` bias.
    pub proj_b: Vec<f64>,
}

/// Convex combination of the candidate matrices under the channel's softmax
/// weights. Output is row-stochastic whenever the candidates are.
pub fn soft_select(
    candidates: &CandidateSet,
    w: &SelectionWeights,
    channel: usize,
) -> Result<SparseMatrix> {
    let alpha = w.alpha(channel)?;
    if alpha.len() != candidates.len() {
        return Err(Error::Shape {
            op: "soft_select",
            detail: format!(
                "{} logits for {} candidates",
                alpha.len(),
                candidates.len()
            ),
        });
    }
    let refs: Vec<&SparseMatrix> = candidates.mats.iter().collect();
    weighted_sum_impl(&refs, &alpha, true)
}

/// One explicit transformation step: multiplies the running meta-path matrix
/// by the softly selected candidate and, when `renormalize` is set, divides
/// each row of the product by its sum. With row-stochastic inputs the
/// renormalization is inert up to rounding.
pub fn gt_layer_explicit(
    prev: &SparseMatrix,
    candidates: &CandidateSet,
    w: &SelectionWeights,
    channel: usize,
    renormalize: bool,
) -> Result<SparseMatrix> {
    let selected = soft_select(candidates, w, channel)?;
    let product = spmm(prev, &selected)?;
    if renormalize {
        row_normalize(&product, 0.0)
    } else {
        Ok(product)
    }
}

/// Applies `sum_t alpha[t] * mats[t]` to `z` without materializing the
/// combination: peak extra memory is one `n x d` output buffer.
pub(crate) fn apply_selection(
    mats: &[&SparseMatrix],
    alpha: &[f64],
    z: &DenseMatrix,
) -> Result<DenseMatrix> {
    if mats.len() != alpha.len() {
        return Err(Error::Shape {
            op: "apply_selection",
            detail: format!("{} matrices vs {} weights", mats.len(), alpha.len()),
        });
    }
    let n = mats
        .first()
        .ok_or(Error::Empty {
            what: "matrix list",
        })?
        .n_rows();
    for m in mats {
        if m.n_rows() != n || m.n_cols() != z.n_rows() {
            return Err(Error::Shape {
                op: "apply_selection",
                detail: format!(
                    "{}x{} candidate against {} feature rows",
                    m.n_rows(),
                    m.n_cols(),
                    z.n_rows()
                ),
            });
        }
    }
    let mut out = DenseMatrix::zeros(n, z.n_cols());
    for (t, m) in mats.iter().enumerate() {
        let w = alpha[t];
        if w == 0.0 {
            continue;
        }
        for i in 0..n {
            let (cols, vals) = m.row(i);
            let orow = out.row_mut(i);
            for (&k, &v) in cols.iter().zip(vals) {
                let zrow = z.row(k);
                let wv = w * v;
                for (o, &zv) in orow.iter_mut().zip(zrow) {
                    *o += wv * zv;
                }
            }
        }
    }
    Ok(out)
}

/// One implicit transformation step: propagates features through the softly
/// selected combination without ever materializing a matrix product.
pub fn fastgt_step(
    z: &DenseMatrix,
    candidates: &CandidateSet,
    w: &SelectionWeights,
    channel: usize,
) -> Result<DenseMatrix> {
    let alpha = w.alpha(channel)?;
    if alpha.len() != candidates.len() {
        return Err(Error::Shape {
            op: "fastgt_step",
            detail: format!(
                "{} logits for {} candidates",
                alpha.len(),
                candidates.len()
            ),
        });
    }
    let refs: Vec<&SparseMatrix> = candidates.mats.iter().collect();
    apply_selection(&refs, &alpha, z)
}

/// The affine-plus-tanh latent projection feeding the affinity scores.
pub(crate) fn nonlocal_project(h: &DenseMatrix, cfg: &NonLocalConfig) -> Result<DenseMatrix> {
    if h.n_cols() != cfg.proj_w.n_rows() {
        return Err(Error::Shape {
            op: "nonlocal_adjacency",
            detail: format!(
                "hidden dim {} vs projection rows {}",
                h.n_cols(),
                cfg.proj_w.n_rows()
            ),
        });
    }
    if cfg.proj_b.len() != cfg.proj_w.n_cols() {
        return Err(Error::Shape {
            op: "nonlocal_adjacency",
            detail: format!(
                "bias length {} vs projection cols {}",
                cfg.proj_b.len(),
                cfg.proj_w.n_cols()
            ),
        });
    }
    let mut g = h.matmul(&cfg.proj_w)?;
    for i in 0..g.n_rows() {
        let row = g.row_mut(i);
        for (v, &b) in row.iter_mut().zip(&cfg.proj_b) {
            *v = num::tanh(*v + b);
        }
    }
    Ok(g)
}

/// Builds the sparsified affinity matrix from projected representations:
/// per row, the `min(top_n, n)` largest inner products are kept (ties break
/// toward the lower column index) and softmaxed, so each row has exactly
/// that many nonzeros and sums to 1. Row scores are computed one row at a
/// time; nothing quadratic in `n` is ever stored.
pub(crate) fn nonlocal_from_projected(g: &DenseMatrix, top_n: usize) -> Result<SparseMatrix> {
    if top_n == 0 {
        return Err(Error::Domain {
            op: "nonlocal_adjacency",
            detail: "top_n must be at least 1".into(),
        });
    }
    let n = g.n_rows();
    let keep = top_n.min(n);
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0usize);
    let mut cols = Vec::with_capacity(n * keep);
    let mut vals = Vec::with_capacity(n * keep);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let gi = g.row(i);
        scored.clear();
        for j in 0..n {
            let gj = g.row(j);
            let mut dot = 0.0;
            for k in 0..g.n_cols() {
                dot += gi[k] * gj[k];
            }
            scored.push((dot, j));
        }
        scored.sort_unstable_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("affinity scores are finite")
                .then(a.1.cmp(&b.1))
        });
        let mut selected: Vec<(usize, f64)> = scored[..keep].iter().map(|&(s, j)| (j, s)).collect();
        selected.sort_unstable_by_key(|&(j, _)| j);
        let probs = num::softmax(&selected.iter().map(|&(_, s)| s).collect::<Vec<f64>>());
        for ((j, _), p) in selected.iter().zip(probs) {
            cols.push(*j);
            vals.push(p);
        }
        offsets.push(cols.len());
    }
    Ok(SparseMatrix::from_sorted_parts(n, n, offsets, cols, vals))
}

/// Full non-local adjacency construction from raw hidden representations.
pub fn nonlocal_adjacency(h: &DenseMatrix, cfg: &NonLocalConfig) -> Result<SparseMatrix> {
    if !cfg.enabled {
        return Err(Error::Domain {
            op: "nonlocal_adjacency",
            detail: "config is disabled".into(),
        });
    }
    let g = nonlocal_project(h, cfg)?;
    nonlocal_from_projected(&g, cfg.top_n)
}

/// Elementwise mean across channels.
pub fn channel_average(zs: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = zs.first().ok_or(Error::Empty {
        what: "channel list",
    })?;
    let mut out = DenseMatrix::zeros(first.n_rows(), first.n_cols());
    for z in zs {
        out.add_assign(z)?;
    }
    Ok(out.scale(1.0 / zs.len() as f64))
}
