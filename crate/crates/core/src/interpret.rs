//! Meta-path importance extraction and attention reporting.
//!
//! A trained selection stack induces a distribution over type sequences: the
//! importance of a meta-path is the product of the per-step attention weights
//! that select its edge types. Sequences are enumerated exhaustively (guarded
//! by a tractability limit), identity selections are elided so shorter paths
//! surface with their aggregate mass, and non-local selections appear as the
//! pseudo-type `NL` and are never elided.
//!
//! Sequences are reported in walk order: the first entry is the edge type
//! leaving the path's source node. Internally the per-step products run in
//! the opposite (matrix-product) order; for implicit-style parameters the
//! stored step list is already innermost-first, so walk order equals storage
//! order there.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::CandidateSet;
use crate::layers::SelectionWeights;
use crate::model::{ModelKind, ModelParams};
use crate::sparse::DenseMatrix;

/// Enumeration guard: `candidates ^ steps` must stay at or below this.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// Candidate metadata needed to label and collapse sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateInfo {
    pub names: Vec<String>,
    pub identity_index: Option<usize>,
    pub nonlocal_index: Option<usize>,
    /// Per structural edge type: `(source node type, destination node type)`.
    pub endpoints: Option<Vec<(usize, usize)>>,
}

impl CandidateInfo {
    pub fn from_candidates(cands: &CandidateSet) -> Self {
        Self {
            names: cands.names.clone(),
            identity_index: cands.identity_index,
            nonlocal_index: None,
            endpoints: None,
        }
    }

    /// Appends the non-local pseudo-candidate `NL` as the last index.
    pub fn with_nonlocal(mut self) -> Self {
        self.names.push("NL".to_string());
        self.nonlocal_index = Some(self.names.len() - 1);
        self
    }

    pub fn with_endpoints(mut self, endpoints: Vec<(usize, usize)>) -> Self {
        self.endpoints = Some(endpoints);
        self
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Walk-order sequence predicate used to narrow reports.
type SequenceFilter<'f> = &'f dyn Fn(&[usize]) -> bool;

/// One ranked meta-path: candidate indices in walk order (identity elided).
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPathEntry {
    pub type_sequence: Vec<usize>,
    pub names: Vec<String>,
    pub score: f64,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaPathReport {
    /// Top entries by score.
    pub entries: Vec<MetaPathEntry>,
    /// Attention per step (matrix-product order) and candidate.
    pub per_layer_alpha: DenseMatrix,
    /// Mass per path length `0..=steps`; sums to 1.
    pub hop_ratios: Vec<f64>,
    /// Sum of raw sequence scores before collapsing; equals 1 up to rounding.
    pub raw_total: f64,
}

/// Selection steps of a block in matrix-product order: leftmost factor first.
fn product_order_steps(p: &ModelParams, block: usize) -> Result<Vec<&SelectionWeights>> {
    let steps = p
        .selection
        .get(block)
        .ok_or_else(|| Error::InvalidParams(format!("no selection block {block}")))?;
    Ok(match p.hyper.kind {
        ModelKind::Gtn => steps.iter().collect(),
        // The implicit style applies its stored list innermost-first.
        ModelKind::FastGtn => steps.iter().rev().collect(),
    })
}

fn alphas_for_channel(
    steps: &[&SelectionWeights],
    info: &CandidateInfo,
    channel: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut alphas = Vec::with_capacity(steps.len());
    for w in steps {
        if w.candidates() != info.len() {
            return Err(Error::Shape {
                op: "interpret",
                detail: format!(
                    "{} logit columns vs {} described candidates",
                    w.candidates(),
                    info.len()
                ),
            });
        }
        alphas.push(w.alpha(channel)?);
    }
    Ok(alphas)
}

fn check_guard(candidates: usize, steps: usize) -> Result<u64> {
    let mut total: u64 = 1;
    for _ in 0..steps {
        total = total.saturating_mul(candidates as u64);
        if total > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                candidates,
                steps,
                limit: ENUMERATION_LIMIT,
            });
        }
    }
    Ok(total)
}

struct Enumeration {
    /// Collapsed walk-order sequence -> aggregated score.
    collapsed: BTreeMap<Vec<usize>, f64>,
    /// Mass per number of non-identity selections.
    hop_mass: Vec<f64>,
    raw_total: f64,
}

/// Walks every type sequence, scoring each by its attention product.
fn enumerate_sequences(alphas: &[Vec<f64>], info: &CandidateInfo) -> Result<Enumeration> {
    let steps = alphas.len();
    let t = info.len();
    check_guard(t, steps)?;
    let mut collapsed: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut hop_mass = vec![0.0; steps + 1];
    let mut raw_total = 0.0;
    let mut seq = vec![0usize; steps];
    loop {
        let mut score = 1.0;
        for (k, &tk) in seq.iter().enumerate() {
            score *= alphas[k][tk];
        }
        raw_total += score;
        // Collapse: drop identity selections, then reverse the product
        // order so the sequence reads source-to-destination.
        let mut kept: Vec<usize> = seq
            .iter()
            .copied()
            .filter(|&tk| Some(tk) != info.identity_index)
            .collect();
        hop_mass[kept.len()] += score;
        kept.reverse();
        *collapsed.entry(kept).or_insert(0.0) += score;
        // Odometer increment.
        let mut k = steps;
        loop {
            if k == 0 {
                return Ok(Enumeration {
                    collapsed,
                    hop_mass,
                    raw_total,
                });
            }
            k -= 1;
            seq[k] += 1;
            if seq[k] < t {
                break;
            }
            seq[k] = 0;
        }
    }
}

fn report_from(
    enumeration: Enumeration,
    alphas: &[Vec<f64>],
    info: &CandidateInfo,
    top_k: usize,
    filter: Option<SequenceFilter<'_>>,
) -> MetaPathReport {
    let mut entries: Vec<MetaPathEntry> = enumeration
        .collapsed
        .into_iter()
        .filter(|&(_, score)| score != 0.0)
        .filter(|(seq, _)| filter.is_none_or(|f| f(seq)))
        .map(|(seq, score)| MetaPathEntry {
            names: seq.iter().map(|&t| info.names[t].clone()).collect(),
            length: seq.len(),
            type_sequence: seq,
            score,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then(a.length.cmp(&b.length))
            .then(a.type_sequence.cmp(&b.type_sequence))
    });
    entries.truncate(top_k);
    let mut per_layer_alpha = DenseMatrix::zeros(alphas.len(), info.len());
    for (k, row) in alphas.iter().enumerate() {
        per_layer_alpha.row_mut(k).copy_from_slice(row);
    }
    MetaPathReport {
        entries,
        per_layer_alpha,
        hop_ratios: enumeration.hop_mass,
        raw_total: enumeration.raw_total,
    }
}

/// Ranks meta-paths for one block and channel by exhaustive enumeration.
pub fn rank_metapaths_block(
    p: &ModelParams,
    info: &CandidateInfo,
    block: usize,
    channel: usize,
    top_k: usize,
) -> Result<MetaPathReport> {
    let steps = product_order_steps(p, block)?;
    let alphas = alphas_for_channel(&steps, info, channel)?;
    let enumeration = enumerate_sequences(&alphas, info)?;
    Ok(report_from(enumeration, &alphas, info, top_k, None))
}

/// [`rank_metapaths_block`] for the first block, the common case.
pub fn rank_metapaths(
    p: &ModelParams,
    info: &CandidateInfo,
    channel: usize,
    top_k: usize,
) -> Result<MetaPathReport> {
    rank_metapaths_block(p, info, 0, channel, top_k)
}

/// Ranks only the meta-paths running between nodes of `target_type`: the
/// walk's first edge must leave a target-typed node and its last edge must
/// arrive at one, per the declared endpoint schema. Paths starting or ending
/// at the non-local pseudo-type have no schema entry and are excluded.
pub fn rank_metapaths_between_targets(
    p: &ModelParams,
    info: &CandidateInfo,
    block: usize,
    channel: usize,
    top_k: usize,
    target_type: usize,
) -> Result<MetaPathReport> {
    let endpoints = info.endpoints.as_ref().ok_or(Error::Domain {
        op: "rank_metapaths_between_targets",
        detail: "candidate info carries no endpoint schema".into(),
    })?;
    let steps = product_order_steps(p, block)?;
    let alphas = alphas_for_channel(&steps, info, channel)?;
    let enumeration = enumerate_sequences(&alphas, info)?;
    let filter = |seq: &[usize]| -> bool {
        let (Some(&first), Some(&last)) = (seq.first(), seq.last()) else {
            return false;
        };
        match (endpoints.get(first), endpoints.get(last)) {
            (Some(&(src, _)), Some(&(_, dst))) => src == target_type && dst == target_type,
            _ => false,
        }
    };
    Ok(report_from(enumeration, &alphas, info, top_k, Some(&filter)))
}

/// Selection mass per path length for one block and channel:
/// `hop_ratios[h]` is the total score of sequences with exactly `h`
/// non-identity selections. Requires the identity candidate.
pub fn hop_ratios(p: &ModelParams, info: &CandidateInfo, channel: usize) -> Result<Vec<f64>> {
    if info.identity_index.is_none() {
        return Err(Error::MissingIdentity);
    }
    let steps = product_order_steps(p, 0)?;
    let alphas = alphas_for_channel(&steps, info, channel)?;
    Ok(enumerate_sequences(&alphas, info)?.hop_mass)
}

/// One attention row: the softmax over candidates for a block, step, and
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub block: usize,
    pub step: usize,
    pub channel: usize,
    pub alpha: Vec<f64>,
}

/// Attention scores across the whole model, labeled with candidate names.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTable {
    pub names: Vec<String>,
    pub rows: Vec<AttentionRow>,
}

/// Softmax of every layer's and channel's logits, in stored step order.
pub fn attention_table(p: &ModelParams, info: &CandidateInfo) -> Result<AttentionTable> {
    let mut rows = Vec::new();
    for (block, steps) in p.selection.iter().enumerate() {
        for (step, w) in steps.iter().enumerate() {
            if w.candidates() != info.len() {
                return Err(Error::Shape {
                    op: "attention_table",
                    detail: format!(
                        "{} logit columns vs {} described candidates",
                        w.candidates(),
                        info.len()
                    ),
                });
            }
            for channel in 0..w.channels() {
                rows.push(AttentionRow {
                    block,
                    step,
                    channel,
                    alpha: w.alpha(channel)?,
                });
            }
        }
    }
    Ok(AttentionTable {
        names: info.names.clone(),
        rows,
    })
}
