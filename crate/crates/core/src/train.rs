//! Cross-entropy training: taped forward builders for both transformation
//! styles, the Adam optimizer, subgraph mini-batch sampling, and the epoch
//! loop with best-validation checkpointing.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{build_candidates, merge_for_sampling, CandidateSet, HeteroGraph, Splits};
use crate::model::{
    fastgtn_forward_on, gtn_forward_on, ModelKind, ModelParams, ParamKey, Prediction,
};
use crate::num;
use crate::sparse::DenseMatrix;
use crate::tape::{Gradients, NodeId, Tape};

/// Mean cross-entropy over the masked nodes, computed from logits with
/// log-sum-exp stabilization.
pub fn loss(pred: &Prediction, labels: &[i64], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Empty { what: "loss mask" });
    }
    let logits = &pred.logits;
    let n_classes = logits.n_cols() as i64;
    let mut total = 0.0;
    for &i in mask {
        if i >= logits.n_rows() {
            return Err(Error::NodeOutOfRange {
                node: i,
                n_nodes: logits.n_rows(),
            });
        }
        let label = labels[i];
        if label < 0 || label >= n_classes {
            return Err(Error::InvalidLabel {
                node: i,
                label,
                n_classes: n_classes as usize,
            });
        }
        let row = logits.row(i);
        total += num::log_sum_exp(row) - row[label as usize];
    }
    Ok(total / mask.len() as f64)
}

/// Micro-averaged F1 over the given nodes. With one label per node the
/// global true-positive count equals the correct predictions and false
/// positives equal false negatives, so this reduces to global accuracy.
pub fn micro_f1(pred: &Prediction, labels: &[i64], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let argmax = pred.logits.row_argmax();
    let mut tp = 0usize;
    let mut fp = 0usize;
    for &i in nodes {
        if labels[i] >= 0 && argmax[i] as i64 == labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    let fno = fp;
    let denom = 2 * tp + fp + fno;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Adam first/second moment estimates per parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: BTreeMap<ParamKey, Vec<f64>>,
    v: BTreeMap<ParamKey, Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, key: &ParamKey) -> Option<(&[f64], &[f64])> {
        Some((self.m.get(key)?.as_slice(), self.v.get(key)?.as_slice()))
    }
}

/// In-place Adam update with bias correction on one flat tensor.
#[allow(clippy::too_many_arguments)]
pub(crate) fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) {
    let (b1, b2) = betas;
    let bc1 = 1.0 - num::powf(b1, t as f64);
    let bc2 = 1.0 - num::powf(b2, t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (num::sqrt(v_hat) + eps);
    }
}

/// One Adam step over every gradient entry. Non-finite gradients abort with
/// the offending key and flat index before any tensor is touched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    for (key, grad) in grads.iter() {
        for (index, &g) in grad.values().iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    key: key.to_string(),
                    index,
                    value: g,
                });
            }
        }
        let have = params.param_values(key).map(|p| p.len());
        if have != Some(grad.values().len()) {
            return Err(Error::InvalidParams(format!(
                "gradient for {key} has {} entries, parameter has {:?}",
                grad.values().len(),
                have
            )));
        }
    }
    state.t += 1;
    let t = state.t;
    for (key, grad) in grads.iter() {
        let n = grad.values().len();
        let m = state.m.entry(*key).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(*key).or_insert_with(|| vec![0.0; n]);
        let slice = params
            .param_values_mut(key)
            .expect("validated before the step");
        adam_update(slice, grad.values(), m, v, t, lr, betas, eps);
    }
    Ok(())
}

/// Mini-batch sampling parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSpec {
    pub batch_size: usize,
    /// Nodes sampled per hop; the length is the hop count, so it must cover
    /// the model's receptive field for exact-subgraph equivalence.
    pub fanout: Vec<usize>,
    pub sampler: SamplerKind,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// Per expanded node, keep up to `fanout[hop]` of its in-neighbors.
    Neighborhood,
    /// Per hop, keep up to `fanout[hop] * batch_size` nodes from the pooled
    /// frontier neighborhood.
    Layerwise,
}

impl SamplerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerKind::Neighborhood => "neighborhood",
            SamplerKind::Layerwise => "layerwise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "neighborhood" => Some(SamplerKind::Neighborhood),
            "layerwise" => Some(SamplerKind::Layerwise),
            _ => None,
        }
    }
}

fn sample_indices(rng: &mut ChaCha8Rng, pool: &[usize], amount: usize) -> Vec<usize> {
    if pool.len() <= amount {
        return pool.to_vec();
    }
    let picked = rand::seq::index::sample(rng, pool.len(), amount);
    let mut out: Vec<usize> = picked.iter().map(|k| pool[k]).collect();
    out.sort_unstable();
    out
}

/// Extracts the typed subgraph reachable from `targets` through the merged
/// union adjacency, truncated by the sampler, and remaps node ids densely.
/// Returns the subgraph plus `remap` with `remap[new_id] = original_id`.
/// Every edge in the subgraph exists in the original graph with the same
/// type and weight; weights are carried as stored, so callers decide whether
/// to renormalize afterwards.
pub fn sample_subgraph(
    g: &HeteroGraph,
    targets: &[usize],
    spec: &BatchSpec,
) -> Result<(HeteroGraph, Vec<usize>)> {
    if targets.is_empty() {
        return Err(Error::Empty { what: "target set" });
    }
    for &t in targets {
        if t >= g.n_nodes {
            return Err(Error::NodeOutOfRange {
                node: t,
                n_nodes: g.n_nodes,
            });
        }
    }
    if spec.fanout.contains(&0) {
        return Err(Error::Domain {
            op: "sample_subgraph",
            detail: "fanout entries must be at least 1".into(),
        });
    }
    let merged = merge_for_sampling(g);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_set = vec![false; g.n_nodes];
    let mut frontier: Vec<usize> = targets.to_vec();
    frontier.sort_unstable();
    frontier.dedup();
    for &t in &frontier {
        in_set[t] = true;
    }
    // (dst, src, weight, type) in sampling order.
    let mut edges: Vec<(usize, usize, f64, usize)> = Vec::new();
    for &budget in &spec.fanout {
        if frontier.is_empty() {
            break;
        }
        let mut next: Vec<usize> = Vec::new();
        match spec.sampler {
            SamplerKind::Neighborhood => {
                for &u in &frontier {
                    let neighbors = merged.row_neighbors(u);
                    let chosen = sample_indices(&mut rng, &neighbors, budget);
                    let (cols, weights, types) = merged.row(u);
                    let mut pick = 0usize;
                    for k in 0..cols.len() {
                        while pick < chosen.len() && chosen[pick] < cols[k] {
                            pick += 1;
                        }
                        if pick < chosen.len() && chosen[pick] == cols[k] {
                            edges.push((u, cols[k], weights[k], types[k]));
                        }
                    }
                    for &c in &chosen {
                        if !in_set[c] {
                            in_set[c] = true;
                            next.push(c);
                        }
                    }
                }
            }
            SamplerKind::Layerwise => {
                let mut pool: Vec<usize> = Vec::new();
                for &u in &frontier {
                    pool.extend(merged.row_neighbors(u));
                }
                pool.sort_unstable();
                pool.dedup();
                let cap = budget.saturating_mul(targets.len().max(1));
                let chosen = sample_indices(&mut rng, &pool, cap);
                let keep: alloc::collections::BTreeSet<usize> = chosen.iter().copied().collect();
                for &u in &frontier {
                    let (cols, weights, types) = merged.row(u);
                    for k in 0..cols.len() {
                        if keep.contains(&cols[k]) {
                            edges.push((u, cols[k], weights[k], types[k]));
                        }
                    }
                }
                for c in chosen {
                    if !in_set[c] {
                        in_set[c] = true;
                        next.push(c);
                    }
                }
            }
        }
        next.sort_unstable();
        frontier = next;
    }
    let remap: Vec<usize> = (0..g.n_nodes).filter(|&i| in_set[i]).collect();
    let mut old_to_new = vec![usize::MAX; g.n_nodes];
    for (new, &old) in remap.iter().enumerate() {
        old_to_new[old] = new;
    }
    let n_sub = remap.len();
    let mut per_type: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); g.n_edge_types()];
    for (dst, src, w, ty) in edges {
        per_type[ty].push((old_to_new[dst], old_to_new[src], w));
    }
    let adjacency = per_type
        .into_iter()
        .map(|t| crate::sparse::SparseMatrix::from_triplets(n_sub, n_sub, &t))
        .collect::<Result<Vec<_>>>()?;
    let mut features = DenseMatrix::zeros(n_sub, g.n_features());
    let mut labels = Vec::with_capacity(n_sub);
    let mut node_type_of = Vec::with_capacity(n_sub);
    for (new, &old) in remap.iter().enumerate() {
        features.row_mut(new).copy_from_slice(g.features.row(old));
        labels.push(g.labels[old]);
        node_type_of.push(g.node_type_of[old]);
    }
    let remap_split = |split: &[usize]| -> Vec<usize> {
        split
            .iter()
            .filter(|&&n| in_set[n])
            .map(|&n| old_to_new[n])
            .collect()
    };
    let sub = HeteroGraph::new(
        n_sub,
        node_type_of,
        g.edge_type_names.clone(),
        adjacency,
        features,
        labels,
        g.n_classes,
        Splits {
            train: remap_split(&g.splits.train),
            valid: remap_split(&g.splits.valid),
            test: remap_split(&g.splits.test),
        },
        g.edge_endpoints.clone(),
        g.target_node_type,
    )?;
    Ok((sub, remap))
}

/// A recorded forward pass ending in a scalar loss, ready for one backward
/// sweep.
pub struct LossTape {
    pub tape: Tape,
    pub loss: NodeId,
    pub logits: NodeId,
}

fn draw_dropout_mask(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<f64> {
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
        .collect()
}

/// Dropout probability plus the generator drawing its masks.
pub type DropoutSource<'r> = Option<(f64, &'r mut ChaCha8Rng)>;

/// Builds the differentiable forward-plus-loss graph for either style.
/// Dropout, when given, is applied to each channel's activated output.
pub fn build_loss_tape(
    cands: &CandidateSet,
    x: &DenseMatrix,
    p: &ModelParams,
    labels: &[i64],
    mask: &[usize],
    mut dropout: DropoutSource<'_>,
) -> Result<LossTape> {
    let mut t = Tape::new();
    let cand_nodes: Vec<NodeId> = cands
        .mats
        .iter()
        .map(|m| t.const_sparse(m.clone()))
        .collect();
    let x0 = t.const_dense(x.clone());
    let hyper = &p.hyper;
    let gamma = hyper.gamma;
    let apply_dropout = |t: &mut Tape, node: NodeId, dropout: &mut DropoutSource<'_>| -> Result<NodeId> {
        if let Some((prob, rng)) = dropout {
            if *prob > 0.0 {
                let len = t.dense(node)?.values().len();
                let mask = draw_dropout_mask(rng, len, *prob);
                return t.dropout(node, mask);
            }
        }
        Ok(node)
    };
    let aggregate = |t: &mut Tape, hs: Vec<NodeId>| -> Result<NodeId> {
        match hyper.agg {
            crate::model::Aggregation::Concat => t.concat_cols(hs),
            crate::model::Aggregation::Mean => t.mean_stack(hs),
            crate::model::Aggregation::Sum => t.sum_stack(hs),
        }
    };
    let mut z = x0;
    match hyper.kind {
        ModelKind::Gtn => {
            let steps = &p.selection[0];
            let alphas: Vec<NodeId> = steps
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let pn = t.param(ParamKey::Selection { block: 0, step: k }, w.logits.clone());
                    t.row_softmax(pn)
                })
                .collect::<Result<_>>()?;
            let mut convs = Vec::with_capacity(hyper.channels);
            for c in 0..hyper.channels {
                let mut a = t.select_sparse(alphas[0], c, cand_nodes.clone())?;
                for &alpha in &alphas[1..] {
                    let s = t.select_sparse(alpha, c, cand_nodes.clone())?;
                    let prod = t.spmm(a, s)?;
                    a = t.row_norm_sp(prod)?;
                }
                let with_loops = t.add_scaled_eye(a, gamma)?;
                convs.push(t.row_norm_sp(with_loops)?);
            }
            for block in 0..hyper.blocks {
                let w = t.param(
                    ParamKey::GnnW { block, channel: 0 },
                    p.gnn_weights[block][0].clone(),
                );
                let m = t.matmul(z, w)?;
                let mut hs = Vec::with_capacity(convs.len());
                for &conv in &convs {
                    let h = t.sp_apply(conv, m)?;
                    let h = t.relu(h)?;
                    hs.push(apply_dropout(&mut t, h, &mut dropout)?);
                }
                z = aggregate(&mut t, hs)?;
            }
        }
        ModelKind::FastGtn => {
            for block in 0..hyper.blocks {
                let steps = &p.selection[block];
                let alphas: Vec<NodeId> = steps
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        let pn = t.param(ParamKey::Selection { block, step: k }, w.logits.clone());
                        t.row_softmax(pn)
                    })
                    .collect::<Result<_>>()?;
                let inner = &p.gnn_weights[block];
                let w_nodes: Vec<NodeId> = inner
                    .iter()
                    .enumerate()
                    .map(|(c, w)| t.param(ParamKey::GnnW { block, channel: c }, w.clone()))
                    .collect();
                let w_of = |c: usize| {
                    if w_nodes.len() == 1 {
                        w_nodes[0]
                    } else {
                        w_nodes[c]
                    }
                };
                let nl = match p.nonlocal.get(block).and_then(|c| c.as_ref()) {
                    Some(cfg) if cfg.enabled => {
                        let wp = t.param(ParamKey::NlProjW { block }, cfg.proj_w.clone());
                        let bp = t.param(
                            ParamKey::NlProjB { block },
                            DenseMatrix::from_vec(1, cfg.proj_b.len(), cfg.proj_b.clone())?,
                        );
                        Some((wp, bp, cfg.top_n))
                    }
                    _ => None,
                };
                let mut bases = Vec::with_capacity(hyper.channels);
                for c in 0..hyper.channels {
                    bases.push(t.matmul(z, w_of(c))?);
                }
                let mut zs = bases.clone();
                for &alpha in &alphas {
                    let mut mats = cand_nodes.clone();
                    if let Some((wp, bp, top_n)) = nl {
                        let h = t.mean_stack(zs.clone())?;
                        let proj = t.matmul(h, wp)?;
                        let proj = t.add_bias_row(proj, bp)?;
                        let gproj = t.tanh(proj)?;
                        mats.push(t.nonlocal_build(gproj, top_n)?);
                    }
                    for c in 0..hyper.channels {
                        zs[c] = t.select_apply(alpha, c, zs[c], mats.clone())?;
                    }
                }
                let mut hs = Vec::with_capacity(hyper.channels);
                for c in 0..hyper.channels {
                    let h = t.lincomb(gamma, bases[c], 1.0 - gamma, zs[c])?;
                    let h = t.relu(h)?;
                    hs.push(apply_dropout(&mut t, h, &mut dropout)?);
                }
                z = aggregate(&mut t, hs)?;
            }
        }
    }
    let cw = t.param(ParamKey::ClassifierW, p.classifier_w.clone());
    let cb = t.param(
        ParamKey::ClassifierB,
        DenseMatrix::from_vec(1, p.classifier_b.len(), p.classifier_b.clone())?,
    );
    let logits = t.matmul(z, cw)?;
    let logits = t.add_bias_row(logits, cb)?;
    let loss = t.cross_entropy(logits, labels.to_vec(), mask.to_vec())?;
    Ok(LossTape {
        tape: t,
        loss,
        logits,
    })
}

/// Inference forward dispatching on the parameter style.
pub fn eval_forward(cands: &CandidateSet, x: &DenseMatrix, p: &ModelParams) -> Result<Prediction> {
    match p.hyper.kind {
        ModelKind::Gtn => Ok(gtn_forward_on(cands, x, p, None)?.0),
        ModelKind::FastGtn => fastgtn_forward_on(cands, x, p),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub batch: Option<BatchSpec>,
    pub seed: u64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 5e-4,
            dropout: 0.5,
            batch: None,
            seed: 0,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_f1: f64,
    pub test_f1: f64,
}

/// Full-graph or mini-batch training. Returns the parameters of the epoch
/// with the best validation micro-F1 (ties keep the earliest) together with
/// the per-epoch history. With `epochs = 0` the parameters pass through
/// untouched and the history is empty.
pub fn train(
    g: &HeteroGraph,
    params: ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    train_with_progress(g, params, cfg, &mut |_| {})
}

/// [`train`] with a per-epoch callback for live reporting.
pub fn train_with_progress(
    g: &HeteroGraph,
    mut params: ModelParams,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<(ModelParams, Vec<EpochStats>)> {
    if cfg.epochs == 0 {
        return Ok((params, Vec::new()));
    }
    params.validate_for_graph(g)?;
    if g.splits.train.is_empty() {
        return Err(Error::Empty { what: "train split" });
    }
    let cands = build_candidates(g, params.hyper.include_identity, params.hyper.epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ModelParams)> = None;
    let mut batch_counter: u64 = 0;
    for epoch in 0..cfg.epochs {
        let train_loss = match &cfg.batch {
            None => {
                let lt = build_loss_tape(
                    &cands,
                    &g.features,
                    &params,
                    &g.labels,
                    &g.splits.train,
                    (cfg.dropout > 0.0).then_some((cfg.dropout, &mut rng)),
                )?;
                let value = lt.tape.scalar(lt.loss)?;
                let grads = lt.tape.backward(lt.loss)?;
                adam_step(
                    &mut params,
                    &grads,
                    &mut adam,
                    cfg.lr,
                    cfg.betas,
                    cfg.adam_eps,
                )?;
                value
            }
            Some(spec) => {
                let mut order = g.splits.train.clone();
                order.shuffle(&mut rng);
                let mut total = 0.0;
                let mut batches = 0usize;
                for chunk in order.chunks(spec.batch_size.max(1)) {
                    let mut bspec = spec.clone();
                    bspec.seed = spec.seed.wrapping_add(batch_counter);
                    batch_counter += 1;
                    let (sub, remap) = sample_subgraph(g, chunk, &bspec)?;
                    let sub_cands = build_candidates(
                        &sub,
                        params.hyper.include_identity,
                        params.hyper.epsilon,
                    )?;
                    let mut old_to_new = BTreeMap::new();
                    for (new, &old) in remap.iter().enumerate() {
                        old_to_new.insert(old, new);
                    }
                    let mask: Vec<usize> =
                        chunk.iter().map(|old| old_to_new[old]).collect();
                    let lt = build_loss_tape(
                        &sub_cands,
                        &sub.features,
                        &params,
                        &sub.labels,
                        &mask,
                        (cfg.dropout > 0.0).then_some((cfg.dropout, &mut rng)),
                    )?;
                    total += lt.tape.scalar(lt.loss)?;
                    batches += 1;
                    let grads = lt.tape.backward(lt.loss)?;
                    adam_step(
                        &mut params,
                        &grads,
                        &mut adam,
                        cfg.lr,
                        cfg.betas,
                        cfg.adam_eps,
                    )?;
                }
                total / batches.max(1) as f64
            }
        };
        let pred = eval_forward(&cands, &g.features, &params)?;
        let stats = EpochStats {
            epoch,
            train_loss,
            valid_f1: micro_f1(&pred, &g.labels, &g.splits.valid),
            test_f1: micro_f1(&pred, &g.labels, &g.splits.test),
        };
        // Best-validation checkpointing; without a validation split the
        // final parameters win.
        if !g.splits.valid.is_empty()
            && best.as_ref().is_none_or(|(b, _)| stats.valid_f1 > *b)
        {
            best = Some((stats.valid_f1, params.clone()));
        }
        progress(&stats);
        history.push(stats);
    }
    let final_params = best.map(|(_, p)| p).unwrap_or(params);
    Ok((final_params, history))
}
