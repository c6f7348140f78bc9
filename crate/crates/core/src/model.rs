//! Full forward models.
//!
//! Two transformation styles share one parameter container:
//!
//! * [`gtn_forward`] materializes the per-channel meta-path matrices by
//!   chained sparse products and then runs graph convolutions on them
//!   (explicit style).
//! * [`fastgtn_forward`] propagates features through the selected
//!   combinations directly, exploiting associativity so that no matrix
//!   product is ever stored (implicit style).
//!
//! With row-stochastic candidates the two are mathematically identical once
//! parameters are mapped by [`transfer_gtn_to_fastgtn`]: selection steps are
//! reversed and the explicit self-loop weight `gamma` becomes the residual
//! coefficient `gamma / (1 + gamma)`.
//!
//! [`gcn_forward`], [`mixhop_forward`], and [`rgcn_forward`] are reference
//! baselines used as oracles by the special-case reduction tests.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{build_candidates, CandidateSet, HeteroGraph};
use crate::layers::{
    apply_selection, channel_average, nonlocal_adjacency, soft_select, NonLocalConfig,
    SelectionWeights,
};
use crate::num;
use crate::sparse::{row_normalize, spdm, spmm_impl, DenseMatrix, SparseMatrix};

/// How per-channel representations are combined after each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Concat,
    Mean,
    Sum,
}

impl Aggregation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregation::Concat => "concat",
            Aggregation::Mean => "mean",
            Aggregation::Sum => "sum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "concat" => Some(Aggregation::Concat),
            "mean" => Some(Aggregation::Mean),
            "sum" => Some(Aggregation::Sum),
            _ => None,
        }
    }

    /// Output width after aggregating `channels` streams of width `d`.
    pub fn out_dim(&self, channels: usize, d: usize) -> usize {
        match self {
            Aggregation::Concat => channels * d,
            _ => d,
        }
    }
}

/// Which transformation style a parameter set drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gtn,
    FastGtn,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Gtn => "gtn",
            ModelKind::FastGtn => "fastgtn",
        }
    }
}

/// Hyper-parameters shared by both styles.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub kind: ModelKind,
    /// Selection steps per block: the number of softly selected adjacency
    /// matrices applied in sequence. The explicit style performs `steps - 1`
    /// sparse products; the implicit style performs `steps` feature
    /// propagations.
    pub steps: usize,
    pub channels: usize,
    /// Blocks of graph convolution (explicit) or transformation layers
    /// (implicit).
    pub blocks: usize,
    /// Self-loop weight in the explicit style; residual coefficient in the
    /// implicit style. [`transfer_gtn_to_fastgtn`] reconciles the two roles.
    pub gamma: f64,
    pub agg: Aggregation,
    /// Diagonal augmentation used when normalizing candidates at ingestion.
    pub epsilon: f64,
    pub hidden_dim: usize,
    pub include_identity: bool,
    /// Non-local entries kept per row; 0 disables the non-local candidate.
    /// Only the implicit style supports it.
    pub nonlocal_n: usize,
}

/// Identifies one trainable tensor inside [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamKey {
    Selection { block: usize, step: usize },
    GnnW { block: usize, channel: usize },
    ClassifierW,
    ClassifierB,
    NlProjW { block: usize },
    NlProjB { block: usize },
}

impl core::fmt::Display for ParamKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ParamKey::Selection { block, step } => write!(f, "selection.l{block}.k{step}"),
            ParamKey::GnnW { block, channel } => write!(f, "gnn.W{block}.c{channel}"),
            ParamKey::ClassifierW => write!(f, "classifier.W"),
            ParamKey::ClassifierB => write!(f, "classifier.b"),
            ParamKey::NlProjW { block } => write!(f, "nonlocal.l{block}.proj"),
            ParamKey::NlProjB { block } => write!(f, "nonlocal.l{block}.bias"),
        }
    }
}

/// All trainable tensors plus the hyper block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `selection[block][step]`, each holding `channels x candidates` logits.
    /// The explicit style keeps a single block (its transformed graphs are
    /// shared by every convolution layer); the implicit style has one entry
    /// per block.
    pub selection: Vec<Vec<SelectionWeights>>,
    /// `gnn_weights[block]` holds either one matrix (shared across channels)
    /// or one per channel.
    pub gnn_weights: Vec<Vec<DenseMatrix>>,
    pub classifier_w: DenseMatrix,
    pub classifier_b: Vec<f64>,
    /// Per-block non-local configuration; `None` when disabled.
    pub nonlocal: Vec<Option<NonLocalConfig>>,
    pub hyper: Hyper,
}

pub(crate) fn init_weight(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let bound = 1.0 / num::sqrt(rows as f64);
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        values.push((2.0 * rng.random::<f64>() - 1.0) * bound);
    }
    DenseMatrix::from_vec(rows, cols, values).expect("finite init values")
}

impl ModelParams {
    /// Fresh parameters for a graph with the given dimensions. Selection
    /// logits start at zero (uniform attention over candidates, including
    /// the identity); weights use symmetric uniform init scaled by
    /// `1/sqrt(fan_in)` from a seeded generator.
    pub fn init(
        hyper: &Hyper,
        in_features: usize,
        n_classes: usize,
        n_edge_types: usize,
        seed: u64,
    ) -> Result<Self> {
        if hyper.steps == 0 || hyper.channels == 0 || hyper.blocks == 0 || hyper.hidden_dim == 0 {
            return Err(Error::InvalidParams(
                "steps, channels, blocks, and hidden_dim must all be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&hyper.gamma) {
            return Err(Error::InvalidParams(format!(
                "gamma {} outside [0, 1]",
                hyper.gamma
            )));
        }
        if hyper.kind == ModelKind::Gtn && hyper.nonlocal_n > 0 {
            return Err(Error::InvalidParams(
                "non-local candidates require the implicit style".into(),
            ));
        }
        let t_struct = n_edge_types + usize::from(hyper.include_identity);
        if t_struct == 0 {
            return Err(Error::Empty {
                what: "candidate set",
            });
        }
        let with_nl = hyper.kind == ModelKind::FastGtn && hyper.nonlocal_n > 0;
        let t_logits = t_struct + usize::from(with_nl);
        let selection_blocks = match hyper.kind {
            ModelKind::Gtn => 1,
            ModelKind::FastGtn => hyper.blocks,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let selection = (0..selection_blocks)
            .map(|_| {
                (0..hyper.steps)
                    .map(|k| SelectionWeights::uniform(hyper.channels, t_logits, k))
                    .collect()
            })
            .collect();
        let agg_dim = hyper.agg.out_dim(hyper.channels, hyper.hidden_dim);
        let per_block = match hyper.kind {
            ModelKind::Gtn => 1,
            ModelKind::FastGtn => hyper.channels,
        };
        let mut gnn_weights = Vec::with_capacity(hyper.blocks);
        for block in 0..hyper.blocks {
            let d_in = if block == 0 { in_features } else { agg_dim };
            gnn_weights.push(
                (0..per_block)
                    .map(|_| init_weight(&mut rng, d_in, hyper.hidden_dim))
                    .collect::<Vec<_>>(),
            );
        }
        let classifier_w = init_weight(&mut rng, agg_dim, n_classes);
        let classifier_b = vec![0.0; n_classes];
        let nonlocal = (0..selection_blocks)
            .map(|_| {
                if with_nl {
                    Some(NonLocalConfig {
                        enabled: true,
                        top_n: hyper.nonlocal_n,
                        proj_dim: hyper.hidden_dim,
                        proj_w: init_weight(&mut rng, hyper.hidden_dim, hyper.hidden_dim),
                        proj_b: vec![0.0; hyper.hidden_dim],
                    })
                } else {
                    None
                }
            })
            .collect();
        Ok(Self {
            selection,
            gnn_weights,
            classifier_w,
            classifier_b,
            nonlocal,
            hyper: hyper.clone(),
        })
    }

    /// Weight for `(block, channel)`, resolving the shared-weight layout.
    pub fn gnn_weight(&self, block: usize, channel: usize) -> &DenseMatrix {
        let inner = &self.gnn_weights[block];
        if inner.len() == 1 {
            &inner[0]
        } else {
            &inner[channel]
        }
    }

    /// Every trainable tensor in deterministic order.
    pub fn param_keys(&self) -> Vec<ParamKey> {
        let mut keys = Vec::new();
        for (block, steps) in self.selection.iter().enumerate() {
            for step in 0..steps.len() {
                keys.push(ParamKey::Selection { block, step });
            }
        }
        for (block, inner) in self.gnn_weights.iter().enumerate() {
            for channel in 0..inner.len() {
                keys.push(ParamKey::GnnW { block, channel });
            }
        }
        keys.push(ParamKey::ClassifierW);
        keys.push(ParamKey::ClassifierB);
        for (block, nl) in self.nonlocal.iter().enumerate() {
            if nl.is_some() {
                keys.push(ParamKey::NlProjW { block });
                keys.push(ParamKey::NlProjB { block });
            }
        }
        keys
    }

    pub fn param_values(&self, key: &ParamKey) -> Option<&[f64]> {
        match *key {
            ParamKey::Selection { block, step } => self
                .selection
                .get(block)?
                .get(step)
                .map(|w| w.logits.values()),
            ParamKey::GnnW { block, channel } => self
                .gnn_weights
                .get(block)?
                .get(channel)
                .map(|w| w.values()),
            ParamKey::ClassifierW => Some(self.classifier_w.values()),
            ParamKey::ClassifierB => Some(&self.classifier_b),
            ParamKey::NlProjW { block } => self
                .nonlocal
                .get(block)?
                .as_ref()
                .map(|c| c.proj_w.values()),
            ParamKey::NlProjB { block } => self.nonlocal.get(block)?.as_ref().map(|c| &c.proj_b[..]),
        }
    }

    pub fn param_values_mut(&mut self, key: &ParamKey) -> Option<&mut [f64]> {
        match *key {
            ParamKey::Selection { block, step } => self
                .selection
                .get_mut(block)?
                .get_mut(step)
                .map(|w| w.logits.values_mut()),
            ParamKey::GnnW { block, channel } => self
                .gnn_weights
                .get_mut(block)?
                .get_mut(channel)
                .map(|w| w.values_mut()),
            ParamKey::ClassifierW => Some(self.classifier_w.values_mut()),
            ParamKey::ClassifierB => Some(&mut self.classifier_b),
            ParamKey::NlProjW { block } => self
                .nonlocal
                .get_mut(block)?
                .as_mut()
                .map(|c| c.proj_w.values_mut()),
            ParamKey::NlProjB { block } => self
                .nonlocal
                .get_mut(block)?
                .as_mut()
                .map(|c| &mut c.proj_b[..]),
        }
    }

    /// Checks the parameter shapes against a graph before a forward pass.
    pub fn validate_for_graph(&self, g: &HeteroGraph) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hyper.gamma) {
            return Err(Error::InvalidParams(format!(
                "gamma {} outside [0, 1]",
                self.hyper.gamma
            )));
        }
        let t_struct = g.n_edge_types() + usize::from(self.hyper.include_identity);
        let with_nl = self.hyper.nonlocal_n > 0;
        let t_logits = t_struct + usize::from(with_nl && self.hyper.kind == ModelKind::FastGtn);
        for steps in &self.selection {
            if steps.len() != self.hyper.steps {
                return Err(Error::InvalidParams(format!(
                    "selection block has {} steps, hyper says {}",
                    steps.len(),
                    self.hyper.steps
                )));
            }
            for w in steps {
                if w.channels() != self.hyper.channels || w.candidates() != t_logits {
                    return Err(Error::InvalidParams(format!(
                        "selection logits are {}x{}, expected {}x{}",
                        w.channels(),
                        w.candidates(),
                        self.hyper.channels,
                        t_logits
                    )));
                }
            }
        }
        if self.gnn_weights.len() != self.hyper.blocks {
            return Err(Error::InvalidParams(format!(
                "{} weight blocks for {} blocks",
                self.gnn_weights.len(),
                self.hyper.blocks
            )));
        }
        let agg_dim = self
            .hyper
            .agg
            .out_dim(self.hyper.channels, self.hyper.hidden_dim);
        for (block, inner) in self.gnn_weights.iter().enumerate() {
            if inner.is_empty() || (inner.len() != 1 && inner.len() != self.hyper.channels) {
                return Err(Error::InvalidParams(format!(
                    "block {block} has {} weight matrices",
                    inner.len()
                )));
            }
            let d_in = if block == 0 { g.n_features() } else { agg_dim };
            for w in inner {
                if w.n_rows() != d_in || w.n_cols() != self.hyper.hidden_dim {
                    return Err(Error::InvalidParams(format!(
                        "block {block} weight is {}x{}, expected {}x{}",
                        w.n_rows(),
                        w.n_cols(),
                        d_in,
                        self.hyper.hidden_dim
                    )));
                }
            }
        }
        if self.classifier_w.n_rows() != agg_dim || self.classifier_w.n_cols() != g.n_classes {
            return Err(Error::InvalidParams(format!(
                "classifier is {}x{}, expected {}x{}",
                self.classifier_w.n_rows(),
                self.classifier_w.n_cols(),
                agg_dim,
                g.n_classes
            )));
        }
        if self.classifier_b.len() != g.n_classes {
            return Err(Error::InvalidParams(format!(
                "classifier bias has {} entries for {} classes",
                self.classifier_b.len(),
                g.n_classes
            )));
        }
        Ok(())
    }
}

/// Class logits and their row-softmax confidence scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: DenseMatrix,
    pub confidence: DenseMatrix,
}

impl Prediction {
    pub fn from_logits(logits: DenseMatrix) -> Self {
        let confidence = logits.row_softmax();
        Self { logits, confidence }
    }
}

pub(crate) fn classify(
    z: &DenseMatrix,
    w: &DenseMatrix,
    b: &[f64],
) -> Result<Prediction> {
    let mut logits = z.matmul(w)?;
    if b.len() != logits.n_cols() {
        return Err(Error::Shape {
            op: "classify",
            detail: format!("bias length {} vs {} classes", b.len(), logits.n_cols()),
        });
    }
    for i in 0..logits.n_rows() {
        let row = logits.row_mut(i);
        for (v, &bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    Ok(Prediction::from_logits(logits))
}

pub(crate) fn aggregate(hs: &[DenseMatrix], agg: Aggregation) -> Result<DenseMatrix> {
    match agg {
        Aggregation::Concat => {
            let refs: Vec<&DenseMatrix> = hs.iter().collect();
            DenseMatrix::hconcat(&refs)
        }
        Aggregation::Mean => channel_average(hs),
        Aggregation::Sum => {
            let mut out = DenseMatrix::zeros(hs[0].n_rows(), hs[0].n_cols());
            for h in hs {
                out.add_assign(h)?;
            }
            Ok(out)
        }
    }
}

/// Materializes the transformed per-channel matrices of one block: an
/// initial soft selection followed by `steps - 1` products, each
/// row-renormalized. For implicit-style parameters the stored step list is
/// reversed into matrix-product order first, so the result is the graph the
/// block's propagation realizes. Blocks with non-local candidates cannot be
/// materialized statically.
pub fn materialize_transformed(
    cands: &CandidateSet,
    p: &ModelParams,
    block: usize,
    max_product_nnz: Option<usize>,
) -> Result<Vec<SparseMatrix>> {
    if p.nonlocal.get(block).is_some_and(|c| c.is_some()) {
        return Err(Error::InvalidParams(
            "non-local candidates are rebuilt from features; explicit materialization is undefined"
                .into(),
        ));
    }
    let stored = p
        .selection
        .get(block)
        .ok_or_else(|| Error::InvalidParams(format!("no selection block {block}")))?;
    let steps: Vec<&SelectionWeights> = match p.hyper.kind {
        ModelKind::Gtn => stored.iter().collect(),
        ModelKind::FastGtn => stored.iter().rev().collect(),
    };
    let mut out = Vec::with_capacity(p.hyper.channels);
    for c in 0..p.hyper.channels {
        let mut a = soft_select(cands, steps[0], c)?;
        for w in &steps[1..] {
            let selected = soft_select(cands, w, c)?;
            let product = spmm_impl(&a, &selected, true, max_product_nnz)?;
            a = row_normalize(&product, 0.0)?;
        }
        out.push(a);
    }
    Ok(out)
}

pub(crate) fn gtn_materialize(
    cands: &CandidateSet,
    p: &ModelParams,
    max_product_nnz: Option<usize>,
) -> Result<Vec<SparseMatrix>> {
    materialize_transformed(cands, p, 0, max_product_nnz)
}

/// Explicit forward on a prebuilt candidate set. Returns the prediction and
/// the materialized per-channel matrices for interpretation.
pub fn gtn_forward_on(
    cands: &CandidateSet,
    x: &DenseMatrix,
    p: &ModelParams,
    max_product_nnz: Option<usize>,
) -> Result<(Prediction, Vec<SparseMatrix>)> {
    if p.hyper.kind != ModelKind::Gtn {
        return Err(Error::InvalidParams(
            "explicit forward requires explicit-style parameters".into(),
        ));
    }
    let transformed = gtn_materialize(cands, p, max_product_nnz)?;
    // Self-loops weighted by gamma, then row normalization by the actual
    // degree of the augmented matrix.
    let mut convs = Vec::with_capacity(transformed.len());
    for a in &transformed {
        convs.push(row_normalize(&a.add_scaled_identity(p.hyper.gamma)?, 0.0)?);
    }
    let mut z = x.clone();
    for block in 0..p.hyper.blocks {
        let w = p.gnn_weight(block, 0);
        let m = z.matmul(w)?;
        let mut hs = Vec::with_capacity(convs.len());
        for conv in &convs {
            hs.push(spdm(conv, &m)?.relu());
        }
        z = aggregate(&hs, p.hyper.agg)?;
    }
    let pred = classify(&z, &p.classifier_w, &p.classifier_b)?;
    Ok((pred, transformed))
}

/// Explicit forward from a raw graph: builds candidates with the hyper
/// block's `epsilon`, materializes the transformed graphs, and classifies.
pub fn gtn_forward(g: &HeteroGraph, p: &ModelParams) -> Result<(Prediction, Vec<SparseMatrix>)> {
    p.validate_for_graph(g)?;
    let cands = build_candidates(g, p.hyper.include_identity, p.hyper.epsilon)?;
    gtn_forward_on(&cands, &g.features, p, None)
}

/// Implicit forward on a prebuilt candidate set: per block and channel,
/// transform features, apply the selection steps (with the non-local
/// candidate rebuilt before each step when enabled), and combine with the
/// residual. Peak extra memory stays linear in node count.
pub fn fastgtn_forward_on(
    cands: &CandidateSet,
    x: &DenseMatrix,
    p: &ModelParams,
) -> Result<Prediction> {
    if p.hyper.kind != ModelKind::FastGtn {
        return Err(Error::InvalidParams(
            "implicit forward requires implicit-style parameters".into(),
        ));
    }
    let gamma = p.hyper.gamma;
    let mut z = x.clone();
    for block in 0..p.hyper.blocks {
        let steps = &p.selection[block];
        let mut bases = Vec::with_capacity(p.hyper.channels);
        for c in 0..p.hyper.channels {
            bases.push(z.matmul(p.gnn_weight(block, c))?);
        }
        let mut zs = bases.clone();
        for w in steps {
            let nl = match p.nonlocal.get(block).and_then(|c| c.as_ref()) {
                Some(cfg) if cfg.enabled => {
                    let h = channel_average(&zs)?;
                    Some(nonlocal_adjacency(&h, cfg)?)
                }
                _ => None,
            };
            let mut mats: Vec<&SparseMatrix> = cands.mats.iter().collect();
            if let Some(nl) = &nl {
                mats.push(nl);
            }
            for c in 0..p.hyper.channels {
                let alpha = w.alpha(c)?;
                let next = apply_selection(&mats, &alpha, &zs[c])?;
                zs[c] = next;
            }
        }
        let mut outs = Vec::with_capacity(p.hyper.channels);
        for c in 0..p.hyper.channels {
            outs.push(DenseMatrix::lincomb(gamma, &bases[c], 1.0 - gamma, &zs[c])?.relu());
        }
        z = aggregate(&outs, p.hyper.agg)?;
    }
    classify(&z, &p.classifier_w, &p.classifier_b)
}

/// Implicit forward from a raw graph.
pub fn fastgtn_forward(g: &HeteroGraph, p: &ModelParams) -> Result<Prediction> {
    p.validate_for_graph(g)?;
    let cands = build_candidates(g, p.hyper.include_identity, p.hyper.epsilon)?;
    fastgtn_forward_on(&cands, &g.features, p)
}

/// Maps explicit-style parameters to implicit-style parameters realizing the
/// identical function on row-stochastic candidates: the selection steps are
/// reversed (the implicit style applies them innermost-first), the same
/// reversed block is replicated for every convolution layer, and the
/// self-loop weight becomes the residual coefficient `gamma / (1 + gamma)`.
pub fn transfer_gtn_to_fastgtn(p: &ModelParams) -> Result<ModelParams> {
    if p.hyper.kind != ModelKind::Gtn {
        return Err(Error::InvalidParams(
            "transfer expects explicit-style parameters".into(),
        ));
    }
    let mut reversed: Vec<SelectionWeights> = p.selection[0].iter().rev().cloned().collect();
    for (k, w) in reversed.iter_mut().enumerate() {
        w.layer_index = k;
    }
    let blocks = p.hyper.blocks;
    let mut hyper = p.hyper.clone();
    hyper.kind = ModelKind::FastGtn;
    hyper.gamma = p.hyper.gamma / (1.0 + p.hyper.gamma);
    hyper.nonlocal_n = 0;
    Ok(ModelParams {
        selection: vec![reversed; blocks],
        gnn_weights: p.gnn_weights.clone(),
        classifier_w: p.classifier_w.clone(),
        classifier_b: p.classifier_b.clone(),
        nonlocal: vec![None; blocks],
        hyper,
    })
}

/// Symmetric normalization with self-loops: `D^{-1/2} (A + I) D^{-1/2}`
/// where `D` holds the row sums of `A + I`. Used only by the reference
/// baselines; the transformation paths normalize row-wise.
fn sym_normalize_with_self_loops(a: &SparseMatrix) -> Result<SparseMatrix> {
    let tilde = a.add_scaled_identity(1.0)?;
    let d = tilde.row_sums();
    let mut inv_sqrt = Vec::with_capacity(d.len());
    for &s in &d {
        if s <= 0.0 {
            return Err(Error::Domain {
                op: "sym_normalize",
                detail: "non-positive degree".into(),
            });
        }
        inv_sqrt.push(1.0 / num::sqrt(s));
    }
    let trips: Vec<(usize, usize, f64)> = tilde
        .iter()
        .map(|(i, j, v)| (i, j, v * inv_sqrt[i] * inv_sqrt[j]))
        .collect();
    SparseMatrix::from_triplets(tilde.n_rows(), tilde.n_cols(), &trips)
}

/// Reference graph convolution parameters: per-layer weights plus the
/// classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub layers: Vec<DenseMatrix>,
    pub classifier_w: DenseMatrix,
    pub classifier_b: Vec<f64>,
}

fn single_adjacency<'g>(g: &'g HeteroGraph, op: &'static str) -> Result<&'g SparseMatrix> {
    if g.n_edge_types() != 1 {
        return Err(Error::Shape {
            op,
            detail: format!("expected a single edge type, found {}", g.n_edge_types()),
        });
    }
    Ok(&g.adjacency[0])
}

/// Reference graph convolution network with symmetric normalization and
/// self-loops. An oracle for the special-case reduction suite, not a
/// transformation model.
pub fn gcn_forward(g: &HeteroGraph, p: &GcnParams) -> Result<Prediction> {
    let a_hat = sym_normalize_with_self_loops(single_adjacency(g, "gcn_forward")?)?;
    let mut z = g.features.clone();
    for w in &p.layers {
        z = spdm(&a_hat, &z.matmul(w)?)?.relu();
    }
    classify(&z, &p.classifier_w, &p.classifier_b)
}

/// Reference adjacency-power mixing parameters: one weight matrix per power
/// per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MixHopParams {
    pub powers: Vec<usize>,
    /// `layers[l][j]` pairs with `powers[j]`.
    pub layers: Vec<Vec<DenseMatrix>>,
    pub classifier_w: DenseMatrix,
    pub classifier_b: Vec<f64>,
}

/// Reference adjacency-power mixing oracle: per layer, concatenates
/// `relu(A_hat^j Z W_j)` over the configured powers.
pub fn mixhop_forward(g: &HeteroGraph, p: &MixHopParams) -> Result<Prediction> {
    let a_hat = sym_normalize_with_self_loops(single_adjacency(g, "mixhop_forward")?)?;
    let mut z = g.features.clone();
    for layer in &p.layers {
        if layer.len() != p.powers.len() {
            return Err(Error::InvalidParams(format!(
                "{} weight matrices for {} powers",
                layer.len(),
                p.powers.len()
            )));
        }
        let mut hs = Vec::with_capacity(p.powers.len());
        for (&j, w) in p.powers.iter().zip(layer) {
            let mut h = z.matmul(w)?;
            for _ in 0..j {
                h = spdm(&a_hat, &h)?;
            }
            hs.push(h.relu());
        }
        let refs: Vec<&DenseMatrix> = hs.iter().collect();
        z = DenseMatrix::hconcat(&refs)?;
    }
    classify(&z, &p.classifier_w, &p.classifier_b)
}

/// Reference relational convolution parameters with basis decomposition:
/// per layer, `bases[l]` holds the basis matrices and `coeffs[l]` the
/// per-edge-type combination weights (`n_edge_types x n_bases`).
#[derive(Debug, Clone, PartialEq)]
pub struct RgcnParams {
    pub bases: Vec<Vec<DenseMatrix>>,
    pub coeffs: Vec<DenseMatrix>,
    pub classifier_w: DenseMatrix,
    pub classifier_b: Vec<f64>,
}

/// Reference relational convolution oracle: per layer,
/// `relu(sum_t D_t^{-1} A_t Z W_t)` with `W_t = sum_i coeffs[t][i] V_i`.
pub fn rgcn_forward(g: &HeteroGraph, p: &RgcnParams) -> Result<Prediction> {
    if p.bases.len() != p.coeffs.len() {
        return Err(Error::InvalidParams(format!(
            "{} basis layers vs {} coefficient layers",
            p.bases.len(),
            p.coeffs.len()
        )));
    }
    let mut normed = Vec::with_capacity(g.n_edge_types());
    for a in &g.adjacency {
        normed.push(row_normalize(a, 0.0)?);
    }
    let mut z = g.features.clone();
    for (bases, coeffs) in p.bases.iter().zip(&p.coeffs) {
        if coeffs.n_rows() != g.n_edge_types() || coeffs.n_cols() != bases.len() {
            return Err(Error::InvalidParams(format!(
                "coefficients are {}x{}, expected {}x{}",
                coeffs.n_rows(),
                coeffs.n_cols(),
                g.n_edge_types(),
                bases.len()
            )));
        }
        let mut acc = DenseMatrix::zeros(z.n_rows(), bases[0].n_cols());
        for (t, a_t) in normed.iter().enumerate() {
            let mut w_t = DenseMatrix::zeros(bases[0].n_rows(), bases[0].n_cols());
            for (i, v_i) in bases.iter().enumerate() {
                w_t.add_assign(&v_i.scale(coeffs.get(t, i)))?;
            }
            acc.add_assign(&spdm(a_t, &z.matmul(&w_t)?)?)?;
        }
        z = acc.relu();
    }
    classify(&z, &p.classifier_w, &p.classifier_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Splits;
    use alloc::vec;
    use rand::Rng;

    fn random_graph(
        rng: &mut ChaCha8Rng,
        n: usize,
        n_types: usize,
        n_features: usize,
        n_classes: usize,
    ) -> HeteroGraph {
        let mut adjacency = Vec::new();
        for _ in 0..n_types {
            let mut trips = Vec::new();
            for i in 0..n {
                trips.push((i, rng.random_range(0..n), rng.random::<f64>() + 0.2));
                for j in 0..n {
                    if rng.random::<f64>() < 0.35 {
                        trips.push((i, j, rng.random::<f64>() + 0.2));
                    }
                }
            }
            adjacency.push(SparseMatrix::from_triplets(n, n, &trips).unwrap());
        }
        let features = DenseMatrix::from_vec(
            n,
            n_features,
            (0..n * n_features).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let labels: Vec<i64> = (0..n)
            .map(|_| rng.random_range(0..n_classes) as i64)
            .collect();
        HeteroGraph::new(
            n,
            vec![0; n],
            (0..n_types).map(|t| format!("T{t}")).collect(),
            adjacency,
            features,
            labels,
            n_classes,
            Splits::default(),
            None,
            None,
        )
        .unwrap()
    }

    fn normalized_graph(
        rng: &mut ChaCha8Rng,
        n: usize,
        n_types: usize,
        n_features: usize,
        n_classes: usize,
    ) -> HeteroGraph {
        let mut g = random_graph(rng, n, n_types, n_features, n_classes);
        g.adjacency = g
            .adjacency
            .iter()
            .map(|a| row_normalize(a, 0.0).unwrap())
            .collect();
        g
    }

    fn hyper(kind: ModelKind, steps: usize, channels: usize, blocks: usize) -> Hyper {
        Hyper {
            kind,
            steps,
            channels,
            blocks,
            gamma: 0.5,
            agg: Aggregation::Concat,
            epsilon: 1e-6,
            hidden_dim: 4,
            include_identity: true,
            nonlocal_n: 0,
        }
    }

    #[test]
    fn prediction_shape_and_confidence_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let g = random_graph(&mut rng, 10, 4, 6, 4);
        let p = ModelParams::init(&hyper(ModelKind::Gtn, 2, 2, 2), 6, 4, 4, 7).unwrap();
        let (pred, mats) = gtn_forward(&g, &p).unwrap();
        assert_eq!(pred.logits.n_rows(), 10);
        assert_eq!(pred.logits.n_cols(), 4);
        assert_eq!(mats.len(), 2);
        for i in 0..10 {
            let s: f64 = pred.confidence.row(i).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn explicit_hand_oracle_identity_candidate() {
        // Single identity candidate, one step, one block, gamma = 1,
        // identity weights and classifier: the convolution normalizes the
        // doubled self-loop back, so logits equal relu(X) = X.
        let n = 3;
        let g = HeteroGraph::new(
            n,
            vec![0; n],
            vec!["E".into()],
            vec![SparseMatrix::identity(n)],
            DenseMatrix::from_rows(&[&[1.0, 2.0, 0.5], &[0.25, 1.5, 3.0], &[2.0, 0.0, 1.0]])
                .unwrap(),
            vec![0, 1, 2],
            3,
            Splits::default(),
            None,
            None,
        )
        .unwrap();
        let h = Hyper {
            kind: ModelKind::Gtn,
            steps: 1,
            channels: 1,
            blocks: 1,
            gamma: 1.0,
            agg: Aggregation::Concat,
            epsilon: 0.0,
            hidden_dim: 3,
            include_identity: false,
            nonlocal_n: 0,
        };
        let mut p = ModelParams::init(&h, 3, 3, 1, 1).unwrap();
        p.gnn_weights[0][0] = DenseMatrix::identity(3);
        p.classifier_w = DenseMatrix::identity(3);
        let (pred, _) = gtn_forward(&g, &p).unwrap();
        // Dense oracle for one convolution layer:
        // row-normalized (I + gamma I) X = X.
        assert!(pred.logits.max_abs_diff(&g.features) <= 1e-12);
    }

    #[test]
    fn transfer_reverses_selection_steps() {
        let p = ModelParams::init(&hyper(ModelKind::Gtn, 3, 1, 1), 4, 2, 2, 3).unwrap();
        let mut tagged = p.clone();
        for (k, w) in tagged.selection[0].iter_mut().enumerate() {
            w.logits.set(0, 0, k as f64);
        }
        let f = transfer_gtn_to_fastgtn(&tagged).unwrap();
        assert_eq!(f.selection[0][0].logits.get(0, 0), 2.0);
        assert_eq!(f.selection[0][1].logits.get(0, 0), 1.0);
        assert_eq!(f.selection[0][2].logits.get(0, 0), 0.0);
        // Single-step transfer is a plain copy.
        let p1 = ModelParams::init(&hyper(ModelKind::Gtn, 1, 1, 1), 4, 2, 2, 3).unwrap();
        let f1 = transfer_gtn_to_fastgtn(&p1).unwrap();
        assert_eq!(f1.selection[0], p1.selection[0]);
    }

    #[test]
    fn exactness_explicit_vs_transferred_implicit() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..20 {
            let n = 6 + trial % 10;
            let n_types = 1 + trial % 3;
            let g = random_graph(&mut rng, n, n_types, 5, 3);
            let mut h = hyper(ModelKind::Gtn, 1 + trial % 4, 1 + trial % 3, 1 + trial % 2);
            h.gamma = rng.random::<f64>();
            h.agg = match trial % 3 {
                0 => Aggregation::Concat,
                1 => Aggregation::Mean,
                _ => Aggregation::Sum,
            };
            h.include_identity = trial % 2 == 0;
            let mut p =
                ModelParams::init(&h, 5, 3, n_types, 100 + trial as u64).unwrap();
            for block in &mut p.selection {
                for w in block.iter_mut() {
                    for v in w.logits.values_mut() {
                        *v = rng.random_range(-1.5..1.5);
                    }
                }
            }
            let (pred_e, _) = gtn_forward(&g, &p).unwrap();
            let pf = transfer_gtn_to_fastgtn(&p).unwrap();
            let pred_i = fastgtn_forward(&g, &pf).unwrap();
            let diff = pred_e.confidence.max_abs_diff(&pred_i.confidence);
            assert!(diff <= 1e-10, "trial {trial}: confidence diff {diff}");
        }
    }

    #[test]
    fn gamma_one_ignores_selection_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = random_graph(&mut rng, 8, 2, 4, 3);
        let mut h = hyper(ModelKind::FastGtn, 2, 2, 2);
        h.gamma = 1.0;
        let mut p = ModelParams::init(&h, 4, 3, 2, 5).unwrap();
        let base = fastgtn_forward(&g, &p).unwrap();
        for block in &mut p.selection {
            for w in block.iter_mut() {
                for v in w.logits.values_mut() {
                    *v = rng.random_range(-3.0..3.0);
                }
            }
        }
        let perturbed = fastgtn_forward(&g, &p).unwrap();
        assert!(base.confidence.max_abs_diff(&perturbed.confidence) <= 1e-15);
    }

    #[test]
    fn gcn_special_case_of_implicit_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let g = normalized_graph(&mut rng, 9, 1, 4, 3);
        let layers: Vec<DenseMatrix> =
            vec![init_weight(&mut rng, 4, 4), init_weight(&mut rng, 4, 4)];
        let gcn = GcnParams {
            layers: layers.clone(),
            classifier_w: init_weight(&mut rng, 4, 3),
            classifier_b: vec![0.1, -0.2, 0.05],
        };
        let want = gcn_forward(&g, &gcn).unwrap();
        let h = Hyper {
            kind: ModelKind::FastGtn,
            steps: 1,
            channels: 1,
            blocks: 2,
            gamma: 0.5,
            agg: Aggregation::Concat,
            epsilon: 0.0,
            hidden_dim: 4,
            include_identity: true,
            nonlocal_n: 0,
        };
        let mut p = ModelParams::init(&h, 4, 3, 1, 9).unwrap();
        for (block, w) in layers.iter().enumerate() {
            p.gnn_weights[block][0] = w.clone();
        }
        p.classifier_w = gcn.classifier_w.clone();
        p.classifier_b = gcn.classifier_b.clone();
        // Saturated logits select the structural adjacency exactly.
        for block in &mut p.selection {
            for w in block.iter_mut() {
                w.logits.set(0, 0, 0.0);
                w.logits.set(0, 1, -800.0);
            }
        }
        let got = fastgtn_forward(&g, &p).unwrap();
        assert!(want.confidence.max_abs_diff(&got.confidence) <= 1e-10);
    }

    #[test]
    fn mixhop_special_case_of_implicit_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let g = normalized_graph(&mut rng, 8, 1, 3, 2);
        let powers = vec![0usize, 1, 2];
        let layer: Vec<DenseMatrix> = (0..3).map(|_| init_weight(&mut rng, 3, 3)).collect();
        let mh = MixHopParams {
            powers: powers.clone(),
            layers: vec![layer.clone()],
            classifier_w: init_weight(&mut rng, 9, 2),
            classifier_b: vec![0.0, 0.3],
        };
        let want = mixhop_forward(&g, &mh).unwrap();
        let h = Hyper {
            kind: ModelKind::FastGtn,
            steps: 2,
            channels: 3,
            blocks: 1,
            gamma: 0.0,
            agg: Aggregation::Concat,
            epsilon: 0.0,
            hidden_dim: 3,
            include_identity: true,
            nonlocal_n: 0,
        };
        let mut p = ModelParams::init(&h, 3, 2, 1, 10).unwrap();
        p.gnn_weights[0] = layer;
        p.classifier_w = mh.classifier_w.clone();
        p.classifier_b = mh.classifier_b.clone();
        // Channel j applies (A + I)/2 for its first j steps, then the exact
        // identity for the remainder.
        for (k, w) in p.selection[0].iter_mut().enumerate() {
            for (c, &j) in powers.iter().enumerate() {
                if k < j {
                    w.logits.set(c, 0, 0.0);
                    w.logits.set(c, 1, 0.0);
                } else {
                    w.logits.set(c, 0, -800.0);
                    w.logits.set(c, 1, 0.0);
                }
            }
        }
        let got = fastgtn_forward(&g, &p).unwrap();
        assert!(want.confidence.max_abs_diff(&got.confidence) <= 1e-10);
    }

    #[test]
    fn rgcn_special_case_of_implicit_forward() {
        // Non-negative features, bases, and coefficient distributions keep
        // every pre-activation non-negative, where the activation placement
        // inside versus outside the channel sum coincides.
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let n_types = 3;
        let n_bases = 2;
        let mut g = normalized_graph(&mut rng, 8, n_types, 3, 2);
        g.features = g.features.map(|v| v.abs());
        let nonneg =
            |rng: &mut ChaCha8Rng, r: usize, c: usize| {
                DenseMatrix::from_vec(r, c, (0..r * c).map(|_| rng.random::<f64>() * 0.5).collect())
                    .unwrap()
            };
        let bases: Vec<DenseMatrix> = (0..n_bases).map(|_| nonneg(&mut rng, 3, 3)).collect();
        let mut coeffs = DenseMatrix::zeros(n_types, n_bases);
        for i in 0..n_bases {
            let raw: Vec<f64> = (0..n_types).map(|_| rng.random::<f64>() + 0.1).collect();
            let s: f64 = raw.iter().sum();
            for t in 0..n_types {
                coeffs.set(t, i, raw[t] / s);
            }
        }
        let rg = RgcnParams {
            bases: vec![bases.clone()],
            coeffs: vec![coeffs.clone()],
            classifier_w: init_weight(&mut rng, 3, 2),
            classifier_b: vec![0.0, 0.0],
        };
        let want = rgcn_forward(&g, &rg).unwrap();
        let h = Hyper {
            kind: ModelKind::FastGtn,
            steps: 1,
            channels: n_bases,
            blocks: 1,
            gamma: 0.0,
            agg: Aggregation::Sum,
            epsilon: 0.0,
            hidden_dim: 3,
            include_identity: false,
            nonlocal_n: 0,
        };
        let mut p = ModelParams::init(&h, 3, 2, n_types, 11).unwrap();
        p.gnn_weights[0] = bases;
        p.classifier_w = rg.classifier_w.clone();
        p.classifier_b = rg.classifier_b.clone();
        for c in 0..n_bases {
            for t in 0..n_types {
                p.selection[0][0]
                    .logits
                    .set(c, t, crate::num::ln(coeffs.get(t, c)));
            }
        }
        let got = fastgtn_forward(&g, &p).unwrap();
        assert!(want.confidence.max_abs_diff(&got.confidence) <= 1e-10);
    }

    #[test]
    fn permutation_equivariance_both_styles() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let n = 9;
        let g = random_graph(&mut rng, n, 2, 4, 3);
        let p = {
            let mut p = ModelParams::init(&hyper(ModelKind::Gtn, 2, 2, 2), 4, 3, 2, 12).unwrap();
            for block in &mut p.selection {
                for w in block.iter_mut() {
                    for v in w.logits.values_mut() {
                        *v = rng.random_range(-1.0..1.0);
                    }
                }
            }
            p
        };
        // Build the permuted graph: P A P^T re-labels both endpoints.
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let permuted_adj: Vec<SparseMatrix> = g
            .adjacency
            .iter()
            .map(|a| {
                let trips: Vec<(usize, usize, f64)> =
                    a.iter().map(|(i, j, v)| (perm[i], perm[j], v)).collect();
                SparseMatrix::from_triplets(n, n, &trips).unwrap()
            })
            .collect();
        let mut feats = DenseMatrix::zeros(n, 4);
        for i in 0..n {
            feats.row_mut(perm[i]).copy_from_slice(g.features.row(i));
        }
        let pg = HeteroGraph::new(
            n,
            g.node_type_of.clone(),
            g.edge_type_names.clone(),
            permuted_adj,
            feats,
            {
                let mut l = vec![0i64; n];
                for i in 0..n {
                    l[perm[i]] = g.labels[i];
                }
                l
            },
            g.n_classes,
            Splits::default(),
            None,
            None,
        )
        .unwrap();
        let (pred, _) = gtn_forward(&g, &p).unwrap();
        let (pred_p, _) = gtn_forward(&pg, &p).unwrap();
        for i in 0..n {
            for c in 0..3 {
                assert!(
                    (pred.confidence.get(i, c) - pred_p.confidence.get(perm[i], c)).abs() <= 1e-10
                );
            }
        }
        let pf = transfer_gtn_to_fastgtn(&p).unwrap();
        let fi = fastgtn_forward(&g, &pf).unwrap();
        let fp = fastgtn_forward(&pg, &pf).unwrap();
        for i in 0..n {
            for c in 0..3 {
                assert!(
                    (fi.confidence.get(i, c) - fp.confidence.get(perm[i], c)).abs() <= 1e-10
                );
            }
        }
    }

    #[test]
    fn init_rejects_degenerate_hypers() {
        let mut h = hyper(ModelKind::Gtn, 0, 1, 1);
        assert!(ModelParams::init(&h, 4, 2, 1, 0).is_err());
        h.steps = 1;
        h.gamma = 1.5;
        assert!(ModelParams::init(&h, 4, 2, 1, 0).is_err());
        h.gamma = 0.5;
        h.nonlocal_n = 3;
        assert!(ModelParams::init(&h, 4, 2, 1, 0).is_err());
    }

}
