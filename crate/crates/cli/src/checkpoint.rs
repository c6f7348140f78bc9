//! Versioned JSON checkpoints.
//!
//! A checkpoint holds the hyper block, every trainable tensor under a named
//! key with its declared shape, and enough candidate metadata (names,
//! identity index, optional endpoint schema) for interpretation to run
//! without the original dataset. JSON doubles are emitted in
//! shortest-round-trip form, so values reload bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use mpf_core::layers::{NonLocalConfig, SelectionWeights};
use mpf_core::model::{Aggregation, Hyper, ModelKind, ModelParams};
use mpf_core::DenseMatrix;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("bad checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Core(#[from] mpf_core::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorDto {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl TensorDto {
    fn from_dense(m: &DenseMatrix) -> Self {
        Self {
            shape: [m.n_rows(), m.n_cols()],
            data: m.values().to_vec(),
        }
    }

    fn to_dense(&self) -> Result<DenseMatrix, CheckpointError> {
        Ok(DenseMatrix::from_vec(
            self.shape[0],
            self.shape[1],
            self.data.clone(),
        )?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HyperDto {
    kind: String,
    steps: usize,
    channels: usize,
    blocks: usize,
    gamma: f64,
    agg: String,
    epsilon: f64,
    hidden_dim: usize,
    include_identity: bool,
    nonlocal_n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDto {
    version: u32,
    hyper: HyperDto,
    n_classes: usize,
    /// Candidate names in logit-column order, including `"I"` and `"NL"`.
    candidate_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_endpoints: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_node_type: Option<usize>,
    tensors: BTreeMap<String, TensorDto>,
}

/// Candidate metadata carried alongside the tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub candidate_names: Vec<String>,
    pub n_classes: usize,
    pub edge_endpoints: Option<Vec<(usize, usize)>>,
    pub target_node_type: Option<usize>,
}

fn hyper_to_dto(h: &Hyper) -> HyperDto {
    HyperDto {
        kind: h.kind.as_str().to_string(),
        steps: h.steps,
        channels: h.channels,
        blocks: h.blocks,
        gamma: h.gamma,
        agg: h.agg.as_str().to_string(),
        epsilon: h.epsilon,
        hidden_dim: h.hidden_dim,
        include_identity: h.include_identity,
        nonlocal_n: h.nonlocal_n,
    }
}

fn hyper_from_dto(d: &HyperDto) -> Result<Hyper, CheckpointError> {
    let kind = match d.kind.as_str() {
        "gtn" => ModelKind::Gtn,
        "fastgtn" => ModelKind::FastGtn,
        other => {
            return Err(CheckpointError::Malformed(format!(
                "unknown model kind `{other}`"
            )))
        }
    };
    let agg = Aggregation::parse(&d.agg)
        .ok_or_else(|| CheckpointError::Malformed(format!("unknown aggregation `{}`", d.agg)))?;
    Ok(Hyper {
        kind,
        steps: d.steps,
        channels: d.channels,
        blocks: d.blocks,
        gamma: d.gamma,
        agg,
        epsilon: d.epsilon,
        hidden_dim: d.hidden_dim,
        include_identity: d.include_identity,
        nonlocal_n: d.nonlocal_n,
    })
}

/// Serializes parameters plus candidate metadata to a JSON file.
pub fn save_checkpoint(
    params: &ModelParams,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut tensors = BTreeMap::new();
    for (block, steps) in params.selection.iter().enumerate() {
        for (step, w) in steps.iter().enumerate() {
            tensors.insert(
                format!("selection.l{block}.k{step}"),
                TensorDto::from_dense(&w.logits),
            );
        }
    }
    for (block, inner) in params.gnn_weights.iter().enumerate() {
        if inner.len() == 1 {
            tensors.insert(format!("gnn.W{block}"), TensorDto::from_dense(&inner[0]));
        } else {
            for (c, w) in inner.iter().enumerate() {
                tensors.insert(format!("gnn.W{block}.c{c}"), TensorDto::from_dense(w));
            }
        }
    }
    tensors.insert(
        "classifier.W".to_string(),
        TensorDto::from_dense(&params.classifier_w),
    );
    tensors.insert(
        "classifier.b".to_string(),
        TensorDto {
            shape: [1, params.classifier_b.len()],
            data: params.classifier_b.clone(),
        },
    );
    for (block, nl) in params.nonlocal.iter().enumerate() {
        if let Some(cfg) = nl {
            tensors.insert(
                format!("nonlocal.l{block}.proj"),
                TensorDto::from_dense(&cfg.proj_w),
            );
            tensors.insert(
                format!("nonlocal.l{block}.bias"),
                TensorDto {
                    shape: [1, cfg.proj_b.len()],
                    data: cfg.proj_b.clone(),
                },
            );
        }
    }
    let dto = CheckpointDto {
        version: CHECKPOINT_VERSION,
        hyper: hyper_to_dto(&params.hyper),
        n_classes: meta.n_classes,
        candidate_names: meta.candidate_names.clone(),
        edge_endpoints: meta
            .edge_endpoints
            .as_ref()
            .map(|eps| eps.iter().map(|&(s, d)| [s, d]).collect()),
        target_node_type: meta.target_node_type,
        tensors,
    };
    let text = serde_json::to_string_pretty(&dto)?;
    std::fs::write(path, text).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn take_tensor(
    tensors: &mut BTreeMap<String, TensorDto>,
    key: &str,
) -> Result<TensorDto, CheckpointError> {
    tensors
        .remove(key)
        .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor `{key}`")))
}

/// Loads parameters and candidate metadata from a JSON checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta), CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dto: CheckpointDto = serde_json::from_str(&text)?;
    if dto.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(dto.version));
    }
    let hyper = hyper_from_dto(&dto.hyper)?;
    let mut tensors = dto.tensors;
    let selection_blocks = match hyper.kind {
        ModelKind::Gtn => 1,
        ModelKind::FastGtn => hyper.blocks,
    };
    let mut selection = Vec::with_capacity(selection_blocks);
    for block in 0..selection_blocks {
        let mut steps = Vec::with_capacity(hyper.steps);
        for step in 0..hyper.steps {
            let dto = take_tensor(&mut tensors, &format!("selection.l{block}.k{step}"))?;
            steps.push(SelectionWeights {
                logits: dto.to_dense()?,
                layer_index: step,
            });
        }
        selection.push(steps);
    }
    let mut gnn_weights = Vec::with_capacity(hyper.blocks);
    for block in 0..hyper.blocks {
        if tensors.contains_key(&format!("gnn.W{block}")) {
            let dto = take_tensor(&mut tensors, &format!("gnn.W{block}"))?;
            gnn_weights.push(vec![dto.to_dense()?]);
        } else {
            let mut inner = Vec::with_capacity(hyper.channels);
            for c in 0..hyper.channels {
                let dto = take_tensor(&mut tensors, &format!("gnn.W{block}.c{c}"))?;
                inner.push(dto.to_dense()?);
            }
            gnn_weights.push(inner);
        }
    }
    let classifier_w = take_tensor(&mut tensors, "classifier.W")?.to_dense()?;
    let classifier_b = take_tensor(&mut tensors, "classifier.b")?.data;
    let mut nonlocal = Vec::with_capacity(selection_blocks);
    for block in 0..selection_blocks {
        let key = format!("nonlocal.l{block}.proj");
        if tensors.contains_key(&key) {
            let proj_w = take_tensor(&mut tensors, &key)?.to_dense()?;
            let proj_b = take_tensor(&mut tensors, &format!("nonlocal.l{block}.bias"))?.data;
            nonlocal.push(Some(NonLocalConfig {
                enabled: true,
                top_n: hyper.nonlocal_n,
                proj_dim: proj_w.n_cols(),
                proj_w,
                proj_b,
            }));
        } else {
            nonlocal.push(None);
        }
    }
    if !tensors.is_empty() {
        let keys: Vec<&String> = tensors.keys().collect();
        return Err(CheckpointError::Malformed(format!(
            "unexpected tensors: {keys:?}"
        )));
    }
    let params = ModelParams {
        selection,
        gnn_weights,
        classifier_w,
        classifier_b,
        nonlocal,
        hyper,
    };
    let meta = CheckpointMeta {
        candidate_names: dto.candidate_names,
        n_classes: dto.n_classes,
        edge_endpoints: dto
            .edge_endpoints
            .map(|eps| eps.into_iter().map(|[s, d]| (s, d)).collect()),
        target_node_type: dto.target_node_type,
    };
    Ok((params, meta))
}
