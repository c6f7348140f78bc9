//! Built-in verification suite behind `mpf verify`: equivalence of the two
//! transformation styles, row-stochastic product closure, meta-path
//! decomposition, baseline reductions, gradient correctness, the non-local
//! row contract, mini-batch fidelity, and the interpretation identities.

use mpf_core::graph::{build_candidates, CandidateSet, HeteroGraph, Splits};
use mpf_core::interpret::{hop_ratios, rank_metapaths, CandidateInfo};
use mpf_core::layers::{nonlocal_adjacency, NonLocalConfig, SelectionWeights};
use mpf_core::model::{
    fastgtn_forward, fastgtn_forward_on, gcn_forward, gtn_forward_on, materialize_transformed,
    mixhop_forward, rgcn_forward, transfer_gtn_to_fastgtn, Aggregation, GcnParams, Hyper,
    MixHopParams, ModelKind, ModelParams, RgcnParams,
};
use mpf_core::sparse::{degree_of_product, row_normalize, spmm};
use mpf_core::train::{build_loss_tape, sample_subgraph, BatchSpec, SamplerKind};
use mpf_core::{DenseMatrix, SparseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

pub struct VerifyConfig {
    pub quick: bool,
    pub seed: u64,
}

fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> SparseMatrix {
    let mut trips = Vec::new();
    for i in 0..n {
        trips.push((i, rng.random_range(0..n), rng.random::<f64>() + 0.1));
        for j in 0..n {
            if rng.random::<f64>() < 0.4 {
                trips.push((i, j, rng.random::<f64>() + 0.1));
            }
        }
    }
    row_normalize(&SparseMatrix::from_triplets(n, n, &trips).unwrap(), 0.0).unwrap()
}

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
                if rng.random::<f64>() < 0.3 {
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
        Splits {
            train: (0..n / 2).collect(),
            valid: (n / 2..3 * n / 4).collect(),
            test: (3 * n / 4..n).collect(),
        },
        None,
        None,
    )
    .unwrap()
}

fn randomize_selection(p: &mut ModelParams, rng: &mut ChaCha8Rng) {
    for block in &mut p.selection {
        for w in block.iter_mut() {
            for v in w.logits.values_mut() {
                *v = rng.random_range(-1.5..1.5);
            }
        }
    }
}

/// Row-stochastic closure of sparse products (degree of a product of
/// normalized matrices is the identity).
pub fn check_product_closure(trials: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let n = 4 + trial % 29;
        let a = random_stochastic(&mut rng, n);
        let b = random_stochastic(&mut rng, n);
        match degree_of_product(&a, &b) {
            Ok(degrees) => {
                for d in degrees {
                    worst = worst.max((d - 1.0).abs());
                }
                let tilde = a.add_scaled_identity(1.0).unwrap();
                for s in tilde.row_sums() {
                    worst = worst.max((s - 2.0).abs());
                }
            }
            Err(e) => {
                return CheckResult::new(
                    "product-closure",
                    false,
                    format!("trial {trial}: {e}"),
                )
            }
        }
    }
    CheckResult::new(
        "product-closure",
        worst <= 1e-9,
        format!("{trials} trials, worst degree deviation {worst:.3e}"),
    )
}

/// Transferred implicit forward matches the explicit forward.
pub fn check_exactness(configs: usize, max_n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..configs {
        let n = 6 + rng.random_range(0..max_n.saturating_sub(5));
        let n_types = 1 + trial % 4;
        let g = random_graph(&mut rng, n, n_types, 4, 3);
        let hyper = Hyper {
            kind: ModelKind::Gtn,
            steps: 1 + trial % 4,
            channels: 1 + trial % 3,
            blocks: 1 + trial % 2,
            gamma: rng.random::<f64>(),
            agg: match trial % 3 {
                0 => Aggregation::Concat,
                1 => Aggregation::Mean,
                _ => Aggregation::Sum,
            },
            epsilon: 1e-6,
            hidden_dim: 4,
            include_identity: trial % 2 == 0,
            nonlocal_n: 0,
        };
        let mut p =
            ModelParams::init(&hyper, 4, 3, n_types, seed.wrapping_add(trial as u64)).unwrap();
        randomize_selection(&mut p, &mut rng);
        let cands = build_candidates(&g, hyper.include_identity, hyper.epsilon).unwrap();
        let explicit = match gtn_forward_on(&cands, &g.features, &p, None) {
            Ok((pred, _)) => pred,
            Err(e) => return CheckResult::new("exactness", false, format!("trial {trial}: {e}")),
        };
        let pf = transfer_gtn_to_fastgtn(&p).unwrap();
        let implicit = fastgtn_forward_on(&cands, &g.features, &pf).unwrap();
        worst = worst.max(explicit.confidence.max_abs_diff(&implicit.confidence));
    }
    CheckResult::new(
        "exactness",
        worst <= 1e-10,
        format!("{configs} configurations, worst confidence diff {worst:.3e}"),
    )
}

/// Stacked explicit steps equal the brute-force type-sequence expansion.
pub fn check_decomposition(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..6 {
        let n = 4 + trial % 3;
        let t = 2 + trial % 2;
        let steps = 2 + trial % 3;
        let cands = CandidateSet {
            mats: (0..t).map(|_| random_stochastic(&mut rng, n)).collect(),
            names: (0..t).map(|k| format!("T{k}")).collect(),
            identity_index: None,
        };
        let ws: Vec<SelectionWeights> = (0..steps)
            .map(|k| {
                let row: Vec<f64> = (0..t).map(|_| rng.random_range(-1.5..1.5)).collect();
                SelectionWeights {
                    logits: DenseMatrix::from_vec(1, t, row).unwrap(),
                    layer_index: k,
                }
            })
            .collect();
        let mut a = mpf_core::layers::soft_select(&cands, &ws[0], 0).unwrap();
        for w in &ws[1..] {
            a = mpf_core::layers::gt_layer_explicit(&a, &cands, w, 0, true).unwrap();
        }
        let alphas: Vec<Vec<f64>> = ws.iter().map(|w| w.alpha(0).unwrap()).collect();
        let mut oracle = DenseMatrix::zeros(n, n);
        let mut seq = vec![0usize; steps];
        loop {
            let mut coeff = 1.0;
            let mut product = SparseMatrix::identity(n);
            for (k, &tk) in seq.iter().enumerate() {
                coeff *= alphas[k][tk];
                product = spmm(&product, &cands.mats[tk]).unwrap();
            }
            for (i, j, v) in product.iter() {
                oracle.set(i, j, oracle.get(i, j) + coeff * v);
            }
            let mut k = steps;
            let done = loop {
                if k == 0 {
                    break true;
                }
                k -= 1;
                seq[k] += 1;
                if seq[k] < t {
                    break false;
                }
                seq[k] = 0;
            };
            if done {
                break;
            }
        }
        worst = worst.max(a.to_dense().max_abs_diff(&oracle));
    }
    CheckResult::new(
        "meta-path-decomposition",
        worst <= 1e-10,
        format!("worst entry diff {worst:.3e}"),
    )
}

/// The classic convolution, adjacency-power mixing, and relational
/// convolution baselines as special cases of the implicit style.
pub fn check_subsumption(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        DenseMatrix::from_vec(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-0.5..0.5)).collect(),
        )
        .unwrap()
    };
    let mut worst: f64 = 0.0;

    // Classic convolution on a normalized homogeneous graph.
    {
        let mut g = random_graph(&mut rng, 9, 1, 4, 3);
        g.adjacency = vec![row_normalize(&g.adjacency[0], 0.0).unwrap()];
        let layers = vec![init(&mut rng, 4, 4), init(&mut rng, 4, 4)];
        let gcn = GcnParams {
            layers: layers.clone(),
            classifier_w: init(&mut rng, 4, 3),
            classifier_b: vec![0.1, -0.2, 0.05],
        };
        let want = gcn_forward(&g, &gcn).unwrap();
        let hyper = Hyper {
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
        let mut p = ModelParams::init(&hyper, 4, 3, 1, seed).unwrap();
        for (block, w) in layers.iter().enumerate() {
            p.gnn_weights[block][0] = w.clone();
        }
        p.classifier_w = gcn.classifier_w.clone();
        p.classifier_b = gcn.classifier_b.clone();
        for block in &mut p.selection {
            for w in block.iter_mut() {
                w.logits.set(0, 0, 0.0);
                w.logits.set(0, 1, -800.0);
            }
        }
        let got = fastgtn_forward(&g, &p).unwrap();
        worst = worst.max(want.confidence.max_abs_diff(&got.confidence));
    }

    // Adjacency-power mixing.
    {
        let mut g = random_graph(&mut rng, 8, 1, 3, 2);
        g.adjacency = vec![row_normalize(&g.adjacency[0], 0.0).unwrap()];
        let powers = vec![0usize, 1, 2];
        let layer: Vec<DenseMatrix> = (0..3).map(|_| init(&mut rng, 3, 3)).collect();
        let mh = MixHopParams {
            powers: powers.clone(),
            layers: vec![layer.clone()],
            classifier_w: init(&mut rng, 9, 2),
            classifier_b: vec![0.0, 0.3],
        };
        let want = mixhop_forward(&g, &mh).unwrap();
        let hyper = Hyper {
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
        let mut p = ModelParams::init(&hyper, 3, 2, 1, seed).unwrap();
        p.gnn_weights[0] = layer;
        p.classifier_w = mh.classifier_w.clone();
        p.classifier_b = mh.classifier_b.clone();
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
        worst = worst.max(want.confidence.max_abs_diff(&got.confidence));
    }

    // Relational convolution with basis decomposition, on the non-negative
    // cone where the activation placement coincides.
    {
        let n_types = 3;
        let n_bases = 2;
        let mut g = random_graph(&mut rng, 8, n_types, 3, 2);
        g.adjacency = g
            .adjacency
            .iter()
            .map(|a| row_normalize(a, 0.0).unwrap())
            .collect();
        g.features = g.features.map(|v| v.abs());
        let nonneg = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
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
            classifier_w: init(&mut rng, 3, 2),
            classifier_b: vec![0.0, 0.0],
        };
        let want = rgcn_forward(&g, &rg).unwrap();
        let hyper = Hyper {
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
        let mut p = ModelParams::init(&hyper, 3, 2, n_types, seed).unwrap();
        p.gnn_weights[0] = bases;
        p.classifier_w = rg.classifier_w.clone();
        p.classifier_b = rg.classifier_b.clone();
        for c in 0..n_bases {
            for t in 0..n_types {
                p.selection[0][0].logits.set(c, t, coeffs.get(t, c).ln());
            }
        }
        let got = fastgtn_forward(&g, &p).unwrap();
        worst = worst.max(want.confidence.max_abs_diff(&got.confidence));
    }

    CheckResult::new(
        "subsumption",
        worst <= 1e-10,
        format!("worst confidence diff {worst:.3e}"),
    )
}

/// Full finite-difference gradient check of an implicit-style model with
/// non-local candidates.
pub fn check_gradients(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(&mut rng, 7, 2, 3, 2);
    let hyper = Hyper {
        kind: ModelKind::FastGtn,
        steps: 2,
        channels: 2,
        blocks: 2,
        gamma: 0.4,
        agg: Aggregation::Concat,
        epsilon: 1e-6,
        hidden_dim: 3,
        include_identity: true,
        nonlocal_n: 3,
    };
    let mut p = ModelParams::init(&hyper, 3, 2, 2, seed).unwrap();
    randomize_selection(&mut p, &mut rng);
    let cands = build_candidates(&g, true, hyper.epsilon).unwrap();
    let loss_of = |p: &ModelParams| -> f64 {
        let lt = build_loss_tape(&cands, &g.features, p, &g.labels, &g.splits.train, None).unwrap();
        lt.tape.scalar(lt.loss).unwrap()
    };
    let lt = build_loss_tape(&cands, &g.features, &p, &g.labels, &g.splits.train, None).unwrap();
    let grads = lt.tape.backward(lt.loss).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for key in p.param_keys() {
        let ad = grads.get(&key).expect("gradient present");
        let len = p.param_values(&key).unwrap().len();
        for idx in 0..len {
            let orig = p.param_values(&key).unwrap()[idx];
            let mut plus = p.clone();
            plus.param_values_mut(&key).unwrap()[idx] = orig + h;
            let mut minus = p.clone();
            minus.param_values_mut(&key).unwrap()[idx] = orig - h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = ad.values()[idx];
            let abs = (a - fd).abs();
            if abs > 1e-9 {
                worst = worst.max(abs / a.abs().max(fd.abs()));
            }
            checked += 1;
        }
    }
    CheckResult::new(
        "gradients",
        worst <= 1e-5,
        format!("{checked} parameters, worst relative error {worst:.3e}"),
    )
}

/// Non-local adjacency row contract: exact per-row budget, unit row sums,
/// deterministic rebuilds.
pub fn check_nonlocal_contract(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..20 {
        let n = 4 + trial % 6;
        let d = 2 + trial % 3;
        let h = DenseMatrix::from_vec(
            n,
            d,
            (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let cfg = NonLocalConfig {
            enabled: true,
            top_n: 1 + trial % 5,
            proj_dim: d,
            proj_w: DenseMatrix::identity(d),
            proj_b: vec![0.0; d],
        };
        let a = nonlocal_adjacency(&h, &cfg).unwrap();
        let again = nonlocal_adjacency(&h, &cfg).unwrap();
        if a != again {
            return CheckResult::new("nonlocal-contract", false, "nondeterministic".into());
        }
        for i in 0..n {
            let (cols, vals) = a.row(i);
            if cols.len() != cfg.top_n.min(n) {
                return CheckResult::new(
                    "nonlocal-contract",
                    false,
                    format!("row {i} keeps {} entries, expected {}", cols.len(), cfg.top_n.min(n)),
                );
            }
            let s: f64 = vals.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return CheckResult::new(
                    "nonlocal-contract",
                    false,
                    format!("row {i} sums to {s}"),
                );
            }
        }
    }
    CheckResult::new("nonlocal-contract", true, "20 configurations".into())
}

/// Exact-subgraph mini-batch forward equals the full-graph forward at the
/// targets, and every sampled edge exists in the original typed edge set.
pub fn check_minibatch_fidelity(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = random_graph(&mut rng, 16, 2, 3, 2);
    g.adjacency = g
        .adjacency
        .iter()
        .map(|a| row_normalize(a, 1e-6).unwrap())
        .collect();
    let hyper = Hyper {
        kind: ModelKind::FastGtn,
        steps: 2,
        channels: 2,
        blocks: 2,
        gamma: 0.4,
        agg: Aggregation::Concat,
        epsilon: 0.0,
        hidden_dim: 3,
        include_identity: true,
        nonlocal_n: 0,
    };
    let mut p = ModelParams::init(&hyper, 3, 2, 2, seed).unwrap();
    randomize_selection(&mut p, &mut rng);
    let full = fastgtn_forward(&g, &p).unwrap();
    let targets = [0usize, 5, 11];
    let spec = BatchSpec {
        batch_size: targets.len(),
        fanout: vec![100; 4],
        sampler: SamplerKind::Neighborhood,
        seed,
    };
    let (sub, remap) = sample_subgraph(&g, &targets, &spec).unwrap();
    for (t, a) in sub.adjacency.iter().enumerate() {
        for (i, j, w) in a.iter() {
            if g.adjacency[t].get(remap[i], remap[j]) != w {
                return CheckResult::new(
                    "minibatch-fidelity",
                    false,
                    format!("sampled edge ({i},{j}) type {t} missing upstream"),
                );
            }
        }
    }
    let sub_pred = fastgtn_forward(&sub, &p).unwrap();
    let mut worst: f64 = 0.0;
    for (new, &old) in remap.iter().enumerate() {
        if targets.contains(&old) {
            for c in 0..2 {
                worst =
                    worst.max((sub_pred.confidence.get(new, c) - full.confidence.get(old, c)).abs());
            }
        }
    }
    CheckResult::new(
        "minibatch-fidelity",
        worst <= 1e-10,
        format!("worst target confidence diff {worst:.3e}"),
    )
}

/// Hand-set attention reproduces the closed-form hop ratios and collapsed
/// scores sum to one.
pub fn check_interpretation(seed: u64) -> CheckResult {
    let hyper = Hyper {
        kind: ModelKind::Gtn,
        steps: 3,
        channels: 1,
        blocks: 1,
        gamma: 0.5,
        agg: Aggregation::Concat,
        epsilon: 1e-6,
        hidden_dim: 2,
        include_identity: true,
        nonlocal_n: 0,
    };
    let mut p = ModelParams::init(&hyper, 2, 2, 1, seed).unwrap();
    let attn = [[0.55f64, 0.45], [0.2, 0.8], [0.35, 0.65]];
    for (k, row) in attn.iter().enumerate() {
        for (t, &a) in row.iter().enumerate() {
            p.selection[0][k].logits.set(0, t, a.ln());
        }
    }
    let info = CandidateInfo {
        names: vec!["A".into(), "I".into()],
        identity_index: Some(1),
        nonlocal_index: None,
        endpoints: None,
    };
    let ratios = match hop_ratios(&p, &info, 0) {
        Ok(r) => r,
        Err(e) => return CheckResult::new("interpretation", false, e.to_string()),
    };
    let zero = attn[0][1] * attn[1][1] * attn[2][1];
    let one = attn[0][0] * attn[1][1] * attn[2][1]
        + attn[0][1] * attn[1][0] * attn[2][1]
        + attn[0][1] * attn[1][1] * attn[2][0];
    let sum: f64 = ratios.iter().sum();
    let report = rank_metapaths(&p, &info, 0, usize::MAX).unwrap();
    let collapsed_sum: f64 = report.entries.iter().map(|e| e.score).sum();
    let ok = (ratios[0] - zero).abs() <= 1e-12
        && (ratios[1] - one).abs() <= 1e-12
        && (sum - 1.0).abs() <= 1e-9
        && (collapsed_sum - 1.0).abs() <= 1e-9;
    CheckResult::new(
        "interpretation",
        ok,
        format!(
            "zero-hop {:.6} (expected {:.6}), collapsed sum {:.12}",
            ratios[0], zero, collapsed_sum
        ),
    )
}

/// Materialization of an implicit-style block matches its propagation.
pub fn check_materialization(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(&mut rng, 8, 2, 3, 2);
    let hyper = Hyper {
        kind: ModelKind::FastGtn,
        steps: 3,
        channels: 2,
        blocks: 1,
        gamma: 0.0,
        agg: Aggregation::Concat,
        epsilon: 1e-6,
        hidden_dim: 3,
        include_identity: true,
        nonlocal_n: 0,
    };
    let mut p = ModelParams::init(&hyper, 3, 2, 2, seed).unwrap();
    randomize_selection(&mut p, &mut rng);
    let cands = build_candidates(&g, true, hyper.epsilon).unwrap();
    let mats = materialize_transformed(&cands, &p, 0, None).unwrap();
    let mut worst: f64 = 0.0;
    for c in 0..2 {
        let mut z = g.features.clone();
        for w in &p.selection[0] {
            z = mpf_core::layers::fastgt_step(&z, &cands, w, c).unwrap();
        }
        let via_matrix = mpf_core::sparse::spdm(&mats[c], &g.features).unwrap();
        worst = worst.max(z.max_abs_diff(&via_matrix));
    }
    CheckResult::new(
        "materialization",
        worst <= 1e-10,
        format!("worst feature diff {worst:.3e}"),
    )
}

/// Runs the whole suite; `quick` trims trial counts to finish within a
/// minute on modest hardware.
pub fn run_all(cfg: &VerifyConfig) -> Vec<CheckResult> {
    let (prop_trials, exact_configs, max_n) = if cfg.quick {
        (200, 25, 32)
    } else {
        (1000, 200, 64)
    };
    vec![
        check_product_closure(prop_trials, cfg.seed),
        check_exactness(exact_configs, max_n, cfg.seed.wrapping_add(1)),
        check_decomposition(cfg.seed.wrapping_add(2)),
        check_subsumption(cfg.seed.wrapping_add(3)),
        check_gradients(cfg.seed.wrapping_add(4)),
        check_nonlocal_contract(cfg.seed.wrapping_add(5)),
        check_minibatch_fidelity(cfg.seed.wrapping_add(6)),
        check_interpretation(cfg.seed.wrapping_add(7)),
        check_materialization(cfg.seed.wrapping_add(8)),
    ]
}
