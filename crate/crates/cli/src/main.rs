use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mpf::alloc_track::CountingAlloc;
use mpf::bench::{bench_compare, BenchConfig, BenchMode, BenchResult};
use mpf::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use mpf::dataset::load_graph;
use mpf::manifest::{threads_from_env, Manifest};
use mpf::report;
use mpf::verify::{run_all, VerifyConfig};

use mpf_core::graph::{build_candidates, CandidateSet, HeteroGraph};
use mpf_core::interpret::{
    attention_table, hop_ratios, rank_metapaths_between_targets, rank_metapaths_block,
    CandidateInfo,
};
use mpf_core::model::{materialize_transformed, Aggregation, Hyper, ModelKind, ModelParams};
use mpf_core::synth::{synth_graph, SynthConfig};
use mpf_core::train::{
    eval_forward, loss, micro_f1, train_with_progress, BatchSpec, SamplerKind, TrainConfig,
};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(
    name = "mpf",
    version,
    about = "Heterogeneous-graph transformation engine: train, verify, interpret, and benchmark meta-path models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write history, checkpoint, and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Materialize the learned per-channel transformed graphs.
    Transform(TransformArgs),
    /// Rank meta-paths and export attention tables from a checkpoint.
    Interpret(InterpretArgs),
    /// Compare the explicit and implicit pipelines in time and memory.
    Bench(BenchArgs),
    /// Run the built-in verification suite; exits 3 on any violation.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Gtn,
    Fastgtn,
    Gcn,
    Mixhop,
    Rgcn,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Concat,
    Mean,
    Sum,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Neighborhood,
    Layerwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Inference,
    Training,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory (see README for the layout).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic graph spec: key=value tokens among
    /// n, types, deg, exp, f, classes, seed (comma- or space-separated).
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    synth: Option<Vec<String>>,
}

#[derive(Args)]
struct HyperArgs {
    /// Model family.
    #[arg(long, value_enum, default_value = "fastgtn")]
    model: ModelArg,
    /// Transformation blocks (convolution layers in the explicit style).
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    channels: usize,
    /// Selection steps per block.
    #[arg(long = "gt-layers", alias = "k", default_value_t = 2)]
    gt_layers: usize,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Non-local entries kept per row; 0 disables the non-local candidate.
    #[arg(long = "nonlocal-n", default_value_t = 0)]
    nonlocal_n: usize,
    /// Diagonal augmentation applied when normalizing candidates.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "concat")]
    agg: AggArg,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Drop the identity candidate from the selection set.
    #[arg(long = "no-identity")]
    no_identity: bool,
}

impl HyperArgs {
    fn hyper(&self, kind: ModelKind) -> Hyper {
        Hyper {
            kind,
            steps: self.gt_layers,
            channels: self.channels,
            blocks: self.layers,
            gamma: self.gamma,
            agg: match self.agg {
                AggArg::Concat => Aggregation::Concat,
                AggArg::Mean => Aggregation::Mean,
                AggArg::Sum => Aggregation::Sum,
            },
            epsilon: self.epsilon,
            hidden_dim: self.hidden,
            include_identity: !self.no_identity,
            nonlocal_n: self.nonlocal_n,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// JSON file holding the training-loop configuration (epochs, lr,
    /// dropout, seed, batch); takes precedence over the equivalent flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Enables mini-batch training with subgraph sampling.
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Per-hop sample budget, for example `10,10`.
    #[arg(long)]
    fanout: Option<String>,
    #[arg(long, value_enum, default_value = "neighborhood")]
    sampler: SamplerArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "mpf-out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "mpf-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TransformArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Checkpoint to materialize; a fresh uniform-attention model is used
    /// when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Byte budget for materialized products.
    #[arg(long = "max-bytes", default_value_t = 2 << 30)]
    max_bytes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "mpf-out")]
    out: PathBuf,
}

#[derive(Args)]
struct InterpretArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "top-k", default_value_t = 10)]
    top_k: usize,
    /// Restrict paths to those running between target-typed nodes, per the
    /// endpoint schema stored in the checkpoint.
    #[arg(long = "between-targets")]
    between_targets: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "mpf-out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, value_enum, default_value = "inference")]
    mode: ModeArg,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Node counts for a synthetic sweep, for example `1000,5000,20000`.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long = "max-bytes", default_value_t = 2 << 30)]
    max_bytes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "mpf-out")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Trimmed trial counts; finishes within a minute.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchFileConfig {
    batch_size: usize,
    #[serde(default)]
    fanout: Option<Vec<usize>>,
    #[serde(default = "default_sampler")]
    sampler: String,
    #[serde(default)]
    seed: u64,
}

fn default_sampler() -> String {
    "neighborhood".to_string()
}

/// Training-loop configuration as JSON, mirroring the `train` flags.
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFileConfig {
    #[serde(default = "default_epochs")]
    epochs: usize,
    #[serde(default = "default_lr")]
    lr: f64,
    #[serde(default = "default_dropout")]
    dropout: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    batch: Option<BatchFileConfig>,
}

fn default_epochs() -> usize {
    100
}

fn default_lr() -> f64 {
    5e-4
}

fn default_dropout() -> f64 {
    0.5
}

fn parse_synth(tokens: &[String], seed: u64) -> Result<SynthConfig> {
    let mut cfg = SynthConfig::new(1000, 2, 4.0, seed);
    for token in tokens {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| anyhow!("synth token `{token}` is not key=value"))?;
        match key {
            "n" => cfg.n_nodes = value.parse().context("synth n")?,
            "types" => cfg.n_edge_types = value.parse().context("synth types")?,
            "deg" => cfg.avg_degree = value.parse().context("synth deg")?,
            "exp" => cfg.exponent = value.parse().context("synth exp")?,
            "f" => cfg.n_features = value.parse().context("synth f")?,
            "classes" => cfg.n_classes = value.parse().context("synth classes")?,
            "seed" => cfg.seed = value.parse().context("synth seed")?,
            other => bail!("unknown synth key `{other}`"),
        }
    }
    Ok(cfg)
}

struct LoadedData {
    graph: HeteroGraph,
    source: serde_json::Value,
}

fn load_data(args: &DataArgs, seed: u64) -> Result<LoadedData> {
    match (&args.data, &args.synth) {
        (Some(dir), None) => {
            let graph = load_graph(dir)?;
            Ok(LoadedData {
                graph,
                source: json!({ "data": dir.display().to_string() }),
            })
        }
        (None, Some(tokens)) => {
            let cfg = parse_synth(tokens, seed)?;
            let graph = synth_graph(&cfg)?;
            Ok(LoadedData {
                graph,
                source: json!({
                    "synth": {
                        "n": cfg.n_nodes,
                        "types": cfg.n_edge_types,
                        "deg": cfg.avg_degree,
                        "exp": cfg.exponent,
                        "f": cfg.n_features,
                        "classes": cfg.n_classes,
                        "seed": cfg.seed,
                    }
                }),
            })
        }
        (Some(_), Some(_)) => bail!("pass exactly one of --data and --synth, not both"),
        (None, None) => bail!("a data source is required: --data DIR or --synth SPEC"),
    }
}

/// Candidate metadata for a trained model, including the pseudo-candidate
/// name for the non-local slot when enabled.
fn checkpoint_meta(g: &HeteroGraph, cands: &CandidateSet, p: &ModelParams) -> CheckpointMeta {
    let mut names = cands.names.clone();
    if p.hyper.kind == ModelKind::FastGtn && p.hyper.nonlocal_n > 0 {
        names.push("NL".to_string());
    }
    CheckpointMeta {
        candidate_names: names,
        n_classes: g.n_classes,
        edge_endpoints: g.edge_endpoints.clone(),
        target_node_type: g.target_node_type,
    }
}

fn candidate_info_from_meta(meta: &CheckpointMeta, hyper: &Hyper) -> CandidateInfo {
    let total = meta.candidate_names.len();
    let has_nl = hyper.kind == ModelKind::FastGtn && hyper.nonlocal_n > 0;
    let structural_total = total - usize::from(has_nl);
    CandidateInfo {
        names: meta.candidate_names.clone(),
        identity_index: hyper.include_identity.then(|| structural_total - 1),
        nonlocal_index: has_nl.then_some(total - 1),
        endpoints: meta.edge_endpoints.clone(),
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let kind = match args.hyper.model {
        ModelArg::Gtn => ModelKind::Gtn,
        ModelArg::Fastgtn => ModelKind::FastGtn,
        _ => {
            eprintln!(
                "error: `train` supports --model gtn or fastgtn; the reference baselines are verification oracles"
            );
            return Ok(2);
        }
    };
    let file_cfg: Option<TrainFileConfig> = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading training config {}", path.display()))?;
            Some(serde_json::from_str(&text).context("parsing training config")?)
        }
        None => None,
    };
    let (epochs, lr, dropout, seed) = match &file_cfg {
        Some(c) => (c.epochs, c.lr, c.dropout, c.seed),
        None => (args.epochs, args.lr, args.dropout, args.seed),
    };
    let data = load_data(&args.data, seed)?;
    let g = &data.graph;
    let hyper = args.hyper.hyper(kind);
    let params = ModelParams::init(
        &hyper,
        g.n_features(),
        g.n_classes,
        g.n_edge_types(),
        seed,
    )?;
    let default_fanout = || vec![10; hyper.blocks * hyper.steps];
    let batch = match &file_cfg {
        Some(c) => c.batch.as_ref().map(|b| -> Result<BatchSpec> {
            Ok(BatchSpec {
                batch_size: b.batch_size,
                fanout: b.fanout.clone().unwrap_or_else(default_fanout),
                sampler: SamplerKind::parse(&b.sampler)
                    .ok_or_else(|| anyhow!("unknown sampler `{}`", b.sampler))?,
                seed: b.seed,
            })
        }),
        None => args.batch_size.map(|batch_size| -> Result<BatchSpec> {
            let fanout: Vec<usize> = match &args.fanout {
                None => default_fanout(),
                Some(text) => text
                    .split(',')
                    .map(|t| t.trim().parse::<usize>().context("fanout entry"))
                    .collect::<Result<_>>()?,
            };
            Ok(BatchSpec {
                batch_size,
                fanout,
                sampler: match args.sampler {
                    SamplerArg::Neighborhood => SamplerKind::Neighborhood,
                    SamplerArg::Layerwise => SamplerKind::Layerwise,
                },
                seed,
            })
        }),
    }
    .transpose()?;
    let cfg = TrainConfig {
        epochs,
        lr,
        dropout,
        batch,
        seed,
        ..TrainConfig::default()
    };
    let threads = threads_from_env();
    Manifest::new(
        "train",
        seed,
        threads,
        json!({
            "source": data.source,
            "model": hyper.kind.as_str(),
            "steps": hyper.steps,
            "channels": hyper.channels,
            "blocks": hyper.blocks,
            "gamma": hyper.gamma,
            "agg": hyper.agg.as_str(),
            "epsilon": hyper.epsilon,
            "hidden": hyper.hidden_dim,
            "include_identity": hyper.include_identity,
            "nonlocal_n": hyper.nonlocal_n,
            "epochs": cfg.epochs,
            "lr": cfg.lr,
            "dropout": cfg.dropout,
            "batch_size": cfg.batch.as_ref().map(|b| b.batch_size),
        }),
    )
    .write(&args.out)?;
    let (best, history) = train_with_progress(g, params, &cfg, &mut |s| {
        println!(
            "epoch {:>4}  train_loss {:.6}  valid_f1 {:.4}  test_f1 {:.4}",
            s.epoch, s.train_loss, s.valid_f1, s.test_f1
        );
    })?;
    report::write(&args.out.join("history.csv"), &report::history_csv(&history))?;
    let cands = build_candidates(g, hyper.include_identity, hyper.epsilon)?;
    save_checkpoint(
        &best,
        &checkpoint_meta(g, &cands, &best),
        &args.out.join("checkpoint.json"),
    )?;
    if let Some(last) = history.last() {
        let pred = eval_forward(&cands, &g.features, &best)?;
        println!(
            "done: best checkpoint valid_f1 {:.4} test_f1 {:.4} (final epoch {})",
            micro_f1(&pred, &g.labels, &g.splits.valid),
            micro_f1(&pred, &g.labels, &g.splits.test),
            last.epoch
        );
    }
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    let data = load_data(&args.data, args.seed)?;
    let g = &data.graph;
    let (params, _meta) = load_checkpoint(&args.checkpoint)?;
    let cands = build_candidates(g, params.hyper.include_identity, params.hyper.epsilon)?;
    let pred = eval_forward(&cands, &g.features, &params)?;
    let metrics = json!({
        "train_f1": micro_f1(&pred, &g.labels, &g.splits.train),
        "valid_f1": micro_f1(&pred, &g.labels, &g.splits.valid),
        "test_f1": micro_f1(&pred, &g.labels, &g.splits.test),
        "train_loss": loss(&pred, &g.labels, &g.splits.train).ok(),
        "valid_loss": loss(&pred, &g.labels, &g.splits.valid).ok(),
        "test_loss": loss(&pred, &g.labels, &g.splits.test).ok(),
    });
    let threads = threads_from_env();
    Manifest::new(
        "evaluate",
        args.seed,
        threads,
        json!({ "source": data.source, "checkpoint": args.checkpoint.display().to_string() }),
    )
    .write(&args.out)?;
    report::write(
        &args.out.join("metrics.json"),
        &serde_json::to_string_pretty(&metrics)?,
    )?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(0)
}

fn cmd_transform(args: TransformArgs) -> Result<i32> {
    let data = load_data(&args.data, args.seed)?;
    let g = &data.graph;
    let params = match &args.checkpoint {
        Some(path) => load_checkpoint(path)?.0,
        None => {
            let kind = match args.hyper.model {
                ModelArg::Gtn => ModelKind::Gtn,
                ModelArg::Fastgtn => ModelKind::FastGtn,
                _ => {
                    eprintln!("error: `transform` supports --model gtn or fastgtn");
                    return Ok(2);
                }
            };
            let hyper = args.hyper.hyper(kind);
            ModelParams::init(
                &hyper,
                g.n_features(),
                g.n_classes,
                g.n_edge_types(),
                args.seed,
            )?
        }
    };
    if params.hyper.nonlocal_n > 0 {
        bail!("transform cannot materialize models with non-local candidates");
    }
    let cands = build_candidates(g, params.hyper.include_identity, params.hyper.epsilon)?;
    let threads = threads_from_env();
    Manifest::new(
        "transform",
        args.seed,
        threads,
        json!({ "source": data.source, "max_bytes": args.max_bytes }),
    )
    .write(&args.out)?;
    let budget = args.max_bytes / 16;
    let mut summary = Vec::new();
    for block in 0..params.selection.len() {
        let mats = materialize_transformed(&cands, &params, block, Some(budget))?;
        for (c, m) in mats.iter().enumerate() {
            let mut text = String::new();
            for (dst, src, w) in m.iter() {
                text.push_str(&format!("{src} {dst} {}\n", report::fmt_f64(w)));
            }
            let name = format!("transformed_b{block}_c{c}.tsv");
            report::write(&args.out.join(&name), &text)?;
            summary.push(json!({
                "block": block,
                "channel": c,
                "nnz": m.nnz(),
                "file": name,
            }));
            println!("block {block} channel {c}: {} entries", m.nnz());
        }
    }
    report::write(
        &args.out.join("transform_summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(0)
}

fn cmd_interpret(args: InterpretArgs) -> Result<i32> {
    let (params, meta) = load_checkpoint(&args.checkpoint)?;
    let info = candidate_info_from_meta(&meta, &params.hyper);
    let threads = threads_from_env();
    Manifest::new(
        "interpret",
        args.seed,
        threads,
        json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "top_k": args.top_k,
            "between_targets": args.between_targets,
        }),
    )
    .write(&args.out)?;
    let table = attention_table(&params, &info)?;
    report::write(&args.out.join("attention.csv"), &report::attention_csv(&table))?;
    for block in 0..params.selection.len() {
        for channel in 0..params.hyper.channels {
            let rep = if args.between_targets {
                let target = meta.target_node_type.ok_or_else(|| {
                    anyhow!("--between-targets needs target_node_type in the checkpoint")
                })?;
                rank_metapaths_between_targets(&params, &info, block, channel, args.top_k, target)?
            } else {
                rank_metapaths_block(&params, &info, block, channel, args.top_k)?
            };
            print!("{}", report::metapath_pretty(&rep, block, channel));
            report::write(
                &args.out.join(format!("metapaths_b{block}_c{channel}.csv")),
                &report::metapath_csv(&rep),
            )?;
            if block == 0 && info.identity_index.is_some() {
                let ratios = hop_ratios(&params, &info, channel)?;
                report::write(
                    &args.out.join(format!("hop_ratios_c{channel}.csv")),
                    &report::hop_ratios_csv(&ratios),
                )?;
            }
        }
    }
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn print_bench_row(r: &BenchResult) {
    if let Some(reason) = &r.failed {
        println!("{:>8} n={:<6} skipped ({reason})", r.model, r.n_nodes);
        return;
    }
    let fwd = r.phase_median("forward").unwrap_or(f64::NAN);
    println!(
        "{:>8} n={:<6} forward {:>10.3} ms  peak {:>12} B  conf_diff {:?}",
        r.model, r.n_nodes, fwd, r.peak_extra_bytes, r.conf_diff
    );
}

fn cmd_bench(args: BenchArgs) -> Result<i32> {
    let threads = threads_from_env();
    let cfg = BenchConfig {
        mode: match args.mode {
            ModeArg::Inference => BenchMode::Inference,
            ModeArg::Training => BenchMode::Training,
        },
        reps: args.reps,
        max_explicit_bytes: args.max_bytes,
        threads,
    };
    let mut results: Vec<BenchResult> = Vec::new();
    let hyper = args.hyper.hyper(ModelKind::Gtn);
    let run_one = |results: &mut Vec<BenchResult>, g: &HeteroGraph| -> Result<()> {
        let params = ModelParams::init(
            &hyper,
            g.n_features(),
            g.n_classes,
            g.n_edge_types(),
            args.seed,
        )?;
        let (e, i) = bench_compare(g, &params, &cfg)?;
        if let Some(diff) = e.conf_diff {
            if diff > 1e-10 {
                bail!("exactness co-assertion failed: confidence diff {diff}");
            }
        }
        print_bench_row(&e);
        print_bench_row(&i);
        results.push(e);
        results.push(i);
        Ok(())
    };
    let source = match &args.sweep {
        Some(text) => {
            let Some(tokens) = &args.data.synth else {
                bail!("--sweep requires a --synth base spec");
            };
            let base = parse_synth(tokens, args.seed)?;
            let ns: Vec<usize> = text
                .split(',')
                .map(|t| t.trim().parse::<usize>().context("sweep entry"))
                .collect::<Result<_>>()?;
            for &n in &ns {
                let mut cfg_n = base.clone();
                cfg_n.n_nodes = n;
                let g = synth_graph(&cfg_n)?;
                run_one(&mut results, &g)?;
            }
            json!({ "synth": tokens, "sweep": ns })
        }
        None => {
            let data = load_data(&args.data, args.seed)?;
            run_one(&mut results, &data.graph)?;
            data.source
        }
    };
    Manifest::new(
        "bench",
        args.seed,
        threads,
        json!({
            "source": source,
            "mode": match cfg.mode {
                BenchMode::Inference => "inference",
                BenchMode::Training => "training",
            },
            "reps": cfg.reps,
            "max_bytes": cfg.max_explicit_bytes,
            "steps": hyper.steps,
            "channels": hyper.channels,
        }),
    )
    .write(&args.out)?;
    report::write(&args.out.join("bench.csv"), &report::bench_csv(&results))?;
    let summary: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            json!({
                "model": r.model,
                "n": r.n_nodes,
                "k": r.steps,
                "c": r.channels,
                "phases": r.phases.iter().map(|p| json!({
                    "phase": p.phase,
                    "ms_median": p.ms_median,
                    "samples_ms": p.samples_ms,
                    "unstable": p.unstable,
                })).collect::<Vec<_>>(),
                "peak_bytes": r.peak_extra_bytes,
                "conf_diff": r.conf_diff,
                "repetitions": r.repetitions,
                "threads": r.threads,
                "skipped": r.failed,
            })
        })
        .collect();
    report::write(
        &args.out.join("bench_summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<i32> {
    let results = run_all(&VerifyConfig {
        quick: args.quick,
        seed: args.seed,
    });
    let mut failed = 0;
    for r in &results {
        let status = if r.passed { "ok  " } else { "FAIL" };
        println!("{status} {:<26} {}", r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} verification check(s) failed");
        Ok(3)
    } else {
        println!("all {} checks passed", results.len());
        Ok(0)
    }
}

fn ensure_out_writable(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("output directory {} is not writable", path.display()))
}

fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Train(args) => {
            ensure_out_writable(&args.out)?;
            cmd_train(args)
        }
        Cmd::Evaluate(args) => {
            ensure_out_writable(&args.out)?;
            cmd_evaluate(args)
        }
        Cmd::Transform(args) => {
            ensure_out_writable(&args.out)?;
            cmd_transform(args)
        }
        Cmd::Interpret(args) => {
            ensure_out_writable(&args.out)?;
            cmd_interpret(args)
        }
        Cmd::Bench(args) => {
            ensure_out_writable(&args.out)?;
            cmd_bench(args)
        }
        Cmd::Verify(args) => cmd_verify(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Usage errors exit 2; --help and --version exit 0.
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
