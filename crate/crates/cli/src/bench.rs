//! Instrumented comparison of the explicit and implicit transformation
//! pipelines in wall time and peak transient memory.
//!
//! Each run is timed over `reps` repetitions after one excluded warm-up;
//! reported times are medians, and a repetition spread above 25%
//! (interquartile range over median) flags the row unstable. Memory is the
//! allocation accountant's peak beyond live bytes at entry, measured on a
//! dedicated untimed run. Every comparison that completes both pipelines
//! also records the maximum confidence difference between them as an
//! exactness co-assertion.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use mpf_core::graph::{build_candidates, CandidateSet, HeteroGraph};
use mpf_core::model::{
    fastgtn_forward_on, gtn_forward_on, transfer_gtn_to_fastgtn, ModelKind, ModelParams,
    Prediction,
};
use mpf_core::train::build_loss_tape;
use mpf_core::Error as CoreError;

use crate::alloc_track::measure_peak;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Inference,
    Training,
}

impl BenchMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "inference" => Some(BenchMode::Inference),
            "training" => Some(BenchMode::Training),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mode: BenchMode,
    pub reps: usize,
    /// Byte budget for explicitly materialized products; exceeding it turns
    /// the explicit row into a skipped result instead of an allocation
    /// failure.
    pub max_explicit_bytes: usize,
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            mode: BenchMode::Inference,
            reps: 5,
            max_explicit_bytes: 2 << 30,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseStat {
    pub phase: &'static str,
    pub ms_median: f64,
    pub samples_ms: Vec<f64>,
    pub unstable: bool,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub model: String,
    pub n_nodes: usize,
    pub steps: usize,
    pub channels: usize,
    pub repetitions: usize,
    pub threads: usize,
    pub phases: Vec<PhaseStat>,
    pub peak_extra_bytes: usize,
    /// Maximum absolute confidence difference against the counterpart model.
    pub conf_diff: Option<f64>,
    /// Reason the run was skipped (for example a blown product budget).
    pub failed: Option<String>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn phase_stat(phase: &'static str, mut samples: Vec<f64>) -> PhaseStat {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let med = median(&samples);
    let q1 = samples[(samples.len() - 1) / 4];
    let q3 = samples[(samples.len() - 1) * 3 / 4];
    let unstable = med > 0.0 && (q3 - q1) / med > 0.25;
    PhaseStat {
        phase,
        ms_median: med,
        samples_ms: samples,
        unstable,
    }
}

fn time_ms(f: impl FnOnce()) -> f64 {
    let start = Instant::now();
    f();
    start.elapsed().as_secs_f64() * 1e3
}

struct RunOutcome {
    phases: Vec<PhaseStat>,
    peak_extra_bytes: usize,
    prediction: Option<Prediction>,
    failed: Option<String>,
}

fn run_model(
    cands: &CandidateSet,
    g: &HeteroGraph,
    params: &ModelParams,
    cfg: &BenchConfig,
    budget_nnz: Option<usize>,
) -> Result<RunOutcome> {
    let infer = |budget: Option<usize>| -> mpf_core::Result<Prediction> {
        match params.hyper.kind {
            ModelKind::Gtn => Ok(gtn_forward_on(cands, &g.features, params, budget)?.0),
            ModelKind::FastGtn => fastgtn_forward_on(cands, &g.features, params),
        }
    };
    // Warm-up run, excluded from statistics; also the budget probe.
    let prediction = match infer(budget_nnz) {
        Ok(p) => p,
        Err(CoreError::ProductBudget { budget }) => {
            return Ok(RunOutcome {
                phases: Vec::new(),
                peak_extra_bytes: 0,
                prediction: None,
                failed: Some(format!("product-budget-{budget}-nnz")),
            });
        }
        Err(e) => return Err(e).context("benchmark forward failed"),
    };
    let mut phases = Vec::new();
    let peak = match cfg.mode {
        BenchMode::Inference => {
            let mut samples = Vec::with_capacity(cfg.reps);
            for _ in 0..cfg.reps {
                samples.push(time_ms(|| {
                    infer(budget_nnz).expect("warm-up validated this configuration");
                }));
            }
            phases.push(phase_stat("forward", samples.clone()));
            phases.push(phase_stat("total", samples));
            let (_, peak) = measure_peak(|| {
                infer(budget_nnz).expect("warm-up validated this configuration");
            });
            peak
        }
        BenchMode::Training => {
            let labels = &g.labels;
            let mask = &g.splits.train;
            let mut fwd = Vec::with_capacity(cfg.reps);
            let mut bwd = Vec::with_capacity(cfg.reps);
            let mut total = Vec::with_capacity(cfg.reps);
            for _ in 0..cfg.reps {
                let start = Instant::now();
                let lt = build_loss_tape(cands, &g.features, params, labels, mask, None)?;
                let t_fwd = start.elapsed().as_secs_f64() * 1e3;
                let start_b = Instant::now();
                let _grads = lt.tape.backward(lt.loss)?;
                let t_bwd = start_b.elapsed().as_secs_f64() * 1e3;
                fwd.push(t_fwd);
                bwd.push(t_bwd);
                total.push(t_fwd + t_bwd);
            }
            phases.push(phase_stat("forward", fwd));
            phases.push(phase_stat("backward", bwd));
            phases.push(phase_stat("total", total));
            let (res, peak) = measure_peak(|| -> mpf_core::Result<()> {
                let lt = build_loss_tape(cands, &g.features, params, labels, mask, None)?;
                lt.tape.backward(lt.loss)?;
                Ok(())
            });
            res?;
            peak
        }
    };
    Ok(RunOutcome {
        phases,
        peak_extra_bytes: peak,
        prediction: Some(prediction),
        failed: None,
    })
}

/// Benchmarks the explicit pipeline against the transferred implicit
/// pipeline on the same graph and parameters.
pub fn bench_compare(
    g: &HeteroGraph,
    p_explicit: &ModelParams,
    cfg: &BenchConfig,
) -> Result<(BenchResult, BenchResult)> {
    if cfg.reps < 3 {
        bail!("benchmark needs at least 3 repetitions, got {}", cfg.reps);
    }
    if p_explicit.hyper.kind != ModelKind::Gtn {
        bail!("bench_compare expects explicit-style parameters");
    }
    let p_implicit = transfer_gtn_to_fastgtn(p_explicit)?;
    let cands = build_candidates(g, p_explicit.hyper.include_identity, p_explicit.hyper.epsilon)?;
    // Two 8-byte words per stored entry (column index + value).
    let budget_nnz = cfg.max_explicit_bytes / 16;
    let explicit = run_model(&cands, g, p_explicit, cfg, Some(budget_nnz))?;
    let implicit = run_model(&cands, g, &p_implicit, cfg, None)?;
    let conf_diff = match (&explicit.prediction, &implicit.prediction) {
        (Some(a), Some(b)) => Some(a.confidence.max_abs_diff(&b.confidence)),
        _ => None,
    };
    let make = |model: &str, run: RunOutcome| BenchResult {
        model: model.to_string(),
        n_nodes: g.n_nodes,
        steps: p_explicit.hyper.steps,
        channels: p_explicit.hyper.channels,
        repetitions: cfg.reps,
        threads: cfg.threads,
        phases: run.phases,
        peak_extra_bytes: run.peak_extra_bytes,
        conf_diff,
        failed: run.failed,
    };
    Ok((make("gtn", explicit), make("fastgtn", implicit)))
}

impl BenchResult {
    pub fn phase_median(&self, phase: &str) -> Option<f64> {
        self.phases
            .iter()
            .find(|p| p.phase == phase)
            .map(|p| p.ms_median)
    }
}
