//! CSV and text emission for training history, attention tables, meta-path
//! reports, hop ratios, and benchmark results.

use std::fmt::Write as _;
use std::path::Path;

use mpf_core::interpret::{AttentionTable, MetaPathReport};
use mpf_core::train::EpochStats;

use crate::bench::BenchResult;

/// 17 significant digits: round-trips any finite f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,valid_f1,test_f1\n");
    for s in history {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.epoch,
            fmt_f64(s.train_loss),
            fmt_f64(s.valid_f1),
            fmt_f64(s.test_f1)
        );
    }
    out
}

pub fn attention_csv(table: &AttentionTable) -> String {
    let mut out = String::from("block,step,channel");
    for name in &table.names {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for row in &table.rows {
        let _ = write!(out, "{},{},{}", row.block, row.step, row.channel);
        for v in &row.alpha {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

fn path_label(names: &[String]) -> String {
    if names.is_empty() {
        "(self)".to_string()
    } else {
        names.join("-")
    }
}

pub fn metapath_csv(report: &MetaPathReport) -> String {
    let mut out = String::from("rank,score,length,path\n");
    for (rank, e) in report.entries.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            rank + 1,
            fmt_f64(e.score),
            e.length,
            path_label(&e.names)
        );
    }
    out
}

pub fn metapath_pretty(report: &MetaPathReport, block: usize, channel: usize) -> String {
    let mut out = format!("meta-paths (block {block}, channel {channel}):\n");
    for (rank, e) in report.entries.iter().enumerate() {
        let _ = writeln!(
            out,
            "  {:>2}. {:<24} score {:.6}  length {}",
            rank + 1,
            path_label(&e.names),
            e.score,
            e.length
        );
    }
    let _ = writeln!(
        out,
        "  hop ratios: [{}]",
        report
            .hop_ratios
            .iter()
            .map(|r| format!("{r:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    out
}

pub fn hop_ratios_csv(ratios: &[f64]) -> String {
    let mut out = String::from("hops,ratio\n");
    for (h, r) in ratios.iter().enumerate() {
        let _ = writeln!(out, "{h},{}", fmt_f64(*r));
    }
    out
}

/// One row per phase: `model,n,k,c,phase,ms_median,peak_bytes,conf_diff`.
pub fn bench_csv(results: &[BenchResult]) -> String {
    let mut out = String::from("model,n,k,c,phase,ms_median,peak_bytes,conf_diff\n");
    for r in results {
        let conf = r.conf_diff.map(fmt_f64).unwrap_or_default();
        if let Some(reason) = &r.failed {
            let _ = writeln!(
                out,
                "{},{},{},{},skipped:{},,{},",
                r.model, r.n_nodes, r.steps, r.channels, reason, r.peak_extra_bytes
            );
            continue;
        }
        for phase in &r.phases {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.model,
                r.n_nodes,
                r.steps,
                r.channels,
                phase.phase,
                fmt_f64(phase.ms_median),
                r.peak_extra_bytes,
                conf
            );
        }
    }
    out
}

pub fn write(path: &Path, content: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)
}
