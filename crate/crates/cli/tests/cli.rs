//! End-to-end tests of the `mpf` binary: subcommand round trips,
//! reproducibility, and exit-code contracts.

use std::path::Path;
use std::process::{Command, Output};

use mpf::dataset::save_graph;
use mpf_core::synth::{synth_graph, SynthConfig};

fn mpf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpf"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, want: i32) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SYNTH: &str = "n=60,types=2,deg=3,f=8,classes=3,seed=5";

#[test]
fn train_is_reproducible_from_its_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        let o = mpf(
            &[
                "train",
                "--synth",
                SYNTH,
                "--model",
                "fastgtn",
                "--epochs",
                "6",
                "--lr",
                "0.01",
                "--hidden",
                "8",
                "--seed",
                "7",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert_code(&o, 0);
        std::fs::read_to_string(dir.path().join(out).join("history.csv")).unwrap()
    };
    let first = run("a");
    let second = run("b");
    assert_eq!(first, second, "same seed must produce identical history");
    assert!(first.starts_with("epoch,train_loss,valid_f1,test_f1\n"));
    assert_eq!(first.lines().count(), 7);
    for name in ["history.csv", "checkpoint.json", "manifest.json"] {
        assert!(dir.path().join("a").join(name).exists(), "missing {name}");
    }
}

#[test]
fn train_evaluate_interpret_transform_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    // Mini-batch training exercises the sampler path.
    let o = mpf(
        &[
            "train",
            "--synth",
            SYNTH,
            "--model",
            "fastgtn",
            "--epochs",
            "3",
            "--hidden",
            "8",
            "--batch-size",
            "12",
            "--fanout",
            "6,6,6,6",
            "--seed",
            "3",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert_code(&o, 0);
    let ckpt = dir.path().join("run/checkpoint.json");

    let o = mpf(
        &[
            "evaluate",
            "--synth",
            SYNTH,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            "eval",
        ],
        dir.path(),
    );
    assert_code(&o, 0);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval/metrics.json")).unwrap())
            .unwrap();
    assert!(metrics["test_f1"].as_f64().unwrap() >= 0.0);

    let o = mpf(
        &[
            "interpret",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--top-k",
            "4",
            "--out",
            "interp",
        ],
        dir.path(),
    );
    assert_code(&o, 0);
    assert!(dir.path().join("interp/attention.csv").exists());
    assert!(dir.path().join("interp/metapaths_b0_c0.csv").exists());
    assert!(dir.path().join("interp/hop_ratios_c0.csv").exists());

    let o = mpf(
        &[
            "transform",
            "--synth",
            SYNTH,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            "trans",
        ],
        dir.path(),
    );
    assert_code(&o, 0);
    assert!(dir.path().join("trans/transformed_b0_c0.tsv").exists());
    assert!(dir.path().join("trans/transform_summary.json").exists());
}

#[test]
fn bench_writes_rows_with_exactness_co_assertion() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpf(
        &[
            "bench",
            "--synth",
            "n=300,types=2,deg=3,f=8,classes=3,seed=2",
            "--k",
            "3",
            "--channels",
            "1",
            "--hidden",
            "8",
            "--reps",
            "3",
            "--out",
            "bench",
        ],
        dir.path(),
    );
    assert_code(&o, 0);
    let csv = std::fs::read_to_string(dir.path().join("bench/bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,n,k,c,phase,ms_median,peak_bytes,conf_diff"
    );
    let mut saw = (false, false);
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        match fields[0] {
            "gtn" => saw.0 = true,
            "fastgtn" => saw.1 = true,
            other => panic!("unexpected model {other}"),
        }
        let conf: f64 = fields[7].parse().unwrap();
        assert!(conf <= 1e-10, "exactness co-assertion in row: {line}");
    }
    assert!(saw.0 && saw.1, "both model rows present");
    assert!(dir.path().join("bench/bench_summary.json").exists());
}

#[test]
fn verify_quick_passes_on_fresh_checkout() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let o = mpf(&["verify", "--quick"], dir.path());
    assert_code(&o, 0);
    assert!(start.elapsed().as_secs() < 60, "quick verify under a minute");
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("all 9 checks passed"), "{stdout}");
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown flag: usage error.
    let o = mpf(&["train", "--bogus"], dir.path());
    assert_code(&o, 2);
    // Baseline models cannot be trained.
    let o = mpf(
        &["train", "--synth", SYNTH, "--model", "gcn", "--out", "x"],
        dir.path(),
    );
    assert_code(&o, 2);
    // Runtime failure: missing dataset directory.
    let o = mpf(
        &["train", "--data", "does-not-exist", "--out", "y"],
        dir.path(),
    );
    assert_code(&o, 1);
    // Both sources at once.
    let o = mpf(
        &[
            "train",
            "--data",
            "z",
            "--synth",
            "n=10",
            "--out",
            "w",
        ],
        dir.path(),
    );
    assert_code(&o, 1);
}

#[test]
fn dataset_directory_is_never_mutated() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let mut cfg = SynthConfig::new(40, 2, 2.5, 9);
    cfg.n_features = 4;
    let g = synth_graph(&cfg).unwrap();
    save_graph(&g, &data_dir).unwrap();
    let snapshot = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect()
    };
    let before = snapshot(&data_dir);
    let o = mpf(
        &[
            "train",
            "--data",
            data_dir.to_str().unwrap(),
            "--model",
            "gtn",
            "--epochs",
            "2",
            "--hidden",
            "4",
            "--out",
            "out",
        ],
        dir.path(),
    );
    assert_code(&o, 0);
    assert_eq!(before, snapshot(&data_dir), "input dataset files changed");
}

#[test]
fn trained_explicit_checkpoint_interprets_with_target_filter() {
    // A dataset with an endpoint schema exercises the between-targets filter
    // through the binary.
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let mut cfg = SynthConfig::new(30, 2, 2.5, 11);
    cfg.n_features = 4;
    let mut g = synth_graph(&cfg).unwrap();
    g.edge_endpoints = Some(vec![(0, 0), (0, 0)]);
    g.target_node_type = Some(0);
    save_graph(&g, &data_dir).unwrap();
    let o = mpf(
        &[
            "train",
            "--data",
            data_dir.to_str().unwrap(),
            "--model",
            "gtn",
            "--epochs",
            "2",
            "--hidden",
            "4",
            "--out",
            "out",
        ],
        dir.path(),
    );
    assert_code(&o, 0);
    let o = mpf(
        &[
            "interpret",
            "--checkpoint",
            "out/checkpoint.json",
            "--between-targets",
            "--out",
            "interp",
        ],
        dir.path(),
    );
    assert_code(&o, 0);
    let csv = std::fs::read_to_string(dir.path().join("interp/metapaths_b0_c0.csv")).unwrap();
    assert!(csv.lines().count() > 1, "filtered report has entries: {csv}");
}

/// Known-dataset statistics, exercised only when the published datasets have
/// been converted into the directory layout under `./data/`.
#[test]
fn known_dataset_statistics_when_available() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let dblp = root.join("data/dblp");
    if dblp.exists() {
        let g = mpf::dataset::load_graph(&dblp).unwrap();
        assert_eq!(g.n_nodes, 18_405);
        assert_eq!(g.total_nnz(), 67_496);
        assert_eq!(g.n_features(), 334);
        assert_eq!(g.n_classes, 4);
        assert_eq!(g.n_edge_types(), 4);
        assert_eq!(g.splits.train.len(), 800);
        assert_eq!(g.splits.valid.len(), 400);
        assert_eq!(g.splits.test.len(), 2857);
    } else {
        println!("SKIP dblp statistics (no data/dblp directory)");
    }
    let cora = root.join("data/cora");
    if cora.exists() {
        let g = mpf::dataset::load_graph(&cora).unwrap();
        assert_eq!(g.n_nodes, 2708);
        assert_eq!(g.total_nnz(), 5278);
        assert_eq!(g.n_features(), 1433);
        assert_eq!(g.n_classes, 7);
    } else {
        println!("SKIP cora statistics (no data/cora directory)");
    }
}

#[test]
fn train_accepts_json_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("train.json"),
        r#"{"epochs": 4, "lr": 0.02, "dropout": 0.0, "seed": 9,
            "batch": {"batch_size": 15, "fanout": [5, 5], "sampler": "layerwise", "seed": 2}}"#,
    )
    .unwrap();
    let o = mpf(
        &[
            "train",
            "--synth",
            SYNTH,
            "--model",
            "fastgtn",
            "--gt-layers",
            "1",
            "--layers",
            "1",
            "--hidden",
            "8",
            "--config",
            "train.json",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert_code(&o, 0);
    let history = std::fs::read_to_string(dir.path().join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 5, "4 epochs from the config file");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["epochs"], 4);
    assert_eq!(manifest["config"]["batch_size"], 15);
    assert_eq!(manifest["seed"], 9);
}
