mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chanprune::engine::{evaluate_accuracy, Dataset, WeightStore};
use chanprune::netgraph::zoo;
use chanprune::report::{check_csv, CsvKind};
use chanprune::report::fmt_g9;
use chanprune::synth;
use chanprune::tensorstore::{LabelFile, Tensor};
use common::*;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chanprune"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Toy {
    _dir: TempDir,
    data: PathBuf,
    labels: PathBuf,
    weights: PathBuf,
    dir: PathBuf,
}

fn toy_files(n: usize) -> Toy {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_path_buf();
    let data = synth::toy_images(n, 0.6, 2).unwrap();
    data.inputs().save(d.join("x.ptsr")).unwrap();
    data.labels().save(d.join("y.plbl")).unwrap();
    Toy {
        data: d.join("x.ptsr"),
        labels: d.join("y.plbl"),
        weights: fixture_dir().join("manifest.json"),
        dir: d,
        _dir: dir,
    }
}

#[test]
fn score_writes_one_row_per_channel() {
    let t = toy_files(60);
    let out = ok(&[
        "--check", "score", "--arch", "zoo:toy-cnn", "--weights", s(&t.weights), "--data", s(&t.data),
        "--labels", s(&t.labels), "--metric", "gfdr",
    ]);
    let g = zoo::toy_cnn();
    let channels: usize = g.prunable_layers().iter().map(|&i| g.output_shape_of(i).c).sum();
    assert_eq!(check_csv(out.as_bytes(), CsvKind::Scores).unwrap(), channels);
}

#[test]
fn random_metric_reproducible_by_seed() {
    let t = toy_files(30);
    let args = |seed: &'static str| {
        ok(&[
            "--seed", seed, "score", "--arch", "zoo:toy-cnn", "--weights", s(&t.weights), "--data", s(&t.data),
            "--labels", s(&t.labels), "--metric", "random", "--layer", "conv3",
        ])
    };
    assert_eq!(args("5"), args("5"));
    assert_ne!(args("5"), args("6"));
}

#[test]
fn output_independent_of_thread_count() {
    let t = toy_files(60);
    let go = |threads: &str| {
        ok(&[
            "--threads", threads, "sensitivity", "--arch", "zoo:toy-cnn", "--weights", s(&t.weights), "--data",
            s(&t.data), "--labels", s(&t.labels), "--metric", "mmd",
        ])
    };
    assert_eq!(go("1"), go("3"));
}

#[test]
fn uniform_sweep_and_eval_agree_with_library() {
    let t = toy_files(80);
    let csv = t.dir.join("u.csv");
    ok(&[
        "--check", "uniform-prune", "--arch", "zoo:toy-cnn", "--weights", s(&t.weights), "--data", s(&t.data),
        "--labels", s(&t.labels), "--ratio", "10,20,30,40,50,60,70,80", "--out", s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(check_csv(text.as_bytes(), CsvKind::Uniform).unwrap(), 8);

    let arch = t.dir.join("p.json");
    let wdir = t.dir.join("pw");
    ok(&[
        "uniform-prune", "--arch", "zoo:toy-cnn", "--weights", s(&t.weights), "--data", s(&t.data), "--labels",
        s(&t.labels), "--ratio", "30", "--out-arch", s(&arch), "--out-weights", s(&wdir),
    ]);
    let shown = ok(&["eval", "--arch", s(&arch), "--weights", s(&wdir), "--data", s(&t.data), "--labels", s(&t.labels)]);
    let g = chanprune::netgraph::NetworkGraph::from_json_str(&std::fs::read_to_string(&arch).unwrap()).unwrap();
    let w = WeightStore::load(wdir.join("manifest.json")).unwrap();
    let data = Dataset::new(Tensor::load(&t.data).unwrap(), LabelFile::load(&t.labels).unwrap()).unwrap();
    assert_eq!(shown.trim(), fmt_g9(evaluate_accuracy(&g, &w, &data).unwrap()));
    let row30 = text.lines().nth(3).unwrap();
    assert!(row30.ends_with(shown.trim()), "{row30} vs {shown}");
}

#[test]
fn sensitivity_plan_prune_pipeline() {
    let t = toy_files(60);
    let report = t.dir.join("r.json");
    let sens = ok(&[
        "--check", "sensitivity", "--arch", "zoo:toy-cnn", "--weights", s(&t.weights), "--data", s(&t.data),
        "--labels", s(&t.labels), "--json", s(&report),
    ]);
    assert!(check_csv(sens.as_bytes(), CsvKind::Sensitivity).unwrap() >= 2);
    let plan = t.dir.join("plan.json");
    ok(&["--check", "plan", "--arch", "zoo:toy-cnn", "--report", s(&report), "--k", "2", "--out", s(&plan)]);
    let (arch, wdir) = (t.dir.join("a.json"), t.dir.join("w"));
    ok(&[
        "--check", "prune", "--arch", "zoo:toy-cnn", "--weights", s(&t.weights), "--plan", s(&plan), "--out-arch",
        s(&arch), "--out-weights", s(&wdir),
    ]);
    let flops = ok(&["--check", "flops", "--arch", s(&arch)]);
    let total: u64 = flops.lines().last().unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!(total < zoo::toy_cnn().flop_count());

    let iter_dir = t.dir.join("it");
    ok(&[
        "iterate", "--arch", "zoo:toy-cnn", "--weights", s(&t.weights), "--data", s(&t.data), "--labels",
        s(&t.labels), "--cycles", "2", "--out-dir", s(&iter_dir),
    ]);
    for c in ["cycle1", "cycle2"] {
        for f in ["report.json", "sensitivity.csv", "plan.json", "arch.json", "weights/manifest.json"] {
            assert!(iter_dir.join(c).join(f).exists(), "{c}/{f}");
        }
    }
}

#[test]
fn floss_and_flops_tables() {
    let floss = ok(&["--check", "floss", "--arch", "zoo:vgg16"]);
    assert_eq!(check_csv(floss.as_bytes(), CsvKind::Floss).unwrap(), 15);
    let flops = ok(&["flops", "--arch", "zoo:resnet50"]);
    let last = flops.lines().last().unwrap();
    assert_eq!(last, "total,,4089184256,25583592");
}

#[test]
fn bench_writes_row_per_metric() {
    let out = ok(&[
        "--check", "bench", "--channels", "3", "--width", "4", "--height", "4", "--samples", "50", "--classes", "3",
        "--metric", "gsd,mmd,random",
    ]);
    assert_eq!(check_csv(out.as_bytes(), CsvKind::Bench).unwrap(), 3);
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = TempDir::new().unwrap();
    let junk = dir.path().join("junk.ptsr");
    std::fs::write(&junk, b"nope").unwrap();
    assert_eq!(run(&["floss", "--arch", "zoo:toy-cnn", "--alpha", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["flops", "--arch", s(&dir.path().join("missing.json"))]).status.code(), Some(3));
    assert_eq!(
        run(&["eval", "--arch", "zoo:toy-cnn", "--weights", s(&fixture_dir()), "--data", s(&junk), "--labels", s(&junk)])
            .status
            .code(),
        Some(3)
    );
    // One class with zero variance and the variance floor disabled.
    let flat = dir.path().join("flat.ptsr");
    let labels = dir.path().join("flat.plbl");
    Tensor::new(vec![4, 1, 1, 1], vec![1.0, 1.0, 4.0, 6.0]).unwrap().save(&flat).unwrap();
    LabelFile::new(vec![0, 0, 1, 1]).save(&labels).unwrap();
    let out = run(&["score", "--activations", s(&flat), "--labels", s(&labels), "--epsilon", "0"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    Tensor::new(vec![4, 1, 1, 1], vec![2.0; 4]).unwrap().save(&flat).unwrap();
    let out = run(&["score", "--activations", s(&flat), "--labels", s(&labels), "--epsilon", "0"]);
    assert_eq!(out.status.code(), Some(4));
    let out = run(&["score", "--activations", s(&flat), "--labels", s(&labels)]);
    assert!(String::from_utf8_lossy(&out.stdout).ends_with(",gsd,0\n"));
}

#[test]
fn synth_and_zoo_outputs_load() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&[
        "--check", "synth", "two-channel", "--samples", "40", "--out", s(&d.join("a.ptsr")), "--out-labels",
        s(&d.join("a.plbl")),
    ]);
    assert_eq!(Tensor::load(d.join("a.ptsr")).unwrap().dims()[1], 2);
    ok(&["--check", "zoo", "signal-noise", "--out", s(&d.join("sn.json")), "--out-weights", s(&d.join("snw"))]);
    ok(&[
        "synth", "signal-noise", "--samples", "200", "--out", s(&d.join("s.ptsr")), "--out-labels",
        s(&d.join("s.plbl")),
    ]);
    let acc = ok(&[
        "eval", "--arch", s(&d.join("sn.json")), "--weights", s(&d.join("snw")), "--data", s(&d.join("s.ptsr")),
        "--labels", s(&d.join("s.plbl")),
    ]);
    assert!(acc.trim().parse::<f64>().unwrap() > 0.9);
    ok(&[
        "capture", "--arch", s(&d.join("sn.json")), "--weights", s(&d.join("snw")), "--data", s(&d.join("s.ptsr")),
        "--labels", s(&d.join("s.plbl")), "--layer", "hidden", "--out", s(&d.join("cap.ptsr")),
    ]);
    assert_eq!(Tensor::load(d.join("cap.ptsr")).unwrap().dims(), &[200, 16, 1, 1]);
}
