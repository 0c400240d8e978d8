//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use chanprune::engine::{apply_plan_weights, evaluate_accuracy, forward, forward_masked, WeightStore};
use chanprune::metrics::{score_channel, score_layer, Metric, MetricConfig};
use chanprune::netgraph::{apply_plan_graph, floss, pruning_counts, zoo, PlanEntry, PlanProvenance, PruningPlan};
use chanprune::sensitivity::{analyze, select_and_plan, RunConfig};
use chanprune::synth;
use common::*;

type Outcome = Result<String, String>;

fn within(value: f64, target: f64, frac: f64) -> bool {
    (value - target).abs() <= frac * target
}

fn check(ok: bool, msg: String) -> Outcome {
    if ok { Ok(msg) } else { Err(msg) }
}

fn flops_and_params() -> Outcome {
    let vgg = zoo::vgg16();
    let res = zoo::resnet50();
    let (vf, vp) = (vgg.flop_count(), vgg.param_count());
    let (rf, rp) = (res.flop_count(), res.param_count());
    if (vf, vp) != (oracle_flops(&vgg), oracle_params(&vgg)) || (rf, rp) != (oracle_flops(&res), oracle_params(&res)) {
        return Err("library totals disagree with the from-scratch count".into());
    }
    let c11 = vgg.index_of("conv1_1").unwrap();
    let (c11f, c11p) = (vgg.layer_flops(c11), vgg.layer_params(c11));
    let spot = c11f == 3 * 64 * 9 * 224 * 224 && c11p == 64 * 27 + 64;
    let ok = within(vf as f64, 15.47e9, 0.01)
        && within(vp as f64, 138.34e6, 0.01)
        && within(rf as f64, 4.09e9, 0.01)
        && within(rp as f64, 25.50e6, 0.01)
        && spot
        && within(c11f as f64, 87e6, 0.01)
        && (1_700..1_800).contains(&c11p);
    check(
        ok,
        format!("vgg16 {vf} FLOPs / {vp} params, conv1_1 {c11f} / {c11p}; resnet50 {rf} / {rp}"),
    )
}

fn floss_linearity() -> Outcome {
    let mut checked = 0;
    let mut bounded = 0;
    for seed in 0..50u64 {
        let g = synth::random_network(seed, seed % 2 == 0);
        let mut rng = rng(seed);
        let base = oracle_flops(&g);
        for idx in g.prunable_layers() {
            let id = &g.layer(idx).id;
            let c = g.output_shape_of(idx).c;
            if c < 2 {
                continue;
            }
            let f = floss(&g, id).map_err(|e| format!("seed {seed}: {e}"))?;
            for n in 1..c {
                let entry = PlanEntry { layer: id.clone(), channels: random_subset(&mut rng, c, n) };
                let plan = PruningPlan::new(&g, Metric::Random, PlanProvenance::default(), vec![entry])
                    .map_err(|e| format!("seed {seed}: {e}"))?;
                let pruned = apply_plan_graph(&g, &plan).map_err(|e| format!("seed {seed}: {e}"))?;
                let delta = base - oracle_flops(&pruned);
                if delta != n as u64 * f {
                    return Err(format!("seed {seed} layer {id}: removing {n} saves {delta}, FLOSS {f}"));
                }
                checked += 1;
            }
        }
        for alpha in [2.0, 3.0, 4.0] {
            let table = pruning_counts(&g, alpha).map_err(|e| format!("seed {seed}: {e}"))?;
            let fmax = table.entries.iter().map(|e| e.floss).max().unwrap();
            if fmax != table.floss_max {
                return Err(format!("seed {seed}: FLOSS max {} vs {fmax}", table.floss_max));
            }
            let target = alpha * fmax as f64;
            for e in &table.entries {
                let f = e.floss as f64;
                let removed = e.n_channels as f64 * f;
                let raw = target / f;
                let ok = if raw.round() <= (e.channels - 1) as f64 {
                    2.0 * (removed - target).abs() <= f
                } else {
                    e.n_channels == e.channels - 1 && removed <= target
                };
                if !ok {
                    return Err(format!(
                        "seed {seed} alpha {alpha} layer {}: n {} FLOSS {f} target {target}",
                        e.layer_id, e.n_channels
                    ));
                }
                bounded += 1;
            }
        }
    }
    check(checked > 100, format!("{checked} (layer, n) prunes linear, {bounded} counts within bound"))
}

const UNI: [(Metric, Uni); 4] = [
    (Metric::GSd, Uni::Sd),
    (Metric::GAbsSnr, Uni::AbsSnr),
    (Metric::GFdr, Uni::Fdr),
    (Metric::GTtest, Uni::Ttest),
];

fn metric_oracles() -> Outcome {
    let mut worst = [0.0f64; 3];
    let mut r = rng(3);
    for i in 0..200 {
        let set = random_set(&mut r, 8, 12);
        let cfg = MetricConfig { seed: i, ..MetricConfig::default() };
        for (m, u) in UNI {
            let got = score_channel(&set, m, &cfg, "x", 0).map_err(|e| e.to_string())?;
            let want = oracle_g(&set, u, cfg.variance_epsilon);
            worst[0] = worst[0].max((got - want).abs() / want.abs());
        }
        let di = score_channel(&set, Metric::Di, &cfg, "x", 0).map_err(|e| e.to_string())?;
        let want = oracle_di(&set, cfg.ridge_rho);
        worst[1] = worst[1].max((di - want).abs() / want.abs());
        let mmd = score_channel(&set, Metric::Mmd, &cfg, "x", 0).map_err(|e| e.to_string())?;
        let want = oracle_mmd(&set, cfg.kernel_sigma);
        worst[2] = worst[2].max((mmd - want).abs() / want.abs());
    }
    check(
        worst[0] <= 1e-9 && worst[1] <= 1e-8 && worst[2] <= 1e-9,
        format!("worst relative error: generalized {:.1e}, di {:.1e}, mmd {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn affine_invariance() -> Outcome {
    let cfg = MetricConfig { variance_epsilon: 0.0, ..MetricConfig::default() };
    let mut worst = 0.0f64;
    let mut r = rng(4);
    for _ in 0..100 {
        let set = random_set(&mut r, 8, 12);
        for (m, _) in UNI {
            let base = score_channel(&set, m, &cfg, "x", 0).map_err(|e| e.to_string())?;
            for a in [-3.0f32, 0.5, 10.0] {
                for b in [-1.0f32, 0.0, 7.0] {
                    let moved = set.map_values(|x| a * x + b).map_err(|e| e.to_string())?;
                    let s = score_channel(&moved, m, &cfg, "x", 0).map_err(|e| e.to_string())?;
                    worst = worst.max((s - base).abs() / base.abs());
                }
            }
        }
    }
    check(worst <= 1e-9, format!("worst relative change {worst:.1e} over 100 sets x 9 maps x 4 metrics"))
}

fn two_channel_ranking() -> Outcome {
    let metrics: Vec<Metric> = Metric::ALL.into_iter().filter(|&m| m != Metric::Random).collect();
    let mut wins = vec![0; metrics.len()];
    for seed in 0..100 {
        let (acts, labels) = synth::two_channel_set(30, 3, 2, 2, 1.0, seed).map_err(|e| e.to_string())?;
        for (i, &m) in metrics.iter().enumerate() {
            let cfg = MetricConfig { seed, ..MetricConfig::default() };
            let s = score_layer(&acts, &labels, 3, "fig", m, &cfg).map_err(|e| e.to_string())?;
            if s[0].score > s[1].score {
                wins[i] += 1;
            }
        }
    }
    let summary: Vec<String> = metrics.iter().zip(&wins).map(|(m, w)| format!("{m} {w}/100")).collect();
    check(wins.iter().all(|&w| w == 100), summary.join(", "))
}

fn masked_equivalence() -> Outcome {
    let mut worst = 0.0f32;
    let mut removed_total = 0;
    for seed in 0..50u64 {
        let g = synth::random_network(seed, seed % 2 == 1);
        let w = synth::random_weights(&g, seed);
        let data = synth::random_inputs(&g, 6, 2, seed).map_err(|e| e.to_string())?;
        let mut r = rng(100 + seed);
        let mut removed = BTreeMap::new();
        let candidates: Vec<usize> = g.prunable_layers().into_iter().filter(|&i| g.output_shape_of(i).c >= 2).collect();
        for (j, &idx) in candidates.iter().enumerate() {
            if j > 0 && rand::Rng::random_bool(&mut r, 0.4) {
                continue;
            }
            let c = g.output_shape_of(idx).c;
            let n = rand::Rng::random_range(&mut r, 1..c);
            removed.insert(g.layer(idx).id.clone(), random_subset(&mut r, c, n));
        }
        let entries = removed.iter().map(|(l, c)| PlanEntry { layer: l.clone(), channels: c.clone() }).collect();
        let plan = PruningPlan::new(&g, Metric::Random, PlanProvenance::default(), entries)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        removed_total += plan.removed_channels();
        let (pg, pw) = apply_plan_weights(&g, &w, &plan).map_err(|e| format!("seed {seed}: {e}"))?;
        let pruned = forward(&pg, &pw, data.inputs()).map_err(|e| format!("seed {seed}: {e}"))?;
        let masked = forward_masked(&g, &w, data.inputs(), &zero_masks(&g, &removed))
            .map_err(|e| format!("seed {seed}: {e}"))?;
        if pruned.dims() != masked.dims() {
            return Err(format!("seed {seed}: output dims {:?} vs {:?}", pruned.dims(), masked.dims()));
        }
        for (a, b) in pruned.data().iter().zip(masked.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        worst <= 1e-5,
        format!("50 networks, {removed_total} channels removed, worst |pruned - masked| {worst:.1e}"),
    )
}

fn end_to_end() -> Outcome {
    let graph = zoo::toy_cnn();
    let weights = WeightStore::load(fixture_dir().join("manifest.json")).map_err(|e| e.to_string())?;
    let val = synth::toy_images(500, 0.6, 2).map_err(|e| e.to_string())?;
    let scoring = synth::toy_images(1000, 0.6, 3).map_err(|e| e.to_string())?;
    let cfg = RunConfig { alpha: 2.0, k: 2, metric: Metric::GSd, ..RunConfig::default() };
    let report = analyze(&graph, &weights, &val, &scoring, &cfg).map_err(|e| e.to_string())?;
    let target = cfg.alpha * report.table.floss_max as f64;
    for row in &report.rows {
        let e = report.table.get(&row.layer_id).unwrap();
        let removed = row.flop_reduction as f64;
        let clamped = e.n_channels == e.channels - 1 && removed <= target;
        if row.flop_reduction != row.n_channels as u64 * row.floss
            || !(2.0 * (removed - target).abs() <= row.floss as f64 || clamped)
        {
            return Err(format!("layer {} removes {removed} FLOPs for target {target}", row.layer_id));
        }
    }
    let plan = select_and_plan(&graph, &report, cfg.k).map_err(|e| e.to_string())?;
    let (g, w) = apply_plan_weights(&graph, &weights, &plan).map_err(|e| e.to_string())?;
    let acc = evaluate_accuracy(&g, &w, &val).map_err(|e| e.to_string())?;
    let mut random_accs = Vec::new();
    for seed in 0..10 {
        let mut r = rng(1000 + seed);
        let entries = plan
            .entries
            .iter()
            .map(|e| {
                let c = graph.output_shape_of(graph.index_of(&e.layer).unwrap()).c;
                PlanEntry { layer: e.layer.clone(), channels: random_subset(&mut r, c, e.channels.len()) }
            })
            .collect();
        let rp = PruningPlan::new(&graph, Metric::Random, PlanProvenance::default(), entries).map_err(|e| e.to_string())?;
        if rp.expected_flop_delta != plan.expected_flop_delta {
            return Err("random plan does not match the FLOP reduction".into());
        }
        let (rg, rw) = apply_plan_weights(&graph, &weights, &rp).map_err(|e| e.to_string())?;
        random_accs.push(evaluate_accuracy(&rg, &rw, &val).map_err(|e| e.to_string())?);
    }
    let mean = random_accs.iter().sum::<f64>() / random_accs.len() as f64;
    let layers: Vec<&str> = plan.entries.iter().map(|e| e.layer.as_str()).collect();
    check(
        acc >= mean,
        format!(
            "baseline {:.3}, pruned {:?} (-{} FLOPs of {}): gsd {acc:.3} vs random mean {mean:.3}",
            report.baseline_acc,
            layers,
            plan.expected_flop_delta,
            graph.flop_count()
        ),
    )
}

fn timing_direction() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("bench.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_chanprune"))
        .args(["--check", "bench", "--channels", "64", "--width", "64", "--height", "64", "--samples", "3000"])
        .args(["--metric", "gsd,di", "--max-channels", "4", "--out"])
        .arg(&out)
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("bench exited with {status}"));
    }
    let mut times = BTreeMap::new();
    let mut reader = csv::Reader::from_path(&out).map_err(|e| e.to_string())?;
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        times.insert(rec[1].to_string(), rec[2].parse::<f64>().map_err(|e| e.to_string())?);
    }
    let (Some(&gsd), Some(&di)) = (times.get("gsd"), times.get("di")) else {
        return Err(format!("missing rows: {times:?}"));
    };
    check(
        gsd > 0.0 && gsd < di,
        format!("first 4 of 64 channels: gsd {gsd:.3} s, di {di:.3} s ({:.0}x)", di / gsd),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        ("flop/parameter regression", flops_and_params, Duration::from_secs(1)),
        ("FLOSS linearity and normalization", floss_linearity, Duration::from_secs(10)),
        ("metric oracle equivalence", metric_oracles, Duration::from_secs(30)),
        ("affine invariance", affine_invariance, Duration::from_secs(10)),
        ("two-channel rank property", two_channel_ranking, Duration::from_secs(10)),
        ("masked-equivalence pruning", masked_equivalence, Duration::from_secs(30)),
        ("end-to-end sensitivity run", end_to_end, Duration::from_secs(120)),
        ("timing direction", timing_direction, Duration::from_secs(120)),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (verdict, detail) = match &outcome {
            Ok(d) if took <= *budget => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; over the {budget:?} budget")),
            Err(d) => ("FAIL", d.clone()),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("criterion {}: {verdict} {name} [{:.2?}] {detail}", i + 1, took);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
