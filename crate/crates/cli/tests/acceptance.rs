//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p catnet-cli --test acceptance`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use catnet_core::experiments::{
    model_inputs, oos_splits, oot_splits, run_ablation, Arm, ExperimentConfig, ExperimentReport,
};
use catnet_core::explain::{explain_node, rank_node_features, ExplainConfig};
use catnet_core::graph::{GraphBuilder, HeteroGraph, NodeId, NodeKind};
use catnet_core::ingest::{synth_dataset, ContractRecord, EncoderOptions, FeatureEncoder, FeatureMatrix, SynthConfig};
use catnet_core::rgcn::{
    features_to_matrix, r2_score, train, Activation, Masks, Mode, ModelConfig, RgcnModel, TrainConfig, TrainSplit,
};
use catnet_core::topology::{
    bootstrap_pvalue, centralities, critical_threshold_from_moments, fit_adjusted_powerlaw, sample_fitted, GridSpec,
    PowerLawGrid,
};
use rand::seq::SliceRandom;
use rand::Rng;
use support::{
    brute_centralities, max_scaled_err, pure_power_law, random_adjacency, random_matrix, rel_err, rng,
    small_hetero_graph,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn centrality_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut eigen = 0;
    for g in 0..100 {
        let n = r.random_range(1..=12);
        let p = r.random_range(0.1..0.7);
        let adj = random_adjacency(&mut r, n, p, g % 2 == 0);
        let got = centralities(&adj, None).map_err(|e| e.to_string())?;
        let want = brute_centralities(&adj, None);
        let mut worst = [
            max_scaled_err(&got.degree, &want.degree),
            max_scaled_err(&got.closeness, &want.closeness),
            max_scaled_err(&got.betweenness, &want.betweenness),
            max_scaled_err(&got.katz, &want.katz),
            max_scaled_err(&got.clustering, &want.clustering),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        if let Some(ev) = &want.eigenvector {
            worst = worst.max(max_scaled_err(&got.eigenvector, ev));
            eigen += 1;
        }
        ensure!(worst <= 1e-8, "graph {g}: error {worst:e}");
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!("100 graphs, {eigen} with eigenvector checks, max error <= 1e-8"))
}

fn power_law() -> Outcome {
    let sample = pure_power_law(100_000, 2.5, 2, 11);
    let fit = fit_adjusted_powerlaw(&sample, GridSpec::Default).map_err(|e| e.to_string())?;
    ensure!((fit.gamma - 2.5).abs() <= 0.1, "gamma {}", fit.gamma);
    ensure!(fit.k_sat <= 2, "k_sat {}", fit.k_sat);

    let grid = || GridSpec::Fixed(PowerLawGrid { k_sat: vec![0, 1, 2, 3], k_cut: vec![20, 100, 1000] });
    let mut ps = Vec::new();
    for trial in 0..20u64 {
        let source =
            fit_adjusted_powerlaw(&pure_power_law(500, 2.5, 1, 100 + trial), grid()).map_err(|e| e.to_string())?;
        let data = sample_fitted(&source, 500, &mut rng(trial));
        let fit = fit_adjusted_powerlaw(&data, grid()).map_err(|e| e.to_string())?;
        ps.push(bootstrap_pvalue(&fit, 200, trial).map_err(|e| e.to_string())?);
    }
    let mean = ps.iter().sum::<f64>() / ps.len() as f64;
    ensure!((0.3..=0.7).contains(&mean), "mean bootstrap p {mean:.3}");
    Ok(format!("gamma {:.3}, k_sat {}, mean bootstrap p {mean:.3}", fit.gamma, fit.k_sat))
}

fn critical_threshold() -> Outcome {
    let f_c = critical_threshold_from_moments(15.52, 2346.50).f_c.ok_or("no transition")?;
    ensure!((f_c - 0.9933).abs() <= 1e-4, "f_c {f_c}");
    Ok(format!("f_c {f_c:.5}"))
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let g = small_hetero_graph(10, 3, 0.4, seed);
        let x = random_matrix(10, 4, 100 + seed);
        let config =
            ModelConfig { feature_dim: 4, hidden: 5, layers: 2, n_bases: 2, activation: Activation::Elu, dropout: 0.0 };
        let mut model = RgcnModel::new(config, &g, seed).map_err(|e| e.to_string())?;
        let bound = model.bind(&g);
        let mut r = rng(200 + seed);
        let targets: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let mask = vec![true; 10];
        let (_, grads) = model.loss_and_gradients(&bound, &x, &targets, &mask).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let p = r.random_range(0..model.params().len());
            let i = r.random_range(0..model.params()[p].value.len());
            let orig = model.params()[p].value.as_slice()[i];
            let mut loss_at = |v: f64| {
                model.params_mut()[p].value.as_mut_slice()[i] = v;
                model.loss_and_gradients(&bound, &x, &targets, &mask).unwrap().0
            };
            let numeric = (loss_at(orig + 1e-5) - loss_at(orig - 1e-5)) / 2e-5;
            loss_at(orig);
            worst = worst.max(rel_err(grads.params[p].as_slice()[i], numeric, 1e-4));
        }
    }
    ensure!(worst < 1e-5, "max relative error {worst:e}");
    Ok(format!("500 entries, max relative error {worst:.2e}"))
}

fn encoder(records: &[ContractRecord]) -> FeatureEncoder {
    let refs: Vec<&ContractRecord> = records.iter().collect();
    FeatureEncoder::fit(&refs, EncoderOptions::default()).unwrap()
}

fn permutation_invariance() -> Outcome {
    let records = synth_dataset(&SynthConfig::new(60, 4)).records;
    let enc = encoder(&records);
    let by_id = |model: &RgcnModel, recs: &[ContractRecord]| -> BTreeMap<String, f64> {
        let (built, x) = model_inputs(recs, &enc, true, None).unwrap();
        let pred = model.predict(&built.graph, &x).unwrap();
        pred.into_iter().map(|(u, y)| (built.graph.label(u).to_string(), y)).collect()
    };
    let (built, x) = model_inputs(&records, &enc, true, None).map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        feature_dim: x.cols(),
        hidden: 8,
        layers: 2,
        n_bases: 3,
        activation: Activation::Elu,
        dropout: 0.0,
    };
    let model = RgcnModel::new(cfg, &built.graph, 8).map_err(|e| e.to_string())?;
    let base = by_id(&model, &records);
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut r);
        let other = by_id(&model, &shuffled);
        ensure!(other.len() == base.len(), "prediction count changed");
        for (id, y) in &base {
            worst = worst.max((y - other[id]).abs());
        }
    }
    ensure!(worst <= 1e-10, "max difference {worst:e}");
    Ok(format!("10 relabelings, max difference {worst:.1e}"))
}

fn overfit() -> Outcome {
    let records = synth_dataset(&SynthConfig::new(30, 12)).records;
    let (built, x) = model_inputs(&records, &encoder(&records), true, None).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 2000,
        patience: 2000,
        hidden: 32,
        layers: 2,
        seed: 3,
        ..Default::default()
    };
    let cfg = ModelConfig {
        feature_dim: x.cols(),
        hidden: tc.hidden,
        layers: tc.layers,
        n_bases: 4,
        activation: tc.activation,
        dropout: 0.0,
    };
    let model = RgcnModel::new(cfg, &built.graph, tc.seed).map_err(|e| e.to_string())?;
    let split = TrainSplit { train: built.contract_nodes.clone(), val: Vec::new() };
    let (model, history) = train(model, &built.graph, &x, &built.targets, &split, &tc).map_err(|e| e.to_string())?;
    let pred = model.predict(&built.graph, &x).map_err(|e| e.to_string())?;
    let yh: Vec<f64> = built.contract_nodes.iter().map(|u| pred[u]).collect();
    let y: Vec<f64> = built.contract_nodes.iter().map(|u| built.targets[u]).collect();
    let r2 = r2_score(&yh, &y).map_err(|e| e.to_string())?;
    ensure!(r2 > 0.99, "train R^2 {r2:.4}");
    Ok(format!("train R^2 {r2:.4} after {} epochs", history.epochs.len()))
}

fn ablation_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        train: TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 400,
            patience: 40,
            hidden: 32,
            layers: 1,
            activation: Activation::Elu,
            seed,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn oos_report(records: &[ContractRecord], folds: usize) -> Result<ExperimentReport, String> {
    let ids: Vec<String> = records.iter().map(|r| r.contract_id.clone()).collect();
    let plan = oos_splits(&ids, folds, 0.2, 0.15, 1).map_err(|e| e.to_string())?;
    run_ablation(records, &plan, &Arm::ALL, &ablation_config(2)).map_err(|e| e.to_string())
}

fn ablation() -> Outcome {
    let records = synth_dataset(&SynthConfig::new(500, 7)).records;
    let report = oos_report(&records, 10)?;
    ensure!(report.leakage_passed(), "leakage audit failed");
    let mean = |a: Arm| report.mean_r2(a).ok_or(format!("{a:?} has no R^2"));
    let (with, without, base) = (mean(Arm::WithTopo)?, mean(Arm::WithoutTopo)?, mean(Arm::BaselineLinear)?);
    ensure!(with >= without - 0.02, "with {with:.4} < without {without:.4} - 0.02");
    ensure!(with >= base - 0.02 && without >= base - 0.02, "R-GCN below baseline {base:.4} - 0.02");

    let mut null = records.clone();
    let mut spreads: Vec<f64> = null.iter().map(|r| r.spread_premium).collect();
    spreads.shuffle(&mut rng(77));
    for (r, s) in null.iter_mut().zip(spreads) {
        r.spread_premium = s;
    }
    let null_report = oos_report(&null, 3)?;
    for arm in Arm::ALL {
        let r2 = null_report.mean_r2(arm).ok_or("null run has no R^2")?;
        ensure!(r2 <= 0.1, "shuffled target {arm:?} R^2 {r2:.3}");
    }
    Ok(format!("R^2 with {with:.4}, without {without:.4}, baseline {base:.4}; null control <= 0.1"))
}

fn out_of_time() -> Outcome {
    let records = synth_dataset(&SynthConfig::new(803, 21)).records;
    let years: Vec<(String, i32)> = records.iter().map(|r| (r.contract_id.clone(), r.issue_year)).collect();
    let plan = oot_splits(&years, 2016, 0.15, 4).map_err(|e| e.to_string())?;
    ensure!(plan.folds.len() == 6, "{} folds", plan.folds.len());
    let mut config = ablation_config(5);
    config.train.hidden = 16;
    config.train.max_epochs = 200;
    config.train.patience = 20;
    let report = run_ablation(&records, &plan, &Arm::ALL, &config).map_err(|e| e.to_string())?;
    ensure!(report.leakage_passed(), "leakage audit: {:?}", report.leakage);
    let years: Vec<i32> = report.folds.iter().filter_map(|f| f.test_year).collect();
    ensure!(years == (2016..=2021).collect::<Vec<_>>(), "test years {years:?}");
    Ok(format!("6 folds 2016-2021, {} leakage checks passed", report.leakage.len()))
}

fn features(graph: &HeteroGraph, cols: usize, f: impl Fn(usize, usize) -> f64) -> FeatureMatrix {
    let mut x = FeatureMatrix::zeros(graph.num_nodes(), (0..cols).map(|j| format!("f{j}")).collect());
    for i in 0..graph.num_nodes() {
        for j in 0..cols {
            x.set(i, j, f(i, j));
        }
    }
    x
}

fn explainer() -> Outcome {
    let mut b = GraphBuilder::new();
    let cp = b.relation("contract-covers-peril");
    let cc = b.relation("contract-ceded-by-cedent");
    let c0 = b.add_node(NodeKind::Contract, "c0");
    let p = b.add_node(NodeKind::Peril, "flood");
    b.add_edge(c0, cp, p).map_err(|e| e.to_string())?;
    for i in 1..4 {
        let c = b.add_node(NodeKind::Contract, &format!("c{i}"));
        let d = b.add_node(NodeKind::Cedent, &format!("d{i}"));
        b.add_edge(c, cp, p).map_err(|e| e.to_string())?;
        b.add_edge(c, cc, d).map_err(|e| e.to_string())?;
    }
    let g = b.freeze();
    let x = features(&g, 4, |i, j| 0.5 + 0.1 * ((i * 7 + j * 3) % 5) as f64);
    let config = ModelConfig {
        feature_dim: 4,
        hidden: 4,
        layers: 1,
        n_bases: 1,
        activation: Activation::Identity,
        dropout: 0.0,
    };
    let mut m = RgcnModel::new(config, &g, 5).map_err(|e| e.to_string())?;
    for p in m.params_mut() {
        p.value = p.value.map(f64::abs);
    }
    m.param_mut("embedding").ok_or("no embedding")?.fill(0.0);
    let proj = m.param_mut("projection").ok_or("no projection")?;
    for i in [0, 1, 3] {
        for j in 0..proj.cols() {
            proj.set(i, j, 0.0);
        }
    }

    let bound = m.bind(&g);
    let xm = features_to_matrix(&x);
    let plain = m.forward(&bound, &xm, Mode::Eval, Masks::default()).map_err(|e| e.to_string())?.pred;
    let (we, wf) = (vec![1.0; g.num_edges()], vec![1.0; 4]);
    let masks = Masks { edge_weights: Some(&we), feature_scale: Some(&wf) };
    let ones = m.forward(&bound, &xm, Mode::Eval, masks).map_err(|e| e.to_string())?.pred;
    let gap = plain.iter().zip(&ones).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(gap <= 1e-12, "identity mask moved predictions by {gap:e}");

    let ex = explain_node(&m, &g, &x, NodeId(c0.0), &ExplainConfig::default()).map_err(|e| e.to_string())?;
    let ranking = rank_node_features(std::slice::from_ref(&ex)).map_err(|e| e.to_string())?;
    ensure!(ranking[0].0 == "f2", "top feature {:?}", ranking[0]);
    Ok(format!("planted f2 ranks first ({:.3}), identity mask gap {gap:.1e}", ranking[0].1))
}

fn run_cli(args: &[&str], workers: usize) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_catnet"))
        .args(args)
        .arg("--workers")
        .arg(workers.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("catnet {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(root: &Path, workers: usize) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let dir = root.join(format!("w{workers}"));
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    let csv = p("synth/contracts.csv");
    run_cli(&["synth", "--n", "120", "--seed", "3", "--out", &p("synth")], workers)?;
    run_cli(&["topology", "--in", &csv, "--bootstrap", "30", "--out", &p("topology")], workers)?;
    let small = ["--epochs", "60", "--patience", "10", "--hidden", "16", "--layers", "1"];
    let mut eval = vec!["evaluate", "--in", &csv, "--folds", "2", "--out"];
    let eval_out = p("evaluate");
    eval.push(&eval_out);
    eval.extend(small);
    run_cli(&eval, workers)?;
    let train_out = p("train");
    let mut tr = vec!["train", "--in", &csv, "--out", &train_out];
    tr.extend(small);
    run_cli(&tr, workers)?;
    let ckpt = p("train/checkpoint.json");
    run_cli(&["explain", "--in", &csv, "--checkpoint", &ckpt, "--all", "--out", &p("explain")], workers)?;

    let mut files = BTreeMap::new();
    let mut stack = vec![dir.clone()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                let rel = path.strip_prefix(&dir).unwrap().to_path_buf();
                files.insert(rel, fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let one = pipeline(root.path(), 1)?;
    let four = pipeline(root.path(), 4)?;
    ensure!(
        one.keys().eq(four.keys()),
        "file sets differ: {:?} vs {:?}",
        one.keys().collect::<Vec<_>>(),
        four.keys().collect::<Vec<_>>()
    );
    for (path, bytes) in &one {
        ensure!(&four[path] == bytes, "{} differs between 1 and 4 workers", path.display());
    }
    Ok(format!("{} output files identical under 1 and 4 workers", one.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("centrality oracle", centrality_oracle),
        ("power-law fit", power_law),
        ("critical threshold", critical_threshold),
        ("finite-difference gradients", gradient_check),
        ("permutation invariance", permutation_invariance),
        ("overfit 30 contracts", overfit),
        ("out-of-sample ablation", ablation),
        ("out-of-time protocol", out_of_time),
        ("explainer sanity", explainer),
        ("cross-thread determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[{:>2}] PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[{:>2}] FAIL {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
