mod support;

use std::collections::BTreeMap;

use catnet_core::experiments::model_inputs;
use catnet_core::ingest::{synth_dataset, ContractRecord, EncoderOptions, FeatureEncoder, SynthConfig};
use catnet_core::rgcn::{
    features_to_matrix, load_checkpoint, r2_score, save_checkpoint, train, Activation, Masks, Mode, ModelConfig,
    RgcnModel, TrainConfig, TrainSplit,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use support::{random_matrix, rel_err, rng, small_hetero_graph};

fn config(feature_dim: usize, layers: usize, activation: Activation) -> ModelConfig {
    ModelConfig { feature_dim, hidden: 5, layers, n_bases: 2, activation, dropout: 0.0 }
}

/// Central differences over 100 random parameter entries of a 2-layer,
/// 3-relation model on 10 nodes.
#[test]
fn parameter_gradients_match_finite_differences() {
    for seed in 0..5u64 {
        let g = small_hetero_graph(10, 3, 0.4, seed);
        let x = random_matrix(10, 4, 100 + seed);
        let mut model = RgcnModel::new(config(4, 2, Activation::Elu), &g, seed).unwrap();
        model.target_mean = 0.3;
        model.target_std = 1.7;
        let bound = model.bind(&g);
        let mut r = rng(200 + seed);
        let targets: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let mask: Vec<bool> = (0..10).map(|i| i % 3 == 0 || i == 4).collect();
        let (_, grads) = model.loss_and_gradients(&bound, &x, &targets, &mask).unwrap();

        for _ in 0..100 {
            let p = r.random_range(0..model.params().len());
            let len = model.params()[p].value.len();
            let i = r.random_range(0..len);
            let h = 1e-5;
            let orig = model.params()[p].value.as_slice()[i];
            let mut loss_at = |v: f64| {
                model.params_mut()[p].value.as_mut_slice()[i] = v;
                model.loss_and_gradients(&bound, &x, &targets, &mask).unwrap().0
            };
            let numeric = (loss_at(orig + h) - loss_at(orig - h)) / (2.0 * h);
            loss_at(orig);
            let analytic = grads.params[p].as_slice()[i];
            let err = rel_err(analytic, numeric, 1e-4);
            assert!(err < 1e-5, "seed {seed} {}[{i}]: analytic {analytic} numeric {numeric}", model.params()[p].name);
        }
    }
}

#[test]
fn mask_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        let g = small_hetero_graph(10, 3, 0.4, seed);
        let x = random_matrix(10, 4, 300 + seed);
        let model = RgcnModel::new(config(4, 2, Activation::Gelu), &g, seed).unwrap();
        let bound = model.bind(&g);
        let mut r = rng(seed);
        let w: Vec<f64> = (0..g.num_edges()).map(|_| r.random_range(0.2..1.0)).collect();
        let s: Vec<f64> = (0..4).map(|_| r.random_range(0.2..1.0)).collect();
        // objective: the prediction at node 0
        let pred = |w: &[f64], s: &[f64]| {
            let masks = Masks { edge_weights: Some(w), feature_scale: Some(s) };
            model.forward(&bound, &x, Mode::Eval, masks).unwrap().pred[0]
        };
        let masks = Masks { edge_weights: Some(&w), feature_scale: Some(&s) };
        let cache = model.forward(&bound, &x, Mode::Eval, masks).unwrap();
        let mut dpred = vec![0.0; 10];
        dpred[0] = 1.0;
        let grads = model.backward(&bound, &cache, masks, &dpred, true);
        let h = 1e-6;
        for e in 0..w.len() {
            let (mut a, mut b) = (w.clone(), w.clone());
            a[e] += h;
            b[e] -= h;
            let numeric = (pred(&a, &s) - pred(&b, &s)) / (2.0 * h);
            let analytic = grads.edge_weights.as_ref().unwrap()[e];
            assert!(rel_err(analytic, numeric, 1e-4) < 1e-5, "edge {e}: {analytic} vs {numeric}");
        }
        for j in 0..s.len() {
            let (mut a, mut b) = (s.clone(), s.clone());
            a[j] += h;
            b[j] -= h;
            let numeric = (pred(&w, &a) - pred(&w, &b)) / (2.0 * h);
            let analytic = grads.feature_scale.as_ref().unwrap()[j];
            assert!(rel_err(analytic, numeric, 1e-4) < 1e-5, "feature {j}: {analytic} vs {numeric}");
        }
    }
}

fn predictions_by_id(model: &RgcnModel, records: &[ContractRecord], encoder: &FeatureEncoder) -> BTreeMap<String, f64> {
    let (built, x) = model_inputs(records, encoder, true, None).unwrap();
    model.predict(&built.graph, &x).unwrap().into_iter().map(|(u, y)| (built.graph.label(u).to_string(), y)).collect()
}

#[test]
fn predictions_are_invariant_to_node_relabeling() {
    let records = synth_dataset(&SynthConfig::new(60, 4)).records;
    let refs: Vec<&ContractRecord> = records.iter().collect();
    let encoder = FeatureEncoder::fit(&refs, EncoderOptions::default()).unwrap();
    let (built, x) = model_inputs(&records, &encoder, true, None).unwrap();
    let cfg = ModelConfig {
        feature_dim: x.cols(),
        hidden: 8,
        layers: 2,
        n_bases: 3,
        activation: Activation::Elu,
        dropout: 0.0,
    };
    let model = RgcnModel::new(cfg, &built.graph, 8).unwrap();
    let base = predictions_by_id(&model, &records, &encoder);
    let mut r = rng(1);
    for _ in 0..10 {
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut r);
        let other = predictions_by_id(&model, &shuffled, &encoder);
        assert_eq!(base.len(), other.len());
        for (id, y) in &base {
            assert!((y - other[id]).abs() <= 1e-10, "{id}: {y} vs {}", other[id]);
        }
    }
}

#[test]
fn overfits_thirty_planted_contracts() {
    let records = synth_dataset(&SynthConfig::new(30, 12)).records;
    let refs: Vec<&ContractRecord> = records.iter().collect();
    let encoder = FeatureEncoder::fit(&refs, EncoderOptions::default()).unwrap();
    let (built, x) = model_inputs(&records, &encoder, true, None).unwrap();
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
    let model = RgcnModel::new(cfg, &built.graph, tc.seed).unwrap();
    let split = TrainSplit { train: built.contract_nodes.clone(), val: Vec::new() };
    let (model, history) = train(model, &built.graph, &x, &built.targets, &split, &tc).unwrap();
    assert!(history.epochs.len() <= 2000);
    let pred = model.predict(&built.graph, &x).unwrap();
    let yh: Vec<f64> = built.contract_nodes.iter().map(|u| pred[u]).collect();
    let y: Vec<f64> = built.contract_nodes.iter().map(|u| built.targets[u]).collect();
    let r2 = r2_score(&yh, &y).unwrap();
    assert!(r2 > 0.99, "train R^2 {r2}");
}

#[test]
fn checkpoint_reproduces_predictions_exactly() {
    let g = small_hetero_graph(12, 3, 0.4, 2);
    let x = random_matrix(12, 4, 5);
    let mut model = RgcnModel::new(config(4, 2, Activation::LeakyRelu), &g, 2).unwrap();
    model.target_mean = 0.07;
    model.target_std = 0.02;
    let json = save_checkpoint(&model, serde_json::json!({"note": "x"})).unwrap();
    let (back, extra) = load_checkpoint(&json).unwrap();
    assert_eq!(extra["note"], "x");
    let a = model.predict_all(&model.bind(&g), &x).unwrap();
    let b = back.predict_all(&back.bind(&g), &x).unwrap();
    assert_eq!(a, b);
    let fm = catnet_core::ingest::FeatureMatrix {
        names: (0..4).map(|i| format!("f{i}")).collect(),
        rows: 12,
        data: x.as_slice().to_vec(),
    };
    assert_eq!(features_to_matrix(&fm), x);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]
    #[test]
    fn training_is_deterministic_for_a_seed(seed in 0u64..1000, dropout in 0.0f64..0.5) {
        let g = small_hetero_graph(15, 3, 0.3, seed);
        let fm = catnet_core::ingest::FeatureMatrix {
            names: (0..3).map(|i| format!("f{i}")).collect(),
            rows: 15,
            data: random_matrix(15, 3, seed).into_vec(),
        };
        let contracts: Vec<_> = g.nodes_of_kind(catnet_core::graph::NodeKind::Contract);
        let targets = contracts.iter().enumerate().map(|(i, &u)| (u, i as f64 * 0.1)).collect();
        let split = TrainSplit { train: contracts.clone(), val: Vec::new() };
        let tc = TrainConfig { max_epochs: 15, hidden: 16, layers: 2, dropout, seed, ..Default::default() };
        let mut cfg = config(3, 2, tc.activation);
        cfg.hidden = 16;
        cfg.dropout = dropout;
        let run = || {
            let m = RgcnModel::new(cfg.clone(), &g, seed).unwrap();
            train(m, &g, &fm, &targets, &split, &tc).unwrap()
        };
        let (a, ha) = run();
        let (b, hb) = run();
        prop_assert_eq!(ha, hb);
        prop_assert_eq!(a.params(), b.params());
    }
}
