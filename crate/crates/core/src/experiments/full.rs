//! Fitting one model on a whole corpus, outside the fold protocol.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ExperimentConfig, Result};
use crate::ingest::{
    attach_features, build_graph, BuiltGraph, ContractRecord, EncoderOptions, FeatureEncoder, FeatureMatrix,
};
use crate::rgcn::{self, History, ModelConfig, RgcnModel, TrainConfig, TrainSplit};
use crate::topology::{centralities, topo_features};

/// Graph and node features for `records`. Topology, if requested, comes
/// from the graph of `records` itself.
pub fn model_inputs(
    records: &[ContractRecord],
    encoder: &FeatureEncoder,
    with_topo: bool,
    katz_beta: Option<f64>,
) -> Result<(BuiltGraph, FeatureMatrix)> {
    let built = build_graph(records)?;
    let topo = if with_topo {
        let table = centralities(built.graph.homo_view(), katz_beta)?;
        Some(topo_features(&built.graph, &table))
    } else {
        None
    };
    let x = attach_features(&built.graph, records, encoder, topo.as_ref())?;
    Ok((built, x))
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub model: RgcnModel,
    pub encoder: FeatureEncoder,
    pub built: BuiltGraph,
    pub features: FeatureMatrix,
    pub split: TrainSplit,
    pub history: History,
}

/// Trains on every contract, holding out a seeded `val_frac` share for
/// early stopping. The encoder sees the training share only.
pub fn fit_full(
    records: &[ContractRecord],
    config: &ExperimentConfig,
    with_topo: bool,
    val_frac: f64,
) -> Result<FittedModel> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(super::derive_seed(config.train.seed, &[0x0f17])));
    let n_val = (val_frac * records.len() as f64).round() as usize;
    let mut is_val = vec![false; records.len()];
    for &i in &order[..n_val.min(records.len())] {
        is_val[i] = true;
    }
    let fit: Vec<&ContractRecord> = records.iter().zip(&is_val).filter(|(_, &v)| !v).map(|(r, _)| r).collect();
    let encoder = FeatureEncoder::fit(&fit, EncoderOptions::default())?;
    let (built, features) = model_inputs(records, &encoder, with_topo, config.katz_beta)?;
    let mut split = TrainSplit { train: Vec::new(), val: Vec::new() };
    for (&u, &v) in built.contract_nodes.iter().zip(&is_val) {
        if v {
            split.val.push(u);
        } else {
            split.train.push(u);
        }
    }
    let tc: &TrainConfig = &config.train;
    let model_cfg = ModelConfig {
        feature_dim: features.cols(),
        hidden: tc.hidden,
        layers: tc.layers,
        n_bases: config.n_bases.unwrap_or_else(|| ModelConfig::default_bases(built.graph.num_relations())),
        activation: tc.activation,
        dropout: tc.dropout,
    };
    let model = RgcnModel::new(model_cfg, &built.graph, tc.seed)?;
    let (model, history) = rgcn::train(model, &built.graph, &features, &built.targets, &split, tc)?;
    Ok(FittedModel { model, encoder, built, features, split, history })
}
