use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{features_to_matrix, Mode};
use super::{mse_loss, Activation, Matrix, OptimizerKind, Result, RgcnError, RgcnModel};
use crate::graph::{HeteroGraph, NodeId};
use crate::ingest::FeatureMatrix;

pub const HIDDEN_CHOICES: [usize; 5] = [16, 32, 64, 128, 256];
pub const LR_RANGE: (f64, f64) = (1e-6, 1e-2);
pub const LAYER_RANGE: (usize, usize) = (1, 5);
pub const MAX_DROPOUT: f64 = 0.5;

/// Optimization settings plus the searched architecture choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-3,
            optimizer: OptimizerKind::Adam,
            max_epochs: 500,
            patience: 30,
            dropout: 0.0,
            hidden: 32,
            layers: 2,
            activation: Activation::Elu,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RgcnError::Config(m));
        if !(LR_RANGE.0..=LR_RANGE.1).contains(&self.learning_rate) {
            return bad(format!("learning rate {} outside [1e-6, 1e-2]", self.learning_rate));
        }
        if !(0.0..=MAX_DROPOUT).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 0.5]", self.dropout));
        }
        if !HIDDEN_CHOICES.contains(&self.hidden) {
            return bad(format!("hidden units {} not in {{16,32,64,128,256}}", self.hidden));
        }
        if !(LAYER_RANGE.0..=LAYER_RANGE.1).contains(&self.layers) {
            return bad(format!("layers {} outside [1, 5]", self.layers));
        }
        if !Activation::SEARCH.contains(&self.activation) {
            return bad(format!("activation {:?} not searchable", self.activation));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max_epochs and patience must be positive".into());
        }
        Ok(())
    }
}

/// Disjoint training and validation contract nodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSplit {
    pub train: Vec<NodeId>,
    pub val: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Validation MSE at `best_epoch` (training MSE when there is no
    /// validation set).
    pub best_loss: f64,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for e in &self.epochs {
            let val = e.val_mse.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", e.epoch, e.train_mse, val);
        }
        s
    }
}

fn node_vectors(n: usize, nodes: &[NodeId], targets: &BTreeMap<NodeId, f64>, t: &mut [f64]) -> Result<Vec<bool>> {
    let mut mask = vec![false; n];
    for &u in nodes {
        if u.index() >= n {
            return Err(RgcnError::Shape(format!("split node {} outside graph", u.index())));
        }
        t[u.index()] = *targets.get(&u).ok_or(RgcnError::MissingTarget(u.index()))?;
        mask[u.index()] = true;
    }
    Ok(mask)
}

/// Full-batch training with early stopping on validation MSE.
///
/// The target scale of the head is reset from the training targets, so the
/// network itself fits standardized spreads. Returns the parameters from
/// the best epoch.
pub fn train(
    mut model: RgcnModel,
    graph: &HeteroGraph,
    features: &FeatureMatrix,
    targets: &BTreeMap<NodeId, f64>,
    split: &TrainSplit,
    config: &TrainConfig,
) -> Result<(RgcnModel, History)> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(RgcnError::EmptyTrainSet);
    }
    let train_set: BTreeSet<NodeId> = split.train.iter().copied().collect();
    if let Some(u) = split.val.iter().find(|u| train_set.contains(u)) {
        return Err(RgcnError::SplitOverlap(u.index()));
    }
    let n = graph.num_nodes();
    let mut t = vec![0.0; n];
    let train_mask = node_vectors(n, &split.train, targets, &mut t)?;
    let val_mask = node_vectors(n, &split.val, targets, &mut t)?;
    let has_val = !split.val.is_empty();

    let ys: Vec<f64> = split.train.iter().map(|u| targets[u]).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
    model.target_mean = mean;
    model.target_std = if std > 0.0 { std } else { 1.0 };
    model.config.dropout = config.dropout;

    let bound = model.bind(graph);
    let x: Matrix = features_to_matrix(features);
    let shapes: Vec<(usize, usize)> = model.params().iter().map(|p| p.value.shape()).collect();
    let mut opt = config.optimizer.build(config.learning_rate, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d0d0);

    let mut epochs = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut wait = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        let (_, grads) = model.loss_and_gradients_mode(&bound, &x, &t, &train_mask, Mode::Train(&mut rng))?;
        {
            let mut params: Vec<&mut Matrix> = model.params_mut().iter_mut().map(|p| &mut p.value).collect();
            opt.step(&mut params, &grads.params);
        }
        let pred = model.predict_all(&bound, &x)?;
        let train_mse = mse_loss(&pred, &t, &train_mask)?;
        let val_mse = if has_val { Some(mse_loss(&pred, &t, &val_mask)?) } else { None };
        let monitored = val_mse.unwrap_or(train_mse);
        if !monitored.is_finite() {
            return Err(RgcnError::NonFinite("loss".into()));
        }
        epochs.push(EpochLog { epoch, train_mse, val_mse });
        if monitored < best.0 {
            best = (monitored, epoch, model.clone());
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_loss, best_epoch, best_model) = best;
    Ok((best_model, History { epochs, best_epoch, best_loss, stopped_early }))
}
