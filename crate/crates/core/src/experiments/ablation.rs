use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, ExperimentError, Fold, Result, RidgeModel, SplitKind, SplitPlan};
use crate::graph::{dedup_key, HeteroGraph, NodeId, NodeKind};
use crate::ingest::{attach_features, build_graph, ContractRecord, EncoderOptions, FeatureEncoder, FeatureMatrix};
use crate::rgcn::{self, ModelConfig, RgcnModel, TrainConfig, TrainSplit};
use crate::topology::{centralities, topo_features};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    WithTopo,
    WithoutTopo,
    BaselineLinear,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::WithTopo, Arm::WithoutTopo, Arm::BaselineLinear];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::WithTopo => "with_topo",
            Arm::WithoutTopo => "without_topo",
            Arm::BaselineLinear => "baseline_linear",
        }
    }
}

impl FromStr for Arm {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "baseline" {
            return Ok(Arm::BaselineLinear);
        }
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown arm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Basis count; `min(4, |R|)` when unset.
    pub n_bases: Option<usize>,
    pub ridge_lambda: f64,
    pub katz_beta: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { train: TrainConfig::default(), n_bases: None, ridge_lambda: 1.0, katz_beta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub contract_id: String,
    pub y: f64,
    pub y_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub r2: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_mse: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub predictions: Vec<PredictionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub index: usize,
    pub test_year: Option<i32>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Test contracts dropped because they reference an entity the
    /// training years never saw.
    pub new_entity_contracts: Vec<String>,
    pub arms: Vec<ArmResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditItem {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageCheck {
    pub fold: usize,
    pub passed: bool,
    pub items: Vec<AuditItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmAverage {
    pub arm: Arm,
    pub mean_r2: Option<f64>,
    pub n_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentStamp {
    pub version: String,
    pub os: String,
    pub arch: String,
}

impl EnvironmentStamp {
    pub fn current() -> Self {
        EnvironmentStamp {
            version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
        }
    }
}

/// Per-fold, per-arm R^2 with averages. Contains no timings, so equal
/// inputs give byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: SplitKind,
    pub seed: u64,
    pub n_contracts: usize,
    pub config: ExperimentConfig,
    pub arms: Vec<Arm>,
    pub folds: Vec<FoldResult>,
    pub averages: Vec<ArmAverage>,
    /// Some fold or arm failed; its error is in the fold entry.
    pub partial: bool,
    pub leakage: Vec<LeakageCheck>,
    pub environment: EnvironmentStamp,
}

impl ExperimentReport {
    pub fn mean_r2(&self, arm: Arm) -> Option<f64> {
        self.averages.iter().find(|a| a.arm == arm).and_then(|a| a.mean_r2)
    }

    pub fn leakage_passed(&self) -> bool {
        self.leakage.iter().all(|c| c.passed)
    }

    /// `contract_id,y,y_hat` for one fold and arm.
    pub fn predictions_csv(&self, fold: usize, arm: Arm) -> Option<String> {
        let res = self.folds.get(fold)?.arms.iter().find(|a| a.arm == arm)?;
        let mut s = String::from("contract_id,y,y_hat\n");
        for p in &res.predictions {
            s.push_str(&format!("{},{},{}\n", p.contract_id, p.y, p.y_hat));
        }
        Some(s)
    }
}

/// Mean over folds in fold order, counting only folds with a value.
pub fn fold_mean(values: &[Option<f64>]) -> (Option<f64>, usize) {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        (None, 0)
    } else {
        (Some(present.iter().sum::<f64>() / present.len() as f64), present.len())
    }
}

/// Everything one fold needs, computed from training-visible data.
pub(crate) struct PreparedFold {
    pub train_graph: HeteroGraph,
    /// Graph used at inference: equal to `train_graph` for OOS folds, the
    /// training graph plus admissible test contracts for OOT folds.
    pub infer_graph: HeteroGraph,
    pub train_targets: BTreeMap<NodeId, f64>,
    pub split: TrainSplit,
    pub test: Vec<(String, NodeId, f64)>,
    pub new_entity: Vec<String>,
    /// Records of every contract in `train_graph`.
    pub graph_records: Vec<ContractRecord>,
    /// Records of every contract in `infer_graph`.
    pub infer_records: Vec<ContractRecord>,
    /// Training and inference share one graph.
    pub transductive: bool,
    /// Training-visible records (train and validation contracts).
    pub train_records: Vec<ContractRecord>,
    pub fit_records: Vec<ContractRecord>,
    pub test_records: Vec<ContractRecord>,
    pub graph_encoder: FeatureEncoder,
    pub topo_train: FeatureMatrix,
    pub topo_infer: FeatureMatrix,
}

fn lookup<'a>(by_id: &HashMap<&str, &'a ContractRecord>, id: &str) -> Result<&'a ContractRecord> {
    by_id.get(id).copied().ok_or_else(|| ExperimentError::Split(format!("unknown contract id {id:?}")))
}

fn contract_node(g: &HeteroGraph, id: &str) -> Result<NodeId> {
    g.find(NodeKind::Contract, id).ok_or_else(|| ExperimentError::Split(format!("contract {id:?} missing from graph")))
}

/// Topological block of `train_graph`, carried over to `infer` by entity
/// key (entities unknown to the training graph get zeros).
fn topo_blocks(
    train_graph: &HeteroGraph,
    infer_graph: &HeteroGraph,
    katz_beta: Option<f64>,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let table = centralities(train_graph.homo_view(), katz_beta)?;
    let train = topo_features(train_graph, &table);
    let mut infer = FeatureMatrix::zeros(infer_graph.num_nodes(), train.names.clone());
    for u in infer_graph.node_ids() {
        if let Some(src) = train_graph.find(infer_graph.kind(u), infer_graph.label(u)) {
            infer.row_mut(u.index()).copy_from_slice(train.row(src.index()));
        }
    }
    Ok((train, infer))
}

pub(crate) fn prepare_fold(
    records: &[ContractRecord],
    kind: SplitKind,
    fold: &Fold,
    config: &ExperimentConfig,
) -> Result<PreparedFold> {
    let by_id: HashMap<&str, &ContractRecord> = records.iter().map(|r| (r.contract_id.as_str(), r)).collect();
    let train_ids: BTreeSet<&str> = fold.train.iter().map(String::as_str).collect();
    let val_ids: BTreeSet<&str> = fold.val.iter().map(String::as_str).collect();
    let fit_records: Vec<ContractRecord> =
        fold.train.iter().map(|id| lookup(&by_id, id).cloned()).collect::<Result<_>>()?;
    if fit_records.is_empty() {
        return Err(ExperimentError::Split(format!("fold {} has no training contracts", fold.index)));
    }
    let fit_refs: Vec<&ContractRecord> = fit_records.iter().collect();
    let graph_encoder = FeatureEncoder::fit(&fit_refs, EncoderOptions::default())?;

    // training-visible records in input order
    let visible: Vec<ContractRecord> = records
        .iter()
        .filter(|r| train_ids.contains(r.contract_id.as_str()) || val_ids.contains(r.contract_id.as_str()))
        .cloned()
        .collect();

    let (train_graph, infer_graph, test_records, new_entity, infer_records) = match kind {
        SplitKind::Oos => {
            let built = build_graph(records)?;
            let tests: Vec<ContractRecord> =
                fold.test.iter().map(|id| lookup(&by_id, id).cloned()).collect::<Result<_>>()?;
            (built.graph.clone(), built.graph, tests, Vec::new(), records.to_vec())
        }
        SplitKind::Oot => {
            let train_graph = build_graph(&visible)?.graph;
            let mut admissible = Vec::new();
            let mut flagged = Vec::new();
            for id in &fold.test {
                let rec = lookup(&by_id, id)?;
                let known = crate::ingest::record_entities(rec)
                    .into_iter()
                    .all(|(k, label)| train_graph.find(k, label).is_some());
                if known {
                    admissible.push(rec.clone());
                } else {
                    flagged.push(id.clone());
                }
            }
            let mut all = visible.clone();
            all.extend(admissible.iter().cloned());
            let infer_graph = build_graph(&all)?.graph;
            (train_graph, infer_graph, admissible, flagged, all)
        }
    };

    let mut train_targets = BTreeMap::new();
    let mut split = TrainSplit::default();
    for id in &fold.train {
        let u = contract_node(&train_graph, id)?;
        train_targets.insert(u, lookup(&by_id, id)?.spread_premium);
        split.train.push(u);
    }
    for id in &fold.val {
        let u = contract_node(&train_graph, id)?;
        train_targets.insert(u, lookup(&by_id, id)?.spread_premium);
        split.val.push(u);
    }
    let test = test_records
        .iter()
        .map(|r| Ok((r.contract_id.clone(), contract_node(&infer_graph, &r.contract_id)?, r.spread_premium)))
        .collect::<Result<Vec<_>>>()?;
    let (topo_train, topo_infer) = topo_blocks(&train_graph, &infer_graph, config.katz_beta)?;

    Ok(PreparedFold {
        train_graph,
        infer_graph,
        train_targets,
        split,
        test,
        new_entity,
        transductive: kind == SplitKind::Oos,
        graph_records: if kind == SplitKind::Oos { records.to_vec() } else { visible.clone() },
        infer_records,
        train_records: visible,
        fit_records,
        test_records,
        graph_encoder,
        topo_train,
        topo_infer,
    })
}

pub(crate) fn test_r2_of(predictions: &[PredictionRow]) -> Result<f64> {
    let y: Vec<f64> = predictions.iter().map(|p| p.y).collect();
    let yh: Vec<f64> = predictions.iter().map(|p| p.y_hat).collect();
    Ok(rgcn::r2_score(&yh, &y)?)
}

/// Trains one arm on a prepared fold. `seed` fixes initialization and
/// dropout; both graph arms of a fold receive the same seed.
pub(crate) fn run_arm(p: &PreparedFold, arm: Arm, config: &ExperimentConfig, seed: u64) -> ArmResult {
    let outcome = match arm {
        Arm::BaselineLinear => run_baseline(p, config.ridge_lambda).map(|preds| (preds, None, None)),
        Arm::WithTopo | Arm::WithoutTopo => run_rgcn(p, arm == Arm::WithTopo, config, seed)
            .map(|(preds, h)| (preds, Some(h.best_epoch), Some(h.best_loss))),
    };
    match outcome.and_then(|(preds, epoch, loss)| Ok((test_r2_of(&preds)?, preds, epoch, loss))) {
        Ok((r2, predictions, best_epoch, best_val_mse)) => {
            ArmResult { arm, r2: Some(r2), best_epoch, best_val_mse, error: None, predictions }
        }
        Err(e) => ArmResult {
            arm,
            r2: None,
            best_epoch: None,
            best_val_mse: None,
            error: Some(e.to_string()),
            predictions: Vec::new(),
        },
    }
}

pub(crate) fn run_rgcn(
    p: &PreparedFold,
    with_topo: bool,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<PredictionRow>, rgcn::History)> {
    let (topo_train, topo_infer) = if with_topo { (Some(&p.topo_train), Some(&p.topo_infer)) } else { (None, None) };
    // OOS folds train on the whole graph: every record is graph-visible
    let x_train = attach_features(&p.train_graph, &p.graph_records, &p.graph_encoder, topo_train)?;
    let x_infer = if p.transductive {
        x_train.clone()
    } else {
        attach_features(&p.infer_graph, &p.infer_records, &p.graph_encoder, topo_infer)?
    };

    let tc = TrainConfig { seed, ..config.train.clone() };
    let n_rel = p.train_graph.num_relations();
    let model_cfg = ModelConfig {
        feature_dim: x_train.cols(),
        hidden: tc.hidden,
        layers: tc.layers,
        n_bases: config.n_bases.unwrap_or_else(|| ModelConfig::default_bases(n_rel)),
        activation: tc.activation,
        dropout: tc.dropout,
    };
    let model = RgcnModel::new(model_cfg, &p.train_graph, seed)?;
    let (model, history) = rgcn::train(model, &p.train_graph, &x_train, &p.train_targets, &p.split, &tc)?;
    let pred = model.predict(&p.infer_graph, &x_infer)?;
    let rows =
        p.test.iter().map(|(id, u, y)| PredictionRow { contract_id: id.clone(), y: *y, y_hat: pred[u] }).collect();
    Ok((rows, history))
}

fn run_baseline(p: &PreparedFold, lambda: f64) -> Result<Vec<PredictionRow>> {
    let fit: Vec<&ContractRecord> = p.fit_records.iter().collect();
    let encoder = FeatureEncoder::fit(&fit, EncoderOptions { tabular: true })?;
    // ridge has no early stopping, so validation contracts join the fit
    let train = &p.train_records;
    let x = encoder.encode_records(train)?;
    let rows: Vec<&[f64]> = (0..x.rows).map(|i| x.row(i)).collect();
    let y: Vec<f64> = train.iter().map(|r| r.spread_premium).collect();
    let model = RidgeModel::fit(&rows, &y, lambda)?;
    let test = &p.test_records;
    let xt = encoder.encode_records(test)?;
    Ok(test
        .iter()
        .enumerate()
        .map(|(i, r)| PredictionRow {
            contract_id: r.contract_id.clone(),
            y: r.spread_premium,
            y_hat: model.predict(xt.row(i)),
        })
        .collect())
}

/// Recomputes the training-visible inputs of a fold from the raw records
/// by an independent route and checks they match what the fold used.
pub(crate) fn audit_fold(
    records: &[ContractRecord],
    kind: SplitKind,
    fold: &Fold,
    p: &PreparedFold,
    config: &ExperimentConfig,
) -> Result<LeakageCheck> {
    let mut items = Vec::new();
    let mut check = |name: &str, passed: bool| items.push(AuditItem { name: name.to_string(), passed });
    let test_ids: BTreeSet<&str> = fold.test.iter().map(String::as_str).collect();
    let train_ids: BTreeSet<&str> = fold.train.iter().map(String::as_str).collect();
    let val_ids: BTreeSet<&str> = fold.val.iter().map(String::as_str).collect();
    check(
        "splits_disjoint",
        train_ids.is_disjoint(&test_ids) && val_ids.is_disjoint(&test_ids) && train_ids.is_disjoint(&val_ids),
    );
    let target_ids: BTreeSet<String> =
        p.train_targets.keys().map(|&u| dedup_key(NodeKind::Contract, p.train_graph.label(u)).1).collect();
    check(
        "test_targets_excluded",
        fold.test.iter().all(|id| !target_ids.contains(&dedup_key(NodeKind::Contract, id).1)),
    );

    // encoder statistics recomputed with every test, validation and later record removed
    let cutoff = fold.test_year.unwrap_or(i32::MAX);
    let without_test: Vec<&ContractRecord> = records
        .iter()
        .filter(|r| !test_ids.contains(r.contract_id.as_str()) && !val_ids.contains(r.contract_id.as_str()))
        .filter(|r| kind == SplitKind::Oos || r.issue_year < cutoff)
        .collect();
    let refit = FeatureEncoder::fit(&without_test, EncoderOptions::default())?;
    check("encoder_train_only", refit == p.graph_encoder);

    if kind == SplitKind::Oot {
        let y = fold.test_year.ok_or_else(|| ExperimentError::Split("out-of-time fold without a test year".into()))?;
        let earlier: Vec<ContractRecord> = records.iter().filter(|r| r.issue_year < y).cloned().collect();
        let g = build_graph(&earlier)?.graph;
        check(
            "train_graph_prior_years",
            g.num_nodes() == p.train_graph.num_nodes()
                && g.num_edges() == p.train_graph.num_edges()
                && g.to_json() == p.train_graph.to_json(),
        );
        let table = centralities(g.homo_view(), config.katz_beta)?;
        let topo = topo_features(&g, &table);
        check("topology_prior_years", topo == p.topo_train);
        check(
            "inference_topology_frozen",
            p.infer_graph.node_ids().all(|u| match g.find(p.infer_graph.kind(u), p.infer_graph.label(u)) {
                Some(v) => p.topo_infer.row(u.index()) == topo.row(v.index()),
                None => p.topo_infer.row(u.index()).iter().all(|&x| x == 0.0),
            }),
        );
    }
    let passed = items.iter().all(|i| i.passed);
    Ok(LeakageCheck { fold: fold.index, passed, items })
}

/// Trains every arm on every fold and assembles the report. Jobs run on
/// the current rayon pool; results are merged by fold and arm order.
pub fn run_ablation(
    records: &[ContractRecord],
    plan: &SplitPlan,
    arms: &[Arm],
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    config.train.validate()?;
    if arms.is_empty() {
        return Err(ExperimentError::Config("no arms selected".into()));
    }
    let prepared: Vec<std::result::Result<PreparedFold, String>> =
        plan.folds.par_iter().map(|f| prepare_fold(records, plan.kind, f, config).map_err(|e| e.to_string())).collect();

    let jobs: Vec<(usize, Arm)> = (0..plan.folds.len()).flat_map(|f| arms.iter().map(move |&a| (f, a))).collect();
    let results: Vec<ArmResult> = jobs
        .par_iter()
        .map(|&(f, arm)| match &prepared[f] {
            Ok(p) => run_arm(p, arm, config, derive_seed(config.train.seed, &[f as u64])),
            Err(e) => ArmResult {
                arm,
                r2: None,
                best_epoch: None,
                best_val_mse: None,
                error: Some(e.clone()),
                predictions: Vec::new(),
            },
        })
        .collect();
    let leakage: Vec<LeakageCheck> = plan
        .folds
        .par_iter()
        .zip(&prepared)
        .filter_map(|(f, p)| p.as_ref().ok().map(|p| (f, p)))
        .map(|(f, p)| audit_fold(records, plan.kind, f, p, config))
        .collect::<Result<_>>()?;

    let mut results = results.into_iter();
    let folds: Vec<FoldResult> = plan
        .folds
        .iter()
        .zip(&prepared)
        .map(|(f, p)| {
            let arms_out: Vec<ArmResult> = results.by_ref().take(arms.len()).collect();
            let (n_test, new_entity) = match p {
                Ok(p) => (p.test.len(), p.new_entity.clone()),
                Err(_) => (0, Vec::new()),
            };
            FoldResult {
                index: f.index,
                test_year: f.test_year,
                n_train: f.train.len(),
                n_val: f.val.len(),
                n_test,
                new_entity_contracts: new_entity,
                arms: arms_out,
            }
        })
        .collect();
    let averages = arms
        .iter()
        .map(|&arm| {
            let vals: Vec<Option<f64>> =
                folds.iter().map(|f| f.arms.iter().find(|a| a.arm == arm).and_then(|a| a.r2)).collect();
            let (mean_r2, n_folds) = fold_mean(&vals);
            ArmAverage { arm, mean_r2, n_folds }
        })
        .collect();
    let partial = folds.iter().any(|f| f.arms.iter().any(|a| a.error.is_some()));
    Ok(ExperimentReport {
        kind: plan.kind,
        seed: plan.seed,
        n_contracts: records.len(),
        config: config.clone(),
        arms: arms.to_vec(),
        folds,
        averages,
        partial,
        leakage,
        environment: EnvironmentStamp::current(),
    })
}
