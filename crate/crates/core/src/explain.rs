//! Mask-based post-hoc explanations of R-GCN predictions.
//!
//! For one contract node the explainer learns a sigmoid mask over the edges
//! of its computation subgraph and over the feature columns, minimizing
//!
//! ```text
//! L = ((y_masked - y_full) / target_std)^2 + l1 * sum(s) + entropy * sum(H(s))
//! ```
//!
//! where `s = sigmoid(logit)` and `H` is the binary entropy. Edges outside
//! the subgraph keep weight 1. The fidelity term is measured on the model's
//! standardized scale so the regularizers weigh the same for any target unit.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::graph::{HeteroGraph, NodeId, NodeKind};
use crate::ingest::FeatureMatrix;
use crate::rgcn::{Masks, Matrix, Mode, OptimizerKind, RgcnError, RgcnModel};

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error("node {0} is not a contract node")]
    NotContract(usize),
    #[error("node {0} is not in the graph")]
    UnknownNode(usize),
    #[error("no explanations to rank")]
    Empty,
    #[error("non-finite mask objective for node {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Model(#[from] RgcnError),
}

pub type Result<T> = std::result::Result<T, ExplainError>;

const LR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub l1: f64,
    pub entropy: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Stop once the objective changes by less than this between steps.
    pub tolerance: f64,
    pub init_logit: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            l1: 0.05,
            entropy: 0.1,
            optimizer: OptimizerKind::Sgd,
            learning_rate: LR,
            max_steps: 200,
            tolerance: 1e-7,
            init_logit: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: String,
    pub logit: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    /// Index into `HeteroGraph::edges`.
    pub edge: usize,
    pub u: NodeId,
    pub v: NodeId,
    pub relation: String,
    pub logit: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub contract_id: String,
    pub node: NodeId,
    pub prediction: f64,
    pub masked_prediction: f64,
    /// `|masked_prediction - prediction|`
    pub fidelity: f64,
    /// Mean mask value over edges and features.
    pub sparsity: f64,
    pub objective: f64,
    pub steps: usize,
    pub feature_scores: Vec<FeatureScore>,
    pub edge_scores: Vec<EdgeScore>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn entropy(s: f64) -> f64 {
    let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    h(s) + h(1.0 - s)
}

/// Hop distance from `u`, explored up to `max_hops`; farther nodes get
/// `usize::MAX`.
fn hop_distances(graph: &HeteroGraph, u: NodeId, max_hops: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; graph.num_nodes()];
    dist[u.index()] = 0;
    let mut queue = VecDeque::from([u.index()]);
    while let Some(a) = queue.pop_front() {
        if dist[a] >= max_hops {
            continue;
        }
        for &b in &graph.homo_view()[a] {
            if dist[b.index()] == usize::MAX {
                dist[b.index()] = dist[a] + 1;
                queue.push_back(b.index());
            }
        }
    }
    dist
}

/// Edges whose messages can reach `u` through `hops` layers, in edge order.
pub fn computation_edges(graph: &HeteroGraph, u: NodeId, hops: usize) -> Vec<usize> {
    if hops == 0 {
        return Vec::new();
    }
    // an edge matters when an endpoint is within hops - 1 of u
    let dist = hop_distances(graph, u, hops - 1);
    graph
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| dist[e.u.index()] < hops || dist[e.v.index()] < hops)
        .map(|(i, _)| i)
        .collect()
}

struct Objective {
    loss: f64,
    pred: f64,
    dedge: Vec<f64>,
    dfeat: Vec<f64>,
}

/// Learns edge and feature masks explaining the prediction at contract `u`.
pub fn explain_node(
    model: &RgcnModel,
    graph: &HeteroGraph,
    features: &FeatureMatrix,
    u: NodeId,
    config: &ExplainConfig,
) -> Result<Explanation> {
    if u.index() >= graph.num_nodes() {
        return Err(ExplainError::UnknownNode(u.index()));
    }
    if graph.kind(u) != NodeKind::Contract {
        return Err(ExplainError::NotContract(u.index()));
    }
    // The prediction at u only depends on nodes within `layers` hops, and
    // that induced subgraph keeps the full neighbor sets of every node
    // closer than that, so the masked objective is evaluated on it alone.
    let hops = model.config.layers;
    let dist = hop_distances(graph, u, hops);
    let (sub, origin) = graph.induced(|v| dist[v.index()] <= hops);
    let su = NodeId(origin.iter().position(|&v| v == u).expect("u is in its own neighborhood"));
    let mut x = Matrix::zeros(origin.len(), features.cols());
    for (i, &v) in origin.iter().enumerate() {
        x.row_mut(i).copy_from_slice(features.row(v.index()));
    }
    let bound = model.bind(&sub);
    let y_full = model.forward(&bound, &x, Mode::Eval, Masks::default())?.pred[su.index()];

    // subgraph edges keep the relative order of the originals
    let sub_to_graph: Vec<usize> = graph
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| dist[e.u.index()] <= hops && dist[e.v.index()] <= hops)
        .map(|(i, _)| i)
        .collect();
    let edges: Vec<usize> = sub
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            let near = |v: NodeId| dist[origin[v.index()].index()] < hops;
            (near(e.u) || near(e.v)) && model.relations.iter().any(|r| r == sub.relation_label(e.relation))
        })
        .map(|(i, _)| i)
        .collect();
    let n_feat = x.cols();
    let mut edge_logits = Matrix::from_vec(1, edges.len(), vec![config.init_logit; edges.len()]);
    let mut feat_logits = Matrix::from_vec(1, n_feat, vec![config.init_logit; n_feat]);
    let std = model.target_std;

    let evaluate = |el: &Matrix, fl: &Matrix| -> Result<Objective> {
        let mut weights = vec![1.0; sub.num_edges()];
        for (&e, &m) in edges.iter().zip(el.as_slice()) {
            weights[e] = sigmoid(m);
        }
        let scale: Vec<f64> = fl.as_slice().iter().map(|&m| sigmoid(m)).collect();
        let masks = Masks { edge_weights: Some(&weights), feature_scale: Some(&scale) };
        let cache = model.forward(&bound, &x, Mode::Eval, masks)?;
        let pred = cache.pred[su.index()];
        let diff = (pred - y_full) / std;
        let mut loss = diff * diff;
        let mut dpred = vec![0.0; bound.num_nodes()];
        dpred[su.index()] = 2.0 * diff / std;
        let grads = model.backward(&bound, &cache, masks, &dpred, true);
        let dw = grads.edge_weights.unwrap_or_default();
        let ds = grads.feature_scale.unwrap_or_default();

        let mut chain = |m: f64, g: f64| {
            let s = sigmoid(m);
            loss += config.l1 * s + config.entropy * entropy(s);
            // dH/ds = ln((1 - s) / s) = -m, exact so that an entry with no
            // fidelity gradient sits still where the two penalties balance
            let dreg = config.l1 - config.entropy * m;
            (g + dreg) * s * (1.0 - s)
        };
        let dedge = edges.iter().zip(el.as_slice()).map(|(&e, &m)| chain(m, dw[e])).collect();
        let dfeat = fl.as_slice().iter().zip(&ds).map(|(&m, &g)| chain(m, g)).collect();
        Ok(Objective { loss, pred, dedge, dfeat })
    };

    let mut opt = config.optimizer.build(config.learning_rate, &[(1, edges.len()), (1, n_feat)]);
    let mut prev = f64::INFINITY;
    let mut steps = 0;
    while steps < config.max_steps {
        let obj = evaluate(&edge_logits, &feat_logits)?;
        if !obj.loss.is_finite() {
            return Err(ExplainError::NonFinite(u.index()));
        }
        if (prev - obj.loss).abs() < config.tolerance {
            break;
        }
        prev = obj.loss;
        let grads = [Matrix::from_vec(1, edges.len(), obj.dedge), Matrix::from_vec(1, n_feat, obj.dfeat)];
        opt.step(&mut [&mut edge_logits, &mut feat_logits], &grads);
        steps += 1;
    }
    let last = evaluate(&edge_logits, &feat_logits)?;

    let feature_scores: Vec<FeatureScore> = features
        .names
        .iter()
        .zip(feat_logits.as_slice())
        .map(|(name, &m)| FeatureScore { feature: name.clone(), logit: m, score: sigmoid(m) })
        .collect();
    let edge_scores: Vec<EdgeScore> = edges
        .iter()
        .zip(edge_logits.as_slice())
        .map(|(&e, &m)| {
            let e = sub_to_graph[e];
            let edge = &graph.edges()[e];
            EdgeScore {
                edge: e,
                u: edge.u,
                v: edge.v,
                relation: graph.relation_label(edge.relation).to_string(),
                logit: m,
                score: sigmoid(m),
            }
        })
        .collect();
    let total = edge_scores.len() + feature_scores.len();
    let sparsity = if total == 0 {
        0.0
    } else {
        (edge_scores.iter().map(|e| e.score).sum::<f64>() + feature_scores.iter().map(|f| f.score).sum::<f64>())
            / total as f64
    };
    Ok(Explanation {
        contract_id: graph.label(u).to_string(),
        node: u,
        prediction: y_full,
        masked_prediction: last.pred,
        fidelity: (last.pred - y_full).abs(),
        sparsity,
        objective: last.loss,
        steps,
        feature_scores,
        edge_scores,
    })
}

/// Explains every node in `nodes`, in order, in parallel.
pub fn explain_nodes(
    model: &RgcnModel,
    graph: &HeteroGraph,
    features: &FeatureMatrix,
    nodes: &[NodeId],
    config: &ExplainConfig,
) -> Result<Vec<Explanation>> {
    use rayon::prelude::*;
    nodes.par_iter().map(|&u| explain_node(model, graph, features, u, config)).collect()
}

/// Sorts descending by score, then ascending by key.
fn ranked<K: Ord>(mut items: Vec<(K, f64)>) -> Vec<(K, f64)> {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items
}

/// Mean feature score per column across explanations.
pub fn rank_node_features(explanations: &[Explanation]) -> Result<Vec<(String, f64)>> {
    let first = explanations.first().ok_or(ExplainError::Empty)?;
    let mut sums: Vec<(String, f64)> = first.feature_scores.iter().map(|f| (f.feature.clone(), 0.0)).collect();
    for ex in explanations {
        for (acc, f) in sums.iter_mut().zip(&ex.feature_scores) {
            acc.1 += f.score;
        }
    }
    let n = explanations.len() as f64;
    Ok(ranked(sums.into_iter().map(|(k, s)| (k, s / n)).collect()))
}

/// Entity kinds an edge is attributed to. Entity-entity edges count for
/// both endpoint kinds.
fn edge_kinds(graph: &HeteroGraph, e: &EdgeScore) -> Vec<NodeKind> {
    let mut kinds: Vec<NodeKind> = [graph.kind(e.u), graph.kind(e.v)].into_iter().filter(|k| k.is_entity()).collect();
    kinds.dedup();
    kinds
}

/// Mean edge score grouped by the entity kind at the edge's endpoints.
pub fn rank_edge_importance_by_type(explanations: &[Explanation], graph: &HeteroGraph) -> Result<Vec<(NodeKind, f64)>> {
    if explanations.is_empty() {
        return Err(ExplainError::Empty);
    }
    let mut acc: BTreeMap<NodeKind, (f64, usize)> = BTreeMap::new();
    for e in explanations.iter().flat_map(|ex| &ex.edge_scores) {
        for kind in edge_kinds(graph, e) {
            let a = acc.entry(kind).or_default();
            a.0 += e.score;
            a.1 += 1;
        }
    }
    Ok(ranked(acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()))
}

/// Per entity kind, the `top_k` entities by mean score of their incident
/// masked edges. Ties are broken by label in lexicographic order.
pub fn rank_entities(
    explanations: &[Explanation],
    graph: &HeteroGraph,
    top_k: usize,
) -> Result<BTreeMap<NodeKind, Vec<(String, f64)>>> {
    if explanations.is_empty() {
        return Err(ExplainError::Empty);
    }
    let mut acc: BTreeMap<NodeId, (f64, usize)> = BTreeMap::new();
    for e in explanations.iter().flat_map(|ex| &ex.edge_scores) {
        for node in [e.u, e.v] {
            if graph.kind(node).is_entity() {
                let a = acc.entry(node).or_default();
                a.0 += e.score;
                a.1 += 1;
            }
        }
    }
    let mut by_kind: BTreeMap<NodeKind, Vec<(String, f64)>> = BTreeMap::new();
    for (node, (s, n)) in acc {
        by_kind.entry(graph.kind(node)).or_default().push((graph.label(node).to_string(), s / n as f64));
    }
    Ok(by_kind
        .into_iter()
        .map(|(k, v)| {
            let mut v = ranked(v);
            v.truncate(top_k);
            (k, v)
        })
        .collect())
}
