//! R-GCN with basis decomposition and an affine regression head.
//!
//! Layer update for node `u`:
//!
//! ```text
//! h'_u = act( sum_r (1/|N_r(u)|) sum_{v in N_r(u)} W_r h_v  +  W_0 h_u )
//! W_r  = sum_b a_rb B_b
//! ```
//!
//! `W_r` is never formed. The forward pass first mixes the per-relation
//! neighbor means with the coefficients (`S_b = sum_r a_rb mean_r(h)`) and
//! then applies each basis once (`sum_b S_b B_b`).
//!
//! Input representations: entity nodes own a trainable embedding row and
//! every node's feature row goes through a shared projection, so
//! `h0_u = x_u P + e_u`. Contract rows carry contract features, entity rows
//! carry only the topological block, and contracts have no embedding.
//!
//! Gradients are exact reverse-mode through the whole stack, including
//! optional per-edge message weights and per-feature input scales used by
//! the explainer.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use super::{Result, RgcnError};
use crate::graph::{dedup_key, HeteroGraph, NodeId, NodeKind};
use crate::ingest::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "ReLU")]
    Relu,
    #[serde(rename = "LeakyReLU")]
    LeakyRelu,
    #[serde(rename = "ELU")]
    Elu,
    #[serde(rename = "GELU")]
    Gelu,
    Identity,
}

const LEAKY_SLOPE: f64 = 0.01;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Activation {
    /// Choices available to hyperparameter search.
    pub const SEARCH: [Activation; 4] = [Activation::Relu, Activation::LeakyRelu, Activation::Elu, Activation::Gelu];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Architecture of an [`RgcnModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    /// Width of every hidden representation, including `h0`.
    pub hidden: usize,
    /// Number of R-GCN layers `K`; 0 gives a linear model on `h0`.
    pub layers: usize,
    pub n_bases: usize,
    pub activation: Activation,
    /// Inverted dropout on the input of every R-GCN layer (training only).
    pub dropout: f64,
}

impl ModelConfig {
    pub fn default_bases(n_relations: usize) -> usize {
        n_relations.clamp(1, 4)
    }
}

/// Parameters of one layer: `B*d_in*d_out` basis entries, `|R|*B`
/// coefficients and a `d_in*d_out` self-loop weight.
pub fn layer_param_count(n_relations: usize, n_bases: usize, d_in: usize, d_out: usize) -> usize {
    n_bases * d_in * d_out + n_relations * n_bases + d_in * d_out
}

/// Same layer with one free matrix per relation.
pub fn untied_layer_param_count(n_relations: usize, d_in: usize, d_out: usize) -> usize {
    n_relations * d_in * d_out + d_in * d_out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgcnModel {
    pub config: ModelConfig,
    /// Relation labels, one coefficient row each.
    pub relations: Vec<String>,
    /// Embedded entities as deduplication keys, one embedding row each.
    pub entities: Vec<(NodeKind, String)>,
    /// Predictions are `target_mean + target_std * (w.z + b)`.
    pub target_mean: f64,
    pub target_std: f64,
    params: Vec<Param>,
}

/// Message weights and input scales applied during a forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct Masks<'a> {
    /// One weight per graph edge (index into `HeteroGraph::edges`), applied
    /// to the messages in both directions.
    pub edge_weights: Option<&'a [f64]>,
    /// One multiplier per feature column.
    pub feature_scale: Option<&'a [f64]>,
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// A graph resolved against a model's relation and entity registries.
#[derive(Debug, Clone)]
pub struct BoundGraph {
    n: usize,
    n_edges: usize,
    /// `[model relation][u]` -> `(v, edge index)`, sorted by `v`.
    adj: Vec<Vec<Vec<(usize, usize)>>>,
    entity_row: Vec<Option<usize>>,
    /// Graph relations with edges that the model has no coefficients for.
    pub unknown_relations: Vec<String>,
    /// Entity nodes without a trained embedding.
    pub unknown_entities: Vec<NodeId>,
}

impl BoundGraph {
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.n_edges
    }
}

struct LayerCache {
    input: Matrix,
    dropout_mask: Option<Matrix>,
    mixed: Vec<Matrix>,
    pre: Matrix,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    xs: Matrix,
    layers: Vec<LayerCache>,
    z: Matrix,
    /// Prediction for every node (only contract rows are meaningful).
    pub pred: Vec<f64>,
}

/// Gradients with the same layout as [`RgcnModel::params`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Matrix>,
    pub edge_weights: Option<Vec<f64>>,
    pub feature_scale: Option<Vec<f64>>,
}

pub fn features_to_matrix(f: &FeatureMatrix) -> Matrix {
    Matrix::from_vec(f.rows, f.cols(), f.data.clone())
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

impl RgcnModel {
    /// Fresh model for `graph`, registering all of its relations and entity
    /// nodes. Weights are uniform in `[-1/sqrt(d_in), 1/sqrt(d_in)]`.
    pub fn new(config: ModelConfig, graph: &HeteroGraph, seed: u64) -> Result<Self> {
        let relations = graph.relations().to_vec();
        let entities = graph
            .node_ids()
            .filter(|&u| graph.kind(u).is_entity())
            .map(|u| dedup_key(graph.kind(u), graph.label(u)))
            .collect();
        Self::with_registries(config, relations, entities, seed)
    }

    pub fn with_registries(
        config: ModelConfig,
        relations: Vec<String>,
        entities: Vec<(NodeKind, String)>,
        seed: u64,
    ) -> Result<Self> {
        if config.hidden == 0 || config.feature_dim == 0 {
            return Err(RgcnError::Config("hidden and feature dimensions must be positive".into()));
        }
        if config.layers > 0 && config.n_bases == 0 {
            return Err(RgcnError::Config("at least one basis matrix is required".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(RgcnError::Config(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden;
        let n_rel = relations.len();
        let bd = 1.0 / (d as f64).sqrt();
        let mut params = vec![
            Param {
                name: "projection".into(),
                value: uniform(&mut rng, config.feature_dim, d, 1.0 / (config.feature_dim as f64).sqrt()),
            },
            Param { name: "embedding".into(), value: uniform(&mut rng, entities.len(), d, bd) },
        ];
        for k in 0..config.layers {
            for b in 0..config.n_bases {
                params.push(Param { name: format!("layer{k}.basis{b}"), value: uniform(&mut rng, d, d, bd) });
            }
            params.push(Param {
                name: format!("layer{k}.coeff"),
                value: uniform(&mut rng, n_rel, config.n_bases, 1.0 / (config.n_bases as f64).sqrt()),
            });
            params.push(Param { name: format!("layer{k}.self"), value: uniform(&mut rng, d, d, bd) });
        }
        params.push(Param { name: "head.w".into(), value: uniform(&mut rng, d, 1, bd) });
        params.push(Param { name: "head.b".into(), value: Matrix::zeros(1, 1) });
        Ok(RgcnModel { config, relations, entities, target_mean: 0.0, target_std: 1.0, params })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        relations: Vec<String>,
        entities: Vec<(NodeKind, String)>,
        target_mean: f64,
        target_std: f64,
        params: Vec<Param>,
    ) -> Result<Self> {
        let template = Self::with_registries(config, relations, entities, 0)?;
        if template.params.len() != params.len() {
            return Err(RgcnError::Shape(format!(
                "expected {} parameter tensors, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (t, p) in template.params.iter().zip(&params) {
            if t.name != p.name || t.value.shape() != p.value.shape() {
                return Err(RgcnError::Shape(format!(
                    "parameter {} has shape {:?}, expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    t.name,
                    t.value.shape()
                )));
            }
        }
        Ok(RgcnModel { params, target_mean, target_std, ..template })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Parameter count of layer `k` (bases, coefficients, self-loop).
    pub fn layer_parameter_count(&self, k: usize) -> usize {
        let prefix = format!("layer{k}.");
        self.params.iter().filter(|p| p.name.starts_with(&prefix)).map(|p| p.value.len()).sum()
    }

    fn layer_base(&self, k: usize) -> usize {
        2 + k * (self.config.n_bases + 2)
    }

    fn head_index(&self) -> usize {
        2 + self.config.layers * (self.config.n_bases + 2)
    }

    pub fn bind(&self, graph: &HeteroGraph) -> BoundGraph {
        let n = graph.num_nodes();
        let rel_lookup: HashMap<&str, usize> =
            self.relations.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let entity_lookup: HashMap<&(NodeKind, String), usize> =
            self.entities.iter().enumerate().map(|(i, k)| (k, i)).collect();

        let mut adj = vec![vec![Vec::new(); n]; self.relations.len()];
        let mut unknown_relations = Vec::new();
        for (e, edge) in graph.edges().iter().enumerate() {
            let label = graph.relation_label(edge.relation);
            match rel_lookup.get(label) {
                Some(&r) => {
                    adj[r][edge.u.index()].push((edge.v.index(), e));
                    adj[r][edge.v.index()].push((edge.u.index(), e));
                }
                None => {
                    if !unknown_relations.iter().any(|l| l == label) {
                        unknown_relations.push(label.to_string());
                    }
                }
            }
        }
        for per_rel in &mut adj {
            for list in per_rel.iter_mut() {
                list.sort_unstable();
            }
        }
        let mut unknown_entities = Vec::new();
        let entity_row = graph
            .node_ids()
            .map(|u| {
                let kind = graph.kind(u);
                if !kind.is_entity() {
                    return None;
                }
                let row = entity_lookup.get(&dedup_key(kind, graph.label(u))).copied();
                if row.is_none() {
                    unknown_entities.push(u);
                }
                row
            })
            .collect();
        BoundGraph { n, n_edges: graph.num_edges(), adj, entity_row, unknown_relations, unknown_entities }
    }

    fn check_inputs(&self, bound: &BoundGraph, x: &Matrix, masks: &Masks) -> Result<()> {
        if x.rows() != bound.n || x.cols() != self.config.feature_dim {
            return Err(RgcnError::Shape(format!(
                "features are {:?}, model expects {}x{}",
                x.shape(),
                bound.n,
                self.config.feature_dim
            )));
        }
        if let Some(w) = masks.edge_weights {
            if w.len() != bound.n_edges {
                return Err(RgcnError::Shape(format!("{} edge weights for {} edges", w.len(), bound.n_edges)));
            }
        }
        if let Some(s) = masks.feature_scale {
            if s.len() != self.config.feature_dim {
                return Err(RgcnError::Shape(format!(
                    "{} feature scales for {} features",
                    s.len(),
                    self.config.feature_dim
                )));
            }
        }
        Ok(())
    }

    /// Relation-wise neighbor mean: row `u` is
    /// `(1/|N_r(u)|) sum_v w_uv h_v`.
    fn aggregate(bound: &BoundGraph, r: usize, h: &Matrix, weights: Option<&[f64]>) -> Matrix {
        let mut out = Matrix::zeros(h.rows(), h.cols());
        for (u, nbrs) in bound.adj[r].iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let inv = 1.0 / nbrs.len() as f64;
            let row = out.row_mut(u);
            for &(v, e) in nbrs {
                let w = weights.map_or(1.0, |w| w[e]) * inv;
                for (o, &x) in row.iter_mut().zip(h.row(v)) {
                    *o += w * x;
                }
            }
        }
        out
    }

    pub fn forward(
        &self,
        bound: &BoundGraph,
        x: &Matrix,
        mut mode: Mode<'_>,
        masks: Masks<'_>,
    ) -> Result<ForwardCache> {
        self.check_inputs(bound, x, &masks)?;
        let d = self.config.hidden;
        let xs = match masks.feature_scale {
            Some(s) => Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) * s[j]),
            None => x.clone(),
        };
        let mut h = xs.matmul(&self.params[0].value);
        let emb = &self.params[1].value;
        for (u, row) in bound.entity_row.iter().enumerate() {
            if let Some(row) = *row {
                for (o, &e) in h.row_mut(u).iter_mut().zip(emb.row(row)) {
                    *o += e;
                }
            }
        }

        let mut layers = Vec::with_capacity(self.config.layers);
        for k in 0..self.config.layers {
            let dropout_mask =
                match (&mut mode, self.config.dropout > 0.0) {
                    (Mode::Train(rng), true) => {
                        let keep = 1.0 - self.config.dropout;
                        let m = Matrix::from_fn(h.rows(), h.cols(), |_, _| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        for (a, b) in h.as_mut_slice().iter_mut().zip(m.as_slice()) {
                            *a *= b;
                        }
                        Some(m)
                    }
                    _ => None,
                };
            let base = self.layer_base(k);
            let nb = self.config.n_bases;
            let coeff = &self.params[base + nb].value;
            let mut mixed = vec![Matrix::zeros(bound.n, d); nb];
            for r in 0..self.relations.len() {
                let agg = Self::aggregate(bound, r, &h, masks.edge_weights);
                for (b, s) in mixed.iter_mut().enumerate() {
                    let a = coeff.get(r, b);
                    if a != 0.0 {
                        s.axpy(a, &agg);
                    }
                }
            }
            let mut pre = h.matmul(&self.params[base + nb + 1].value);
            for (b, s) in mixed.iter().enumerate() {
                pre.add_assign(&s.matmul(&self.params[base + b].value));
            }
            let act = self.config.activation;
            let out = pre.map(|v| act.apply(v));
            layers.push(LayerCache { input: h, dropout_mask, mixed, pre });
            h = out;
        }

        let hi = self.head_index();
        let w = &self.params[hi].value;
        let b = self.params[hi + 1].value.get(0, 0);
        let pred =
            (0..bound.n).map(|u| self.target_mean + self.target_std * (dot(h.row(u), w.as_slice()) + b)).collect();
        Ok(ForwardCache { xs, layers, z: h, pred })
    }

    /// Eval-mode predictions for every node.
    pub fn predict_all(&self, bound: &BoundGraph, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(bound, x, Mode::Eval, Masks::default())?.pred)
    }

    /// Eval-mode predictions for the contract nodes of `graph`.
    pub fn predict(&self, graph: &HeteroGraph, features: &FeatureMatrix) -> Result<BTreeMap<NodeId, f64>> {
        let bound = self.bind(graph);
        let pred = self.predict_all(&bound, &features_to_matrix(features))?;
        Ok(graph.node_ids().filter(|&u| graph.kind(u) == NodeKind::Contract).map(|u| (u, pred[u.index()])).collect())
    }

    /// Reverse pass given `dL/dpred` for every node.
    pub fn backward(
        &self,
        bound: &BoundGraph,
        cache: &ForwardCache,
        masks: Masks<'_>,
        dpred: &[f64],
        input_grads: bool,
    ) -> Gradients {
        let d = self.config.hidden;
        let nb = self.config.n_bases;
        let mut grads: Vec<Matrix> =
            self.params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        let mut dedge = if input_grads && masks.edge_weights.is_some() { Some(vec![0.0; bound.n_edges]) } else { None };

        let hi = self.head_index();
        let w = self.params[hi].value.as_slice();
        let mut dh = Matrix::zeros(bound.n, d);
        let mut db = 0.0;
        for u in 0..bound.n {
            let g = dpred[u] * self.target_std;
            if g == 0.0 {
                continue;
            }
            db += g;
            let zrow = cache.z.row(u);
            let gw = grads[hi].as_mut_slice();
            for i in 0..d {
                gw[i] += g * zrow[i];
            }
            for (o, &wi) in dh.row_mut(u).iter_mut().zip(w) {
                *o = g * wi;
            }
        }
        grads[hi + 1].set(0, 0, db);

        let act = self.config.activation;
        for k in (0..self.config.layers).rev() {
            let lc = &cache.layers[k];
            let base = self.layer_base(k);
            let mut dpre = dh;
            for (g, &p) in dpre.as_mut_slice().iter_mut().zip(lc.pre.as_slice()) {
                *g *= act.derivative(p);
            }
            for b in 0..nb {
                grads[base + b] = lc.mixed[b].t_matmul(&dpre);
            }
            grads[base + nb + 1] = lc.input.t_matmul(&dpre);
            let mut dinput = dpre.matmul_t(&self.params[base + nb + 1].value);
            let dmixed: Vec<Matrix> = (0..nb).map(|b| dpre.matmul_t(&self.params[base + b].value)).collect();

            let coeff = &self.params[base + nb].value;
            for r in 0..self.relations.len() {
                if bound.adj[r].iter().all(Vec::is_empty) {
                    continue;
                }
                let agg = Self::aggregate(bound, r, &lc.input, masks.edge_weights);
                let mut dagg = Matrix::zeros(bound.n, d);
                for b in 0..nb {
                    grads[base + nb].set(r, b, agg.dot(&dmixed[b]));
                    dagg.axpy(coeff.get(r, b), &dmixed[b]);
                }
                for (u, nbrs) in bound.adj[r].iter().enumerate() {
                    if nbrs.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / nbrs.len() as f64;
                    let g_u = dagg.row(u);
                    for &(v, e) in nbrs {
                        let wgt = masks.edge_weights.map_or(1.0, |w| w[e]) * inv;
                        if let Some(de) = dedge.as_mut() {
                            de[e] += inv * dot(g_u, lc.input.row(v));
                        }
                        for (o, &g) in dinput.row_mut(v).iter_mut().zip(g_u) {
                            *o += wgt * g;
                        }
                    }
                }
            }
            if let Some(m) = &lc.dropout_mask {
                for (g, &s) in dinput.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *g *= s;
                }
            }
            dh = dinput;
        }

        grads[0] = cache.xs.t_matmul(&dh);
        for (u, row) in bound.entity_row.iter().enumerate() {
            if let Some(row) = *row {
                for (o, &g) in grads[1].row_mut(row).iter_mut().zip(dh.row(u)) {
                    *o += g;
                }
            }
        }
        let dscale = match (input_grads, masks.feature_scale) {
            (true, Some(scale)) => {
                let dxs = dh.matmul_t(&self.params[0].value);
                Some(
                    (0..self.config.feature_dim)
                        .map(|j| {
                            if scale[j] == 0.0 {
                                // recover x from xs only where the scale is nonzero
                                0.0
                            } else {
                                (0..bound.n).map(|u| dxs.get(u, j) * cache.xs.get(u, j) / scale[j]).sum()
                            }
                        })
                        .collect(),
                )
            }
            _ => None,
        };

        Gradients { params: grads, edge_weights: dedge, feature_scale: dscale }
    }

    /// MSE over `mask`ed nodes and its parameter gradients, eval mode.
    pub fn loss_and_gradients(
        &self,
        bound: &BoundGraph,
        x: &Matrix,
        targets: &[f64],
        mask: &[bool],
    ) -> Result<(f64, Gradients)> {
        self.loss_and_gradients_mode(bound, x, targets, mask, Mode::Eval)
    }

    pub(crate) fn loss_and_gradients_mode(
        &self,
        bound: &BoundGraph,
        x: &Matrix,
        targets: &[f64],
        mask: &[bool],
        mode: Mode<'_>,
    ) -> Result<(f64, Gradients)> {
        let cache = self.forward(bound, x, mode, Masks::default())?;
        let loss = super::mse_loss(&cache.pred, targets, mask)?;
        let n = mask.iter().filter(|&&m| m).count() as f64;
        let dpred: Vec<f64> = cache
            .pred
            .iter()
            .zip(targets)
            .zip(mask)
            .map(|((p, t), &m)| if m { 2.0 * (p - t) / n } else { 0.0 })
            .collect();
        let grads = self.backward(bound, &cache, Masks::default(), &dpred, false);
        for (p, g) in self.params.iter().zip(&grads.params) {
            if !g.is_finite() {
                return Err(RgcnError::NonFinite(p.name.clone()));
            }
        }
        if !loss.is_finite() {
            return Err(RgcnError::NonFinite("loss".into()));
        }
        Ok((loss, grads))
    }
}

/// Gradients of the masked MSE for every model parameter.
pub fn backward(
    model: &RgcnModel,
    graph: &HeteroGraph,
    features: &FeatureMatrix,
    targets: &BTreeMap<NodeId, f64>,
    mask: &[NodeId],
) -> Result<Gradients> {
    let bound = model.bind(graph);
    let x = features_to_matrix(features);
    let mut t = vec![0.0; graph.num_nodes()];
    let mut m = vec![false; graph.num_nodes()];
    for &u in mask {
        t[u.index()] = *targets.get(&u).ok_or(RgcnError::MissingTarget(u.index()))?;
        m[u.index()] = true;
    }
    model.loss_and_gradients(&bound, &x, &t, &m).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, RelationId};

    fn small_graph(n: usize, rels: usize, seed: u64) -> HeteroGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = GraphBuilder::new();
        let rel: Vec<RelationId> = (0..rels).map(|i| b.relation(format!("rel{i}"))).collect();
        let ids: Vec<NodeId> = (0..n)
            .map(|i| {
                if i % 3 == 0 {
                    b.add_node(NodeKind::Contract, &format!("c{i}"))
                } else {
                    b.add_node(NodeKind::ENTITIES[i % 6], &format!("e{i}"))
                }
            })
            .collect();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < 0.35 {
                    b.add_edge(ids[u], rel[rng.random_range(0..rels)], ids[v]).unwrap();
                }
            }
        }
        b.freeze()
    }

    fn random_features(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn config(f: usize, d: usize, k: usize, nb: usize, act: Activation) -> ModelConfig {
        ModelConfig { feature_dim: f, hidden: d, layers: k, n_bases: nb, activation: act, dropout: 0.0 }
    }

    #[test]
    fn identity_weights_reduce_to_neighbor_mean() {
        let g = small_graph(8, 1, 3);
        let mut m = RgcnModel::new(config(3, 3, 1, 1, Activation::Identity), &g, 1).unwrap();
        *m.param_mut("projection").unwrap() = Matrix::identity(3);
        m.param_mut("embedding").unwrap().fill(0.0);
        *m.param_mut("layer0.basis0").unwrap() = Matrix::identity(3);
        m.param_mut("layer0.coeff").unwrap().fill(1.0);
        m.param_mut("layer0.self").unwrap().fill(0.0);
        let x = random_features(8, 3, 5);
        let bound = m.bind(&g);
        let cache = m.forward(&bound, &x, Mode::Eval, Masks::default()).unwrap();
        for u in g.node_ids() {
            let nb = g.neighbors(u, RelationId(0)).unwrap();
            for j in 0..3 {
                let expect = if nb.is_empty() {
                    0.0
                } else {
                    nb.iter().map(|v| x.get(v.index(), j)).sum::<f64>() / nb.len() as f64
                };
                assert!((cache.z.get(u.index(), j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let g = small_graph(8, 2, 4);
        let mut m = RgcnModel::new(config(3, 4, 2, 2, Activation::Elu), &g, 1).unwrap();
        for p in m.params_mut() {
            if p.name.starts_with("layer") {
                p.value.fill(0.0);
            }
        }
        let bound = m.bind(&g);
        let cache = m.forward(&bound, &random_features(8, 3, 1), Mode::Eval, Masks::default()).unwrap();
        assert!(cache.z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_gives_mean_plus_self() {
        let mut b = GraphBuilder::new();
        let r = b.relation("r");
        let ids: Vec<_> = (0..5).map(|i| b.add_node(NodeKind::Contract, &format!("c{i}"))).collect();
        for (u, v) in [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)] {
            b.add_edge(ids[u], r, ids[v]).unwrap();
        }
        let g = b.freeze();
        let mut m = RgcnModel::new(config(2, 2, 1, 1, Activation::Identity), &g, 0).unwrap();
        *m.param_mut("projection").unwrap() = Matrix::identity(2);
        *m.param_mut("layer0.basis0").unwrap() = Matrix::identity(2);
        m.param_mut("layer0.coeff").unwrap().fill(1.0);
        *m.param_mut("layer0.self").unwrap() = Matrix::identity(2);
        let x = Matrix::from_fn(5, 2, |_, _| 1.0);
        let bound = m.bind(&g);
        let cache = m.forward(&bound, &x, Mode::Eval, Masks::default()).unwrap();
        assert!(cache.z.as_slice().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn single_basis_matches_untied_gcn() {
        let g = small_graph(8, 3, 9);
        let mut m = RgcnModel::new(config(4, 3, 1, 1, Activation::Gelu), &g, 2).unwrap();
        m.param_mut("layer0.coeff").unwrap().fill(1.0);
        let x = random_features(8, 4, 2);
        let bound = m.bind(&g);
        let out = m.forward(&bound, &x, Mode::Eval, Masks::default()).unwrap();

        // independent evaluation: one shared weight applied per relation mean
        let mut h0 = x.matmul(m.param("projection").unwrap());
        let emb = m.param("embedding").unwrap();
        let mut row = 0;
        for u in g.node_ids() {
            if g.kind(u).is_entity() {
                for j in 0..3 {
                    let v = h0.get(u.index(), j) + emb.get(row, j);
                    h0.set(u.index(), j, v);
                }
                row += 1;
            }
        }
        let w = m.param("layer0.basis0").unwrap();
        let w0 = m.param("layer0.self").unwrap();
        let hw = h0.matmul(w);
        let self_part = h0.matmul(w0);
        for u in g.node_ids() {
            for j in 0..3 {
                let mut acc = self_part.get(u.index(), j);
                for r in 0..3 {
                    let nb = g.neighbors(u, RelationId(r)).unwrap();
                    if !nb.is_empty() {
                        acc += nb.iter().map(|v| hw.get(v.index(), j)).sum::<f64>() / nb.len() as f64;
                    }
                }
                let expect = Activation::Gelu.apply(acc);
                assert!((out.z.get(u.index(), j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_layer_model_is_linear_in_features() {
        let g = small_graph(6, 1, 1);
        let m = RgcnModel::new(config(3, 4, 0, 1, Activation::Relu), &g, 3).unwrap();
        let x = random_features(6, 3, 8);
        let bound = m.bind(&g);
        let out = m.forward(&bound, &x, Mode::Eval, Masks::default()).unwrap();
        let p = m.param("projection").unwrap();
        let w = m.param("head.w").unwrap();
        let pw = p.matmul(w);
        for u in g.node_ids() {
            if g.kind(u) == NodeKind::Contract {
                let expect: f64 = (0..3).map(|j| x.get(u.index(), j) * pw.get(j, 0)).sum();
                assert!((out.pred[u.index()] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic_and_dropout_free() {
        let g = small_graph(10, 2, 5);
        let mut cfg = config(3, 8, 2, 2, Activation::Relu);
        cfg.dropout = 0.5;
        let m = RgcnModel::new(cfg, &g, 7).unwrap();
        let x = random_features(10, 3, 1);
        let bound = m.bind(&g);
        let a = m.predict_all(&bound, &x).unwrap();
        let b = m.predict_all(&bound, &x).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = m.forward(&bound, &x, Mode::Train(&mut rng), Masks::default()).unwrap();
        assert_ne!(t.pred, a);
    }

    #[test]
    fn unit_masks_are_identity() {
        let g = small_graph(10, 3, 6);
        let m = RgcnModel::new(config(4, 5, 2, 2, Activation::LeakyRelu), &g, 1).unwrap();
        let x = random_features(10, 4, 3);
        let bound = m.bind(&g);
        let ones_e = vec![1.0; g.num_edges()];
        let ones_f = vec![1.0; 4];
        let plain = m.predict_all(&bound, &x).unwrap();
        let masked = m
            .forward(&bound, &x, Mode::Eval, Masks { edge_weights: Some(&ones_e), feature_scale: Some(&ones_f) })
            .unwrap()
            .pred;
        for (a, b) in plain.iter().zip(&masked) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn parameter_count_matches_formula() {
        let g = small_graph(10, 5, 1);
        let m = RgcnModel::new(config(4, 16, 2, 2, Activation::Relu), &g, 1).unwrap();
        assert_eq!(m.layer_parameter_count(0), layer_param_count(5, 2, 16, 16));
        assert_eq!(layer_param_count(5, 2, 16, 16), 2 * 256 + 10 + 256);
        assert!(layer_param_count(5, 2, 16, 16) < untied_layer_param_count(5, 16, 16));
    }

    #[test]
    fn zero_loss_gives_zero_head_gradient() {
        let g = small_graph(9, 2, 2);
        let m = RgcnModel::new(config(3, 4, 1, 2, Activation::Elu), &g, 4).unwrap();
        let x = random_features(9, 3, 4);
        let bound = m.bind(&g);
        let pred = m.predict_all(&bound, &x).unwrap();
        let mask: Vec<bool> = g.node_ids().map(|u| g.kind(u) == NodeKind::Contract).collect();
        let (loss, grads) = m.loss_and_gradients(&bound, &x, &pred, &mask).unwrap();
        assert_eq!(loss, 0.0);
        let hi = m.head_index();
        assert!(grads.params[hi].as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(grads.params[hi + 1].get(0, 0), 0.0);
    }

    #[test]
    fn unused_relation_coefficients_get_no_gradient() {
        let mut g = small_graph(10, 2, 8).to_builder();
        g.relation("never-used");
        let g = g.freeze();
        let m = RgcnModel::new(config(3, 4, 2, 2, Activation::Elu), &g, 4).unwrap();
        let x = random_features(10, 3, 2);
        let bound = m.bind(&g);
        let targets: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let mask = vec![true; 10];
        let (_, grads) = m.loss_and_gradients(&bound, &x, &targets, &mask).unwrap();
        for k in 0..2 {
            let idx = m.params.iter().position(|p| p.name == format!("layer{k}.coeff")).unwrap();
            assert_eq!(grads.params[idx].row(2), &[0.0, 0.0]);
            assert!(grads.params[idx].row(0).iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn non_finite_gradients_are_reported_by_name() {
        let g = small_graph(6, 1, 2);
        let mut m = RgcnModel::new(config(2, 3, 1, 1, Activation::Relu), &g, 1).unwrap();
        m.param_mut("head.w").unwrap().fill(f64::INFINITY);
        let x = random_features(6, 2, 1);
        let bound = m.bind(&g);
        let err = m.loss_and_gradients(&bound, &x, &[1.0; 6], &[true; 6]).unwrap_err();
        assert!(matches!(err, RgcnError::NonFinite(_)));
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let g = small_graph(6, 1, 2);
        let m = RgcnModel::new(config(2, 3, 1, 1, Activation::Relu), &g, 1).unwrap();
        let bound = m.bind(&g);
        let err = m.predict_all(&bound, &random_features(5, 2, 1)).unwrap_err();
        assert!(matches!(err, RgcnError::Shape(_)));
    }
}
