//! Heterogeneous multi-relational graph.
//!
//! Nodes are typed by [`NodeKind`], edges carry a [`RelationId`] from a
//! registry of relation labels. A graph is assembled with [`GraphBuilder`]
//! and frozen into an immutable [`HeteroGraph`], which exposes:
//!
//! - per-relation neighbor lists (`N_r(u)`, sorted and duplicate-free),
//! - a homogeneous simple-graph view that ignores relation labels,
//! - canonical JSON export/import.
//!
//! Edges are undirected. Each one is stored once as `(min, r, max)` and
//! mirrored into both endpoints' neighbor lists.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("self-loop on node {0} rejected")]
    SelfLoop(usize),
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("unknown relation id {0}")]
    UnknownRelation(usize),
    #[error("unknown relation label {0:?}")]
    UnknownRelationLabel(String),
    #[error("unknown node kind {0:?}")]
    UnknownKind(String),
    #[error("contract node {0} has no issue year")]
    MissingIssueYear(usize),
    #[error("invalid graph document: {0}")]
    Invalid(String),
    #[error("graph JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// The closed set of node types in the contract network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Contract,
    Cedent,
    Underwriter,
    Country,
    StateProvince,
    Peril,
    RiskModeler,
}

impl NodeKind {
    pub const ALL: [NodeKind; 7] = [
        NodeKind::Contract,
        NodeKind::Cedent,
        NodeKind::Underwriter,
        NodeKind::Country,
        NodeKind::StateProvince,
        NodeKind::Peril,
        NodeKind::RiskModeler,
    ];

    /// Entity kinds, i.e. everything except contracts.
    pub const ENTITIES: [NodeKind; 6] = [
        NodeKind::Cedent,
        NodeKind::Underwriter,
        NodeKind::Country,
        NodeKind::StateProvince,
        NodeKind::Peril,
        NodeKind::RiskModeler,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Contract => "contract",
            NodeKind::Cedent => "cedent",
            NodeKind::Underwriter => "underwriter",
            NodeKind::Country => "country",
            NodeKind::StateProvince => "state_province",
            NodeKind::Peril => "peril",
            NodeKind::RiskModeler => "risk_modeler",
        }
    }

    pub fn is_entity(self) -> bool {
        self != NodeKind::Contract
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self> {
        NodeKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| GraphError::UnknownKind(s.to_string()))
    }
}

/// Dense node index, stable within one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index into the relation registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub usize);

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub kind: NodeKind,
    pub label: String,
}

/// Undirected typed edge, stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub u: NodeId,
    pub relation: RelationId,
    pub v: NodeId,
}

/// Entity deduplication key: kind plus trimmed, lower-cased label.
pub fn dedup_key(kind: NodeKind, label: &str) -> (NodeKind, String) {
    (kind, label.trim().to_lowercase())
}

/// Mutable build phase of a [`HeteroGraph`].
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    index: HashMap<(NodeKind, String), NodeId>,
    relations: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    edges: BTreeSet<(usize, usize, usize)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts a builder with a fixed prefix of relation labels so that
    /// relation ids line up with another graph's registry.
    pub fn with_relations<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut b = Self::new();
        for l in labels {
            b.relation(l);
        }
        b
    }

    /// Returns the id for `(kind, label)`, creating the node if needed.
    pub fn add_node(&mut self, kind: NodeKind, label: &str) -> NodeId {
        let key = dedup_key(kind, label);
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { kind, label: label.trim().to_string() });
        self.index.insert(key, id);
        id
    }

    pub fn find(&self, kind: NodeKind, label: &str) -> Option<NodeId> {
        self.index.get(&dedup_key(kind, label)).copied()
    }

    /// Registers a relation label (idempotent).
    pub fn relation(&mut self, label: impl Into<String>) -> RelationId {
        let label = label.into();
        if let Some(&r) = self.relation_index.get(&label) {
            return r;
        }
        let r = RelationId(self.relations.len());
        self.relation_index.insert(label.clone(), r);
        self.relations.push(label);
        r
    }

    /// Adds an undirected edge. Returns `Ok(false)` when the edge was already
    /// present.
    pub fn add_edge(&mut self, u: NodeId, r: RelationId, v: NodeId) -> Result<bool> {
        if u.0 >= self.nodes.len() {
            return Err(GraphError::UnknownNode(u.0));
        }
        if v.0 >= self.nodes.len() {
            return Err(GraphError::UnknownNode(v.0));
        }
        if r.0 >= self.relations.len() {
            return Err(GraphError::UnknownRelation(r.0));
        }
        if u == v {
            return Err(GraphError::SelfLoop(u.0));
        }
        let (a, b) = if u < v { (u.0, v.0) } else { (v.0, u.0) };
        Ok(self.edges.insert((a, r.0, b)))
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn freeze(self) -> HeteroGraph {
        let n = self.nodes.len();
        let nr = self.relations.len();
        let mut adjacency = vec![vec![Vec::new(); n]; nr];
        let mut homo_sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        let mut edges = Vec::with_capacity(self.edges.len());
        for &(a, r, b) in &self.edges {
            adjacency[r][a].push(NodeId(b));
            adjacency[r][b].push(NodeId(a));
            homo_sets[a].insert(b);
            homo_sets[b].insert(a);
            edges.push(Edge { u: NodeId(a), relation: RelationId(r), v: NodeId(b) });
        }
        for per_rel in &mut adjacency {
            for list in per_rel.iter_mut() {
                list.sort_unstable();
            }
        }
        let homo = homo_sets.into_iter().map(|s| s.into_iter().map(NodeId).collect()).collect();
        HeteroGraph {
            nodes: self.nodes,
            index: self.index,
            relations: self.relations,
            relation_index: self.relation_index,
            edges,
            adjacency,
            homo,
        }
    }
}

/// Immutable heterogeneous graph. Safe to share between threads.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    nodes: Vec<Node>,
    index: HashMap<(NodeKind, String), NodeId>,
    relations: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<Vec<NodeId>>>,
    homo: Vec<Vec<NodeId>>,
}

pub type IssueYears = BTreeMap<NodeId, i32>;

impl HeteroGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of distinct typed edges `(u, r, v)`.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn node(&self, u: NodeId) -> &Node {
        &self.nodes[u.0]
    }

    pub fn kind(&self, u: NodeId) -> NodeKind {
        self.nodes[u.0].kind
    }

    pub fn label(&self, u: NodeId) -> &str {
        &self.nodes[u.0].label
    }

    pub fn node_ids(&self) -> impl ExactSizeIterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> Vec<NodeId> {
        self.node_ids().filter(|&u| self.kind(u) == kind).collect()
    }

    pub fn find(&self, kind: NodeKind, label: &str) -> Option<NodeId> {
        self.index.get(&dedup_key(kind, label)).copied()
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        &self.relations[r.0]
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relation_index.get(label).copied()
    }

    /// Canonically ordered edge list.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `N_r(u)`: sorted, duplicate-free.
    pub fn neighbors(&self, u: NodeId, r: RelationId) -> Result<&[NodeId]> {
        let per_rel = self.adjacency.get(r.0).ok_or(GraphError::UnknownRelation(r.0))?;
        per_rel.get(u.0).map(Vec::as_slice).ok_or(GraphError::UnknownNode(u.0))
    }

    /// Neighbor lists of every node under relation `r`, indexed by node.
    pub fn relation_adjacency(&self, r: RelationId) -> &[Vec<NodeId>] {
        &self.adjacency[r.0]
    }

    /// Distinct neighbors across all relations (simple-graph view).
    pub fn homo_neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.homo[u.0]
    }

    /// Full simple-graph adjacency.
    pub fn homo_view(&self) -> &[Vec<NodeId>] {
        &self.homo
    }

    /// Degree in the simple-graph view.
    pub fn degree(&self, u: NodeId) -> usize {
        self.homo[u.0].len()
    }

    /// Number of typed edges incident to `u`, counting parallel relations.
    pub fn multi_relation_degree(&self, u: NodeId) -> usize {
        self.adjacency.iter().map(|per| per[u.0].len()).sum()
    }

    /// Number of distinct undirected pairs in the simple-graph view.
    pub fn homo_edge_count(&self) -> usize {
        self.homo.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Subgraph induced by the nodes for which `keep` is true. Node order
    /// and the full relation registry are preserved. Also returns, for each
    /// new node id, the id it had in `self`.
    pub fn induced<F>(&self, keep: F) -> (HeteroGraph, Vec<NodeId>)
    where
        F: Fn(NodeId) -> bool,
    {
        let mut b = GraphBuilder::with_relations(self.relations.iter().cloned());
        let mut remap = vec![None; self.nodes.len()];
        let mut origin = Vec::new();
        for u in self.node_ids() {
            if keep(u) {
                let n = self.node(u);
                remap[u.0] = Some(b.add_node(n.kind, &n.label));
                origin.push(u);
            }
        }
        for e in &self.edges {
            if let (Some(a), Some(c)) = (remap[e.u.0], remap[e.v.0]) {
                b.add_edge(a, e.relation, c).expect("induced edge endpoints are valid");
            }
        }
        (b.freeze(), origin)
    }

    /// Subgraph of contracts issued in or before `year_cutoff`, with every
    /// entity adjacent to them and all induced edges. Also returns the
    /// original id of each retained node.
    pub fn subgraph_by_years_mapped(
        &self,
        year_cutoff: i32,
        issue_years: &IssueYears,
    ) -> Result<(HeteroGraph, Vec<NodeId>)> {
        let mut keep = vec![false; self.nodes.len()];
        for u in self.node_ids() {
            if self.kind(u) != NodeKind::Contract {
                continue;
            }
            let year = *issue_years.get(&u).ok_or(GraphError::MissingIssueYear(u.0))?;
            if year <= year_cutoff {
                keep[u.0] = true;
                for &v in self.homo_neighbors(u) {
                    if self.kind(v).is_entity() {
                        keep[v.0] = true;
                    }
                }
            }
        }
        Ok(self.induced(|u| keep[u.0]))
    }

    pub fn subgraph_by_years(&self, year_cutoff: i32, issue_years: &IssueYears) -> Result<HeteroGraph> {
        self.subgraph_by_years_mapped(year_cutoff, issue_years).map(|(g, _)| g)
    }

    /// Copies the graph back into a builder so it can be extended into a
    /// new graph. Ids and relation ids are preserved.
    pub fn to_builder(&self) -> GraphBuilder {
        let mut b = GraphBuilder::with_relations(self.relations.iter().cloned());
        for n in &self.nodes {
            b.add_node(n.kind, &n.label);
        }
        for e in &self.edges {
            b.edges.insert((e.u.0, e.relation.0, e.v.0));
        }
        b
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| NodeRecord { id, kind: n.kind, label: n.label.clone() })
                .collect(),
            relations: self.relations.clone(),
            edges: self.edges.iter().map(|e| [e.u.0, e.relation.0, e.v.0]).collect(),
        }
    }

    /// Canonical JSON: nodes by id, edges lexicographic.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph document serializes")
    }

    pub fn from_document(doc: &GraphDocument) -> Result<HeteroGraph> {
        let mut b = GraphBuilder::new();
        for (expected, rec) in doc.nodes.iter().enumerate() {
            if rec.id != expected {
                return Err(GraphError::Invalid(format!(
                    "node ids must be dense and ordered; got {} at position {}",
                    rec.id, expected
                )));
            }
            let id = b.add_node(rec.kind, &rec.label);
            if id.0 != expected {
                return Err(GraphError::Invalid(format!("duplicate node ({}, {:?})", rec.kind, rec.label)));
            }
        }
        for label in &doc.relations {
            let before = b.relations.len();
            b.relation(label.clone());
            if b.relations.len() == before {
                return Err(GraphError::Invalid(format!("duplicate relation {label:?}")));
            }
        }
        for &[u, r, v] in &doc.edges {
            b.add_edge(NodeId(u), RelationId(r), NodeId(v))?;
        }
        Ok(b.freeze())
    }

    pub fn from_json(s: &str) -> Result<HeteroGraph> {
        let doc: GraphDocument = serde_json::from_str(s)?;
        Self::from_document(&doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub kind: NodeKind,
    pub label: String,
}

/// Serialized form of a [`HeteroGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<NodeRecord>,
    pub relations: Vec<String>,
    pub edges: Vec<[usize; 3]>,
}
