use std::collections::{BTreeMap, HashMap};

use super::{ContractRecord, IngestError, Result};
use crate::graph::{GraphBuilder, HeteroGraph, IssueYears, NodeId, NodeKind};

/// Relation linking a contract to an entity of `kind`.
pub fn contract_relation(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Contract => "contract-with-contract",
        NodeKind::Cedent => "contract-ceded-by-cedent",
        NodeKind::Underwriter => "contract-underwritten-by-underwriter",
        NodeKind::Country => "contract-in-country",
        NodeKind::StateProvince => "contract-in-state_province",
        NodeKind::Peril => "contract-covers-peril",
        NodeKind::RiskModeler => "contract-modeled-by-risk_modeler",
    }
}

/// Relation linking two entities that appear in the same transaction,
/// named by the kind pair in canonical order.
pub fn pair_relation(a: NodeKind, b: NodeKind) -> String {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    format!("{a}-with-{b}")
}

/// The fixed relation registry: six contract roles, then every unordered
/// entity-kind pair. Every graph built from records uses this order, so
/// relation ids agree across graphs.
pub fn relation_registry() -> Vec<String> {
    let mut labels: Vec<String> = NodeKind::ENTITIES.iter().map(|&k| contract_relation(k).to_string()).collect();
    for (i, &a) in NodeKind::ENTITIES.iter().enumerate() {
        for &b in &NodeKind::ENTITIES[i..] {
            labels.push(pair_relation(a, b));
        }
    }
    labels
}

/// Graph built from contract records plus the per-contract side tables.
#[derive(Debug, Clone)]
pub struct BuiltGraph {
    pub graph: HeteroGraph,
    pub issue_years: IssueYears,
    /// Spread premium per contract node.
    pub targets: BTreeMap<NodeId, f64>,
    /// Contract node of each input record, in input order.
    pub contract_nodes: Vec<NodeId>,
}

impl BuiltGraph {
    pub fn contract_node(&self, contract_id: &str) -> Option<NodeId> {
        self.graph.find(NodeKind::Contract, contract_id)
    }
}

/// Entities a record references, as `(kind, label)` in a fixed role order.
pub(crate) fn record_entities(rec: &ContractRecord) -> Vec<(NodeKind, &str)> {
    let mut out = Vec::new();
    out.push((NodeKind::Cedent, rec.cedent.as_str()));
    out.extend(rec.underwriters.iter().map(|s| (NodeKind::Underwriter, s.as_str())));
    out.extend(rec.countries.iter().map(|s| (NodeKind::Country, s.as_str())));
    out.extend(rec.states_provinces.iter().map(|s| (NodeKind::StateProvince, s.as_str())));
    out.extend(rec.perils.iter().map(|s| (NodeKind::Peril, s.as_str())));
    out.push((NodeKind::RiskModeler, rec.risk_modeler.as_str()));
    out
}

/// One contract node per record, one node per distinct entity, a typed
/// contract-entity edge per role, and pairwise entity-entity edges within
/// each transaction. Duplicate edges collapse (adjacency is binary).
pub fn build_graph(records: &[ContractRecord]) -> Result<BuiltGraph> {
    let mut b = GraphBuilder::with_relations(relation_registry());
    let mut issue_years = IssueYears::new();
    let mut targets = BTreeMap::new();
    let mut contract_nodes = Vec::with_capacity(records.len());
    let mut seen: HashMap<&str, ()> = HashMap::new();

    for rec in records {
        if seen.insert(rec.contract_id.as_str(), ()).is_some() {
            return Err(IngestError::DuplicateContract(rec.contract_id.clone()));
        }
        let c = b.add_node(NodeKind::Contract, &rec.contract_id);
        if b.num_nodes() != c.index() + 1 {
            // a different id string normalized onto an existing contract
            return Err(IngestError::DuplicateContract(rec.contract_id.clone()));
        }
        issue_years.insert(c, rec.issue_year);
        targets.insert(c, rec.spread_premium);
        contract_nodes.push(c);

        let mut entities: Vec<(NodeKind, NodeId)> = Vec::new();
        for (kind, label) in record_entities(rec) {
            let id = b.add_node(kind, label);
            if !entities.iter().any(|&(_, e)| e == id) {
                entities.push((kind, id));
            }
        }
        for &(kind, e) in &entities {
            let r = b.relation(contract_relation(kind));
            b.add_edge(c, r, e)?;
        }
        for (i, &(ka, a)) in entities.iter().enumerate() {
            for &(kb, bb) in &entities[i + 1..] {
                let r = b.relation(pair_relation(ka, kb));
                b.add_edge(a, r, bb)?;
            }
        }
    }

    Ok(BuiltGraph { graph: b.freeze(), issue_years, targets, contract_nodes })
}
