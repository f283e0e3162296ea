use serde::{Deserialize, Serialize};

use super::Result;
use crate::graph::{HeteroGraph, IssueYears, NodeId, NodeKind};

/// Degree trajectory of one node through the cumulative yearly graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFitness {
    pub node: NodeId,
    pub kind: NodeKind,
    pub label: String,
    /// Degree in the cumulative graph of each year in `FitnessSeries::years`.
    pub degrees: Vec<usize>,
    /// Degree-growth exponent; `None` with fewer than three active years.
    pub fitness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessSeries {
    pub years: Vec<i32>,
    pub nodes: Vec<NodeFitness>,
}

/// Slope of `ln k(y)` against `ln(y - y_first + 1)` over the years with
/// `k >= 1`, where `y_first` is the first such year.
pub fn growth_exponent(years: &[i32], degrees: &[usize]) -> Option<f64> {
    let pts: Vec<(i32, usize)> = years.iter().copied().zip(degrees.iter().copied()).filter(|&(_, k)| k >= 1).collect();
    if pts.len() < 3 {
        return None;
    }
    let first = pts[0].0;
    let xs: Vec<f64> = pts.iter().map(|&(y, _)| f64::from(y - first + 1).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|&(_, k)| (k as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn fitness_series(graph: &HeteroGraph, issue_years: &IssueYears) -> Result<FitnessSeries> {
    let mut years: Vec<i32> = graph
        .nodes_of_kind(NodeKind::Contract)
        .iter()
        .map(|u| issue_years.get(u).copied().ok_or(crate::graph::GraphError::MissingIssueYear(u.index())))
        .collect::<std::result::Result<_, _>>()?;
    years.sort_unstable();
    years.dedup();

    let n = graph.num_nodes();
    let mut degrees = vec![vec![0usize; years.len()]; n];
    for (t, &y) in years.iter().enumerate() {
        let (sub, origin) = graph.subgraph_by_years_mapped(y, issue_years)?;
        for u in sub.node_ids() {
            degrees[origin[u.index()].index()][t] = sub.degree(u);
        }
    }
    let nodes = graph
        .node_ids()
        .map(|u| {
            let d = std::mem::take(&mut degrees[u.index()]);
            NodeFitness {
                node: u,
                kind: graph.kind(u),
                label: graph.label(u).to_string(),
                fitness: growth_exponent(&years, &d),
                degrees: d,
            }
        })
        .collect();
    Ok(FitnessSeries { years, nodes })
}

impl FitnessSeries {
    /// Nodes of `kind` with defined fitness, highest first (ties by label).
    pub fn ranking(&self, kind: NodeKind) -> Vec<&NodeFitness> {
        let mut out: Vec<&NodeFitness> = self.nodes.iter().filter(|n| n.kind == kind && n.fitness.is_some()).collect();
        out.sort_by(|a, b| {
            b.fitness.partial_cmp(&a.fitness).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.label.cmp(&b.label))
        });
        out
    }
}
