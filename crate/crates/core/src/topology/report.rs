use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    assortativity, average_clustering, critical_threshold, degree_stats, fit_with_bootstrap, fitness_series,
    global_clustering, path_stats, CentralityTable, CriticalThreshold, DegreeStats, GridSpec, PowerLawFit, Result,
};
use crate::graph::{HeteroGraph, IssueYears, NodeKind};
use crate::ingest::{FeatureMatrix, TOPO_COLUMNS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub n_bootstrap: usize,
    pub seed: u64,
    pub katz_beta: Option<f64>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { n_bootstrap: 100, seed: 0, katz_beta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessScore {
    pub kind: NodeKind,
    pub label: String,
    pub fitness: f64,
}

/// Whole-graph summary, serializable to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub degree: DegreeStats,
    pub power_law: Option<PowerLawFit>,
    /// Why `power_law` is missing, if it is.
    pub power_law_error: Option<String>,
    pub assortativity: Option<f64>,
    pub knn_curve: Vec<(usize, f64)>,
    pub critical_threshold: CriticalThreshold,
    pub diameter: usize,
    pub average_path_length: f64,
    pub connected: bool,
    pub average_clustering: f64,
    pub global_clustering: f64,
    pub katz_beta: f64,
    /// Entity growth exponents, highest first; present when issue years
    /// are available.
    pub fitness: Option<Vec<FitnessScore>>,
}

pub fn topology_report(
    graph: &HeteroGraph,
    issue_years: Option<&IssueYears>,
    options: &ReportOptions,
) -> Result<TopologyReport> {
    let adj = graph.homo_view();
    let degree = degree_stats(adj);
    let degrees: Vec<u64> = adj.iter().map(|n| n.len() as u64).collect();
    let (power_law, power_law_error) =
        match fit_with_bootstrap(&degrees, GridSpec::Default, options.n_bootstrap, options.seed) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let assort = assortativity(adj);
    let paths = path_stats(adj);
    let katz_beta = options.katz_beta.unwrap_or_else(|| super::default_katz_beta(adj));
    let fitness = match issue_years {
        Some(years) => {
            let series = fitness_series(graph, years)?;
            let mut scores: Vec<FitnessScore> = series
                .nodes
                .iter()
                .filter(|n| n.kind.is_entity())
                .filter_map(|n| n.fitness.map(|f| FitnessScore { kind: n.kind, label: n.label.clone(), fitness: f }))
                .collect();
            scores.sort_by(|a, b| {
                b.fitness.total_cmp(&a.fitness).then_with(|| a.kind.cmp(&b.kind)).then_with(|| a.label.cmp(&b.label))
            });
            Some(scores)
        }
        None => None,
    };
    Ok(TopologyReport {
        critical_threshold: critical_threshold(&degree),
        degree,
        power_law,
        power_law_error,
        assortativity: assort.pearson_r,
        knn_curve: assort.knn_curve,
        diameter: paths.diameter,
        average_path_length: paths.average_path_length,
        connected: paths.connected,
        average_clustering: average_clustering(adj),
        global_clustering: global_clustering(adj),
        katz_beta,
        fitness,
    })
}

/// `node_id,kind,label,<six columns>` for every entity node.
pub fn centrality_csv(graph: &HeteroGraph, table: &CentralityTable) -> String {
    let mut out = String::from("node_id,kind,label");
    for c in TOPO_COLUMNS {
        out.push(',');
        out.push_str(c.trim_start_matches("topo_"));
    }
    out.push('\n');
    for u in graph.node_ids().filter(|&u| graph.kind(u).is_entity()) {
        let label = graph.label(u);
        let label = if label.contains([',', '"', '\n']) {
            format!("\"{}\"", label.replace('"', "\"\""))
        } else {
            label.to_string()
        };
        let _ = write!(out, "{},{},{}", u.index(), graph.kind(u), label);
        for v in table.row(u.index()) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Topological input block for the network: `log1p` of each centrality,
/// standardized over entity rows. Contract rows are zero.
pub fn topo_features(graph: &HeteroGraph, table: &CentralityTable) -> FeatureMatrix {
    let names: Vec<String> = TOPO_COLUMNS.iter().map(|s| s.to_string()).collect();
    let mut m = FeatureMatrix::zeros(graph.num_nodes(), names);
    let entities: Vec<usize> = graph.node_ids().filter(|&u| graph.kind(u).is_entity()).map(|u| u.index()).collect();
    if entities.is_empty() {
        return m;
    }
    for j in 0..TOPO_COLUMNS.len() {
        let vals: Vec<f64> = entities.iter().map(|&i| table.row(i)[j].ln_1p()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        for (&i, v) in entities.iter().zip(&vals) {
            m.set(i, j, if std > 0.0 { (v - mean) / std } else { 0.0 });
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_graph, synth_dataset, SynthConfig};
    use crate::topology::centralities;

    #[test]
    fn report_on_synthetic_corpus() {
        let built = build_graph(&synth_dataset(&SynthConfig::new(200, 3)).records).unwrap();
        let opts = ReportOptions { n_bootstrap: 5, ..Default::default() };
        let r = topology_report(&built.graph, Some(&built.issue_years), &opts).unwrap();
        assert!(r.diameter as f64 >= r.average_path_length);
        assert!(r.power_law.is_some(), "{:?}", r.power_law_error);
        let json = serde_json::to_string(&r).unwrap();
        let back: TopologyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.degree, r.degree);
        assert!(r.fitness.unwrap().iter().all(|f| f.kind.is_entity()));
    }

    #[test]
    fn topo_block_is_standardized_on_entities() {
        let built = build_graph(&synth_dataset(&SynthConfig::new(80, 1)).records).unwrap();
        let g = &built.graph;
        let table = centralities(g.homo_view(), None).unwrap();
        let m = topo_features(g, &table);
        let ents: Vec<usize> = g.node_ids().filter(|&u| g.kind(u).is_entity()).map(|u| u.index()).collect();
        for j in 0..6 {
            let mean = ents.iter().map(|&i| m.get(i, j)).sum::<f64>() / ents.len() as f64;
            assert!(mean.abs() < 1e-10);
        }
        for &c in &built.contract_nodes {
            assert!(m.row(c.index()).iter().all(|&v| v == 0.0));
        }
        let csv = centrality_csv(g, &table);
        assert_eq!(csv.lines().count(), ents.len() + 1);
        assert!(csv.starts_with("node_id,kind,label,degree,closeness,betweenness,eigenvector,katz,clustering\n"));
    }
}
