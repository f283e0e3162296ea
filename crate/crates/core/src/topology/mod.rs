//! Network-science measurements on the collapsed contract graph.
//!
//! Everything here works on the simple undirected view of a
//! [`HeteroGraph`](crate::graph::HeteroGraph), passed as an adjacency list.

mod centrality;
mod degree;
mod fitness;
mod powerlaw;
mod report;
mod structure;

pub use centrality::{
    average_clustering, betweenness_centrality, centralities, closeness_centrality, clustering_local,
    default_katz_beta, degree_centrality, eigenvector_centrality, global_clustering, katz_index, katz_pairwise,
    spectral_radius, CentralityTable,
};
pub use degree::{
    critical_threshold, critical_threshold_from_moments, degree_stats, degrees, CriticalThreshold, DegreeStats,
};
pub use fitness::{fitness_series, growth_exponent, FitnessSeries, NodeFitness};
pub use powerlaw::{
    adjusted_powerlaw_pmf, bootstrap_pvalue, fit_adjusted_powerlaw, fit_with_bootstrap, log_likelihood, sample_fitted,
    GridSpec, PowerLawFit, PowerLawGrid, MIN_OBSERVATIONS,
};
pub use report::{centrality_csv, topo_features, topology_report, FitnessScore, ReportOptions, TopologyReport};
pub use structure::{assortativity, path_stats, Assortativity, PathStats};

#[derive(Debug, thiserror::Error)]
pub enum TopologyError {
    #[error("power-law fit needs at least 50 positive degrees, got {0}")]
    TooFewObservations(usize),
    #[error("all degrees are equal")]
    DegenerateDegrees,
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("katz series diverges: beta {beta} with lambda_max {lambda_max}")]
    KatzDivergent { beta: f64, lambda_max: f64 },
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

pub type Result<T> = std::result::Result<T, TopologyError>;

#[cfg(test)]
pub(crate) mod testutil {
    use crate::graph::NodeId;

    pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<NodeId>> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            adj[u].push(NodeId(v));
            adj[v].push(NodeId(u));
        }
        for a in &mut adj {
            a.sort();
        }
        adj
    }
}
