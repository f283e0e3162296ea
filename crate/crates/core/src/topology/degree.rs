use serde::{Deserialize, Serialize};

use crate::graph::NodeId;

/// Degree distribution of a simple graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    /// `(k, N_k)` for every degree that occurs, ascending in `k`.
    pub histogram: Vec<(usize, usize)>,
    /// `(k, N_k / N)`, aligned with `histogram`.
    pub pmf: Vec<(usize, f64)>,
    /// `2L / N`
    pub mean: f64,
    /// `(1/N) sum k_i^2`
    pub second_moment: f64,
    pub k_min: usize,
    pub k_max: usize,
}

pub fn degrees(adj: &[Vec<NodeId>]) -> Vec<usize> {
    adj.iter().map(Vec::len).collect()
}

pub fn degree_stats(adj: &[Vec<NodeId>]) -> DegreeStats {
    let deg = degrees(adj);
    let n = deg.len();
    let mut counts = std::collections::BTreeMap::new();
    for &k in &deg {
        *counts.entry(k).or_insert(0usize) += 1;
    }
    let histogram: Vec<(usize, usize)> = counts.into_iter().collect();
    let nf = n.max(1) as f64;
    let pmf = histogram.iter().map(|&(k, c)| (k, c as f64 / nf)).collect();
    let sum: usize = deg.iter().sum();
    DegreeStats {
        n_nodes: n,
        n_edges: sum / 2,
        histogram,
        pmf,
        mean: sum as f64 / nf,
        second_moment: deg.iter().map(|&k| (k * k) as f64).sum::<f64>() / nf,
        k_min: deg.iter().copied().min().unwrap_or(0),
        k_max: deg.iter().copied().max().unwrap_or(0),
    }
}

/// Molloy-Reed robustness under random node removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalThreshold {
    /// `<k^2> / <k>`
    pub ratio: f64,
    /// `1 - 1/(ratio - 1)`; `None` when `ratio <= 2`, where there is no
    /// giant-component transition to speak of.
    pub f_c: Option<f64>,
}

pub fn critical_threshold_from_moments(mean: f64, second_moment: f64) -> CriticalThreshold {
    let ratio = if mean > 0.0 { second_moment / mean } else { 0.0 };
    let f_c = (ratio > 2.0).then(|| 1.0 - 1.0 / (ratio - 1.0));
    CriticalThreshold { ratio, f_c }
}

pub fn critical_threshold(stats: &DegreeStats) -> CriticalThreshold {
    critical_threshold_from_moments(stats.mean, stats.second_moment)
}
