use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::centrality::bfs;
use crate::graph::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assortativity {
    /// Pearson correlation of endpoint degrees; `None` when every edge
    /// endpoint has the same degree (zero variance).
    pub pearson_r: Option<f64>,
    /// `(k, mean neighbor degree over nodes of degree k)`, ascending `k`.
    pub knn_curve: Vec<(usize, f64)>,
}

/// Degree correlation over all edges, each undirected edge taken in both
/// orientations.
pub fn assortativity(adj: &[Vec<NodeId>]) -> Assortativity {
    let deg: Vec<f64> = adj.iter().map(|n| n.len() as f64).collect();
    let (mut m, mut sx, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (u, nbrs) in adj.iter().enumerate() {
        for v in nbrs {
            let (x, y) = (deg[u], deg[v.0]);
            m += 1.0;
            sx += x;
            sxx += x * x;
            sxy += x * y;
        }
    }
    let pearson_r = if m > 0.0 {
        let mean = sx / m;
        let var = sxx / m - mean * mean;
        (var > 1e-12 * mean * mean.max(1.0)).then(|| (sxy / m - mean * mean) / var)
    } else {
        None
    };

    let mut by_k: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for nbrs in adj {
        if nbrs.is_empty() {
            continue;
        }
        let knn = nbrs.iter().map(|v| deg[v.0]).sum::<f64>() / nbrs.len() as f64;
        let e = by_k.entry(nbrs.len()).or_insert((0.0, 0));
        e.0 += knn;
        e.1 += 1;
    }
    let knn_curve = by_k.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
    Assortativity { pearson_r, knn_curve }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    /// Largest finite shortest-path distance.
    pub diameter: usize,
    /// Mean distance over ordered pairs of distinct, mutually reachable
    /// nodes.
    pub average_path_length: f64,
    pub connected: bool,
}

pub fn path_stats(adj: &[Vec<NodeId>]) -> PathStats {
    let per_source: Vec<(usize, usize, usize, usize)> = (0..adj.len())
        .into_par_iter()
        .map(|s| {
            let d = bfs(adj, s);
            let reach: Vec<usize> = d.iter().copied().filter(|&x| x != usize::MAX && x > 0).collect();
            let unreached = d.iter().filter(|&&x| x == usize::MAX).count();
            (reach.iter().copied().max().unwrap_or(0), reach.iter().sum(), reach.len(), unreached)
        })
        .collect();
    let diameter = per_source.iter().map(|p| p.0).max().unwrap_or(0);
    let total: usize = per_source.iter().map(|p| p.1).sum();
    let pairs: usize = per_source.iter().map(|p| p.2).sum();
    PathStats {
        diameter,
        average_path_length: if pairs == 0 { 0.0 } else { total as f64 / pairs as f64 },
        connected: !adj.is_empty() && per_source.iter().all(|p| p.3 == 0),
    }
}
