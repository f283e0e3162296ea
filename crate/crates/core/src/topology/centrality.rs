//! Node centralities on the collapsed simple graph.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Result, TopologyError};
use crate::graph::NodeId;

/// Sources handled per parallel task; fixed so that partial sums combine in
/// the same order for any thread count.
const SOURCE_CHUNK: usize = 32;
const EIGEN_TOL: f64 = 1e-12;
const MAX_ITER: usize = 1_000_000;

pub fn degree_centrality(adj: &[Vec<NodeId>]) -> Vec<f64> {
    adj.iter().map(|n| n.len() as f64).collect()
}

/// Unweighted distances from `s`; `usize::MAX` marks unreachable nodes.
pub(crate) fn bfs(adj: &[Vec<NodeId>], s: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut queue = VecDeque::new();
    dist[s] = 0;
    queue.push_back(s);
    while let Some(u) = queue.pop_front() {
        for v in &adj[u] {
            if dist[v.0] == usize::MAX {
                dist[v.0] = dist[u] + 1;
                queue.push_back(v.0);
            }
        }
    }
    dist
}

/// Harmonic closeness `sum_{j != i} 1/d(i, j)`, unreachable pairs adding 0.
pub fn closeness_centrality(adj: &[Vec<NodeId>]) -> Vec<f64> {
    (0..adj.len())
        .into_par_iter()
        .map(|s| bfs(adj, s).iter().filter(|&&d| d != 0 && d != usize::MAX).map(|&d| 1.0 / d as f64).sum())
        .collect()
}

/// Brandes accumulation from one source: adds `delta_s(v)` for every `v`.
fn brandes_source(adj: &[Vec<NodeId>], s: usize, acc: &mut [f64]) {
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    sigma[s] = 1.0;
    dist[s] = 0;
    queue.push_back(s);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for v in &adj[u] {
            let v = v.0;
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
            if dist[v] == dist[u] + 1 {
                sigma[v] += sigma[u];
            }
        }
    }
    let mut delta = vec![0.0f64; n];
    for &w in order.iter().rev() {
        for v in &adj[w] {
            let v = v.0;
            if dist[v] != usize::MAX && dist[v] + 1 == dist[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
        }
        if w != s {
            acc[w] += delta[w];
        }
    }
}

/// `sum_{j<k, i not in {j,k}} sigma_jk(i) / sigma_jk`, unnormalized.
pub fn betweenness_centrality(adj: &[Vec<NodeId>]) -> Vec<f64> {
    let n = adj.len();
    let sources: Vec<usize> = (0..n).collect();
    let partial: Vec<Vec<f64>> = sources
        .par_chunks(SOURCE_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n];
            for &s in chunk {
                brandes_source(adj, s, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n];
    for p in partial {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    // each unordered pair was counted from both endpoints
    for t in &mut total {
        *t /= 2.0;
    }
    total
}

fn adj_mul(adj: &[Vec<NodeId>], x: &[f64]) -> Vec<f64> {
    adj.iter().map(|nbrs| nbrs.iter().map(|v| x[v.0]).sum()).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Principal eigenvector by power iteration on `A + I` (the shift keeps
/// bipartite graphs from oscillating), started from the uniform vector and
/// scaled to unit Euclidean norm. Also returns the Rayleigh quotient.
fn principal(adj: &[Vec<NodeId>]) -> (Vec<f64>, f64) {
    let n = adj.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    for _ in 0..MAX_ITER {
        let ax = adj_mul(adj, &x);
        let mut y: Vec<f64> = ax.iter().zip(&x).map(|(a, b)| a + b).collect();
        let s = norm(&y);
        for v in &mut y {
            *v /= s;
        }
        let change = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = y;
        if change < EIGEN_TOL {
            break;
        }
    }
    let ax = adj_mul(adj, &x);
    let lambda = ax.iter().zip(&x).map(|(a, b)| a * b).sum();
    (x, lambda)
}

/// Unit-norm nonnegative principal eigenvector of the adjacency matrix.
pub fn eigenvector_centrality(adj: &[Vec<NodeId>]) -> Vec<f64> {
    principal(adj).0
}

/// Largest adjacency eigenvalue.
pub fn spectral_radius(adj: &[Vec<NodeId>]) -> f64 {
    principal(adj).1
}

/// Default Katz decay, `0.9 / lambda_max`.
pub fn default_katz_beta(adj: &[Vec<NodeId>]) -> f64 {
    let lambda = spectral_radius(adj);
    if lambda > 0.0 {
        0.9 / lambda
    } else {
        0.9
    }
}

fn check_beta(adj: &[Vec<NodeId>], beta: f64) -> Result<()> {
    let lambda = spectral_radius(adj);
    if !(beta > 0.0) || beta * lambda >= 1.0 {
        return Err(TopologyError::KatzDivergent { beta, lambda_max: lambda });
    }
    Ok(())
}

/// Katz row sums `sum_v sum_{l>=1} beta^l (A^l)_{uv}`, from the fixed point
/// `x = beta A (1 + x)`.
pub fn katz_index(adj: &[Vec<NodeId>], beta: Option<f64>) -> Result<Vec<f64>> {
    let beta = beta.unwrap_or_else(|| default_katz_beta(adj));
    check_beta(adj, beta)?;
    let n = adj.len();
    let mut x = vec![0.0; n];
    for _ in 0..MAX_ITER {
        let shifted: Vec<f64> = x.iter().map(|v| 1.0 + v).collect();
        let y: Vec<f64> = adj_mul(adj, &shifted).iter().map(|v| beta * v).collect();
        let change = y.iter().zip(&x).map(|(a, b)| (a - b).abs() / (1.0 + a.abs())).fold(0.0, f64::max);
        x = y;
        if change < 1e-15 {
            return Ok(x);
        }
    }
    Err(TopologyError::NoConvergence("katz"))
}

/// Full Katz matrix from `(I - beta A) X = beta A`. Dense, for small graphs.
pub fn katz_pairwise(adj: &[Vec<NodeId>], beta: f64) -> Result<Vec<Vec<f64>>> {
    check_beta(adj, beta)?;
    let n = adj.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (u, nbrs) in adj.iter().enumerate() {
        for v in nbrs {
            a[(u, v.0)] = 1.0;
        }
    }
    let lhs = DMatrix::<f64>::identity(n, n) - &a * beta;
    let x = lhs.lu().solve(&(a * beta)).ok_or(TopologyError::NoConvergence("katz solve"))?;
    Ok((0..n).map(|i| x.row(i).iter().copied().collect()).collect())
}

/// Links among the neighbors of each node.
fn neighbor_links(adj: &[Vec<NodeId>]) -> Vec<usize> {
    let n = adj.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut mark = vec![false; n];
            for v in &adj[i] {
                mark[v.0] = true;
            }
            let mut links = 0;
            for v in &adj[i] {
                links += adj[v.0].iter().filter(|w| mark[w.0]).count();
            }
            links / 2
        })
        .collect()
}

/// `C_i = 2 L_i / (k_i (k_i - 1))`, 0 when `k_i < 2`.
pub fn clustering_local(adj: &[Vec<NodeId>]) -> Vec<f64> {
    neighbor_links(adj)
        .into_iter()
        .zip(adj)
        .map(|(l, nbrs)| {
            let k = nbrs.len();
            if k < 2 {
                0.0
            } else {
                2.0 * l as f64 / (k * (k - 1)) as f64
            }
        })
        .collect()
}

/// Mean of the local coefficients over all nodes.
pub fn average_clustering(adj: &[Vec<NodeId>]) -> f64 {
    if adj.is_empty() {
        return 0.0;
    }
    clustering_local(adj).iter().sum::<f64>() / adj.len() as f64
}

/// `3 x triangles / connected triples`; 0 when there are no triples.
pub fn global_clustering(adj: &[Vec<NodeId>]) -> f64 {
    let closed: usize = neighbor_links(adj).iter().sum();
    let triples: usize = adj.iter().map(|n| n.len() * n.len().saturating_sub(1) / 2).sum();
    if triples == 0 {
        0.0
    } else {
        closed as f64 / triples as f64
    }
}

/// The six centrality columns for every node of a simple graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityTable {
    pub degree: Vec<f64>,
    pub closeness: Vec<f64>,
    pub betweenness: Vec<f64>,
    pub eigenvector: Vec<f64>,
    pub katz: Vec<f64>,
    pub clustering: Vec<f64>,
    pub katz_beta: f64,
}

impl CentralityTable {
    pub fn len(&self) -> usize {
        self.degree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degree.is_empty()
    }

    /// Columns in `TOPO_COLUMNS` order.
    pub fn row(&self, i: usize) -> [f64; 6] {
        [self.degree[i], self.closeness[i], self.betweenness[i], self.eigenvector[i], self.katz[i], self.clustering[i]]
    }
}

pub fn centralities(adj: &[Vec<NodeId>], katz_beta: Option<f64>) -> Result<CentralityTable> {
    let beta = katz_beta.unwrap_or_else(|| default_katz_beta(adj));
    Ok(CentralityTable {
        degree: degree_centrality(adj),
        closeness: closeness_centrality(adj),
        betweenness: betweenness_centrality(adj),
        eigenvector: eigenvector_centrality(adj),
        katz: katz_index(adj, Some(beta))?,
        clustering: clustering_local(adj),
        katz_beta: beta,
    })
}
