//! Independent oracles shared by the integration and acceptance tests.
#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use catnet_core::graph::{GraphBuilder, HeteroGraph, NodeId, NodeKind};
use catnet_core::rgcn::Matrix;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Simple undirected graph on `n` nodes with edge probability `p`. With
/// `connected`, a random spanning tree is laid down first.
pub fn random_adjacency(rng: &mut impl Rng, n: usize, p: f64, connected: bool) -> Vec<Vec<NodeId>> {
    let mut m = vec![vec![false; n]; n];
    if connected {
        for v in 1..n {
            let u = rng.random_range(0..v);
            m[u][v] = true;
            m[v][u] = true;
        }
    }
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random::<f64>() < p {
                m[u][v] = true;
                m[v][u] = true;
            }
        }
    }
    m.iter().map(|row| (0..n).filter(|&v| row[v]).map(NodeId).collect()).collect()
}

pub fn dense(adj: &[Vec<NodeId>]) -> DMatrix<f64> {
    let n = adj.len();
    let mut a = DMatrix::zeros(n, n);
    for (u, nbrs) in adj.iter().enumerate() {
        for v in nbrs {
            a[(u, v.0)] = 1.0;
        }
    }
    a
}

/// All-pairs hop distances by Floyd-Warshall; `None` when unreachable.
pub fn floyd_warshall(adj: &[Vec<NodeId>]) -> Vec<Vec<Option<usize>>> {
    let n = adj.len();
    let mut d = vec![vec![None; n]; n];
    for u in 0..n {
        d[u][u] = Some(0);
        for v in &adj[u] {
            d[u][v.0] = Some(1);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

/// Every shortest `s`-`t` path, listed explicitly.
fn shortest_paths(adj: &[Vec<NodeId>], s: usize, t: usize, len: usize) -> Vec<Vec<usize>> {
    fn walk(adj: &[Vec<NodeId>], path: &mut Vec<usize>, t: usize, len: usize, out: &mut Vec<Vec<usize>>) {
        let last = *path.last().unwrap();
        if path.len() == len + 1 {
            if last == t {
                out.push(path.clone());
            }
            return;
        }
        for v in &adj[last] {
            if !path.contains(&v.0) {
                path.push(v.0);
                walk(adj, path, t, len, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(adj, &mut vec![s], t, len, &mut out);
    out
}

#[derive(Debug, Clone)]
pub struct BruteCentralities {
    pub degree: Vec<f64>,
    pub closeness: Vec<f64>,
    pub betweenness: Vec<f64>,
    /// `None` when the leading eigenvalue is not simple.
    pub eigenvector: Option<Vec<f64>>,
    pub lambda_max: f64,
    pub katz: Vec<f64>,
    pub clustering: Vec<f64>,
}

/// Centralities by exhaustive enumeration, dense eigen-decomposition and a
/// truncated Katz walk series.
pub fn brute_centralities(adj: &[Vec<NodeId>], katz_beta: Option<f64>) -> BruteCentralities {
    let n = adj.len();
    let d = floyd_warshall(adj);
    let degree = adj.iter().map(|x| x.len() as f64).collect();
    let closeness =
        (0..n).map(|i| (0..n).filter(|&j| j != i).filter_map(|j| d[i][j].map(|x| 1.0 / x as f64)).sum()).collect();

    let mut betweenness = vec![0.0; n];
    for s in 0..n {
        for t in (s + 1)..n {
            let Some(len) = d[s][t] else { continue };
            let paths = shortest_paths(adj, s, t, len);
            let total = paths.len() as f64;
            for path in &paths {
                for &v in &path[1..path.len() - 1] {
                    betweenness[v] += 1.0 / total;
                }
            }
        }
    }

    let a = dense(adj);
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lambda_max = if n == 0 { 0.0 } else { eig.eigenvalues[order[0]] };
    let simple = n < 2 || lambda_max - eig.eigenvalues[order[1]] > 1e-3;
    let eigenvector = (n > 0 && simple && lambda_max > 0.0).then(|| {
        let v = eig.eigenvectors.column(order[0]);
        let sign = if v.sum() < 0.0 { -1.0 } else { 1.0 };
        let norm = v.norm();
        v.iter().map(|x| sign * x / norm).collect()
    });

    let beta = katz_beta.unwrap_or(if lambda_max > 0.0 { 0.9 / lambda_max } else { 0.9 });
    let mut katz = vec![0.0; n];
    let mut walk = DMatrix::<f64>::from_element(n, 1, 1.0);
    let mut scale = 1.0;
    for _ in 0..100_000 {
        walk = &a * walk;
        scale *= beta;
        let mut largest: f64 = 0.0;
        for i in 0..n {
            let term = scale * walk[(i, 0)];
            katz[i] += term;
            largest = largest.max(term);
        }
        if largest < 1e-18 {
            break;
        }
    }

    let clustering = (0..n)
        .map(|i| {
            let k = adj[i].len();
            if k < 2 {
                return 0.0;
            }
            let mut links = 0;
            for x in 0..k {
                for y in (x + 1)..k {
                    if a[(adj[i][x].0, adj[i][y].0)] == 1.0 {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (k * (k - 1)) as f64
        })
        .collect();

    BruteCentralities { degree, closeness, betweenness, eigenvector, lambda_max, katz, clustering }
}

/// Largest absolute difference, relative to `1 + |expected|`.
pub fn max_scaled_err(got: &[f64], expected: &[f64]) -> f64 {
    assert_eq!(got.len(), expected.len());
    got.iter().zip(expected).map(|(g, e)| (g - e).abs() / (1.0 + e.abs())).fold(0.0, f64::max)
}

/// Inverse-CDF sampler for `p_k ~ k^-gamma` on `[k_min, 10^6]`.
pub fn pure_power_law(n: usize, gamma: f64, k_min: u64, seed: u64) -> Vec<u64> {
    let mut cdf = Vec::new();
    let mut acc = 0.0;
    for k in k_min..=1_000_000 {
        acc += (k as f64).powf(-gamma);
        cdf.push(acc);
    }
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let u = r.random::<f64>() * acc;
            k_min + cdf.partition_point(|&c| c < u) as u64
        })
        .collect()
}

/// Pure power-law MLE by golden-section search, normalizing over the
/// observed support.
pub fn direct_mle(sample: &[u64]) -> f64 {
    let lo_k = *sample.iter().min().unwrap();
    let hi_k = *sample.iter().max().unwrap();
    let s: f64 = sample.iter().map(|&k| (k as f64).ln()).sum();
    let n = sample.len() as f64;
    let ll = |g: f64| {
        let z: f64 = (lo_k..=hi_k).map(|k| (k as f64).powf(-g)).sum();
        -g * s - n * z.ln()
    };
    let (mut a, mut b) = (1.01f64, 6.0f64);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if ll(c) > ll(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Small heterogeneous graph: every third node a contract, the rest
/// entities, random edges over `rels` relations.
pub fn small_hetero_graph(n: usize, rels: usize, p: f64, seed: u64) -> HeteroGraph {
    let mut r = rng(seed);
    let mut b = GraphBuilder::new();
    let rel: Vec<_> = (0..rels).map(|i| b.relation(format!("rel{i}"))).collect();
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
            if r.random::<f64>() < p {
                b.add_edge(ids[u], rel[r.random_range(0..rels)], ids[v]).unwrap();
            }
        }
    }
    b.freeze()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

/// `|a - b| / max(|a|, |b|, floor)`
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
