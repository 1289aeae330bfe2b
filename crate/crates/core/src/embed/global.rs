//! Global-view embeddings by factorising the truncated-log random-walk
//! co-occurrence matrix
//!
//! ```text
//! M = vol(G)/b · D⁻¹ · S · D⁻¹,   S = (1/T) Σ_{r=1..T} A (D⁻¹A)^{r-1}
//! ```
//!
//! taking `log(max(M, 1))` entrywise and keeping the top-`rank` eigenpairs of
//! the (symmetric) result, scaled by the square root of their magnitudes.
//! Small graphs use the exact dense matrix; larger ones estimate `S` by
//! path sampling and factorise the sparse estimate with a randomised
//! range finder.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::NodeEmbeddings;
use crate::data::GlobalGraph;
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalEmbedConfig {
    pub dim: usize,
    /// Random-walk window `T`.
    pub window: usize,
    /// Negative-sampling constant `b`.
    pub negative: f64,
    /// Factorisation rank; clamped to the node count, zero-padded to `dim`.
    pub rank: Option<usize>,
    /// Graphs with at least this many nodes take the sampled path.
    pub dense_threshold: usize,
    /// Path samples per undirected edge on the sampled path.
    pub samples_per_edge: usize,
    pub power_iters: usize,
    pub oversample: usize,
    pub seed: u64,
}

impl Default for GlobalEmbedConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            window: 10,
            negative: 1.0,
            rank: None,
            dense_threshold: 2000,
            samples_per_edge: 100,
            power_iters: 3,
            oversample: 16,
            seed: 0,
        }
    }
}

struct Topology {
    neighbors: Vec<Vec<usize>>,
    degree: Vec<f64>,
    edges: Vec<(usize, usize)>,
}

impl Topology {
    fn new(g: &GlobalGraph) -> Self {
        let neighbors = g.undirected_neighbors();
        let degree = neighbors.iter().map(|n| n.len() as f64).collect();
        let edges = neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect();
        Self { neighbors, degree, edges }
    }

    fn volume(&self) -> f64 {
        self.degree.iter().sum()
    }
}

/// Exact `S = (1/T) Σ_r A (D⁻¹A)^{r-1}` as a dense row-major matrix.
pub fn exact_walk_matrix(g: &GlobalGraph, window: usize) -> Mat {
    let topo = Topology::new(g);
    walk_matrix(&topo, window)
}

fn walk_matrix(topo: &Topology, window: usize) -> Mat {
    let n = topo.neighbors.len();
    let mut power = Mat::zeros(n, n);
    for (i, ns) in topo.neighbors.iter().enumerate() {
        for &j in ns {
            power.set(i, j, 1.0);
        }
    }
    let mut sum = power.clone();
    for _ in 1..window {
        // power ← power · D⁻¹A, exploiting the sparsity of the right factor.
        let mut next = Mat::zeros(n, n);
        for i in 0..n {
            let row = power.row_slice(i);
            let out = &mut next.data[i * n..(i + 1) * n];
            for (k, &x) in row.iter().enumerate() {
                if x == 0.0 || topo.degree[k] == 0.0 {
                    continue;
                }
                let w = x / topo.degree[k];
                for &j in &topo.neighbors[k] {
                    out[j] += w;
                }
            }
        }
        sum.add_assign(&next);
        power = next;
    }
    sum.scale_assign(1.0 / window as f64);
    sum
}

/// Unbiased path-sampling estimate of `S` with `samples` draws, returned as a
/// symmetric sparse map.
pub fn sampled_walk_matrix(g: &GlobalGraph, window: usize, samples: usize, seed: u64) -> HashMap<(usize, usize), f64> {
    let topo = Topology::new(g);
    sample_walks(&topo, window, samples, seed)
}

fn sample_walks(topo: &Topology, window: usize, samples: usize, seed: u64) -> HashMap<(usize, usize), f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = topo.edges.len();
    let mut out = HashMap::new();
    if m == 0 || samples == 0 {
        return out;
    }
    // Each oriented path is drawn with probability (1/T)(1/2m)Π 1/deg(inner),
    // so weight 2m/samples makes the estimate unbiased; split over (a,b),(b,a).
    let half_weight = m as f64 / samples as f64;
    let walk = |rng: &mut ChaCha8Rng, mut at: usize, steps: usize| {
        for _ in 0..steps {
            let ns = &topo.neighbors[at];
            at = ns[rng.random_range(0..ns.len())];
        }
        at
    };
    for _ in 0..samples {
        let (mut u, mut v) = topo.edges[rng.random_range(0..m)];
        if rng.random::<bool>() {
            std::mem::swap(&mut u, &mut v);
        }
        let r = rng.random_range(1..=window);
        let k = rng.random_range(1..=r);
        let a = walk(&mut rng, u, k - 1);
        let b = walk(&mut rng, v, r - k);
        *out.entry((a, b)).or_insert(0.0) += half_weight;
        *out.entry((b, a)).or_insert(0.0) += half_weight;
    }
    out
}

fn trunc_log(x: f64) -> f64 {
    x.max(1.0).ln()
}

pub fn global_embed(g: &GlobalGraph, cfg: &GlobalEmbedConfig) -> Result<NodeEmbeddings> {
    let n = g.len();
    if n == 0 {
        return Err(Error::InvalidArgument("global graph is empty".into()));
    }
    if cfg.window == 0 || !(cfg.negative > 0.0) {
        return Err(Error::InvalidArgument("window must be ≥ 1 and negative > 0".into()));
    }
    let requested = cfg.rank.unwrap_or(cfg.dim).min(cfg.dim);
    let rank = if requested > n {
        log::warn!("factorisation rank {requested} exceeds {n} nodes; clamping");
        n
    } else {
        requested
    };
    let topo = Topology::new(g);
    let vol = topo.volume();
    let inv_deg: Vec<f64> = topo.degree.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
    let scale = vol / cfg.negative;

    let (values, vectors) = if n < cfg.dense_threshold {
        let s = walk_matrix(&topo, cfg.window);
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = trunc_log(scale * inv_deg[i] * s.get(i, j) * inv_deg[j]);
            }
        }
        top_eigenpairs_dense(m, rank)
    } else {
        let samples = cfg.samples_per_edge.max(1) * topo.edges.len().max(1);
        let s = sample_walks(&topo, cfg.window, samples, cfg.seed);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (&(i, j), &x) in &s {
            let v = trunc_log(scale * inv_deg[i] * x * inv_deg[j]);
            if v != 0.0 {
                rows[i].push((j, v));
            }
        }
        for r in &mut rows {
            r.sort_unstable_by_key(|&(j, _)| j);
        }
        top_eigenpairs_randomized(&rows, rank, cfg)
    };

    let mut out = Mat::zeros(n, cfg.dim);
    for (k, (&lambda, vec)) in values.iter().zip(&vectors).enumerate() {
        let s = lambda.abs().sqrt();
        for i in 0..n {
            out.set(i, k, vec[i] * s);
        }
    }
    Ok(NodeEmbeddings::new(g.nodes.clone(), out))
}

/// Top-`rank` eigenpairs by magnitude with a fixed sign convention
/// (largest-magnitude component positive).
fn select_top(values: Vec<f64>, vectors: Vec<Vec<f64>>, rank: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    order.truncate(rank);
    let mut vals = Vec::with_capacity(rank);
    let mut vecs = Vec::with_capacity(rank);
    for k in order {
        let mut v = vectors[k].clone();
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        vals.push(values[k]);
        vecs.push(v);
    }
    (vals, vecs)
}

fn top_eigenpairs_dense(m: DMatrix<f64>, rank: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(m);
    let values = eig.eigenvalues.iter().copied().collect();
    let vectors = (0..eig.eigenvectors.ncols()).map(|k| eig.eigenvectors.column(k).iter().copied().collect()).collect();
    select_top(values, vectors, rank)
}

fn sparse_mul(rows: &[Vec<(usize, f64)>], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = DMatrix::<f64>::zeros(rows.len(), x.ncols());
    for (i, r) in rows.iter().enumerate() {
        for &(j, v) in r {
            for c in 0..x.ncols() {
                y[(i, c)] += v * x[(j, c)];
            }
        }
    }
    y
}

fn orthonormalize(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

fn top_eigenpairs_randomized(
    rows: &[Vec<(usize, f64)>],
    rank: usize,
    cfg: &GlobalEmbedConfig,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let p = (rank + cfg.oversample).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let omega = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormalize(sparse_mul(rows, &omega));
    for _ in 0..cfg.power_iters {
        q = orthonormalize(sparse_mul(rows, &q));
    }
    let mq = sparse_mul(rows, &q);
    let mut small = q.transpose() * mq;
    small = (&small + small.transpose()) * 0.5;
    let eig = SymmetricEigen::new(small);
    let lifted = &q * &eig.eigenvectors;
    let values = eig.eigenvalues.iter().copied().collect();
    let vectors = (0..lifted.ncols()).map(|k| lifted.column(k).iter().copied().collect()).collect();
    select_top(values, vectors, rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> GlobalGraph {
        let nodes = (0..n).map(|i| format!("n{i}")).collect();
        let edges = (0..n).flat_map(|i| (0..n).filter(move |&j| j > i).map(move |j| (i, j)));
        GlobalGraph::from_parts(nodes, edges)
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    fn pairwise(e: &NodeEmbeddings) -> Vec<f64> {
        let n = e.len();
        let mut d = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                d.push(dist(e.vectors.row_slice(i), e.vectors.row_slice(j)));
            }
        }
        d
    }

    /// Hand-built dense oracle for K_n: every off-diagonal of S equals
    /// `(1/T)·Σ_r [(J-I)/(n-1)]^{r-1}` entries, computed from the two-eigenvalue
    /// spectrum of the random-walk matrix.
    fn complete_graph_oracle(n: usize, window: usize) -> (f64, f64) {
        let d = (n - 1) as f64;
        // P = (J - I)/d has eigenvalue 1 on ones and -1/d elsewhere.
        let mut diag = 0.0;
        let mut off = 0.0;
        for r in 1..=window {
            let mu = (-1.0 / d).powi(r as i32);
            // P^r = J/n + mu (I - J/n);  A P^{r-1} = d·P^r.
            diag += d * (1.0 / n as f64 + mu * (1.0 - 1.0 / n as f64));
            off += d * (1.0 / n as f64 - mu / n as f64);
        }
        (diag / window as f64, off / window as f64)
    }

    #[test]
    fn complete_graph_walk_matrix_matches_oracle() {
        let g = complete(4);
        let s = exact_walk_matrix(&g, 10);
        let (diag, off) = complete_graph_oracle(4, 10);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { diag } else { off };
                assert!((s.get(i, j) - want).abs() < 1e-12, "{} vs {want}", s.get(i, j));
            }
        }
    }

    #[test]
    fn complete_graph_nodes_are_equivalent() {
        let g = complete(4);
        // Rank 1 keeps only the all-ones direction: identical embeddings.
        let cfg = GlobalEmbedConfig { dim: 4, rank: Some(1), ..Default::default() };
        let e = global_embed(&g, &cfg).unwrap();
        assert!(pairwise(&e).iter().all(|&d| d <= 1e-6));
        // Full rank: the degenerate eigenspace is kept whole, so all pairwise
        // distances coincide regardless of the eigenbasis chosen.
        let cfg = GlobalEmbedConfig { dim: 4, rank: Some(4), ..Default::default() };
        let e = global_embed(&g, &cfg).unwrap();
        let d = pairwise(&e);
        assert!(d.iter().all(|&x| (x - d[0]).abs() <= 1e-6), "{d:?}");
        let norms: Vec<f64> = e.vectors.to_rows().iter().map(|r| r.iter().map(|x| x * x).sum()).collect();
        assert!(norms.iter().all(|&x| (x - norms[0]).abs() <= 1e-6), "{norms:?}");
    }

    #[test]
    fn isolated_node_gets_zero_vector() {
        let mut g = complete(4);
        g.add_node("lonely");
        let e = global_embed(&g, &GlobalEmbedConfig { dim: 8, ..Default::default() }).unwrap();
        assert!(e.get("lonely").unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(e.dim(), 8);
    }

    #[test]
    fn deterministic_under_seed() {
        let g = ring(40);
        let cfg = GlobalEmbedConfig { dim: 6, dense_threshold: 10, seed: 3, ..Default::default() };
        assert_eq!(global_embed(&g, &cfg).unwrap(), global_embed(&g, &cfg).unwrap());
        let cfg = GlobalEmbedConfig { dim: 6, seed: 3, ..Default::default() };
        assert_eq!(global_embed(&g, &cfg).unwrap(), global_embed(&g, &cfg).unwrap());
    }

    fn ring(n: usize) -> GlobalGraph {
        let nodes = (0..n).map(|i| format!("r{i}")).collect();
        GlobalGraph::from_parts(nodes, (0..n).map(|i| (i, (i + 1) % n)))
    }

    #[test]
    fn sampled_walk_matrix_is_unbiased() {
        let nodes: Vec<String> = (0..6).map(|i| format!("v{i}")).collect();
        let g = GlobalGraph::from_parts(nodes, [(0, 1), (1, 2), (2, 3), (3, 0), (1, 4), (4, 5), (2, 5)]);
        let exact = exact_walk_matrix(&g, 4);
        let est = sampled_walk_matrix(&g, 4, 400_000, 11);
        for i in 0..6 {
            for j in 0..6 {
                let e = est.get(&(i, j)).copied().unwrap_or(0.0);
                assert!((e - exact.get(i, j)).abs() < 0.02, "({i},{j}) {e} vs {}", exact.get(i, j));
            }
        }
    }

    #[test]
    fn sampled_path_preserves_ring_symmetry() {
        // On a vertex-transitive ring every node has the same embedding norm.
        let g = ring(60);
        let cfg = GlobalEmbedConfig { dim: 8, dense_threshold: 10, samples_per_edge: 2000, seed: 5, ..Default::default() };
        let e = global_embed(&g, &cfg).unwrap();
        let norms: Vec<f64> = e.vectors.to_rows().iter().map(|r| r.iter().map(|x| x * x).sum::<f64>()).collect();
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        assert!(norms.iter().all(|&x| (x - mean).abs() < 0.25 * mean), "{norms:?}");
        assert!(e.vectors.all_finite());
    }

    #[test]
    fn rank_clamped_to_node_count() {
        let g = complete(3);
        let e = global_embed(&g, &GlobalEmbedConfig { dim: 16, ..Default::default() }).unwrap();
        assert_eq!(e.dim(), 16);
        assert!(e.vectors.to_rows().iter().all(|r| r[3..].iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn automorphism_preserves_pairwise_distances() {
        // Path a-b-c-d: reversal maps a↔d, b↔c.
        let nodes: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let g = GlobalGraph::from_parts(nodes, [(0, 1), (1, 2), (2, 3)]);
        let e = global_embed(&g, &GlobalEmbedConfig { dim: 4, window: 3, ..Default::default() }).unwrap();
        let d = |i: usize, j: usize| dist(e.vectors.row_slice(i), e.vectors.row_slice(j));
        let perm = [3, 2, 1, 0];
        for i in 0..4 {
            for j in 0..4 {
                assert!((d(i, j) - d(perm[i], perm[j])).abs() < 1e-6);
            }
        }
    }
}
