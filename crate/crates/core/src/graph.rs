//! Undirected graphs in compressed adjacency form.
//!
//! Neighbor lists are stored back to back in one flat buffer, indexed by an
//! offsets array of length `num_nodes + 1`. Every list is sorted, so edge
//! membership is a binary search.

use std::collections::VecDeque;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FlowError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list.
    ///
    /// Edges are symmetrized, duplicates collapse to one edge and self-loops
    /// are dropped.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut pairs = Vec::new();
        for (u, v) in edges {
            for id in [u, v] {
                if id >= num_nodes {
                    return Err(FlowError::Index { id, num_nodes });
                }
            }
            if u != v {
                pairs.push((u, v));
                pairs.push((v, u));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &pairs {
            offsets[u + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let neighbors = pairs.into_iter().map(|(_, v)| v).collect();
        Ok(Graph { offsets, neighbors })
    }

    /// Graph with `num_nodes` nodes and no edges.
    pub fn empty(num_nodes: usize) -> Self {
        Graph {
            offsets: vec![0; num_nodes + 1],
            neighbors: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Sum of all degrees, i.e. twice the edge count.
    pub fn degree_sum(&self) -> usize {
        self.neighbors.len()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.num_nodes() == 0 {
            0.0
        } else {
            self.degree_sum() as f64 / self.num_nodes() as f64
        }
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    /// Full scan of the structural invariants: symmetric, sorted, loop-free
    /// and duplicate-free neighbor lists.
    pub fn check_invariants(&self) -> bool {
        (0..self.num_nodes()).all(|u| {
            let nbrs = self.neighbors(u);
            nbrs.windows(2).all(|w| w[0] < w[1])
                && nbrs
                    .iter()
                    .all(|&v| v != u && v < self.num_nodes() && self.has_edge(v, u))
        })
    }

    /// Connected components as a label per node; labels are assigned in order
    /// of the smallest node id in each component.
    pub fn components(&self) -> Vec<usize> {
        let n = self.num_nodes();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors(u) {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Node ids of the largest connected component, ascending. Ties go to the
    /// component containing the smaller node id.
    pub fn largest_component(&self) -> Vec<usize> {
        let label = self.components();
        let count = label.iter().copied().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; count];
        for &l in &label {
            sizes[l] += 1;
        }
        let Some(best) = (0..count).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))) else {
            return Vec::new();
        };
        (0..self.num_nodes()).filter(|&v| label[v] == best).collect()
    }

    /// BFS hop distances from `source`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.num_nodes()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &v in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Wraparound 2D lattice; node `(i, j)` has id `i * cols + j`.
pub fn grid_torus(rows: usize, cols: usize) -> Result<Graph> {
    if rows < 3 || cols < 3 {
        return Err(FlowError::arg(format!(
            "torus dimensions must be at least 3x3, got {rows}x{cols}"
        )));
    }
    let id = |i: usize, j: usize| i * cols + j;
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            edges.push((id(i, j), id((i + 1) % rows, j)));
            edges.push((id(i, j), id(i, (j + 1) % cols)));
        }
    }
    Graph::from_edges(rows * cols, edges)
}

/// Summary of BFS path lengths over the largest connected component.
#[derive(Clone, Debug, PartialEq)]
pub struct ShortestPathStats {
    pub mean: f64,
    /// Number of BFS sources used.
    pub sources: usize,
    pub component_size: usize,
    /// Half-width of a 95% interval over per-source means. Zero when every
    /// component node was a source.
    pub ci95: f64,
}

/// Mean BFS distance over ordered reachable pairs inside the largest
/// connected component.
///
/// With `sample = Some((m, seed))`, only `m` distinct sources drawn uniformly
/// from the component are expanded. `m >= |LCC|` gives the exact value.
pub fn shortest_path_stats(graph: &Graph, sample: Option<(usize, u64)>) -> ShortestPathStats {
    let lcc = graph.largest_component();
    let size = lcc.len();
    if size <= 1 {
        log::warn!("largest connected component is a single node; average shortest path is 0");
        return ShortestPathStats {
            mean: 0.0,
            sources: size,
            component_size: size,
            ci95: 0.0,
        };
    }
    let sources: Vec<usize> = match sample {
        Some((m, seed)) if m < size => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked: Vec<usize> = index::sample(&mut rng, size, m.max(1))
                .into_iter()
                .map(|i| lcc[i])
                .collect();
            picked.sort_unstable();
            picked
        }
        _ => lcc.clone(),
    };
    // Integer sums keep the reduction order irrelevant.
    let per_source: Vec<u64> = sources
        .par_iter()
        .map(|&s| {
            graph
                .bfs_distances(s)
                .into_iter()
                .flatten()
                .map(u64::from)
                .sum()
        })
        .collect();
    let pairs_per_source = (size - 1) as f64;
    let total: u64 = per_source.iter().sum();
    let mean = total as f64 / (pairs_per_source * sources.len() as f64);

    let ci95 = if sources.len() < size && sources.len() > 1 {
        let k = sources.len() as f64;
        let var = per_source
            .iter()
            .map(|&t| (t as f64 / pairs_per_source - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0);
        1.96 * (var / k).sqrt()
    } else {
        0.0
    };
    ShortestPathStats {
        mean,
        sources: sources.len(),
        component_size: size,
        ci95,
    }
}

pub fn avg_shortest_path(graph: &Graph, sample: Option<(usize, u64)>) -> f64 {
    shortest_path_stats(graph, sample).mean
}

/// Exact distribution of a uniform random walker after `k` steps from `x`.
pub fn k_step_rw_distribution(graph: &Graph, x: usize, k: usize) -> Result<Vec<f64>> {
    let n = graph.num_nodes();
    if x >= n {
        return Err(FlowError::Index { id: x, num_nodes: n });
    }
    let mut dist = vec![0.0; n];
    dist[x] = 1.0;
    let mut next = vec![0.0; n];
    for _ in 0..k {
        next.iter_mut().for_each(|m| *m = 0.0);
        for (v, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let nbrs = graph.neighbors(v);
            if nbrs.is_empty() {
                return Err(FlowError::DegenerateWalk { node: v });
            }
            let share = mass / nbrs.len() as f64;
            for &u in nbrs {
                next[u] += share;
            }
        }
        std::mem::swap(&mut dist, &mut next);
    }
    Ok(dist)
}
