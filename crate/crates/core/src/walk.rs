//! Information flow path generation.
//!
//! Each node starts a number of walks proportional to its degree centrality
//! (at least one per iteration when it has any neighbor). Walks follow the
//! node2vec second-order rule: from `cur` having arrived from `prev`, a
//! neighbor `x` gets weight `1/p` if `x == prev`, `1` if `x` is also a
//! neighbor of `prev`, and `1/q` otherwise.
//!
//! Randomness is counter based: the ChaCha key derives from
//! `(seed, layer)` and the stream id from `(iteration, node)`, so a path set
//! does not depend on how work is scheduled across threads.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    /// Path length in nodes, source and sink included.
    pub length: usize,
    /// Path iterations over the node set.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            p: 1000.0,
            q: 0.1,
            length: 6,
            restarts: 10,
            seed: 0,
        }
    }
}

impl WalkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p.is_finite()) || !(self.q > 0.0 && self.q.is_finite()) {
            return Err(FlowError::arg(format!(
                "walk biases must be positive and finite (p={}, q={})",
                self.p, self.q
            )));
        }
        if self.length < 2 {
            return Err(FlowError::arg("path length must be at least 2 nodes"));
        }
        if self.restarts < 1 {
            return Err(FlowError::arg("path iterations must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowPath(pub Vec<usize>);

impl FlowPath {
    pub fn source(&self) -> usize {
        self.0[0]
    }

    pub fn sink(&self) -> usize {
        self.0[self.0.len() - 1]
    }

    pub fn nodes(&self) -> &[usize] {
        &self.0
    }
}

/// Fixed-length paths in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    pub params: WalkParams,
    pub layer: usize,
    length: usize,
    nodes: Vec<usize>,
    /// Nodes skipped because they have no neighbors.
    pub isolated_skipped: usize,
}

impl PathSet {
    pub fn new(params: WalkParams, layer: usize) -> Self {
        PathSet {
            params,
            layer,
            length: params.length,
            nodes: Vec::new(),
            isolated_skipped: 0,
        }
    }

    /// Builds a path set from explicit paths, all of which must have the
    /// same length.
    pub fn from_paths(paths: &[Vec<usize>]) -> Result<Self> {
        let length = paths.first().map_or(2, Vec::len);
        let params = WalkParams {
            length,
            ..WalkParams::default()
        };
        let mut set = PathSet::new(params, 0);
        for p in paths {
            set.push(p)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, path: &[usize]) -> Result<()> {
        if path.len() != self.length {
            return Err(FlowError::shape(format!(
                "path has {} nodes, set holds paths of {}",
                path.len(),
                self.length
            )));
        }
        self.nodes.extend_from_slice(path);
        Ok(())
    }

    /// Nodes per path.
    pub fn path_len(&self) -> usize {
        self.length
    }

    pub fn len(&self) -> usize {
        if self.length == 0 {
            0
        } else {
            self.nodes.len() / self.length
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.nodes[i * self.length..(i + 1) * self.length]
    }

    pub fn iter(&self) -> std::slice::Chunks<'_, usize> {
        self.nodes.chunks(self.length.max(1))
    }

    /// Paths `start..end` as a new set with the same parameters.
    pub fn slice(&self, start: usize, end: usize) -> PathSet {
        PathSet {
            params: self.params,
            layer: self.layer,
            length: self.length,
            nodes: self.nodes[start * self.length..end * self.length].to_vec(),
            isolated_skipped: 0,
        }
    }

    /// Every path has the set's length and follows graph edges.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        for (i, path) in self.iter().enumerate() {
            if let Some(&bad) = path.iter().find(|&&v| v >= graph.num_nodes()) {
                return Err(FlowError::Index {
                    id: bad,
                    num_nodes: graph.num_nodes(),
                });
            }
            if let Some(w) = path.windows(2).find(|w| !graph.has_edge(w[0], w[1])) {
                return Err(FlowError::arg(format!(
                    "path {i} steps from {} to {} without an edge",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// One path per line, space-separated node ids.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::new();
        for path in self.iter() {
            line.clear();
            for (i, v) in path.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&v.to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_dump<R: BufRead>(input: R) -> Result<PathSet> {
        let mut paths = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let path = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| FlowError::Parse {
                        path: "<path dump>".into(),
                        line: i + 1,
                        message: format!("bad node id {t:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            paths.push(path);
        }
        PathSet::from_paths(&paths)
    }
}

/// Walks started from `v` per path iteration, scaled by degree centrality:
/// `r * max(1, round(deg(v) / mean_deg))`, and 0 for isolated nodes.
pub fn importance_restarts(graph: &Graph, v: usize, r: usize) -> usize {
    let deg = graph.degree(v);
    if deg == 0 {
        return 0;
    }
    // deg / mean_deg = deg * n / degree_sum, rounded half up in integers
    let num = deg * graph.num_nodes();
    let den = graph.degree_sum();
    let rounded = (2 * num + den) / (2 * den);
    r * rounded.max(1)
}

/// Neighbors of `cur` with their unnormalized second-order weights.
pub fn second_order_step_weights(
    graph: &Graph,
    prev: usize,
    cur: usize,
    p: f64,
    q: f64,
) -> Result<(&[usize], Vec<f64>)> {
    if !graph.has_edge(prev, cur) {
        return Err(FlowError::arg(format!(
            "previous node {prev} is not adjacent to {cur}"
        )));
    }
    let nbrs = graph.neighbors(cur);
    let weights = nbrs
        .iter()
        .map(|&x| step_weight(graph, prev, x, 1.0 / p, 1.0 / q))
        .collect();
    Ok((nbrs, weights))
}

#[inline]
fn step_weight(graph: &Graph, prev: usize, x: usize, inv_p: f64, inv_q: f64) -> f64 {
    if x == prev {
        inv_p
    } else if graph.has_edge(prev, x) {
        1.0
    } else {
        inv_q
    }
}

/// Reusable sampler for second-order steps; holds the weight buffer.
pub struct Stepper<'g> {
    graph: &'g Graph,
    inv_p: f64,
    inv_q: f64,
    weights: Vec<f64>,
}

impl<'g> Stepper<'g> {
    pub fn new(graph: &'g Graph, p: f64, q: f64) -> Self {
        Stepper {
            graph,
            inv_p: 1.0 / p,
            inv_q: 1.0 / q,
            weights: Vec::new(),
        }
    }

    /// Samples the next node after the step `prev -> cur`.
    pub fn next<R: Rng>(&mut self, prev: usize, cur: usize, rng: &mut R) -> usize {
        let nbrs = self.graph.neighbors(cur);
        debug_assert!(!nbrs.is_empty());
        self.weights.clear();
        let mut total = 0.0;
        for &x in nbrs {
            let w = step_weight(self.graph, prev, x, self.inv_p, self.inv_q);
            total += w;
            self.weights.push(total);
        }
        let target = rng.gen::<f64>() * total;
        // first cumulative weight strictly above the target
        let idx = self.weights.partition_point(|&c| c <= target);
        nbrs[idx.min(nbrs.len() - 1)]
    }

    /// Appends a walk of `length` nodes starting at `start` to `out`.
    pub fn walk_into<R: Rng>(
        &mut self,
        start: usize,
        length: usize,
        rng: &mut R,
        out: &mut Vec<usize>,
    ) -> Result<()> {
        let first = self.graph.neighbors(start);
        if first.is_empty() {
            return Err(FlowError::DegenerateWalk { node: start });
        }
        out.push(start);
        if length < 2 {
            return Ok(());
        }
        let mut prev = start;
        let mut cur = first[rng.gen_range(0..first.len())];
        out.push(cur);
        for _ in 2..length {
            let next = self.next(prev, cur, rng);
            prev = cur;
            cur = next;
            out.push(cur);
        }
        Ok(())
    }
}

pub fn node2vec_walk<R: Rng>(
    graph: &Graph,
    start: usize,
    params: &WalkParams,
    rng: &mut R,
) -> Result<FlowPath> {
    let mut nodes = Vec::with_capacity(params.length);
    Stepper::new(graph, params.p, params.q).walk_into(start, params.length, rng, &mut nodes)?;
    Ok(FlowPath(nodes))
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for the walks started at `node` in path iteration `iter` of `layer`.
pub fn walk_rng(seed: u64, layer: usize, iter: usize, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(layer as u64)));
    rng.set_stream(((iter as u64) << 32) | node as u64);
    rng
}

/// Generates the flow paths for one layer.
///
/// For every path iteration and every non-isolated node `v` (in id order),
/// `importance_restarts(graph, v, 1)` walks start at `v`.
pub fn pathgen(graph: &Graph, params: &WalkParams, layer: usize) -> Result<PathSet> {
    params.validate()?;
    let n = graph.num_nodes();
    let restarts: Vec<usize> = (0..n).map(|v| importance_restarts(graph, v, 1)).collect();
    let isolated = restarts.iter().filter(|&&c| c == 0).count();

    let mut set = PathSet::new(*params, layer);
    set.isolated_skipped = isolated;
    if isolated == n {
        log::warn!("graph has no edges; no flow paths generated");
        return Ok(set);
    }
    let total: usize = restarts.iter().sum::<usize>() * params.restarts;
    set.nodes.reserve(total * params.length);

    for iter in 0..params.restarts {
        let chunks: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .filter(|&v| restarts[v] > 0)
            .map_init(
                || Stepper::new(graph, params.p, params.q),
                |stepper, v| {
                    let mut rng = walk_rng(params.seed, layer, iter, v);
                    let mut out = Vec::with_capacity(restarts[v] * params.length);
                    for _ in 0..restarts[v] {
                        stepper
                            .walk_into(v, params.length, &mut rng, &mut out)
                            .expect("non-isolated start");
                    }
                    out
                },
            )
            .collect();
        for c in chunks {
            set.nodes.extend_from_slice(&c);
        }
    }
    Ok(set)
}
