//! Influence distributions and the random-walk equivalence check.
//!
//! The influence of `y` on `x` is the absolute Jacobian mass
//! `Σ_{i,j} |∂h_x^K[i] / ∂h_y^0[j]|`, normalized over all `y`. For the
//! identity mechanism with uniform walks on a regular graph, the flow
//! sources conserved at `x` are distributed as a k-step random walk from
//! `x`; [`verify_theorem`] measures how close a finite sample gets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::graph::{grid_torus, k_step_rw_distribution};
use crate::matrix::Matrix;
use crate::model::network::{backprop_layers, forward};
use crate::model::{Activation, ModelParams};
use crate::propagate::PropagationMatrix;
use crate::walk::{walk_rng, PathSet, Stepper, WalkParams};

/// Largest `n·d` accepted by [`influence_jacobian`].
pub const JACOBIAN_LIMIT: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Jacobian,
    FlowCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub x: usize,
    pub k: usize,
    pub samples: usize,
    pub tv: f64,
    pub method: Method,
    pub dist: Vec<f64>,
    #[serde(rename = "ref")]
    pub reference: Vec<f64>,
}

/// Unnormalized influence scores of every node on `x`, exact by one
/// reverse pass per coordinate of `h_x^K`.
pub fn influence_jacobian(
    params: &ModelParams,
    features: &Matrix,
    props: &[PropagationMatrix],
    act: Activation,
    x: usize,
) -> Result<Vec<f64>> {
    let (n, d) = features.shape();
    if n.saturating_mul(d) > JACOBIAN_LIMIT {
        return Err(FlowError::TooLarge(format!(
            "dense Jacobian over {n} nodes x {d} features exceeds {JACOBIAN_LIMIT} entries"
        )));
    }
    if x >= n {
        return Err(FlowError::Index { id: x, num_nodes: n });
    }
    let cache = forward(features, props, params, act)?;
    let width = cache.hidden.last().expect("at least one layer").cols();
    let per_coord = (0..width)
        .into_par_iter()
        .map(|i| {
            let mut seed = Matrix::zeros(n, width);
            seed[(x, i)] = 1.0;
            let grad = backprop_layers(features, props, params, act, &cache, seed, None, true)?
                .expect("input gradient requested");
            Ok((0..n)
                .map(|y| grad.row(y).iter().map(|g| g.abs()).sum::<f64>())
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = vec![0.0; n];
    for row in per_coord {
        for (s, v) in scores.iter_mut().zip(row) {
            *s += v;
        }
    }
    Ok(scores)
}

/// Scales nonnegative scores to sum to one; `None` when they are all zero.
pub fn normalize(scores: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = scores.iter().sum();
    (total > 0.0).then(|| scores.iter().map(|s| s / total).collect())
}

/// Empirical distribution of the sources of flows conserved at `x`. With
/// `sink_only`, only paths ending at `x` count.
pub fn flow_influence(paths: &PathSet, num_nodes: usize, x: usize, sink_only: bool) -> Result<Vec<f64>> {
    if x >= num_nodes {
        return Err(FlowError::Index { id: x, num_nodes });
    }
    let mut counts = vec![0u64; num_nodes];
    for path in paths.iter() {
        let hits = if sink_only {
            usize::from(path[path.len() - 1] == x)
        } else {
            path[1..].iter().filter(|&&v| v == x).count()
        };
        if hits > 0 {
            let s = path[0];
            if s >= num_nodes {
                return Err(FlowError::Index { id: s, num_nodes });
            }
            counts[s] += hits as u64;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(FlowError::EmptyInfluence { node: x });
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// `½·Σ|a_i − b_i|`.
pub fn tv_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FlowError::Shape(format!(
            "distributions of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    for (name, v) in [("first", a), ("second", b)] {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(FlowError::Argument(format!("{name} distribution sums to {s}")));
        }
    }
    Ok(0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Node at the middle of a `rows × cols` torus.
pub fn center_node(rows: usize, cols: usize) -> usize {
    (rows / 2) * cols + cols / 2
}

/// Uniform walks of `k` steps on a torus, started round-robin over the
/// nodes. Walk `i` starts at `i mod n`.
pub fn torus_walks(rows: usize, cols: usize, k: usize, samples: usize, seed: u64) -> Result<PathSet> {
    let graph = grid_torus(rows, cols)?;
    let n = graph.num_nodes();
    let params = WalkParams {
        p: 1.0,
        q: 1.0,
        length: k + 1,
        restarts: samples.div_ceil(n),
        seed,
    };
    let chunks: Vec<Vec<usize>> = (0..samples)
        .into_par_iter()
        .chunks(4096)
        .map_init(
            || Stepper::new(&graph, 1.0, 1.0),
            |stepper, idx| {
                let mut out = Vec::with_capacity(idx.len() * (k + 1));
                for i in idx {
                    let mut rng = walk_rng(seed, 0, i / n, i % n);
                    stepper
                        .walk_into(i % n, k + 1, &mut rng, &mut out)
                        .expect("torus has no isolated nodes");
                }
                out
            },
        )
        .collect();
    let mut set = PathSet::new(params, 0);
    for c in chunks {
        for p in c.chunks(k + 1) {
            set.push(p)?;
        }
    }
    Ok(set)
}

/// Compares the sink-only flow influence at the torus center with the
/// exact `k`-step random-walk distribution from it.
pub fn verify_theorem(rows: usize, cols: usize, k: usize, samples: usize, seed: u64) -> Result<InfluenceReport> {
    if k < 1 {
        return Err(FlowError::Argument("k must be at least 1".into()));
    }
    let graph = grid_torus(rows, cols)?;
    let x = center_node(rows, cols);
    let paths = torus_walks(rows, cols, k, samples, seed)?;
    let dist = flow_influence(&paths, graph.num_nodes(), x, true)?;
    let reference = k_step_rw_distribution(&graph, x, k)?;
    let tv = tv_distance(&dist, &reference)?;
    Ok(InfluenceReport {
        x,
        k,
        samples,
        tv,
        method: Method::FlowCount,
        dist,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dense;
    use crate::propagate::build_propagation_matrix;

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[0.75, 0.25]).unwrap(), 0.25);
        assert!(matches!(tv_distance(&[1.0], &[0.5, 0.5]), Err(FlowError::Shape(_))));
    }

    #[test]
    fn flow_influence_examples() {
        let single = PathSet::from_paths(&[vec![0, 1, 2]]).unwrap();
        assert_eq!(flow_influence(&single, 3, 1, false).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            flow_influence(&single, 3, 0, false),
            Err(FlowError::EmptyInfluence { node: 0 })
        ));

        let edge = PathSet::from_paths(&[vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(flow_influence(&edge, 2, 0, true).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn jacobian_without_propagation_is_self_only() {
        let features = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.3]]).unwrap();
        let mut params = ModelParams::glorot(2, 3, 1, 2, 8);
        params.layers[0].bias = vec![0.1, -0.2, 0.3];
        let props = vec![PropagationMatrix::zeros(3)];
        let scores = influence_jacobian(&params, &features, &props, Activation::Identity, 1).unwrap();
        let self_block: f64 = params.layers[0].weight.as_slice()[..2 * 3].iter().map(|w| w.abs()).sum();
        assert_eq!(scores[0], 0.0);
        assert_eq!(scores[2], 0.0);
        assert!((scores[1] - self_block).abs() < 1e-12);
    }

    #[test]
    fn two_node_linear_model() {
        let features = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let paths = PathSet::from_paths(&[vec![1, 0]]).unwrap();
        let props = vec![build_propagation_matrix(&paths, 2).unwrap()];
        let mut params = ModelParams::zeros(2, 2, 1, 2);
        params.layers[0] = Dense {
            weight: Matrix::from_rows(&[
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.5, -2.0],
                vec![0.25, 1.0],
            ])
            .unwrap(),
            bias: vec![0.0; 2],
        };
        let scores = influence_jacobian(&params, &features, &props, Activation::Identity, 0).unwrap();
        assert!((scores[1] - 3.75).abs() < 1e-12);
        assert!((scores[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn size_guard() {
        let features = Matrix::zeros(200, 51);
        let params = ModelParams::zeros(51, 2, 1, 2);
        let props = vec![PropagationMatrix::zeros(200)];
        assert!(matches!(
            influence_jacobian(&params, &features, &props, Activation::Relu, 0),
            Err(FlowError::TooLarge(_))
        ));
    }

    #[test]
    fn one_step_on_small_torus() {
        let report = verify_theorem(3, 3, 1, 100_000, 5).unwrap();
        assert!(report.tv < 0.02, "tv {}", report.tv);
        assert_eq!(report.x, 4);
        assert!((report.dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_samples_is_empty() {
        assert!(matches!(
            verify_theorem(4, 4, 2, 0, 1),
            Err(FlowError::EmptyInfluence { .. })
        ));
    }

    #[test]
    fn report_json_keys() {
        let report = verify_theorem(3, 3, 1, 900, 1).unwrap();
        let v: serde_json::Value = serde_json::to_value(&report).unwrap();
        for key in ["x", "k", "samples", "tv", "method", "dist", "ref"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["method"], "flow-count");
    }
}
