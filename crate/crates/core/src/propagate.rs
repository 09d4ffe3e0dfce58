//! Flow propagation along information flow paths.
//!
//! [`info_propagate`] runs the generate/conserve/transmit template path by
//! path and keeps every conserved record. It is the reference semantics.
//! [`build_propagation_matrix`] produces the equivalent linear operator for
//! the identity mechanism, which is what training uses.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{FlowError, Result};
use crate::matrix::{MatRef, Matrix};
use crate::walk::PathSet;

/// How a flow is created at the source, altered between hops and recorded
/// at the nodes it passes.
pub trait PropagationMechanism: Sync {
    fn generate(&self, source: usize, hidden: &[f64]) -> Vec<f64>;
    fn transmit(&self, node: usize, flow: &mut [f64]);
    fn conserve(&self, node: usize, flow: &[f64]) -> Vec<f64>;
}

/// Flows travel unchanged and are recorded verbatim.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl PropagationMechanism for Identity {
    fn generate(&self, _source: usize, hidden: &[f64]) -> Vec<f64> {
        hidden.to_vec()
    }

    fn transmit(&self, _node: usize, _flow: &mut [f64]) {}

    fn conserve(&self, _node: usize, flow: &[f64]) -> Vec<f64> {
        flow.to_vec()
    }
}

/// Each hop scales the flow by `gamma`. `gamma = 1` is [`Identity`].
#[derive(Clone, Copy, Debug)]
pub struct Decay {
    pub gamma: f64,
}

impl PropagationMechanism for Decay {
    fn generate(&self, _source: usize, hidden: &[f64]) -> Vec<f64> {
        hidden.to_vec()
    }

    fn transmit(&self, _node: usize, flow: &mut [f64]) {
        flow.iter_mut().for_each(|x| *x *= self.gamma);
    }

    fn conserve(&self, _node: usize, flow: &[f64]) -> Vec<f64> {
        flow.to_vec()
    }
}

/// Elementwise mean of equally sized records; the zero vector when empty.
pub fn mean_aggregate(records: &[&[f64]], dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    for (i, r) in records.iter().enumerate() {
        if r.len() != dim {
            return Err(FlowError::shape(format!(
                "record {i} has dimension {}, expected {dim}",
                r.len()
            )));
        }
        for (o, x) in out.iter_mut().zip(r.iter()) {
            *o += x;
        }
    }
    if !records.is_empty() {
        let k = records.len() as f64;
        out.iter_mut().for_each(|x| *x /= k);
    }
    Ok(out)
}

struct Conserved {
    source: usize,
    position: usize,
    flow: Vec<f64>,
}

fn bits_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().map(|x| x.to_bits()).cmp(b.iter().map(|x| x.to_bits()))
}

/// Runs the propagation template over every path.
///
/// Positions `1..l` conserve the incoming flow, then transmit it onward; the
/// source does not conserve its own flow. A node visited twice by one path
/// conserves twice. Nodes that conserve nothing get the zero vector.
///
/// Records are summed in a canonical order (source, position, then value
/// bits), which makes the result independent of path order bit for bit.
pub fn info_propagate<M: PropagationMechanism>(
    features: &Matrix,
    paths: &PathSet,
    mech: &M,
) -> Result<Matrix> {
    let n = features.rows();
    let dim = features.cols();
    let mut conserved: Vec<Vec<Conserved>> = (0..n).map(|_| Vec::new()).collect();
    for path in paths.iter() {
        if let Some(&bad) = path.iter().find(|&&v| v >= n) {
            return Err(FlowError::shape(format!(
                "path visits node {bad} but features have {n} rows"
            )));
        }
        let source = path[0];
        let mut flow = mech.generate(source, features.row(source));
        if flow.len() != dim {
            return Err(FlowError::shape("generated flow changed dimension"));
        }
        for (position, &v) in path.iter().enumerate().skip(1) {
            conserved[v].push(Conserved {
                source,
                position,
                flow: mech.conserve(v, &flow),
            });
            if position + 1 < path.len() {
                mech.transmit(v, &mut flow);
            }
        }
    }

    let mut out = Matrix::zeros(n, dim);
    for (v, records) in conserved.iter_mut().enumerate() {
        records.sort_by(|a, b| {
            (a.source, a.position)
                .cmp(&(b.source, b.position))
                .then_with(|| bits_cmp(&a.flow, &b.flow))
        });
        let refs: Vec<&[f64]> = records.iter().map(|r| r.flow.as_slice()).collect();
        out.row_mut(v).copy_from_slice(&mean_aggregate(&refs, dim)?);
    }
    Ok(out)
}

/// Row-normalized sink-by-source flow counts in CSR form.
///
/// Row `v` holds, for each source `s`, the share of all flows conserved at
/// `v` that originated at `s`. Rows of nodes that conserve nothing are
/// empty. The transpose is kept alongside for backward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationMatrix {
    num_nodes: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    t_offsets: Vec<usize>,
    t_cols: Vec<usize>,
    t_vals: Vec<f64>,
}

impl PropagationMatrix {
    pub fn zeros(num_nodes: usize) -> Self {
        Self::from_sorted_triplets(num_nodes, &[])
    }

    /// `entries` must be sorted by (row, col) without duplicates.
    fn from_sorted_triplets(num_nodes: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut offsets = vec![0; num_nodes + 1];
        let mut t_offsets = vec![0; num_nodes + 1];
        for &(r, c, _) in entries {
            offsets[r + 1] += 1;
            t_offsets[c + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
            t_offsets[i + 1] += t_offsets[i];
        }
        let cols = entries.iter().map(|e| e.1).collect();
        let vals = entries.iter().map(|e| e.2).collect();

        let mut t_cols = vec![0; entries.len()];
        let mut t_vals = vec![0.0; entries.len()];
        let mut fill = t_offsets.clone();
        // rows visited in ascending order, so each transposed row ends up sorted
        for &(r, c, w) in entries {
            t_cols[fill[c]] = r;
            t_vals[fill[c]] = w;
            fill[c] += 1;
        }
        PropagationMatrix {
            num_nodes,
            offsets,
            cols,
            vals,
            t_offsets,
            t_cols,
            t_vals,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(source, weight)` pairs of row `v`, sources ascending.
    pub fn row(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[v]..self.offsets[v + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn row_is_empty(&self, v: usize) -> bool {
        self.offsets[v] == self.offsets[v + 1]
    }

    pub fn get(&self, v: usize, s: usize) -> f64 {
        let r = self.offsets[v]..self.offsets[v + 1];
        match self.cols[r.clone()].binary_search(&s) {
            Ok(i) => self.vals[r.start + i],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.num_nodes, self.num_nodes);
        for v in 0..self.num_nodes {
            for (s, w) in self.row(v) {
                m[(v, s)] = w;
            }
        }
        m
    }

    /// `P · h`.
    pub fn apply(&self, h: &Matrix) -> Result<Matrix> {
        self.check_rows(h.rows())?;
        let mut out = Matrix::zeros(self.num_nodes, h.cols());
        spmm(&self.offsets, &self.cols, &self.vals, h.view(), out.as_mut_slice());
        Ok(out)
    }

    /// `Pᵀ · g`.
    pub fn apply_transpose(&self, g: &Matrix) -> Result<Matrix> {
        self.check_rows(g.rows())?;
        let mut out = Matrix::zeros(self.num_nodes, g.cols());
        spmm(&self.t_offsets, &self.t_cols, &self.t_vals, g.view(), out.as_mut_slice());
        Ok(out)
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.num_nodes {
            return Err(FlowError::shape(format!(
                "propagation over {} nodes applied to {rows} rows",
                self.num_nodes
            )));
        }
        Ok(())
    }

    /// Sources with a nonzero weight in any of `rows`, ascending.
    pub fn sources_of(&self, rows: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = rows.iter().flat_map(|&v| self.row(v).map(|(s, _)| s)).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// The operator on the subgraph `nodes` (ascending global ids), keeping
    /// only the rows in `rows`. Kept rows must draw from `nodes` alone.
    pub fn restrict(&self, nodes: &[usize], rows: &[usize]) -> Result<PropagationMatrix> {
        let local = |g: usize| {
            nodes.binary_search(&g).map_err(|_| {
                FlowError::arg(format!("node {g} is outside the restricted node set"))
            })
        };
        let mut entries = Vec::new();
        let mut rows = rows.to_vec();
        rows.sort_unstable();
        rows.dedup();
        for &v in &rows {
            let lv = local(v)?;
            for (s, w) in self.row(v) {
                entries.push((lv, local(s)?, w));
            }
        }
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Ok(PropagationMatrix::from_sorted_triplets(nodes.len(), &entries))
    }

    /// Debug dump as `v s weight` triplets.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        for v in 0..self.num_nodes {
            for (s, w) in self.row(v) {
                writeln!(out, "{v} {s} {w}")?;
            }
        }
        Ok(())
    }
}

fn spmm(offsets: &[usize], cols: &[usize], vals: &[f64], h: MatRef<'_>, out: &mut [f64]) {
    let dim = h.cols;
    if dim == 0 {
        return;
    }
    out.par_chunks_mut(dim).enumerate().for_each(|(v, orow)| {
        for i in offsets[v]..offsets[v + 1] {
            let w = vals[i];
            let src = &h.data[cols[i] * dim..(cols[i] + 1) * dim];
            for (o, x) in orow.iter_mut().zip(src) {
                *o += w * x;
            }
        }
    });
}

/// Linear operator equal to [`info_propagate`] under the identity mechanism.
pub fn build_propagation_matrix(paths: &PathSet, num_nodes: usize) -> Result<PropagationMatrix> {
    let mut pairs: Vec<(usize, usize)> = paths
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .flat_map_iter(|path| path[1..].iter().map(move |&v| (v, path[0])))
        .collect();
    if let Some(&(v, s)) = pairs.iter().find(|&&(v, s)| v >= num_nodes || s >= num_nodes) {
        return Err(FlowError::Index {
            id: v.max(s),
            num_nodes,
        });
    }
    pairs.par_sort_unstable();

    let mut entries = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let row = pairs[i].0;
        let start = i;
        while i < pairs.len() && pairs[i].0 == row {
            i += 1;
        }
        let total = (i - start) as f64;
        let mut j = start;
        while j < i {
            let s = pairs[j].1;
            let run = j;
            while j < i && pairs[j].1 == s {
                j += 1;
            }
            entries.push((row, s, (j - run) as f64 / total));
        }
    }
    Ok(PropagationMatrix::from_sorted_triplets(num_nodes, &entries))
}
