use serde::{Deserialize, Serialize};

use super::{Activation, ModelParams};
use crate::dataset::{DatasetBundle, Split};
use crate::error::{FlowError, Result};
use crate::matrix::{gemm_nn, gemm_nt, gemm_tn, MatRef, Matrix};
use crate::propagate::PropagationMatrix;

/// Intermediate values kept for the backward pass. Index `k - 1` holds
/// layer `k`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `P_k · h^{k-1}`.
    pub propagated: Vec<Matrix>,
    /// Pre-activations `z^k`.
    pub pre: Vec<Matrix>,
    /// `h^k = σ(z^k)`.
    pub hidden: Vec<Matrix>,
    pub logits: Matrix,
}

fn self_block(w: &Matrix, d_in: usize) -> MatRef<'_> {
    w.view().row_block(0, d_in)
}

fn prop_block(w: &Matrix, d_in: usize) -> MatRef<'_> {
    w.view().row_block(d_in, d_in)
}

fn check_shapes(features: &Matrix, props: &[PropagationMatrix], params: &ModelParams) -> Result<()> {
    if props.len() != params.num_layers() {
        return Err(FlowError::shape(format!(
            "{} propagation matrices for {} layers",
            props.len(),
            params.num_layers()
        )));
    }
    if features.cols() != params.input_dim() {
        return Err(FlowError::shape(format!(
            "features have {} columns, model expects {}",
            features.cols(),
            params.input_dim()
        )));
    }
    if let Some(p) = props.iter().find(|p| p.num_nodes() != features.rows()) {
        return Err(FlowError::shape(format!(
            "propagation matrix over {} nodes, features have {} rows",
            p.num_nodes(),
            features.rows()
        )));
    }
    Ok(())
}

pub fn forward(
    features: &Matrix,
    props: &[PropagationMatrix],
    params: &ModelParams,
    act: Activation,
) -> Result<ForwardCache> {
    check_shapes(features, props, params)?;
    let n = features.rows();
    let mut cache = ForwardCache {
        propagated: Vec::with_capacity(props.len()),
        pre: Vec::with_capacity(props.len()),
        hidden: Vec::with_capacity(props.len()),
        logits: Matrix::zeros(0, 0),
    };
    for (k, (layer, prop)) in params.layers.iter().zip(props).enumerate() {
        let input = if k == 0 { features } else { &cache.hidden[k - 1] };
        let d_in = input.cols();
        let d_out = layer.weight.cols();
        let propagated = prop.apply(input)?;
        let mut z = Matrix::zeros(n, d_out);
        gemm_nn(input.view(), self_block(&layer.weight, d_in), z.as_mut_slice());
        gemm_nn(propagated.view(), prop_block(&layer.weight, d_in), z.as_mut_slice());
        for i in 0..n {
            for (zij, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                *zij += b;
            }
        }
        if !z.all_finite() {
            return Err(FlowError::Numerics {
                epoch: None,
                message: format!("layer {} produced a non-finite activation", k + 1),
            });
        }
        let mut h = z.clone();
        h.as_mut_slice().iter_mut().for_each(|x| *x = act.apply(*x));
        cache.propagated.push(propagated);
        cache.pre.push(z);
        cache.hidden.push(h);
    }
    let top = cache.hidden.last().expect("at least one layer");
    let mut logits = Matrix::zeros(n, params.num_classes());
    gemm_nn(top.view(), params.head.weight.view(), logits.as_mut_slice());
    for i in 0..n {
        for (l, b) in logits.row_mut(i).iter_mut().zip(&params.head.bias) {
            *l += b;
        }
    }
    if !logits.all_finite() {
        return Err(FlowError::Numerics {
            epoch: None,
            message: "non-finite logits".into(),
        });
    }
    cache.logits = logits;
    Ok(cache)
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

fn target(labels: &[Option<usize>], v: usize, classes: usize) -> Result<usize> {
    match labels.get(v).copied().flatten() {
        Some(c) if c < classes => Ok(c),
        Some(c) => Err(FlowError::arg(format!("label {c} of node {v} exceeds class count"))),
        None => Err(FlowError::arg(format!("node {v} in the loss mask is unlabeled"))),
    }
}

/// Mean softmax cross-entropy over `mask` plus `(weight_decay / 2)·Σ‖W‖²`.
pub fn loss(
    logits: &Matrix,
    labels: &[Option<usize>],
    mask: &[usize],
    params: &ModelParams,
    weight_decay: f64,
) -> Result<f64> {
    if mask.is_empty() {
        return Err(FlowError::arg("loss mask selects no nodes"));
    }
    let mut total = 0.0;
    for &v in mask {
        let c = target(labels, v, logits.cols())?;
        total -= log_softmax(logits.row(v))[c];
    }
    Ok(total / mask.len() as f64 + 0.5 * weight_decay * params.weight_sq_norm())
}

/// Gradient of [`loss`] with respect to every parameter. Propagation
/// matrices are constants.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    features: &Matrix,
    props: &[PropagationMatrix],
    params: &ModelParams,
    act: Activation,
    cache: &ForwardCache,
    labels: &[Option<usize>],
    mask: &[usize],
    weight_decay: f64,
) -> Result<ModelParams> {
    if mask.is_empty() {
        return Err(FlowError::arg("loss mask selects no nodes"));
    }
    let n = features.rows();
    let classes = params.num_classes();
    let mut dlogits = Matrix::zeros(n, classes);
    let scale = 1.0 / mask.len() as f64;
    for &v in mask {
        let c = target(labels, v, classes)?;
        let row = dlogits.row_mut(v);
        for (g, lp) in row.iter_mut().zip(log_softmax(cache.logits.row(v))) {
            *g += scale * lp.exp();
        }
        row[c] -= scale;
    }

    let mut grads = params.zeros_like();
    let top = cache.hidden.last().expect("at least one layer");
    gemm_tn(top.view(), dlogits.view(), grads.head.weight.as_mut_slice());
    column_sums(&dlogits, &mut grads.head.bias);
    let mut dh = Matrix::zeros(n, top.cols());
    gemm_nt(dlogits.view(), params.head.weight.view(), dh.as_mut_slice());

    backprop_layers(features, props, params, act, cache, dh, Some(&mut grads), false)?;

    for (g, w) in grads
        .layers
        .iter_mut()
        .chain(std::iter::once(&mut grads.head))
        .zip(params.layers.iter().chain(std::iter::once(&params.head)))
    {
        for (gi, wi) in g.weight.as_mut_slice().iter_mut().zip(w.weight.as_slice()) {
            *gi += weight_decay * wi;
        }
    }
    Ok(grads)
}

/// Pulls `d(objective)/d(h^K)` back through every layer. Accumulates
/// parameter gradients into `grads` when given, and returns the gradient
/// with respect to the input features when `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backprop_layers(
    features: &Matrix,
    props: &[PropagationMatrix],
    params: &ModelParams,
    act: Activation,
    cache: &ForwardCache,
    mut dh: Matrix,
    mut grads: Option<&mut ModelParams>,
    want_input: bool,
) -> Result<Option<Matrix>> {
    let n = features.rows();
    for k in (0..params.num_layers()).rev() {
        let layer = &params.layers[k];
        let input = if k == 0 { features } else { &cache.hidden[k - 1] };
        let d_in = input.cols();

        let mut dz = dh;
        for (g, z) in dz.as_mut_slice().iter_mut().zip(cache.pre[k].as_slice()) {
            *g *= act.derivative(*z);
        }
        if let Some(grads) = grads.as_deref_mut() {
            let g = &mut grads.layers[k];
            let (top, bottom) = g.weight.as_mut_slice().split_at_mut(d_in * layer.weight.cols());
            gemm_tn(input.view(), dz.view(), top);
            gemm_tn(cache.propagated[k].view(), dz.view(), bottom);
            column_sums(&dz, &mut g.bias);
        }
        if k == 0 && !want_input {
            return Ok(None);
        }
        let mut prev = Matrix::zeros(n, d_in);
        gemm_nt(dz.view(), self_block(&layer.weight, d_in), prev.as_mut_slice());
        let mut through_prop = Matrix::zeros(n, d_in);
        gemm_nt(dz.view(), prop_block(&layer.weight, d_in), through_prop.as_mut_slice());
        let back = props[k].apply_transpose(&through_prop)?;
        for (a, b) in prev.as_mut_slice().iter_mut().zip(back.as_slice()) {
            *a += b;
        }
        dh = prev;
    }
    Ok(Some(dh))
}

fn column_sums(m: &Matrix, out: &mut [f64]) {
    for i in 0..m.rows() {
        for (o, x) in out.iter_mut().zip(m.row(i)) {
            *o += x;
        }
    }
}

/// Index of the largest logit; ties go to the lowest class id.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (c, &x) in logits.iter().enumerate().skip(1) {
        if x > logits[best] {
            best = c;
        }
    }
    best
}

/// Fraction of `nodes` whose argmax prediction matches the label; NaN for
/// an empty node set.
pub fn accuracy(logits: &Matrix, labels: &[Option<usize>], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return f64::NAN;
    }
    let hits = nodes
        .iter()
        .filter(|&&v| labels[v] == Some(predict(logits.row(v))))
        .count();
    hits as f64 / nodes.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitAccuracy {
    pub fn from_logits(logits: &Matrix, bundle: &DatasetBundle) -> Self {
        SplitAccuracy {
            train: accuracy(logits, &bundle.labels, &bundle.nodes_in(Split::Train)),
            val: accuracy(logits, &bundle.labels, &bundle.nodes_in(Split::Val)),
            test: accuracy(logits, &bundle.labels, &bundle.nodes_in(Split::Test)),
        }
    }
}

pub fn evaluate(
    params: &ModelParams,
    bundle: &DatasetBundle,
    props: &[PropagationMatrix],
    act: Activation,
) -> Result<SplitAccuracy> {
    let cache = forward(&bundle.features, props, params, act)?;
    Ok(SplitAccuracy::from_logits(&cache.logits, bundle))
}
