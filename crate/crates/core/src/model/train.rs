use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::network::{self, SplitAccuracy};
use super::{Adam, BatchMode, ModelConfig, ModelParams};
use crate::dataset::{DatasetBundle, Split};
use crate::error::{FlowError, Result};
use crate::matrix::Matrix;
use crate::propagate::{build_propagation_matrix, PropagationMatrix};
use crate::walk::{mix64, pathgen, PathSet, WalkParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training objective, weight decay included.
    pub train_loss: f64,
    /// Cross-entropy on the validation split, no decay term.
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; 0 when no epoch ran.
    pub best_epoch: usize,
    pub accuracy: SplitAccuracy,
    /// Path-batch steps skipped for lack of labeled nodes.
    pub skipped_batches: usize,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,train_loss,val_loss,val_acc")?;
        for r in &self.epochs {
            writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_acc)?;
        }
        Ok(())
    }
}

/// Stops once the monitored loss has not improved for `patience`
/// consecutive observations.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Records `loss` for `epoch`; returns `true` when training should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
        }
        epoch - self.best_epoch >= self.patience
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Splits `paths` into consecutive slices of `⌈batch_nodes / l⌉` paths.
pub fn path_batches(paths: &PathSet, batch_nodes: usize) -> Result<Vec<PathSet>> {
    let l = paths.path_len();
    if batch_nodes < l {
        return Err(FlowError::arg(format!(
            "batch of {batch_nodes} nodes is shorter than one path of {l}"
        )));
    }
    let per = batch_nodes.div_ceil(l);
    Ok((0..paths.len())
        .step_by(per)
        .map(|start| paths.slice(start, (start + per).min(paths.len())))
        .collect())
}

/// Walk parameters for each layer; a single entry is shared by all layers.
fn layer_walks(walks: &[WalkParams], layers: usize) -> Result<Vec<WalkParams>> {
    match walks.len() {
        1 => Ok(vec![walks[0]; layers]),
        n if n == layers => Ok(walks.to_vec()),
        n => Err(FlowError::arg(format!(
            "{n} walk configurations for {layers} layers"
        ))),
    }
}

/// Generates one path set per layer.
pub fn layer_paths(bundle: &DatasetBundle, walks: &[WalkParams], layers: usize) -> Result<Vec<PathSet>> {
    layer_walks(walks, layers)?
        .iter()
        .enumerate()
        .map(|(k, w)| pathgen(&bundle.graph, w, k))
        .collect()
}

pub fn layer_props(paths: &[PathSet], num_nodes: usize) -> Result<Vec<PropagationMatrix>> {
    paths
        .iter()
        .map(|p| build_propagation_matrix(p, num_nodes))
        .collect()
}

fn with_epoch(err: FlowError, epoch: usize) -> FlowError {
    match err {
        FlowError::Numerics { message, .. } => FlowError::Numerics {
            epoch: Some(epoch),
            message,
        },
        e => e,
    }
}

fn cross_entropy(logits: &Matrix, bundle: &DatasetBundle, mask: &[usize], params: &ModelParams) -> Result<f64> {
    network::loss(logits, &bundle.labels, mask, params, 0.0)
}

/// Fits a model on `bundle`. Returns the parameters of the epoch with the
/// lowest validation loss.
pub fn train(
    bundle: &DatasetBundle,
    config: &ModelConfig,
    walks: &[WalkParams],
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    let walks = layer_walks(walks, config.layers)?;
    let train_nodes = bundle.nodes_in(Split::Train);
    let val_nodes = bundle.nodes_in(Split::Val);
    if train_nodes.is_empty() || val_nodes.is_empty() {
        return Err(FlowError::arg("train and validation splits must be nonempty"));
    }
    if bundle.num_classes < 1 {
        return Err(FlowError::arg("dataset has no labeled nodes"));
    }

    let n = bundle.num_nodes();
    let mut paths = layer_paths(bundle, &walks, config.layers)?;
    let mut props = layer_props(&paths, n)?;
    let mut params = ModelParams::glorot(
        bundle.feature_dim(),
        config.hidden,
        config.layers,
        bundle.num_classes,
        config.seed,
    );
    let mut best = params.clone();
    let mut opt = Adam::new(&params, config.lr);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut records = Vec::new();
    let mut skipped = 0;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        if config.resample_per_epoch && epoch > 1 {
            let fresh: Vec<WalkParams> = walks
                .iter()
                .map(|w| WalkParams {
                    seed: mix64(w.seed ^ mix64(epoch as u64)),
                    ..*w
                })
                .collect();
            paths = layer_paths(bundle, &fresh, config.layers)?;
            props = layer_props(&paths, n)?;
        }

        let cache = network::forward(&bundle.features, &props, &params, config.activation)
            .map_err(|e| with_epoch(e, epoch))?;
        let train_loss = network::loss(
            &cache.logits,
            &bundle.labels,
            &train_nodes,
            &params,
            config.weight_decay,
        )?;
        let val_loss = cross_entropy(&cache.logits, bundle, &val_nodes, &params)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(FlowError::Numerics {
                epoch: Some(epoch),
                message: "loss diverged".into(),
            });
        }
        let val_acc = network::accuracy(&cache.logits, &bundle.labels, &val_nodes);
        let stop = stopper.observe(epoch, val_loss);
        if stopper.improved_at(epoch) {
            best = params.clone();
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} acc {val_acc:.4}");

        if !stop {
            match config.batch_mode {
                BatchMode::Full => {
                    let grads = network::backward(
                        &bundle.features,
                        &props,
                        &params,
                        config.activation,
                        &cache,
                        &bundle.labels,
                        &train_nodes,
                        config.weight_decay,
                    )?;
                    opt.step(&mut params, &grads);
                }
                BatchMode::PathBatch => {
                    skipped += path_batch_epoch(bundle, config, &paths, &train_nodes, &mut params, &mut opt)
                        .map_err(|e| with_epoch(e, epoch))?;
                }
            }
            if !params.all_finite() {
                return Err(FlowError::Numerics {
                    epoch: Some(epoch),
                    message: "parameters diverged".into(),
                });
            }
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        });
        if stop {
            log::info!("early stop at epoch {epoch}, best epoch {}", stopper.best_epoch());
            break;
        }
    }

    let accuracy = network::evaluate(&best, bundle, &props, config.activation)?;
    let report = TrainReport {
        epochs: records,
        best_epoch: stopper.best_epoch(),
        accuracy,
        skipped_batches: skipped,
    };
    Ok((best, report))
}

/// One pass over aligned path slices; layer `k` uses slice `i` of its own
/// path set. Returns the number of skipped steps.
fn path_batch_epoch(
    bundle: &DatasetBundle,
    config: &ModelConfig,
    paths: &[PathSet],
    train_nodes: &[usize],
    params: &mut ModelParams,
    opt: &mut Adam,
) -> Result<usize> {
    let n = bundle.num_nodes();
    let batches = paths
        .iter()
        .map(|p| path_batches(p, config.batch_nodes))
        .collect::<Result<Vec<_>>>()?;
    let steps = batches.iter().map(Vec::len).max().unwrap_or(0);
    let mut skipped = 0;
    for i in 0..steps {
        let props = batches
            .iter()
            .map(|b| match b.get(i) {
                Some(slice) => build_propagation_matrix(slice, n),
                None => Ok(PropagationMatrix::zeros(n)),
            })
            .collect::<Result<Vec<_>>>()?;
        let last = props.last().expect("at least one layer");
        let mask: Vec<usize> = train_nodes
            .iter()
            .copied()
            .filter(|&v| !last.row_is_empty(v))
            .collect();
        if mask.is_empty() {
            skipped += 1;
            continue;
        }
        let grads = batch_gradient(bundle, config, &props, &mask, params)?;
        opt.step(params, &grads);
    }
    Ok(skipped)
}

/// Gradient of the loss on `mask` computed on the receptive field of the
/// masked nodes only. Equal to the full-graph gradient.
fn batch_gradient(
    bundle: &DatasetBundle,
    config: &ModelConfig,
    props: &[PropagationMatrix],
    mask: &[usize],
    params: &ModelParams,
) -> Result<ModelParams> {
    // needed[k]: nodes whose h^k the loss depends on
    let layers = props.len();
    let mut needed = vec![Vec::new(); layers + 1];
    needed[layers] = mask.to_vec();
    for k in (0..layers).rev() {
        let mut set = props[k].sources_of(&needed[k + 1]);
        set.extend_from_slice(&needed[k + 1]);
        set.sort_unstable();
        set.dedup();
        needed[k] = set;
    }
    let nodes = &needed[0];
    let local = |g: usize| nodes.binary_search(&g).expect("needed sets are nested");

    let d = bundle.feature_dim();
    let mut features = Matrix::zeros(nodes.len(), d);
    for (i, &g) in nodes.iter().enumerate() {
        features.row_mut(i).copy_from_slice(bundle.features.row(g));
    }
    let local_props = props
        .iter()
        .enumerate()
        .map(|(k, p)| p.restrict(nodes, &needed[k + 1]))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Option<usize>> = nodes.iter().map(|&g| bundle.labels[g]).collect();
    let local_mask: Vec<usize> = mask.iter().map(|&g| local(g)).collect();

    let cache = network::forward(&features, &local_props, params, config.activation)?;
    network::backward(
        &features,
        &local_props,
        params,
        config.activation,
        &cache,
        &labels,
        &local_mask,
        config.weight_decay,
    )
}
