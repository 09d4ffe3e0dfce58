//! K-layer flow network with a softmax classifier head.
//!
//! Layer `k` maps `h^{k-1}` to `σ(concat(h^{k-1}, P_k·h^{k-1})·W^k + b^k)`,
//! where `P_k` is the layer's propagation matrix. Logits are
//! `h^K·W_out + b_out`. Gradients are written out by hand in
//! [`network::backward`].

pub mod checkpoint;
pub mod network;
pub mod optim;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

pub use network::{backward, evaluate, forward, loss, ForwardCache, SplitAccuracy};
pub use optim::Adam;
pub use train::{layer_paths, layer_props, path_batches, train, EarlyStopping, EpochRecord, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`; the rectifier uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(format!("unknown activation {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    #[default]
    Full,
    PathBatch,
}

impl std::str::FromStr for BatchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(BatchMode::Full),
            "path-batch" | "path" => Ok(BatchMode::PathBatch),
            other => Err(format!("unknown batch mode {other:?}")),
        }
    }
}

/// Epoch cap of the short training schedule.
pub const SHORT_SCHEDULE_EPOCHS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub activation: Activation,
    pub seed: u64,
    pub resample_per_epoch: bool,
    pub batch_mode: BatchMode,
    /// Node budget per step in path-batch mode.
    pub batch_nodes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            hidden: 50,
            lr: 1e-4,
            weight_decay: 1e-5,
            max_epochs: 100,
            patience: 10,
            activation: Activation::Relu,
            seed: 0,
            resample_per_epoch: false,
            batch_mode: BatchMode::Full,
            batch_nodes: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.layers < 1 {
            return Err(crate::FlowError::arg("at least one layer is required"));
        }
        if self.hidden < 1 {
            return Err(crate::FlowError::arg("hidden dimension must be positive"));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(crate::FlowError::arg(
                "learning rate must be positive and weight decay non-negative",
            ));
        }
        Ok(())
    }
}

/// Weight and bias of one affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Matrix::zeros(inputs, outputs),
            bias: vec![0.0; outputs],
        }
    }

    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Dense {
            weight: Matrix::from_vec(inputs, outputs, data).expect("sized"),
            bias: vec![0.0; outputs],
        }
    }
}

/// All trainable state. Layer `k` has a `(2·d_{k-1}) × d_k` weight whose
/// first `d_{k-1}` rows act on the node's own state and the rest on the
/// propagated state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Dense>,
    pub head: Dense,
}

impl ModelParams {
    pub fn zeros(input_dim: usize, hidden: usize, layers: usize, classes: usize) -> Self {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat(hidden).take(layers));
        ModelParams {
            layers: dims
                .windows(2)
                .map(|w| Dense::zeros(2 * w[0], w[1]))
                .collect(),
            head: Dense::zeros(hidden, classes),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(input_dim: usize, hidden: usize, layers: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat(hidden).take(layers));
        let layers = dims
            .windows(2)
            .map(|w| Dense::glorot(2 * w[0], w[1], &mut rng))
            .collect();
        ModelParams {
            layers,
            head: Dense::glorot(hidden, classes, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|d| Dense::zeros(d.weight.rows(), d.weight.cols()))
                .collect(),
            head: Dense::zeros(self.head.weight.rows(), self.head.weight.cols()),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows() / 2
    }

    pub fn num_classes(&self) -> usize {
        self.head.weight.cols()
    }

    fn denses(&self) -> impl Iterator<Item = &Dense> {
        self.layers.iter().chain(std::iter::once(&self.head))
    }

    /// Every tensor in a fixed order: per layer weight then bias, head last.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.denses()
            .flat_map(|d| [d.weight.as_slice(), d.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .flat_map(|d| [d.weight.as_mut_slice(), d.bias.as_mut_slice()])
            .collect()
    }

    /// Tensor names matching [`ModelParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for k in 1..=self.layers.len() {
            names.push(format!("layer{k}.weight"));
            names.push(format!("layer{k}.bias"));
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        self.denses()
            .flat_map(|d| [d.weight.shape(), (1, d.bias.len())])
            .collect()
    }

    /// `Σ‖W‖²` over weight matrices; biases excluded.
    pub fn weight_sq_norm(&self) -> f64 {
        self.denses()
            .map(|d| d.weight.as_slice().iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}
