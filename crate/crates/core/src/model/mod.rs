//! EdgeConv point classifier with hand-written backpropagation.
//!
//! Layer `l` builds a kNN graph over its input (coordinates for the first
//! layer, the previous layer's features afterwards), applies a shared affine
//! map to every edge feature `(x_i, x_j − x_i)`, a leaky rectifier, and takes
//! the channel-wise maximum over the `k` edges of each point. The head sees
//! every layer's per-point output plus the batch-wide maximum of the last
//! layer and maps it through one hidden dense layer to three class logits.

mod adam;
mod backward;
mod checkpoint;
mod forward;
mod loss;
mod metrics;
mod tensor;
mod train;


use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{backward, finite_difference_check, GradCheck};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use forward::{edge_features, forward, forward_with_graph, EdgeCache, ForwardCache};
pub use loss::{argmax_labels, loss_ce, predict, softmax_rows};
pub use metrics::{evaluate_metrics, ClassMetrics, ClassificationMetrics};
pub use tensor::Mat;
pub use train::{fit_loop, train, EarlyStopping, EpochMetrics, TrainConfig, TrainOutcome, TrainingBatch};

use crate::error::{Error, Result};
use crate::phantom::BoneLabel;
use crate::rng::{self, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Output width of each EdgeConv layer.
    pub widths: Vec<usize>,
    pub head_hidden: usize,
    /// Neighbors per point in every EdgeConv graph.
    pub k: usize,
    /// Negative slope of the leaky rectifier.
    pub slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_dim: 3,
            widths: vec![64, 64, 128],
            head_hidden: 128,
            k: 20,
            slope: 0.2,
        }
    }
}

impl NetworkConfig {
    pub fn classes(&self) -> usize {
        BoneLabel::COUNT
    }

    /// Width of the head input: all per-point layer outputs plus the global maximum.
    pub fn head_input(&self) -> usize {
        self.widths.iter().sum::<usize>() + self.widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.widths.is_empty() || self.widths.contains(&0) || self.head_hidden == 0 {
            return Err(Error::InvalidConfig(format!("degenerate network shape {self:?}")));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("network k must be >= 1".into()));
        }
        if !(self.slope >= 0.0 && self.slope < 1.0) {
            return Err(Error::InvalidConfig(format!("slope must be in [0, 1), got {}", self.slope)));
        }
        Ok(())
    }
}

/// Weight matrix (inputs × outputs) and bias of one affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Affine {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Mat::zeros(inputs, outputs),
            bias: vec![0.0; outputs],
        }
    }

    fn len(&self) -> usize {
        self.weight.data.len() + self.bias.len()
    }
}

/// Every trainable tensor of a network. Also used for gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// EdgeConv maps, weight shape (2·d_in) × d_out: rows `0..d_in` act on
    /// `x_i`, rows `d_in..` on `x_j − x_i`.
    pub edge: Vec<Affine>,
    pub hidden: Affine,
    pub output: Affine,
}

impl Params {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let mut d_in = cfg.input_dim;
        let edge = cfg
            .widths
            .iter()
            .map(|&w| {
                let a = Affine::zeros(2 * d_in, w);
                d_in = w;
                a
            })
            .collect();
        Self {
            edge,
            hidden: Affine::zeros(cfg.head_input(), cfg.head_hidden),
            output: Affine::zeros(cfg.head_hidden, cfg.classes()),
        }
    }

    fn tensors(&self) -> impl Iterator<Item = &Affine> {
        self.edge.iter().chain([&self.hidden, &self.output])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Affine> {
        self.edge.iter_mut().chain([&mut self.hidden, &mut self.output])
    }

    /// Names and shapes in flattening order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, a) in self.edge.iter().enumerate() {
            out.push((format!("edge{i}.weight"), vec![a.weight.rows, a.weight.cols]));
            out.push((format!("edge{i}.bias"), vec![a.bias.len()]));
        }
        for (name, a) in [("hidden", &self.hidden), ("output", &self.output)] {
            out.push((format!("{name}.weight"), vec![a.weight.rows, a.weight.cols]));
            out.push((format!("{name}.bias"), vec![a.bias.len()]));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().map(Affine::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for a in self.tensors() {
            out.extend_from_slice(&a.weight.data);
            out.extend_from_slice(&a.bias);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length mismatch");
        let mut rest = flat;
        for a in self.tensors_mut() {
            let (w, r) = rest.split_at(a.weight.data.len());
            a.weight.data.copy_from_slice(w);
            let (b, r) = r.split_at(a.bias.len());
            a.bias.copy_from_slice(b);
            rest = r;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: Params,
}

impl Network {
    /// Fan-in scaled uniform weights (He bound for the leaky rectifier), zero biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Params::zeros(&config);
        let mut rng = rng::stream_rng(seed, streams::INIT);
        let gain = (2.0 / (1.0 + config.slope * config.slope)).sqrt();
        for a in params.tensors_mut() {
            let bound = gain * (3.0 / a.weight.rows as f64).sqrt();
            a.weight.data.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        }
        Ok(Self { config, params })
    }

    pub(crate) fn leaky(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.config.slope * z
        }
    }

    /// Derivative used by backpropagation; the kink at 0 takes the negative slope.
    pub(crate) fn leaky_grad(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else {
            self.config.slope
        }
    }
}
