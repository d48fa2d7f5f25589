//! Segmentation network.
//!
//! Per frame:
//!
//! 1. A shared MLP lifts every point to a per-point feature.
//! 2. Those features are projected and max-pooled into a global signature
//!    `F_k`, which is the frame's input to the LSTM, giving `h_k`.
//! 3. `[per_point ‖ F_k ‖ h_k]` is formed for every point.
//! 4. Each further global round applies a shared layer, pools again and
//!    appends the new signature to every point.
//! 5. A shared head MLP feeds two linear heads: fine (6 parts) and coarse
//!    (3 groups).
//!
//! Every per-point computation uses the same weights for all rows and the
//! only cross-point operation is a column max, so outputs permute with the
//! input points.

mod checkpoint;
mod forward;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::lstm::{LstmParams, LstmVars};
use crate::pointcloud::{COARSE_CLASSES, FINE_CLASSES};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use forward::{
    argmax_rows, forward, forward_from, forward_inputs, frame_global_feature, frame_input,
    FrameLogits, FrameOutput, FramePrediction,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Widths of the shared per-point MLP; the last is the per-point feature size.
    pub point_dims: Vec<usize>,
    /// Size of the pooled global signature.
    pub global_dim: usize,
    pub lstm_hidden: usize,
    /// Number of pool-and-concatenate rounds, including the first.
    pub global_rounds: usize,
    /// Hidden widths of the shared head MLP.
    pub head_dims: Vec<usize>,
    pub fine_classes: usize,
    pub coarse_classes: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            point_dims: vec![64, 64, 128],
            global_dim: 128,
            lstm_hidden: 64,
            global_rounds: 2,
            head_dims: vec![128, 64],
            fine_classes: FINE_CLASSES,
            coarse_classes: COARSE_CLASSES,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = self
            .point_dims
            .iter()
            .chain(&self.head_dims)
            .chain([&self.global_dim, &self.lstm_hidden]);
        if self.point_dims.is_empty() || widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config(
                "network widths must be non-empty and at least 1".into(),
            ));
        }
        if self.global_rounds == 0 {
            return Err(Error::Config("global_rounds must be at least 1".into()));
        }
        if self.fine_classes == 0 || self.coarse_classes == 0 {
            return Err(Error::Config("class counts must be positive".into()));
        }
        Ok(())
    }

    pub fn point_feature_dim(&self) -> usize {
        *self.point_dims.last().expect("validated non-empty")
    }

    /// Width of the per-point features entering round `r` (0-based) of the
    /// extra rounds, or the head when `r == global_rounds - 1`.
    fn round_input_dim(&self, r: usize) -> usize {
        if r == 0 {
            self.point_feature_dim() + self.global_dim + self.lstm_hidden
        } else {
            2 * self.global_dim
        }
    }

    fn head_input_dim(&self) -> usize {
        self.round_input_dim(self.global_rounds - 1)
    }
}

/// Fully connected layer `y = x·W + b` with `W: in × out`, `b: 1 × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
        Self {
            weight: Tensor::matrix(input, output, draw(input * output)).expect("sized"),
            bias: Tensor::row(draw(output)),
        }
    }
}

/// All trainable weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: NetConfig,
    pub point_mlp: Vec<Linear>,
    pub global_proj: Linear,
    pub lstm: LstmParams,
    pub rounds: Vec<Linear>,
    pub head: Vec<Linear>,
    pub fine_out: Linear,
    pub coarse_out: Linear,
}

impl ModelParams {
    /// Seeded uniform fan-in initialization.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut point_mlp = Vec::new();
        let mut width = 3;
        for &w in &config.point_dims {
            point_mlp.push(Linear::init(width, w, rng));
            width = w;
        }
        let global_proj = Linear::init(width, config.global_dim, rng);
        let lstm = LstmParams::init(config.lstm_hidden, config.global_dim, rng);
        let rounds = (0..config.global_rounds - 1)
            .map(|r| Linear::init(config.round_input_dim(r), config.global_dim, rng))
            .collect();
        let mut head = Vec::new();
        let mut width = config.head_input_dim();
        for &w in &config.head_dims {
            head.push(Linear::init(width, w, rng));
            width = w;
        }
        let fine_out = Linear::init(width, config.fine_classes, rng);
        let coarse_out = Linear::init(width, config.coarse_classes, rng);
        Ok(Self {
            config: config.clone(),
            point_mlp,
            global_proj,
            lstm,
            rounds,
            head,
            fine_out,
            coarse_out,
        })
    }

    /// All-zero parameters with the shapes of `config`.
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        let mut p = Self::init(config, 0)?;
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(p)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Names in canonical order, matching [`ModelParams::tensors`].
    pub fn names(&self) -> Vec<String> {
        fn linear(names: &mut Vec<String>, prefix: &str) {
            names.push(format!("{prefix}.weight"));
            names.push(format!("{prefix}.bias"));
        }
        let mut names = Vec::new();
        for i in 0..self.point_mlp.len() {
            linear(&mut names, &format!("point_mlp.{i}"));
        }
        linear(&mut names, "global_proj");
        for n in ["w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o"] {
            names.push(format!("lstm.{n}"));
        }
        for i in 0..self.rounds.len() {
            linear(&mut names, &format!("rounds.{i}"));
        }
        for i in 0..self.head.len() {
            linear(&mut names, &format!("head.{i}"));
        }
        linear(&mut names, "fine_out");
        linear(&mut names, "coarse_out");
        names
    }

    /// Every tensor in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for l in &self.point_mlp {
            out.extend([&l.weight, &l.bias]);
        }
        out.extend([&self.global_proj.weight, &self.global_proj.bias]);
        out.extend(self.lstm.tensors());
        for l in self.rounds.iter().chain(&self.head) {
            out.extend([&l.weight, &l.bias]);
        }
        out.extend([&self.fine_out.weight, &self.fine_out.bias]);
        out.extend([&self.coarse_out.weight, &self.coarse_out.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.point_mlp {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out.extend([&mut self.global_proj.weight, &mut self.global_proj.bias]);
        out.extend(self.lstm.tensors_mut());
        for l in self.rounds.iter_mut().chain(&mut self.head) {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out.extend([&mut self.fine_out.weight, &mut self.fine_out.bias]);
        out.extend([&mut self.coarse_out.weight, &mut self.coarse_out.bias]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds parameters from tensors in canonical order, checking shapes.
    pub fn from_tensors(config: &NetConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let slots = p.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Length {
                what: "parameter tensors",
                expected: slots.len(),
                found: tensors.len(),
            });
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "parameter",
                    left: slot.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            *slot = t;
        }
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub(crate) fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.add_row(y, self.bias)
    }
}

/// [`ModelParams`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    /// Leaves in [`ModelParams::tensors`] order.
    pub leaves: Vec<Var>,
    pub(crate) point_mlp: Vec<LinearVars>,
    pub(crate) global_proj: LinearVars,
    pub(crate) lstm: LstmVars,
    pub(crate) rounds: Vec<LinearVars>,
    pub(crate) head: Vec<LinearVars>,
    pub(crate) fine_out: LinearVars,
    pub(crate) coarse_out: LinearVars,
}

impl ModelVars {
    /// Registers every parameter as a differentiable leaf.
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Result<Self> {
        Self::register_with(tape, params, true)
    }

    /// Registers parameters as constants, for inference.
    pub fn register_frozen(tape: &mut Tape, params: &ModelParams) -> Result<Self> {
        Self::register_with(tape, params, false)
    }

    fn register_with(tape: &mut Tape, params: &ModelParams, grad: bool) -> Result<Self> {
        let leaves: Vec<Var> = params
            .tensors()
            .into_iter()
            .map(|t| {
                if grad {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self::from_leaves(tape, params.config(), leaves)
    }

    /// Wires existing tape nodes, given in [`ModelParams::tensors`] order,
    /// into the network structure of `config`.
    pub fn from_leaves(tape: &mut Tape, config: &NetConfig, leaves: Vec<Var>) -> Result<Self> {
        let expected = ModelParams::zeros(config)?.tensors().len();
        if leaves.len() != expected {
            return Err(Error::Length {
                what: "parameter leaves",
                expected,
                found: leaves.len(),
            });
        }
        let mut it = leaves.iter().copied();
        fn next_linear(it: &mut impl Iterator<Item = Var>) -> LinearVars {
            LinearVars {
                weight: it.next().expect("weight leaf"),
                bias: it.next().expect("bias leaf"),
            }
        }
        let point_mlp = config
            .point_dims
            .iter()
            .map(|_| next_linear(&mut it))
            .collect();
        let global_proj = next_linear(&mut it);
        let lstm_leaves: [Var; 8] = std::array::from_fn(|_| it.next().expect("lstm leaf"));
        let lstm = LstmVars::from_leaves(tape, lstm_leaves)?;
        let rounds = (1..config.global_rounds)
            .map(|_| next_linear(&mut it))
            .collect();
        let head = config
            .head_dims
            .iter()
            .map(|_| next_linear(&mut it))
            .collect();
        let fine_out = next_linear(&mut it);
        let coarse_out = next_linear(&mut it);
        Ok(Self {
            point_mlp,
            global_proj,
            lstm,
            rounds,
            head,
            fine_out,
            coarse_out,
            leaves,
        })
    }
}
