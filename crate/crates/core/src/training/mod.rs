//! Loss composition, the training loop, metrics and the loss comparison run.
//!
//! The per-frame loss is
//! `lambda_fine * CE(fine) + lambda_coarse * CE(coarse) + lambda_graph * soft_graph(softmax(fine))`,
//! averaged over frames. Training backpropagates through windows of
//! consecutive frames, one optimizer step per window.

mod compare;
mod metrics;
mod optim;

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph_loss::{connectivity, soft_graph_loss_with, GraphLossConfig, Partition};
use crate::lstm::LstmState;
use crate::pointcloud::{gauss_weights, Sequence};
use crate::segnet::{
    argmax_rows, forward_from, frame_input, FrameOutput, ModelParams, ModelVars, NetConfig,
};

pub use compare::{compare_loss_curves, Comparison};
pub use metrics::{evaluate, ConfusionMatrix, EvalReport};
pub use optim::{Optimizer, OptimizerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub lambda_fine: f64,
    pub lambda_coarse: f64,
    pub lambda_graph: f64,
    pub graph: GraphLossConfig,
    pub optimizer: OptimizerConfig,
    /// Gradients whose global L2 norm exceeds this are rescaled to it.
    pub clip_norm: Option<f64>,
    /// Frames per optimizer step; `None` steps once per whole sequence.
    pub window: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.003,
            seed: 0,
            lambda_fine: 1.0,
            lambda_coarse: 0.3,
            lambda_graph: 1e-5,
            graph: GraphLossConfig::default(),
            optimizer: OptimizerConfig::default(),
            clip_norm: Some(1.0),
            window: Some(8),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        // Zero is allowed: a zero-rate run leaves parameters untouched.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("lambda_fine", self.lambda_fine),
            ("lambda_coarse", self.lambda_coarse),
            ("lambda_graph", self.lambda_graph),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.lambda_fine == 0.0 && self.lambda_coarse == 0.0 && self.lambda_graph == 0.0 {
            return Err(Error::Config(
                "at least one loss weight must be positive".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        if self.window == Some(0) {
            return Err(Error::Config("window must be at least 1 frame".into()));
        }
        self.graph.validate()?;
        self.optimizer.validate()
    }
}

/// Label-dependent constants of one frame, computed once per run.
#[derive(Clone, Debug)]
pub struct PreparedFrame {
    pub input: Tensor,
    pub weights: Tensor,
    pub fine: Vec<usize>,
    pub coarse: Vec<usize>,
    pub target_connectivity: f64,
}

#[derive(Clone, Debug)]
pub struct PreparedSequence {
    pub frames: Vec<PreparedFrame>,
}

impl PreparedSequence {
    pub fn new(seq: &Sequence, fine_classes: usize) -> Result<Self> {
        let frames = seq
            .frames()
            .iter()
            .map(|f| {
                let w = gauss_weights(&f.positions())?;
                let fine = f.fine_indices();
                let target = Partition::new(fine.clone(), fine_classes)?;
                Ok(PreparedFrame {
                    input: frame_input(f),
                    target_connectivity: connectivity(&w, &target)?,
                    weights: w.to_tensor(),
                    coarse: f.coarse_indices(),
                    fine,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { frames })
    }

    pub fn points(&self) -> usize {
        self.frames.iter().map(|f| f.fine.len()).sum()
    }
}

/// Tape nodes of a sequence loss.
#[derive(Clone, Debug)]
pub struct SequenceLoss {
    /// Mean of `frame_losses`.
    pub loss: Var,
    pub frame_losses: Vec<Var>,
    pub outputs: Vec<FrameOutput>,
    pub final_state: LstmState,
}

/// Records the training loss of one whole sequence on `tape`.
pub fn total_loss(
    tape: &mut Tape,
    vars: &ModelVars,
    seq: &PreparedSequence,
    cfg: &TrainConfig,
) -> Result<SequenceLoss> {
    let state = LstmState::zeros(tape, vars.lstm.hidden());
    window_loss(tape, vars, &seq.frames, state, cfg)
}

/// Loss over consecutive `frames` starting from recurrent `state`.
pub fn window_loss(
    tape: &mut Tape,
    vars: &ModelVars,
    frames: &[PreparedFrame],
    state: LstmState,
    cfg: &TrainConfig,
) -> Result<SequenceLoss> {
    let inputs: Vec<Tensor> = frames.iter().map(|f| f.input.clone()).collect();
    let (outputs, final_state) = forward_from(tape, vars, &inputs, state)?;
    let mut frame_losses = Vec::with_capacity(outputs.len());
    for (frame, out) in frames.iter().zip(&outputs) {
        let mut loss = tape.softmax_cross_entropy(out.fine, &frame.fine)?;
        if cfg.lambda_fine != 1.0 {
            loss = tape.scale(loss, cfg.lambda_fine);
        }
        if cfg.lambda_coarse != 0.0 {
            let ce = tape.softmax_cross_entropy(out.coarse, &frame.coarse)?;
            let ce = tape.scale(ce, cfg.lambda_coarse);
            loss = tape.add(loss, ce)?;
        }
        if cfg.lambda_graph != 0.0 {
            let probs = tape.softmax_rows(out.fine)?;
            let weights = tape.constant(frame.weights.clone());
            let g =
                soft_graph_loss_with(tape, weights, probs, frame.target_connectivity, &cfg.graph)?;
            let g = tape.scale(g, cfg.lambda_graph);
            loss = tape.add(loss, g)?;
        }
        frame_losses.push(loss);
    }
    let mut sum = frame_losses[0];
    for &l in &frame_losses[1..] {
        sum = tape.add(sum, l)?;
    }
    let loss = tape.scale(sum, 1.0 / frame_losses.len() as f64);
    Ok(SequenceLoss {
        loss,
        frame_losses,
        outputs,
        final_state,
    })
}

/// Loss value of `params` on `seq`.
pub fn total_loss_value(params: &ModelParams, seq: &Sequence, cfg: &TrainConfig) -> Result<f64> {
    let prepared = PreparedSequence::new(seq, params.config().fine_classes)?;
    let mut tape = Tape::new();
    let vars = ModelVars::register_frozen(&mut tape, params)?;
    let out = total_loss(&mut tape, &vars, &prepared, cfg)?;
    Ok(tape.value(out.loss).item())
}

/// Recurrent state handed from one training window to the next, detached
/// from the graph that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct CarriedState {
    pub h: Tensor,
    pub c: Tensor,
}

/// Result of one forward/backward pass.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    /// In [`ModelParams::tensors`] order; empty when the loss is not finite.
    pub gradients: Vec<Tensor>,
    /// Correctly labeled points under the current parameters.
    pub correct: usize,
    /// First frame (within the window) whose loss is not finite.
    pub non_finite_frame: Option<usize>,
    pub final_state: CarriedState,
}

/// Loss and parameter gradients over `frames`, starting from `start` or
/// from a zero state.
pub fn loss_and_gradients(
    params: &ModelParams,
    frames: &[PreparedFrame],
    start: Option<&CarriedState>,
    cfg: &TrainConfig,
) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params)?;
    let state = match start {
        Some(s) => LstmState {
            h: tape.constant(s.h.clone()),
            c: tape.constant(s.c.clone()),
        },
        None => LstmState::zeros(&mut tape, vars.lstm.hidden()),
    };
    let out = window_loss(&mut tape, &vars, frames, state, cfg)?;
    let bad_frame = out
        .frame_losses
        .iter()
        .position(|&l| !tape.value(l).item().is_finite());
    let correct = frames
        .iter()
        .zip(&out.outputs)
        .map(|(f, o)| {
            argmax_rows(tape.value(o.fine))
                .iter()
                .zip(&f.fine)
                .filter(|(p, t)| p == t)
                .count()
        })
        .sum();
    let loss = tape.value(out.loss).item();
    let gradients = if bad_frame.is_some() {
        Vec::new()
    } else {
        let mut grads = tape.backward(out.loss)?;
        vars.leaves.iter().map(|&v| grads.take(v)).collect()
    };
    Ok(StepOutput {
        loss,
        gradients,
        correct,
        non_finite_frame: bad_frame,
        final_state: CarriedState {
            h: tape.value(out.final_state.h).clone(),
            c: tape.value(out.final_state.c).clone(),
        },
    })
}

/// Rescales `grads` in place so their joint L2 norm is at most `max`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = max / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean frame loss over the epoch.
    pub loss: f64,
    /// Point accuracy on the fine labels, percent, measured before each update.
    pub train_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

/// Trains `params` on `dataset`.
///
/// Sequences are visited in an order shuffled by `cfg.seed` each epoch. Each
/// sequence is cut into consecutive windows of `cfg.window` frames (the whole
/// sequence when `None`), with one optimizer step per window. The LSTM state
/// flows from one window into the next as a constant.
pub fn train(params: ModelParams, dataset: &[Sequence], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(params, dataset, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut params: ModelParams,
    dataset: &[Sequence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty { op: "train" });
    }
    let classes = params.config().fine_classes;
    let prepared: Vec<PreparedSequence> = dataset
        .iter()
        .map(|s| PreparedSequence::new(s, classes))
        .collect::<Result<_>>()?;
    let total_points: usize = prepared.iter().map(PreparedSequence::points).sum();
    let total_frames: usize = prepared.iter().map(|s| s.frames.len()).sum();
    let mut optimizer = Optimizer::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for &s in &order {
            let frames = &prepared[s].frames;
            let window = cfg.window.unwrap_or(frames.len());
            let mut carried: Option<CarriedState> = None;
            for (w, chunk) in frames.chunks(window).enumerate() {
                let step = loss_and_gradients(&params, chunk, carried.as_ref(), cfg)?;
                if let Some(frame) = step.non_finite_frame {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        sequence: s,
                        frame: w * window + frame,
                    });
                }
                loss_sum += step.loss * chunk.len() as f64;
                correct += step.correct;
                let mut grads = step.gradients;
                if let Some(max) = cfg.clip_norm {
                    clip_global_norm(&mut grads, max);
                }
                optimizer.step(&mut params.tensors_mut(), &grads, cfg.learning_rate)?;
                carried = Some(step.final_state);
            }
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / total_frames as f64,
            train_acc: 100.0 * correct as f64 / total_points as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome { params, history })
}

/// Initializes a network from `cfg.seed` and trains it.
pub fn train_from_scratch(
    net: &NetConfig,
    dataset: &[Sequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train(ModelParams::init(net, cfg.seed)?, dataset, cfg)
}

pub const HISTORY_HEADER: [&str; 3] = ["epoch", "loss", "train_acc"];

pub fn write_history(history: &[EpochStats], out: impl std::io::Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER)?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.loss.to_string(),
            h.train_acc.to_string(),
        ])?;
    }
    w.flush()
}

pub fn save_history(history: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history(history, &mut file).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}
