use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph_loss::Partition;
use crate::lstm::{lstm_step, LstmState};
use crate::pointcloud::{Frame, Sequence};

use super::{ModelParams, ModelVars};

/// Tape outputs for one frame.
#[derive(Clone, Copy, Debug)]
pub struct FrameOutput {
    /// Shared-MLP features, `n × d_p`.
    pub per_point: Var,
    /// Pooled signature fed to the LSTM, `1 × K_g`.
    pub global: Var,
    /// `n × fine_classes`.
    pub fine: Var,
    /// `n × coarse_classes`.
    pub coarse: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameLogits {
    pub fine: Tensor,
    pub coarse: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FramePrediction {
    pub fine: Partition,
    pub coarse: Partition,
}

/// Network input for a frame: `n × 3` positions shifted so the bounding-box
/// center sits at the origin. Min and max do not depend on point order, so
/// neither does the shift.
pub fn frame_input(frame: &Frame) -> Tensor {
    let pts = frame.positions();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &pts {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let center: [f64; 3] = std::array::from_fn(|k| 0.5 * (lo[k] + hi[k]));
    let data = pts
        .iter()
        .flat_map(|p| (0..3).map(move |k| p[k] - center[k]))
        .collect();
    Tensor::matrix(pts.len(), 3, data).expect("n x 3")
}

fn mlp(tape: &mut Tape, layers: &[super::LinearVars], mut x: Var) -> Result<Var> {
    for layer in layers {
        let y = layer.apply(tape, x)?;
        x = tape.tanh(y);
    }
    Ok(x)
}

/// Shared per-point MLP and the max-pooled global signature of one frame.
pub fn frame_global_feature(tape: &mut Tape, vars: &ModelVars, points: Var) -> Result<(Var, Var)> {
    let (n, _) = tape.value(points).dims2("frame_global_feature")?;
    if n == 0 {
        return Err(Error::Empty {
            op: "frame_global_feature",
        });
    }
    let per_point = mlp(tape, &vars.point_mlp, points)?;
    let projected = vars.global_proj.apply(tape, per_point)?;
    let projected = tape.tanh(projected);
    let global = tape.max_over_rows(projected)?;
    Ok((per_point, global))
}

/// Appends the `1 × d` row `signature` to every row of `x`.
fn attach(tape: &mut Tape, x: Var, signature: Var) -> Result<Var> {
    let n = tape.value(x).rows();
    let b = tape.broadcast_rows(signature, n)?;
    tape.concat(x, b, 1)
}

/// Runs the network over `frames` in order, threading the LSTM state. Frame
/// `k`'s outputs depend on frames `0..=k` only.
pub fn forward(tape: &mut Tape, vars: &ModelVars, frames: &[Frame]) -> Result<Vec<FrameOutput>> {
    let inputs: Vec<Tensor> = frames.iter().map(frame_input).collect();
    forward_inputs(tape, vars, &inputs)
}

/// [`forward`] on precomputed [`frame_input`] tensors.
pub fn forward_inputs(
    tape: &mut Tape,
    vars: &ModelVars,
    inputs: &[Tensor],
) -> Result<Vec<FrameOutput>> {
    let state = LstmState::zeros(tape, vars.lstm.hidden());
    Ok(forward_from(tape, vars, inputs, state)?.0)
}

/// [`forward_inputs`] continuing from `state`; also returns the final state.
pub fn forward_from(
    tape: &mut Tape,
    vars: &ModelVars,
    inputs: &[Tensor],
    mut state: LstmState,
) -> Result<(Vec<FrameOutput>, LstmState)> {
    if inputs.is_empty() {
        return Err(Error::Empty { op: "forward" });
    }
    let mut outputs = Vec::with_capacity(inputs.len());
    for input in inputs {
        let points = tape.constant(input.clone());
        let (per_point, global) = frame_global_feature(tape, vars, points)?;
        state = lstm_step(tape, &vars.lstm, &state, global)?;

        let mut z = attach(tape, per_point, global)?;
        z = attach(tape, z, state.h)?;
        for round in &vars.rounds {
            let u = round.apply(tape, z)?;
            let u = tape.tanh(u);
            let g = tape.max_over_rows(u)?;
            z = attach(tape, u, g)?;
        }

        let trunk = mlp(tape, &vars.head, z)?;
        let fine = vars.fine_out.apply(tape, trunk)?;
        let coarse = vars.coarse_out.apply(tape, trunk)?;
        outputs.push(FrameOutput {
            per_point,
            global,
            fine,
            coarse,
        });
    }
    Ok((outputs, state))
}

/// Per-row argmax, lowest index on ties.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            let row = t.row_slice(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl ModelParams {
    /// Evaluation-only forward pass.
    pub fn logits(&self, seq: &Sequence) -> Result<Vec<FrameLogits>> {
        self.logits_for_frames(seq.frames())
    }

    pub fn logits_for_frames(&self, frames: &[Frame]) -> Result<Vec<FrameLogits>> {
        let mut tape = Tape::new();
        let vars = ModelVars::register_frozen(&mut tape, self)?;
        let outs = forward(&mut tape, &vars, frames)?;
        Ok(outs
            .iter()
            .map(|o| FrameLogits {
                fine: tape.value(o.fine).clone(),
                coarse: tape.value(o.coarse).clone(),
            })
            .collect())
    }

    /// Per-point argmax labels for every frame.
    pub fn predict(&self, seq: &Sequence) -> Result<Vec<FramePrediction>> {
        let cfg = self.config();
        self.logits(seq)?
            .iter()
            .map(|l| {
                Ok(FramePrediction {
                    fine: Partition::new(argmax_rows(&l.fine), cfg.fine_classes)?,
                    coarse: Partition::new(argmax_rows(&l.coarse), cfg.coarse_classes)?,
                })
            })
            .collect()
    }

    /// Per-point features and pooled signature of a single frame.
    pub fn global_feature(&self, frame: &Frame) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = ModelVars::register_frozen(&mut tape, self)?;
        let points = tape.constant(frame_input(frame));
        let (per_point, global) = frame_global_feature(&mut tape, &vars, points)?;
        Ok((tape.value(per_point).clone(), tape.value(global).clone()))
    }
}
