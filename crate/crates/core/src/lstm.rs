//! Gated recurrent cell threading a long-term memory across frames.
//!
//! One step with input `x_t` and previous state `(h_{t-1}, C_{t-1})`:
//!
//! ```text
//! f_t  = σ(W_f·[h_{t-1}, x_t] + b_f)
//! i_t  = σ(W_i·[h_{t-1}, x_t] + b_i)
//! C̃_t  = tanh(W_c·[h_{t-1}, x_t] + b_c)
//! C_t  = f_t ∘ C_{t-1} + i_t ∘ C̃_t
//! O_t  = σ(W_o·[h_{t-1}, x_t] + b_o)
//! h_t  = O_t ∘ tanh(C_t)
//! ```
//!
//! Weights are stored as `h × (h + d)` matrices acting on the column
//! `[h_{t-1}; x_t]`. On the tape, states and inputs are `1 × h` / `1 × d`
//! rows, so each step multiplies by the transposed weights.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_f: Tensor,
    pub w_i: Tensor,
    pub w_c: Tensor,
    pub w_o: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = Tensor::zeros(&[hidden, hidden + input]);
        let b = Tensor::zeros(&[1, hidden]);
        Self {
            w_f: w.clone(),
            w_i: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_f: b.clone(),
            b_i: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    /// Uniform fan-in initialization in `±1/√(h + d)`.
    pub fn init(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((hidden + input) as f64).sqrt();
        let mut draw = |shape: &[usize]| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches")
        };
        let ws = [hidden, hidden + input];
        let bs = [1, hidden];
        Self {
            w_f: draw(&ws),
            w_i: draw(&ws),
            w_c: draw(&ws),
            w_o: draw(&ws),
            b_f: draw(&bs),
            b_i: draw(&bs),
            b_c: draw(&bs),
            b_o: draw(&bs),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input(&self) -> usize {
        self.w_f.cols() - self.hidden()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        let ws = self.w_f.shape();
        for w in [&self.w_i, &self.w_c, &self.w_o] {
            if w.shape() != ws {
                return Err(Error::Shape {
                    op: "lstm weights",
                    left: ws.to_vec(),
                    right: w.shape().to_vec(),
                });
            }
        }
        for b in [&self.b_f, &self.b_i, &self.b_c, &self.b_o] {
            if b.shape() != [1, h] {
                return Err(Error::Shape {
                    op: "lstm bias",
                    left: vec![1, h],
                    right: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Tensors in canonical order: four weights then four biases.
    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.w_f, &self.w_i, &self.w_c, &self.w_o, &self.b_f, &self.b_i, &self.b_c, &self.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.w_f,
            &mut self.w_i,
            &mut self.w_c,
            &mut self.w_o,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }
}

/// [`LstmParams`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    /// Leaves in [`LstmParams::tensors`] order; gradients land here.
    pub leaves: [Var; 8],
    // Transposed weights, (h + d) × h.
    w_f_t: Var,
    w_i_t: Var,
    w_c_t: Var,
    w_o_t: Var,
    hidden: usize,
    input: usize,
}

impl LstmVars {
    pub fn register(tape: &mut Tape, params: &LstmParams) -> Result<Self> {
        params.validate()?;
        let leaves = params.tensors().map(|t| tape.leaf(t.clone()));
        Self::from_leaves(tape, leaves)
    }

    /// Wires existing tape nodes, in [`LstmParams::tensors`] order.
    pub fn from_leaves(tape: &mut Tape, leaves: [Var; 8]) -> Result<Self> {
        let (hidden, cols) = tape.value(leaves[0]).dims2("lstm")?;
        for (k, &leaf) in leaves.iter().enumerate() {
            let expected = if k < 4 {
                vec![hidden, cols]
            } else {
                vec![1, hidden]
            };
            let found = tape.value(leaf).shape();
            if cols <= hidden || found != expected.as_slice() {
                return Err(Error::Shape {
                    op: "lstm parameters",
                    left: expected,
                    right: found.to_vec(),
                });
            }
        }
        Ok(Self {
            w_f_t: tape.transpose(leaves[0])?,
            w_i_t: tape.transpose(leaves[1])?,
            w_c_t: tape.transpose(leaves[2])?,
            w_o_t: tape.transpose(leaves[3])?,
            leaves,
            hidden,
            input: cols - hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

/// `(h_t, C_t)` as `1 × h` rows.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    /// Zero hidden output and zero memory.
    pub fn zeros(tape: &mut Tape, hidden: usize) -> Self {
        Self {
            h: tape.constant(Tensor::zeros(&[1, hidden])),
            c: tape.constant(Tensor::zeros(&[1, hidden])),
        }
    }
}

fn gate(tape: &mut Tape, z: Var, w_t: Var, b: Var) -> Result<Var> {
    let a = tape.matmul(z, w_t)?;
    tape.add(a, b)
}

pub fn lstm_step(tape: &mut Tape, p: &LstmVars, prev: &LstmState, x: Var) -> Result<LstmState> {
    let xs = tape.value(x).shape();
    if xs != [1, p.input] {
        return Err(Error::Shape {
            op: "lstm_step input",
            left: vec![1, p.input],
            right: xs.to_vec(),
        });
    }
    for s in [prev.h, prev.c] {
        let ss = tape.value(s).shape();
        if ss != [1, p.hidden] {
            return Err(Error::Shape {
                op: "lstm_step state",
                left: vec![1, p.hidden],
                right: ss.to_vec(),
            });
        }
    }
    let [_, _, _, _, b_f, b_i, b_c, b_o] = p.leaves;
    let z = tape.concat(prev.h, x, 1)?;

    let f = gate(tape, z, p.w_f_t, b_f)?;
    let f = tape.sigmoid(f);
    let i = gate(tape, z, p.w_i_t, b_i)?;
    let i = tape.sigmoid(i);
    let cand = gate(tape, z, p.w_c_t, b_c)?;
    let cand = tape.tanh(cand);
    let keep = tape.mul(f, prev.c)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let o = gate(tape, z, p.w_o_t, b_o)?;
    let o = tape.sigmoid(o);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// Folds [`lstm_step`] over `inputs`, returning every intermediate state.
pub fn run_sequence(
    tape: &mut Tape,
    p: &LstmVars,
    initial: LstmState,
    inputs: &[Var],
) -> Result<Vec<LstmState>> {
    if inputs.is_empty() {
        return Err(Error::Empty { op: "run_sequence" });
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut state = initial;
    for &x in inputs {
        state = lstm_step(tape, p, &state, x)?;
        states.push(state);
    }
    Ok(states)
}
