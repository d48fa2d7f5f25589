//! Independent oracles shared by the acceptance harness and the integration
//! tests. Each check returns a one-line summary or a description of the
//! first disagreement.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spcseg::autodiff::{check_gradients, Tape, Tensor, Var};
use spcseg::graph_loss::{connectivity, graph_loss, soft_graph_loss, GraphLossConfig, Partition};
use spcseg::lstm::{lstm_step, LstmParams, LstmState, LstmVars};
use spcseg::pointcloud::{gauss_weights, FineLabel, Frame, LabeledPoint, Sequence, FINE_CLASSES};
use spcseg::segnet::{argmax_rows, ModelParams, ModelVars, NetConfig};
use spcseg::training::{total_loss, EvalReport, PreparedSequence, TrainConfig};

pub type Check = Result<String, String>;

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-7;
pub const FD_REL_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn random_points(rng: &mut impl Rng, n: usize, half_width: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-half_width..half_width)))
        .collect()
}

pub fn random_labels(rng: &mut impl Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

pub fn random_frame(rng: &mut impl Rng, index: u64, n: usize) -> Frame {
    let points = random_points(rng, n, 1.0)
        .into_iter()
        .map(|p| LabeledPoint::new(p, FineLabel::ALL[rng.random_range(0..FINE_CLASSES)]))
        .collect();
    Frame::new(index, points).unwrap()
}

pub fn random_sequence(rng: &mut impl Rng, frames: usize, points: usize) -> Sequence {
    let frames = (0..frames as u64)
        .map(|i| random_frame(rng, i, points))
        .collect();
    Sequence::new("random", frames).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Fixed, non-uniform weights for reducing a tensor output to a scalar.
fn project(tape: &mut Tape, y: Var, phase: f64) -> spcseg::Result<Var> {
    let v = tape.value(y);
    let r = Tensor::new(
        v.shape().to_vec(),
        (0..v.len())
            .map(|k| (1.37 * k as f64 + phase).sin() + 0.3)
            .collect(),
    )?;
    let r = tape.constant(r);
    let m = tape.mul(y, r)?;
    Ok(tape.sum(m))
}

type ScalarFn = Box<dyn Fn(&mut Tape, &[Var]) -> spcseg::Result<Var>>;

pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: ScalarFn,
}

impl GradCase {
    fn new(
        name: &'static str,
        inputs: Vec<Tensor>,
        phase: f64,
        f: impl Fn(&mut Tape, &[Var]) -> spcseg::Result<Var> + 'static,
    ) -> Self {
        Self {
            name,
            inputs,
            f: Box::new(move |t, v| {
                let y = f(t, v)?;
                project(t, y, phase)
            }),
        }
    }

    /// Worst `(relative, absolute)` error, or an error naming the case.
    pub fn run(&self) -> Result<(f64, f64), String> {
        let report = check_gradients(&self.inputs, FD_STEP, FD_FLOOR, &self.f)
            .map_err(|e| format!("{}: {e}", self.name))?;
        if report.passes(FD_REL_TOL) {
            Ok((report.max_rel_error, report.max_abs_error))
        } else {
            Err(format!(
                "{}: rel err {:.3e} at {:?}",
                self.name, report.max_rel_error, report.worst
            ))
        }
    }
}

/// One instance of every differentiable tape op, inputs drawn from [-2, 2].
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let phase = r.random_range(0.0..6.0);
    let u = |r: &mut ChaCha8Rng, rows, cols| uniform(r, rows, cols, -2.0, 2.0);
    let c = r.random_range(-2.0..2.0);
    let base = r.random_range(1.05..3.0);
    let targets: Vec<usize> = random_labels(&mut r, 4, 5);

    // Entries bounded away from the kink at zero.
    let away_from_zero = {
        let data = (0..6)
            .map(|_| {
                let m: f64 = r.random_range(0.1..2.0);
                if r.random::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect();
        Tensor::matrix(2, 3, data).unwrap()
    };
    // Column maxima well separated from the runner-up.
    let distinct_rows = {
        let (rows, cols) = (4, 3);
        let mut data = vec![0.0; rows * cols];
        for j in 0..cols {
            let mut ranks: Vec<usize> = (0..rows).collect();
            ranks.shuffle(&mut r);
            for (i, rank) in ranks.into_iter().enumerate() {
                data[i * cols + j] = -2.0 + 0.9 * rank as f64 + r.random_range(0.0..0.05);
            }
        }
        Tensor::matrix(rows, cols, data).unwrap()
    };

    vec![
        GradCase::new(
            "matmul",
            vec![u(&mut r, 3, 4), u(&mut r, 4, 2)],
            phase,
            |t, v| t.matmul(v[0], v[1]),
        ),
        GradCase::new("transpose", vec![u(&mut r, 3, 2)], phase, |t, v| {
            t.transpose(v[0])
        }),
        GradCase::new(
            "add",
            vec![u(&mut r, 3, 3), u(&mut r, 3, 3)],
            phase,
            |t, v| t.add(v[0], v[1]),
        ),
        GradCase::new(
            "sub",
            vec![u(&mut r, 3, 3), u(&mut r, 3, 3)],
            phase,
            |t, v| t.sub(v[0], v[1]),
        ),
        GradCase::new(
            "mul",
            vec![u(&mut r, 3, 3), u(&mut r, 3, 3)],
            phase,
            |t, v| t.mul(v[0], v[1]),
        ),
        GradCase::new(
            "add_row",
            vec![u(&mut r, 4, 3), u(&mut r, 1, 3)],
            phase,
            |t, v| t.add_row(v[0], v[1]),
        ),
        GradCase::new("broadcast_rows", vec![u(&mut r, 1, 3)], phase, |t, v| {
            t.broadcast_rows(v[0], 4)
        }),
        GradCase::new("scale", vec![u(&mut r, 3, 2)], phase, move |t, v| {
            Ok(t.scale(v[0], c))
        }),
        GradCase::new("add_scalar", vec![u(&mut r, 3, 2)], phase, move |t, v| {
            Ok(t.add_scalar(v[0], c))
        }),
        GradCase::new("sigmoid", vec![u(&mut r, 3, 3)], phase, |t, v| {
            Ok(t.sigmoid(v[0]))
        }),
        GradCase::new(
            "tanh",
            vec![u(&mut r, 3, 3)],
            phase,
            |t, v| Ok(t.tanh(v[0])),
        ),
        GradCase::new("abs", vec![away_from_zero], phase, |t, v| Ok(t.abs(v[0]))),
        GradCase::new("pow_const", vec![u(&mut r, 2, 3)], phase, move |t, v| {
            t.pow_const(base, v[0])
        }),
        GradCase::new(
            "concat_rows",
            vec![u(&mut r, 2, 3), u(&mut r, 1, 3)],
            phase,
            |t, v| t.concat(v[0], v[1], 0),
        ),
        GradCase::new(
            "concat_cols",
            vec![u(&mut r, 2, 3), u(&mut r, 2, 2)],
            phase,
            |t, v| t.concat(v[0], v[1], 1),
        ),
        GradCase::new("max_over_rows", vec![distinct_rows], phase, |t, v| {
            t.max_over_rows(v[0])
        }),
        GradCase::new("softmax_rows", vec![u(&mut r, 3, 4)], phase, |t, v| {
            t.softmax_rows(v[0])
        }),
        GradCase::new(
            "softmax_cross_entropy",
            vec![u(&mut r, 4, 5)],
            phase,
            move |t, v| t.softmax_cross_entropy(v[0], &targets),
        ),
        GradCase::new("sum", vec![u(&mut r, 3, 2)], phase, |t, v| Ok(t.sum(v[0]))),
        GradCase::new(
            "upper_weighted_sum",
            vec![u(&mut r, 4, 4), u(&mut r, 4, 4)],
            phase,
            |t, v| t.upper_weighted_sum(v[0], v[1]),
        ),
    ]
}

/// Soft graph loss reached through a softmax, so perturbed logits still
/// give valid distributions.
pub fn soft_graph_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let w = gauss_weights(&random_points(&mut r, 6, 1.0)).unwrap();
    let target = Partition::new(random_labels(&mut r, 6, 3), 3).unwrap();
    let logits = uniform(&mut r, 6, 3, -2.0, 2.0);
    GradCase {
        name: "soft_graph_loss",
        inputs: vec![logits],
        f: Box::new(move |t, v| {
            let p = t.softmax_rows(v[0])?;
            soft_graph_loss(t, &w, p, &target, &GraphLossConfig::default())
        }),
    }
}

/// Soft relaxation written out in plain arithmetic, weights recomputed from
/// the raw points.
fn soft_loss_plain(points: &[[f64; 3]], probs: &[Vec<f64>], target: &[usize], a: f64) -> f64 {
    let n = points.len();
    let w = |i: usize, j: usize| {
        let d2: f64 = (0..3).map(|k| (points[i][k] - points[j][k]).powi(2)).sum();
        (-d2).exp()
    };
    let (mut c1, mut c2) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let same: f64 = probs[i].iter().zip(&probs[j]).map(|(p, q)| p * q).sum();
            c1 += 0.5 * w(i, j) * (1.0 - same);
            if target[i] != target[j] {
                c2 += 0.5 * w(i, j);
            }
        }
    }
    a.powf((c1 - c2).abs()) - 1.0
}

/// Tape gradient of the soft loss with respect to the probabilities
/// against central differences of [`soft_loss_plain`].
pub fn soft_graph_plain_oracle(seed: u64) -> Result<f64, String> {
    let mut r = rng(seed.wrapping_add(1 << 32));
    let (n, k) = (6, 3);
    let points = random_points(&mut r, n, 1.0);
    let target = random_labels(&mut r, n, k);
    let probs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();

    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::from_rows(&probs).unwrap());
    let w = gauss_weights(&points).unwrap();
    let part = Partition::new(target.clone(), k).unwrap();
    let loss = soft_graph_loss(&mut tape, &w, p, &part, &GraphLossConfig::default())
        .map_err(|e| e.to_string())?;
    let analytic = tape.backward(loss).map_err(|e| e.to_string())?.get(p);

    let mut worst: f64 = 0.0;
    let mut probe = probs.clone();
    for i in 0..n {
        for j in 0..k {
            probe[i][j] = probs[i][j] + FD_STEP;
            let plus = soft_loss_plain(&points, &probe, &target, 1.1);
            probe[i][j] = probs[i][j] - FD_STEP;
            let minus = soft_loss_plain(&points, &probe, &target, 1.1);
            probe[i][j] = probs[i][j];
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.get(i, j);
            let abs = (a - numeric).abs();
            if abs > FD_FLOOR {
                worst = worst.max(abs / a.abs().max(numeric.abs()));
            }
        }
    }
    if worst < FD_REL_TOL {
        Ok(worst)
    } else {
        Err(format!(
            "soft_graph_loss vs plain oracle: rel err {worst:.3e}"
        ))
    }
}

/// Four unrolled steps; the scalar reads both the final output and memory.
pub fn lstm_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let (h, d) = (3, 2);
    let params = LstmParams::init(h, d, &mut r);
    let mut inputs: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    // Push biases off zero so every bias gradient is exercised.
    for b in &mut inputs[4..] {
        *b = uniform(&mut r, 1, h, -1.0, 1.0);
    }
    for _ in 0..4 {
        inputs.push(uniform(&mut r, 1, d, -2.0, 2.0));
    }
    inputs.push(uniform(&mut r, 1, h, -1.0, 1.0));
    inputs.push(uniform(&mut r, 1, h, -2.0, 2.0));
    let phase = r.random_range(0.0..6.0);
    GradCase::new("lstm_step x4", inputs, phase, |t, v| {
        let p = LstmVars::from_leaves(t, v[..8].try_into().unwrap())?;
        let mut state = LstmState { h: v[12], c: v[13] };
        for &x in &v[8..12] {
            state = lstm_step(t, &p, &state, x)?;
        }
        t.concat(state.h, state.c, 1)
    })
}

pub fn tiny_net() -> NetConfig {
    NetConfig {
        point_dims: vec![4, 3],
        global_dim: 3,
        lstm_hidden: 3,
        global_rounds: 2,
        head_dims: vec![4],
        ..NetConfig::default()
    }
}

/// Full training objective on two 5-point frames, every parameter an input.
pub fn total_loss_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let net = tiny_net();
    let params = ModelParams::init(&net, seed).unwrap();
    let seq = random_sequence(&mut r, 2, 5);
    let prepared = PreparedSequence::new(&seq, net.fine_classes).unwrap();
    let cfg = TrainConfig {
        lambda_graph: 0.1,
        ..TrainConfig::default()
    };
    GradCase {
        name: "total_loss",
        inputs: params.tensors().into_iter().cloned().collect(),
        f: Box::new(move |t, v| {
            let vars = ModelVars::from_leaves(t, &net, v.to_vec())?;
            Ok(total_loss(t, &vars, &prepared, &cfg)?.loss)
        }),
    }
}

/// Every gradient family over `seeds`.
pub fn gradient_oracle(seeds: std::ops::Range<u64>) -> Check {
    let (mut worst, mut worst_abs): (f64, f64) = (0.0, 0.0);
    let mut cases = 0;
    let n_seeds = seeds.end - seeds.start;
    for seed in seeds {
        let mut all = op_cases(seed);
        all.push(soft_graph_case(seed));
        all.push(lstm_case(seed));
        all.push(total_loss_case(seed));
        for case in &all {
            let (rel, abs) = case.run().map_err(|e| format!("seed {seed}: {e}"))?;
            worst = worst.max(rel);
            worst_abs = worst_abs.max(abs);
            cases += 1;
        }
        worst = worst.max(soft_graph_plain_oracle(seed).map_err(|e| format!("seed {seed}: {e}"))?);
        cases += 1;
    }
    Ok(format!(
        "{cases} cases over {n_seeds} seeds, worst abs err {worst_abs:.1e}, worst rel err above floor {worst:.1e}"
    ))
}

/// Pairwise cut weight by the most literal route: every ordered pair,
/// halved, with weights recomputed from the points.
pub fn naive_connectivity(points: &[[f64; 3]], labels: &[usize]) -> f64 {
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && labels[i] != labels[j] {
                let d2: f64 = (0..3).map(|k| (points[i][k] - points[j][k]).powi(2)).sum();
                total += (-d2).exp();
            }
        }
    }
    total / 2.0
}

fn labeling(mut code: usize, n: usize, k: usize) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let l = code % k;
            code /= k;
            l
        })
        .collect()
}

/// Exhaustive labelings over three classes for every `n ≤ 6`.
pub fn connectivity_bruteforce(matrices: usize, seed: u64) -> Check {
    const K: usize = 3;
    let cfg = GraphLossConfig::default();
    let mut r = rng(seed);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for n in 1..=6 {
        let total = K.pow(n as u32);
        for m in 0..matrices {
            let points = random_points(&mut r, n, 0.8);
            let w = gauss_weights(&points).unwrap();
            let target_labels = random_labels(&mut r, n, K);
            let target = Partition::new(target_labels.clone(), K).unwrap();
            let c2 = naive_connectivity(&points, &target_labels);
            for code in 0..total {
                let labels = labeling(code, n, K);
                let part = Partition::new(labels.clone(), K).unwrap();
                let c1 = naive_connectivity(&points, &labels);
                let got = connectivity(&w, &part).unwrap();
                let err = (got - c1).abs();
                worst = worst.max(err);
                if err > 1e-12 {
                    return Err(format!(
                        "n={n} matrix {m} labels {labels:?}: C {got} vs {c1}"
                    ));
                }
                let loss = graph_loss(&w, &part, &target, &cfg).unwrap();
                let expected = 1.1f64.powf((c1 - c2).abs()) - 1.0;
                if (loss - expected).abs() > 1e-12 {
                    return Err(format!(
                        "n={n} matrix {m} labels {labels:?}: L {loss} vs {expected}"
                    ));
                }
                let same = graph_loss(&w, &part, &part, &cfg).unwrap();
                if same != 0.0 {
                    return Err(format!("n={n} labels {labels:?}: L(p, p) = {same}"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} labelings, worst |dC| {worst:.1e}"))
}

fn one_hot(labels: &[usize], k: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| (0..k).map(|c| if c == l { 1.0 } else { 0.0 }).collect())
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

/// One-hot probabilities reproduce the hard loss to the bit.
pub fn soft_hard_consistency(instances: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let cfg = GraphLossConfig::default();
    for inst in 0..instances {
        let n = r.random_range(2..=24);
        let k = r.random_range(2..=6);
        let w = gauss_weights(&random_points(&mut r, n, 1.0)).unwrap();
        let pred = random_labels(&mut r, n, k);
        let target = Partition::new(random_labels(&mut r, n, k), k).unwrap();
        let hard =
            graph_loss(&w, &Partition::new(pred.clone(), k).unwrap(), &target, &cfg).unwrap();
        let mut tape = Tape::new();
        let p = tape.constant(one_hot(&pred, k));
        let soft = soft_graph_loss(&mut tape, &w, p, &target, &cfg).unwrap();
        let soft = tape.value(soft).item();
        if soft.to_bits() != hard.to_bits() {
            return Err(format!("instance {inst}: soft {soft:e} vs hard {hard:e}"));
        }
    }
    Ok(format!("{instances} instances bit-identical"))
}

/// Point permutations leave the pooled signature fixed and permute the
/// per-point logits.
pub fn permutation_equivariance(frames: usize, perms: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let net = NetConfig::default();
    let (mut worst_f, mut worst_logit): (f64, f64) = (0.0, 0.0);
    for i in 0..frames {
        let params = ModelParams::init(&net, seed.wrapping_add(i as u64)).unwrap();
        let n = r.random_range(2..=48);
        let frame = random_frame(&mut r, 0, n);
        let (_, global) = params.global_feature(&frame).unwrap();
        let logits = params
            .logits_for_frames(std::slice::from_ref(&frame))
            .unwrap()
            .remove(0);
        for _ in 0..perms {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut r);
            let shuffled = frame.permuted(&order);
            let (_, g) = params.global_feature(&shuffled).unwrap();
            let l = params.logits_for_frames(&[shuffled]).unwrap().remove(0);
            worst_f = worst_f.max(max_abs_diff(g.data(), global.data()));
            for (got, base) in [(&l.fine, &logits.fine), (&l.coarse, &logits.coarse)] {
                worst_logit =
                    worst_logit.max(max_abs_diff(got.data(), base.select_rows(&order).data()));
            }
            if worst_f > 1e-12 || worst_logit > 1e-9 {
                return Err(format!(
                    "frame {i}: |dF| {worst_f:.2e}, |dlogits| {worst_logit:.2e}"
                ));
            }
        }
    }
    Ok(format!(
        "{} permutations, |dF| {worst_f:.1e}, |dlogits| {worst_logit:.1e}",
        frames * perms
    ))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One cell update in scalar loops over plain vectors.
pub fn scalar_lstm_step(p: &LstmParams, h: &[f64], c: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let z: Vec<f64> = h.iter().chain(x).copied().collect();
    let gate = |w: &Tensor, b: &Tensor, r: usize| -> f64 {
        let mut s = b.data()[r];
        for (col, zc) in z.iter().enumerate() {
            s += w.get(r, col) * zc;
        }
        s
    };
    let mut h_next = vec![0.0; hidden];
    let mut c_next = vec![0.0; hidden];
    for r in 0..hidden {
        let f = sigmoid(gate(&p.w_f, &p.b_f, r));
        let i = sigmoid(gate(&p.w_i, &p.b_i, r));
        let cand = gate(&p.w_c, &p.b_c, r).tanh();
        let o = sigmoid(gate(&p.w_o, &p.b_o, r));
        c_next[r] = f * c[r] + i * cand;
        h_next[r] = o * c_next[r].tanh();
    }
    (h_next, c_next)
}

/// Runs the tape cell from `(h0, c0)` over `xs`, returning every `(h, C)`.
pub fn tape_lstm(
    p: &LstmParams,
    h0: &[f64],
    c0: &[f64],
    xs: &[Vec<f64>],
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = LstmVars::register(&mut tape, p).unwrap();
    let mut state = LstmState {
        h: tape.constant(Tensor::row(h0.to_vec())),
        c: tape.constant(Tensor::row(c0.to_vec())),
    };
    let mut out = Vec::new();
    for x in xs {
        let xv = tape.constant(Tensor::row(x.clone()));
        state = lstm_step(&mut tape, &vars, &state, xv).unwrap();
        out.push((
            tape.value(state.h).data().to_vec(),
            tape.value(state.c).data().to_vec(),
        ));
    }
    out
}

fn uniform_vec(r: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn lstm_reference(seeds: std::ops::Range<u64>) -> Check {
    let mut worst: f64 = 0.0;
    for seed in seeds {
        let mut r = rng(seed);
        let (hidden, input) = (r.random_range(1..=8), r.random_range(1..=6));
        let mut p = LstmParams::init(hidden, input, &mut r);
        for b in [&mut p.b_f, &mut p.b_i, &mut p.b_c, &mut p.b_o] {
            *b = uniform(&mut r, 1, hidden, -1.0, 1.0);
        }
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|_| uniform_vec(&mut r, input, -2.0, 2.0))
            .collect();
        let h0 = uniform_vec(&mut r, hidden, -1.0, 1.0);
        let c0 = uniform_vec(&mut r, hidden, -2.0, 2.0);
        let (mut h, mut c) = (h0.clone(), c0.clone());
        for (t, (th, tc)) in tape_lstm(&p, &h0, &c0, &xs).into_iter().enumerate() {
            (h, c) = scalar_lstm_step(&p, &h, &c, &xs[t]);
            worst = worst.max(max_abs_diff(&th, &h)).max(max_abs_diff(&tc, &c));
        }
        if worst > 1e-12 {
            return Err(format!("seed {seed}: deviation {worst:.2e}"));
        }
    }
    Ok(format!("max deviation {worst:.1e}"))
}

/// Saturated forget and input gates keep the memory nearly frozen.
pub fn lstm_memory_hold(seeds: std::ops::Range<u64>) -> Check {
    let mut worst: f64 = 0.0;
    for seed in seeds {
        let mut r = rng(seed);
        let (hidden, input) = (8, 4);
        let mut p = LstmParams::init(hidden, input, &mut r);
        p.b_f = Tensor::filled(&[1, hidden], 10.0);
        p.b_i = Tensor::filled(&[1, hidden], -10.0);
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|_| uniform_vec(&mut r, input, -1.0, 1.0))
            .collect();
        // Drift per step is about σ(-10)·|C̃ − C|, so the stored memory is
        // kept within half the candidate range.
        let h0 = vec![0.0; hidden];
        let c0 = uniform_vec(&mut r, hidden, -0.5, 0.5);
        let states = tape_lstm(&p, &h0, &c0, &xs);
        let drift = max_abs_diff(&states[19].1, &c0);
        worst = worst.max(drift);
        if drift >= 1e-3 {
            return Err(format!("seed {seed}: |C20 - C0| = {drift:.2e}"));
        }
    }
    Ok(format!("max |C20 - C0| {worst:.1e}"))
}

/// Per-class accuracy and IoU by direct counting.
pub fn naive_scores(
    truth: &[usize],
    pred: &[usize],
    k: usize,
) -> (Vec<Option<f64>>, Vec<Option<f64>>, f64, f64) {
    let mut acc = vec![None; k];
    let mut iou = vec![None; k];
    for c in 0..k {
        let tp = truth
            .iter()
            .zip(pred)
            .filter(|(t, p)| **t == c && **p == c)
            .count();
        let in_truth = truth.iter().filter(|t| **t == c).count();
        let in_pred = pred.iter().filter(|p| **p == c).count();
        if in_truth == 0 {
            continue;
        }
        acc[c] = Some(100.0 * tp as f64 / in_truth as f64);
        iou[c] = Some(100.0 * tp as f64 / (in_truth + in_pred - tp) as f64);
    }
    let mean = |v: &[Option<f64>]| {
        let present: Vec<f64> = v.iter().flatten().copied().collect();
        present.iter().sum::<f64>() / present.len() as f64
    };
    let (macc, miou) = (mean(&acc), mean(&iou));
    (acc, iou, macc, miou)
}

fn compare_report(
    report: &EvalReport,
    truth: &[usize],
    pred: &[usize],
    k: usize,
) -> Result<(), String> {
    let (acc, iou, macc, miou) = naive_scores(truth, pred, k);
    if report.per_class_acc != acc
        || report.per_class_iou != iou
        || report.macc != macc
        || report.miou != miou
    {
        return Err(format!(
            "report {:?}/{:?} vs oracle {acc:?}/{iou:?}",
            report.per_class_acc, report.per_class_iou
        ));
    }
    Ok(())
}

pub fn metrics_oracle(sets: usize, model_sets: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    for s in 0..sets {
        let k = r.random_range(2..=8);
        let n = r.random_range(1..=300);
        let truth = random_labels(&mut r, n, k);
        // Bias predictions toward the truth so scores spread over [0, 100].
        let hit = r.random_range(0.0..1.0);
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| {
                if r.random_bool(hit) {
                    t
                } else {
                    r.random_range(0..k)
                }
            })
            .collect();
        let report = EvalReport::from_labels(&truth, &pred, k).map_err(|e| e.to_string())?;
        compare_report(&report, &truth, &pred, k).map_err(|e| format!("set {s}: {e}"))?;
        let perfect = EvalReport::from_labels(&truth, &truth, k).map_err(|e| e.to_string())?;
        if perfect.macc != 100.0 || perfect.miou != 100.0 {
            return Err(format!(
                "set {s}: perfect prediction scored {} / {}",
                perfect.macc, perfect.miou
            ));
        }
    }
    let net = tiny_net();
    for s in 0..model_sets {
        let params = ModelParams::init(&net, seed.wrapping_add(s as u64)).unwrap();
        let seq = random_sequence(&mut r, 3, 12);
        let report = spcseg::training::evaluate(&params, std::slice::from_ref(&seq))
            .map_err(|e| e.to_string())?;
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for (frame, logits) in seq.frames().iter().zip(params.logits(&seq).unwrap()) {
            truth.extend(frame.fine_indices());
            pred.extend(argmax_rows(&logits.fine));
        }
        compare_report(&report, &truth, &pred, FINE_CLASSES)
            .map_err(|e| format!("model set {s}: {e}"))?;
    }
    Ok(format!(
        "{sets} label sets and {model_sets} model evaluations match"
    ))
}
