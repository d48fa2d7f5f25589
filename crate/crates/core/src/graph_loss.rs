//! Graph-connectivity loss.
//!
//! A labeling partitions the complete graph over a frame's points. Its
//! connectivity is the total Gaussian weight of the edges that join points
//! with different labels:
//!
//! ```text
//! C = Σ_{i<j} δ_ij · w_ij,   δ_ij = [label_i ≠ label_j]
//! ```
//!
//! (`j = i` terms vanish because `δ_ii = 0`, so only the strict upper
//! triangle is summed; summing the full matrix would double `C`.) The loss
//! compares predicted and target connectivity as `a^|C₁ − C₂| − 1`.
//!
//! Training needs gradients, so [`soft_graph_loss`] replaces `δ_ij` by
//! `1 − Σ_k p_ik p_jk`, the probability that two points disagree under
//! independent draws from their predicted class distributions. On one-hot
//! rows this is exactly `δ_ij`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::pointcloud::AdjacencyWeights;

/// Per-point class assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    classes: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty { op: "partition" });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::ClassIndex {
                index: bad,
                classes,
            });
        }
        Ok(Self { labels, classes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphLossConfig {
    /// Base of the exponential; must exceed 1.
    pub a: f64,
}

impl Default for GraphLossConfig {
    fn default() -> Self {
        Self { a: 1.1 }
    }
}

impl GraphLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 1.0 && self.a.is_finite()) {
            return Err(Error::Config(format!(
                "graph loss base must be finite and > 1, got {}",
                self.a
            )));
        }
        Ok(())
    }
}

fn check_len(w: &AdjacencyWeights, part: &Partition) -> Result<()> {
    if part.len() != w.n() {
        return Err(Error::Length {
            what: "partition",
            expected: w.n(),
            found: part.len(),
        });
    }
    Ok(())
}

/// Weight of all edges cut by `part`.
pub fn connectivity(w: &AdjacencyWeights, part: &Partition) -> Result<f64> {
    check_len(w, part)?;
    let labels = part.labels();
    let n = w.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let delta = if labels[i] == labels[j] { 0.0 } else { 1.0 };
            total += delta * w.get(i, j);
        }
    }
    Ok(total)
}

/// `a^|C₁ − C₂| − 1` for predicted (`C₁`) and target (`C₂`) connectivity.
pub fn graph_loss(
    w: &AdjacencyWeights,
    predicted: &Partition,
    target: &Partition,
    cfg: &GraphLossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let c1 = connectivity(w, predicted)?;
    let c2 = connectivity(w, target)?;
    Ok(cfg.a.powf((c1 - c2).abs()) - 1.0)
}

/// Differentiable graph loss from per-point class probabilities (`n × K`).
pub fn soft_graph_loss(
    tape: &mut Tape,
    w: &AdjacencyWeights,
    probs: Var,
    target: &Partition,
    cfg: &GraphLossConfig,
) -> Result<Var> {
    check_len(w, target)?;
    let target_connectivity = connectivity(w, target)?;
    let weights = tape.constant(w.to_tensor());
    soft_graph_loss_with(tape, weights, probs, target_connectivity, cfg)
}

/// [`soft_graph_loss`] with the adjacency already on the tape and the target
/// connectivity precomputed.
pub(crate) fn soft_graph_loss_with(
    tape: &mut Tape,
    weights: Var,
    probs: Var,
    target_connectivity: f64,
    cfg: &GraphLossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let p = tape.value(probs);
    let (n, _) = p.dims2("soft_graph_loss")?;
    let wn = tape.value(weights).rows();
    if n != wn {
        return Err(Error::Length {
            what: "probability rows",
            expected: wn,
            found: n,
        });
    }
    for i in 0..n {
        let row = p.row_slice(i);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::NotADistribution { row: i, sum });
        }
    }

    let pt = tape.transpose(probs)?;
    let same = tape.matmul(probs, pt)?;
    let neg = tape.scale(same, -1.0);
    let differ = tape.add_scalar(neg, 1.0);
    let c1 = tape.upper_weighted_sum(differ, weights)?;
    let gap = tape.add_scalar(c1, -target_connectivity);
    let gap = tape.abs(gap);
    let pow = tape.pow_const(cfg.a, gap)?;
    Ok(tape.add_scalar(pow, -1.0))
}
