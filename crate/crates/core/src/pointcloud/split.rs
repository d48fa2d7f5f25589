use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Frame, Sequence};

/// Train / test / validation frames of one sequence. A part is `None` when
/// it received no frames.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSets {
    pub train: Option<Sequence>,
    pub test: Option<Sequence>,
    pub val: Option<Sequence>,
}

/// Largest-remainder apportionment of `total` items by `fractions`.
fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    // Stable sort keeps the earlier part first on equal remainders.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Randomly partitions the frames of `seq`. Each part keeps frames in
/// increasing index order; the assignment depends only on `seed`.
pub fn split(
    seq: &Sequence,
    train_frac: f64,
    test_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitSets> {
    let fractions = [train_frac, test_frac, val_frac];
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Config(format!(
            "split fractions must be non-negative, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }

    let n = seq.len();
    let counts = apportion(n, &fractions);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut parts = Vec::with_capacity(3);
    let mut start = 0;
    for count in counts {
        let mut idx = order[start..start + count].to_vec();
        start += count;
        idx.sort_unstable();
        let frames: Vec<Frame> = idx.iter().map(|&i| seq.frames()[i].clone()).collect();
        parts.push(if frames.is_empty() {
            None
        } else {
            Some(Sequence::new(seq.subject_id(), frames)?)
        });
    }
    let val = parts.pop().flatten();
    let test = parts.pop().flatten();
    let train = parts.pop().flatten();
    Ok(SplitSets { train, test, val })
}
