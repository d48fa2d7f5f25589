//! Labeled point clouds: body-part taxonomy, frames, sequences, Gaussian
//! adjacency, CSV I/O and dataset splitting.

mod adjacency;
pub(crate) mod io;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adjacency::{gauss_weights, AdjacencyWeights};
pub use io::{
    read_dataset, read_sequence, write_dataset, write_predictions, write_sequence, CSV_HEADER,
    PREDICTION_HEADER,
};
pub use split::{split, SplitSets};

/// The six body parts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FineLabel {
    Head,
    Chest,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

/// The three body-part groups used by the auxiliary head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoarseLabel {
    HeadTorso,
    Arm,
    Leg,
}

pub const FINE_CLASSES: usize = 6;
pub const COARSE_CLASSES: usize = 3;

impl FineLabel {
    pub const ALL: [FineLabel; FINE_CLASSES] = [
        FineLabel::Head,
        FineLabel::Chest,
        FineLabel::LeftArm,
        FineLabel::RightArm,
        FineLabel::LeftLeg,
        FineLabel::RightLeg,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FineLabel::Head => "head",
            FineLabel::Chest => "chest",
            FineLabel::LeftArm => "left_arm",
            FineLabel::RightArm => "right_arm",
            FineLabel::LeftLeg => "left_leg",
            FineLabel::RightLeg => "right_leg",
        }
    }

    pub fn coarsen(self) -> CoarseLabel {
        coarsen(self)
    }
}

impl CoarseLabel {
    pub const ALL: [CoarseLabel; COARSE_CLASSES] =
        [CoarseLabel::HeadTorso, CoarseLabel::Arm, CoarseLabel::Leg];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CoarseLabel::HeadTorso => "head_torso",
            CoarseLabel::Arm => "arm",
            CoarseLabel::Leg => "leg",
        }
    }
}

/// Head and chest form one group; left/right limbs merge.
pub fn coarsen(fine: FineLabel) -> CoarseLabel {
    match fine {
        FineLabel::Head | FineLabel::Chest => CoarseLabel::HeadTorso,
        FineLabel::LeftArm | FineLabel::RightArm => CoarseLabel::Arm,
        FineLabel::LeftLeg | FineLabel::RightLeg => CoarseLabel::Leg,
    }
}

impl fmt::Display for FineLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for CoarseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FineLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown fine label {s:?}"))
    }
}

impl FromStr for CoarseLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown coarse label {s:?}"))
    }
}

/// A 3-D point (meters) with its body-part label. The coarse label is always
/// derived from the fine one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledPoint {
    pub position: [f64; 3],
    pub fine: FineLabel,
}

impl LabeledPoint {
    pub fn new(position: [f64; 3], fine: FineLabel) -> Self {
        Self { position, fine }
    }

    pub fn coarse(&self) -> CoarseLabel {
        coarsen(self.fine)
    }
}

/// One capture: a non-empty list of points in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    index: u64,
    points: Vec<LabeledPoint>,
}

impl Frame {
    pub fn new(index: u64, points: Vec<LabeledPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty { op: "frame" });
        }
        if let Some(p) = points
            .iter()
            .find(|p| p.position.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::NonFinite(format!(
                "frame {index}: position {:?}",
                p.position
            )));
        }
        Ok(Self { index, points })
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn fine_indices(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.fine.index()).collect()
    }

    pub fn coarse_indices(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.coarse().index()).collect()
    }

    /// Same frame with points reordered: output point `i` is input point `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            index: self.index,
            points: order.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

/// Frames of one subject with strictly increasing frame indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    subject_id: String,
    frames: Vec<Frame>,
}

impl Sequence {
    pub fn new(subject_id: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        let subject_id = subject_id.into();
        if frames.is_empty() {
            return Err(Error::Empty { op: "sequence" });
        }
        if let Some(w) = frames.windows(2).find(|w| w[1].index <= w[0].index) {
            return Err(Error::Config(format!(
                "sequence {subject_id}: frame index {} does not follow {}",
                w[1].index, w[0].index
            )));
        }
        Ok(Self { subject_id, frames })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.frames.iter().map(Frame::len).sum()
    }

    /// Leading `n` frames (at least one).
    pub fn prefix(&self, n: usize) -> Result<Self> {
        Self::new(
            self.subject_id.clone(),
            self.frames[..n.min(self.len())].to_vec(),
        )
    }
}
