use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{FineLabel, Sequence, FINE_CLASSES};
use crate::segnet::{argmax_rows, ModelParams};

/// Per-class and mean segmentation scores, all in percent. Classes that never
/// occur in the ground truth have `None` scores and are left out of the means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub per_class_acc: Vec<Option<f64>>,
    pub per_class_iou: Vec<Option<f64>>,
    pub macc: f64,
    pub miou: f64,
    /// `confusion[truth][predicted]` point counts.
    pub confusion: Vec<Vec<u64>>,
    pub points: u64,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>, class_names: Vec<String>) -> Result<Self> {
        let k = confusion.len();
        if class_names.len() != k || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::Length {
                what: "confusion matrix",
                expected: k,
                found: class_names.len(),
            });
        }
        let points: u64 = confusion.iter().flatten().sum();
        if points == 0 {
            return Err(Error::Empty { op: "evaluate" });
        }
        let mut per_class_acc = vec![None; k];
        let mut per_class_iou = vec![None; k];
        for c in 0..k {
            let tp = confusion[c][c];
            let truth: u64 = confusion[c].iter().sum();
            if truth == 0 {
                continue;
            }
            let predicted: u64 = (0..k).map(|t| confusion[t][c]).sum();
            let fn_ = truth - tp;
            let fp = predicted - tp;
            per_class_acc[c] = Some(100.0 * tp as f64 / truth as f64);
            per_class_iou[c] = Some(100.0 * tp as f64 / (tp + fp + fn_) as f64);
        }
        let mean = |v: &[Option<f64>]| {
            let present: Vec<f64> = v.iter().flatten().copied().collect();
            present.iter().sum::<f64>() / present.len() as f64
        };
        Ok(Self {
            macc: mean(&per_class_acc),
            miou: mean(&per_class_iou),
            per_class_acc,
            per_class_iou,
            confusion,
            class_names,
            points,
        })
    }

    /// Scores predicted against true labels over `classes` classes.
    pub fn from_labels(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        let mut confusion = ConfusionMatrix::new(classes);
        confusion.add(truth, predicted)?;
        let names = (0..classes).map(|c| format!("class_{c}")).collect();
        Self::from_confusion(confusion.counts, names)
    }

    /// Fraction of all points labeled correctly, percent.
    pub fn overall_accuracy(&self) -> f64 {
        let correct: u64 = (0..self.confusion.len())
            .map(|c| self.confusion[c][c])
            .sum();
        100.0 * correct as f64 / self.points as f64
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .class_names
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(5);
        writeln!(f, "{:<width$}  {:>7}  {:>7}", "class", "acc", "iou")?;
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        for (c, name) in self.class_names.iter().enumerate() {
            writeln!(
                f,
                "{name:<width$}  {:>7}  {:>7}",
                cell(self.per_class_acc[c]),
                cell(self.per_class_iou[c])
            )?;
        }
        write!(
            f,
            "{:<width$}  {:>7.2}  {:>7.2}",
            "mean", self.macc, self.miou
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn add(&mut self, truth: &[usize], predicted: &[usize]) -> Result<()> {
        if truth.len() != predicted.len() {
            return Err(Error::Length {
                what: "predictions",
                expected: truth.len(),
                found: predicted.len(),
            });
        }
        let k = self.counts.len();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(Error::ClassIndex {
                    index: t.max(p),
                    classes: k,
                });
            }
            self.counts[t][p] += 1;
        }
        Ok(())
    }
}

/// Fine-label scores of `params` over every point of `dataset`.
pub fn evaluate(params: &ModelParams, dataset: &[Sequence]) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Empty { op: "evaluate" });
    }
    let mut confusion = ConfusionMatrix::new(FINE_CLASSES);
    for seq in dataset {
        for (frame, logits) in seq.frames().iter().zip(params.logits(seq)?) {
            confusion.add(&frame.fine_indices(), &argmax_rows(&logits.fine))?;
        }
    }
    let names = FineLabel::ALL
        .iter()
        .map(|l| l.name().to_string())
        .collect();
    EvalReport::from_confusion(confusion.counts, names)
}
