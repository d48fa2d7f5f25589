//! CSV persistence.
//!
//! One row per point, header required:
//!
//! ```text
//! subject_id,frame_idx,x,y,z,fine_label,coarse_label
//! ```
//!
//! Rows of a subject are contiguous and ordered by frame index, then by point
//! order within the frame. Coordinates are written with 17 significant
//! digits so that reading back reproduces every bit.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

use super::{CoarseLabel, FineLabel, Frame, LabeledPoint, Sequence};

pub const CSV_HEADER: [&str; 7] = [
    "subject_id",
    "frame_idx",
    "x",
    "y",
    "z",
    "fine_label",
    "coarse_label",
];

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_sequence(seq: &Sequence, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(std::slice::from_ref(seq), path)
}

pub fn write_dataset(seqs: &[Sequence], path: impl AsRef<Path>) -> Result<()> {
    write_rows(seqs, path.as_ref(), &[], |_, _, _| Vec::new())
}

/// Header of [`write_predictions`] output: the input columns plus the two
/// predicted labels.
pub const PREDICTION_HEADER: [&str; 9] = [
    "subject_id",
    "frame_idx",
    "x",
    "y",
    "z",
    "fine_label",
    "coarse_label",
    "pred_fine",
    "pred_coarse",
];

/// Writes every point with its predicted labels. `predicted[s][f][i]` belongs
/// to point `i` of frame `f` of sequence `s`.
pub fn write_predictions(
    seqs: &[Sequence],
    predicted: &[Vec<Vec<(FineLabel, CoarseLabel)>>],
    path: impl AsRef<Path>,
) -> Result<()> {
    let shape_ok = predicted.len() == seqs.len()
        && seqs.iter().zip(predicted).all(|(s, p)| {
            p.len() == s.len() && s.frames().iter().zip(p).all(|(f, q)| q.len() == f.len())
        });
    if !shape_ok {
        return Err(Error::Length {
            what: "predictions",
            expected: seqs.iter().map(Sequence::point_count).sum(),
            found: predicted.iter().flatten().map(Vec::len).sum(),
        });
    }
    write_rows(seqs, path.as_ref(), &PREDICTION_HEADER[7..], |s, f, i| {
        let (fine, coarse) = predicted[s][f][i];
        vec![fine.name().to_string(), coarse.name().to_string()]
    })
}

fn write_rows(
    seqs: &[Sequence],
    path: &Path,
    extra_header: &[&str],
    extra: impl Fn(usize, usize, usize) -> Vec<String>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    let header: Vec<&str> = CSV_HEADER.iter().chain(extra_header).copied().collect();
    w.write_record(&header).map_err(csv_err)?;
    for (s, seq) in seqs.iter().enumerate() {
        for (f, frame) in seq.frames().iter().enumerate() {
            let idx = frame.index().to_string();
            for (i, p) in frame.points().iter().enumerate() {
                let mut row = vec![
                    seq.subject_id().to_string(),
                    idx.clone(),
                    format_f64(p.position[0]),
                    format_f64(p.position[1]),
                    format_f64(p.position[2]),
                    p.fine.name().to_string(),
                    p.coarse().name().to_string(),
                ];
                row.extend(extra(s, f, i));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file holding exactly one subject.
pub fn read_sequence(path: impl AsRef<Path>) -> Result<Sequence> {
    let path = path.as_ref();
    let mut seqs = read_dataset(path)?;
    if seqs.len() != 1 {
        return Err(Error::Structure {
            path: path.to_path_buf(),
            message: format!("expected one subject, found {}", seqs.len()),
        });
    }
    Ok(seqs.remove(0))
}

struct Builder {
    subject: String,
    frames: Vec<Frame>,
    current: Option<(u64, Vec<LabeledPoint>)>,
}

impl Builder {
    fn close_frame(&mut self) -> Result<()> {
        if let Some((idx, pts)) = self.current.take() {
            self.frames.push(Frame::new(idx, pts)?);
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Sequence> {
        self.close_frame()?;
        Sequence::new(self.subject, self.frames)
    }
}

/// Reads every subject in file order.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Sequence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);

    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let structure_err = |message: String| Error::Structure {
        path: path.to_path_buf(),
        message,
    };

    let mut records = reader.records();
    match records.next() {
        None => return Err(parse_err(1, "missing header row".into())),
        Some(Err(e)) => return Err(parse_err(1, e.to_string())),
        Some(Ok(h)) => {
            if h.iter().ne(CSV_HEADER.iter().copied()) {
                return Err(parse_err(
                    1,
                    format!("expected header {:?}", CSV_HEADER.join(",")),
                ));
            }
        }
    }

    let mut done: Vec<Sequence> = Vec::new();
    let mut building: Option<Builder> = None;
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != CSV_HEADER.len() {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", CSV_HEADER.len(), rec.len()),
            ));
        }
        let subject = &rec[0];
        let frame_idx: u64 = rec[1]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid frame_idx {:?}", &rec[1])))?;
        let mut position = [0.0f64; 3];
        for (k, slot) in position.iter_mut().enumerate() {
            let raw = &rec[2 + k];
            *slot = raw
                .parse()
                .map_err(|_| parse_err(line, format!("invalid {} {raw:?}", CSV_HEADER[2 + k])))?;
            if !slot.is_finite() {
                return Err(parse_err(line, format!("non-finite coordinate {raw:?}")));
            }
        }
        let fine: FineLabel = rec[5].parse().map_err(|m| parse_err(line, m))?;
        let coarse: CoarseLabel = rec[6].parse().map_err(|m| parse_err(line, m))?;
        if fine.coarsen() != coarse {
            return Err(parse_err(
                line,
                format!("coarse label {coarse} does not match fine label {fine}"),
            ));
        }

        if building.as_ref().is_some_and(|b| b.subject != subject) {
            let finished = building.take().expect("checked").finish()?;
            done.push(finished);
        }
        if building.is_none() {
            if done.iter().any(|s| s.subject_id() == subject) {
                return Err(structure_err(format!(
                    "line {line}: rows of subject {subject:?} are not contiguous"
                )));
            }
            building = Some(Builder {
                subject: subject.to_string(),
                frames: Vec::new(),
                current: None,
            });
        }
        let b = building.as_mut().expect("just set");
        let last_idx = b
            .current
            .as_ref()
            .map(|(i, _)| *i)
            .or_else(|| b.frames.last().map(Frame::index));
        match last_idx {
            Some(prev) if frame_idx == prev => {}
            Some(prev) if frame_idx < prev => {
                return Err(structure_err(format!(
                    "line {line}: frame_idx {frame_idx} after {prev} is not increasing"
                )));
            }
            _ => {
                b.close_frame()?;
                b.current = Some((frame_idx, Vec::new()));
            }
        }
        b.current
            .as_mut()
            .expect("frame open")
            .1
            .push(LabeledPoint::new(position, fine));
    }
    if let Some(b) = building {
        done.push(b.finish()?);
    }
    if done.is_empty() {
        return Err(structure_err("no data rows".into()));
    }
    Ok(done)
}
