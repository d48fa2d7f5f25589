use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pointcloud::Sequence;
use crate::segnet::NetConfig;

use super::{train_from_scratch, EpochStats, TrainConfig};

/// Two training runs that differ only in the graph-loss weight.
#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub epochs: usize,
    pub seed: u64,
    pub lambda_graph: f64,
    /// Run with `lambda_graph = 0`.
    pub baseline: Vec<EpochStats>,
    pub graph: Vec<EpochStats>,
}

/// Trains from the same seeded initialization with and without the graph term.
pub fn compare_loss_curves(
    net: &NetConfig,
    dataset: &[Sequence],
    cfg: &TrainConfig,
) -> Result<Comparison> {
    let baseline_cfg = TrainConfig {
        lambda_graph: 0.0,
        ..cfg.clone()
    };
    let baseline = train_from_scratch(net, dataset, &baseline_cfg)?.history;
    let graph = train_from_scratch(net, dataset, cfg)?.history;
    Ok(Comparison {
        epochs: cfg.epochs,
        seed: cfg.seed,
        lambda_graph: cfg.lambda_graph,
        baseline,
        graph,
    })
}

fn first_reaching(history: &[EpochStats], threshold: f64) -> Option<usize> {
    history
        .iter()
        .find(|h| h.train_acc >= threshold)
        .map(|h| h.epoch)
}

impl Comparison {
    /// First epochs at which each run's training accuracy reaches `threshold`
    /// percent, as `(baseline, graph)`.
    pub fn first_epoch_reaching(&self, threshold: f64) -> (Option<usize>, Option<usize>) {
        (
            first_reaching(&self.baseline, threshold),
            first_reaching(&self.graph, threshold),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "acc_baseline", "acc_graph"])
            .expect("in-memory write");
        for (b, g) in self.baseline.iter().zip(&self.graph) {
            w.write_record([
                b.epoch.to_string(),
                b.train_acc.to_string(),
                g.train_acc.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    /// Epoch-vs-accuracy line plot.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const LEFT: f64 = 60.0;
        const RIGHT: f64 = 20.0;
        const TOP: f64 = 40.0;
        const BOTTOM: f64 = 50.0;
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let last = self.epochs.max(2) as f64;
        let x = |epoch: usize| LEFT + pw * (epoch as f64 - 1.0) / (last - 1.0);
        let y = |acc: f64| TOP + ph * (1.0 - acc.clamp(0.0, 100.0) / 100.0);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            s,
            "<title>training accuracy, epochs={} seed={} lambda_graph={}</title>",
            self.epochs, self.seed, self.lambda_graph
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle">training accuracy (epochs={}, seed={}, lambda_graph={})</text>"#,
            W / 2.0,
            self.epochs,
            self.seed,
            self.lambda_graph
        );
        for tick in (0..=100).step_by(20) {
            let ty = y(tick as f64);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{ty:.1}" x2="{:.1}" y2="{ty:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                ty + 4.0
            );
        }
        let step = (self.epochs / 5).max(1);
        for e in (1..=self.epochs).filter(|e| e % step == 0 || *e == 1) {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{e}</text>"#,
                x(e),
                TOP + ph + 18.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epoch</text>"#,
            LEFT + pw / 2.0,
            H - 8.0
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">accuracy (%)</text>"#,
            TOP + ph / 2.0
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for (i, (name, color, hist)) in [
            ("cross-entropy only", "#1f77b4", &self.baseline),
            ("with graph loss", "#d62728", &self.graph),
        ]
        .into_iter()
        .enumerate()
        {
            let points: Vec<String> = hist
                .iter()
                .map(|h| format!("{:.2},{:.2}", x(h.epoch), y(h.train_acc)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                points.join(" ")
            );
            let ly = TOP + ph - 30.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
                LEFT + pw - 150.0,
                LEFT + pw - 130.0,
                LEFT + pw - 124.0,
                ly + 4.0
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes `<prefix>.csv` and `<prefix>.svg`, returning both paths.
    pub fn write_artifacts(&self, prefix: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let prefix = prefix.as_ref().as_os_str().to_owned();
        let with_ext = |ext: &str| {
            let mut p = prefix.clone();
            p.push(ext);
            PathBuf::from(p)
        };
        let csv_path = with_ext(".csv");
        let svg_path = with_ext(".svg");
        fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
        fs::write(&svg_path, self.to_svg()).map_err(|e| Error::io(&svg_path, e))?;
        Ok((csv_path, svg_path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(accs: &[f64]) -> Vec<EpochStats> {
        accs.iter()
            .enumerate()
            .map(|(i, &a)| EpochStats {
                epoch: i + 1,
                loss: 1.0,
                train_acc: a,
            })
            .collect()
    }

    fn sample() -> Comparison {
        Comparison {
            epochs: 3,
            seed: 5,
            lambda_graph: 0.1,
            baseline: stats(&[10.0, 50.0, 91.0]),
            graph: stats(&[20.0, 95.0, 99.5]),
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_epoch() {
        let csv = sample().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,acc_baseline,acc_graph");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "2,50,95");
    }

    #[test]
    fn threshold_epochs() {
        assert_eq!(sample().first_epoch_reaching(90.0), (Some(3), Some(2)));
        assert_eq!(sample().first_epoch_reaching(99.9), (None, None));
    }

    #[test]
    fn svg_carries_both_curves_and_metadata() {
        let svg = sample().to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("seed=5"));
        assert!(svg.contains("epochs=3"));
    }

    #[test]
    fn artifacts_written_next_to_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let (c, s) = sample().write_artifacts(dir.path().join("run.v1")).unwrap();
        assert!(c.ends_with("run.v1.csv"));
        assert!(s.ends_with("run.v1.svg"));
        assert!(c.exists() && s.exists());
    }
}
