use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use spcseg::pointcloud::{
    read_dataset, write_dataset, write_predictions, CoarseLabel, FineLabel, Sequence,
};
use spcseg::segnet::{load_checkpoint, save_checkpoint, NetConfig};
use spcseg::synthdata::{generate_dataset, GenConfig};
use spcseg::training::{
    compare_loss_curves, evaluate, save_history, train_with, OptimizerConfig, TrainConfig,
};
use spcseg::Error;

#[derive(Debug, Parser)]
#[command(
    name = "spcseg",
    version,
    about = "Body-part segmentation of sparse radar point clouds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic walking dataset
    Generate(GenerateArgs),
    /// Train a network and save a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint on a labeled dataset
    Eval(EvalArgs),
    /// Write per-point predictions
    Segment(SegmentArgs),
    /// Train with and without the graph term and plot both accuracy curves
    CompareLoss(CompareArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Frames per subject
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 1)]
    subjects: usize,
    /// Points per frame before dropout
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-coordinate noise, meters
    #[arg(long, allow_negative_numbers = true)]
    noise: Option<f64>,
    /// Long-run fraction of frames a limb or the head is missing
    #[arg(long, allow_negative_numbers = true)]
    dropout: Option<f64>,
    /// Mean dropout run length, frames
    #[arg(long, allow_negative_numbers = true)]
    dropout_run: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    gait_period: Option<f64>,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit
    #[arg(long)]
    dump_config: bool,
}

#[derive(Debug, Args)]
struct NetArgs {
    /// Shared point MLP widths, comma separated
    #[arg(long, value_delimiter = ',')]
    point_dims: Option<Vec<usize>>,
    #[arg(long)]
    global_dim: Option<usize>,
    #[arg(long)]
    lstm_hidden: Option<usize>,
    #[arg(long)]
    global_rounds: Option<usize>,
    /// Head MLP widths, comma separated
    #[arg(long, value_delimiter = ',')]
    head_dims: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
struct HyperArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda_graph: Option<f64>,
    /// Weight of the fine-label cross-entropy; 0 with the coarse weight 0
    /// trains on the graph loss alone
    #[arg(long, allow_negative_numbers = true)]
    lambda_fine: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda_coarse: Option<f64>,
    /// Base of the graph loss exponential
    #[arg(long, allow_negative_numbers = true)]
    graph_a: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerKind>,
    /// Global gradient norm cap; 0 disables clipping
    #[arg(long, allow_negative_numbers = true)]
    clip_norm: Option<f64>,
    /// Frames per optimizer step; 0 uses whole sequences
    #[arg(long)]
    window: Option<usize>,
    #[command(flatten)]
    net: NetArgs,
    /// Print the effective configuration as JSON and exit
    #[arg(long)]
    dump_config: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "dump_config")]
    data: Option<PathBuf>,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    /// Per-epoch `epoch,loss,train_acc` CSV
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Emit the report as JSON instead of a table
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long, required_unless_present = "dump_config")]
    data: Option<PathBuf>,
    /// Writes `<prefix>.csv` and `<prefix>.svg`
    #[arg(long, required_unless_present = "dump_config")]
    out_prefix: Option<PathBuf>,
    /// Accuracy (percent) whose first crossing is reported for each run
    #[arg(long, default_value_t = 90.0)]
    threshold: f64,
    #[command(flatten)]
    hyper: HyperArgs,
}

impl GenerateArgs {
    fn config(&self) -> GenConfig {
        let d = GenConfig::default();
        GenConfig {
            n_frames: self.frames.unwrap_or(d.n_frames),
            points_per_frame: self.points.unwrap_or(d.points_per_frame),
            gait_period_frames: self.gait_period.unwrap_or(d.gait_period_frames),
            noise_sigma: self.noise.unwrap_or(d.noise_sigma),
            part_dropout_prob: self.dropout.unwrap_or(d.part_dropout_prob),
            dropout_run_frames: self.dropout_run.unwrap_or(d.dropout_run_frames),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

impl HyperArgs {
    fn net(&self) -> NetConfig {
        let d = NetConfig::default();
        let n = &self.net;
        NetConfig {
            point_dims: n.point_dims.clone().unwrap_or(d.point_dims),
            global_dim: n.global_dim.unwrap_or(d.global_dim),
            lstm_hidden: n.lstm_hidden.unwrap_or(d.lstm_hidden),
            global_rounds: n.global_rounds.unwrap_or(d.global_rounds),
            head_dims: n.head_dims.clone().unwrap_or(d.head_dims),
            ..d
        }
    }

    fn train(&self) -> TrainConfig {
        let d = TrainConfig::default();
        let mut graph = d.graph;
        if let Some(a) = self.graph_a {
            graph.a = a;
        }
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            seed: self.seed.unwrap_or(d.seed),
            lambda_fine: self.lambda_fine.unwrap_or(d.lambda_fine),
            lambda_coarse: self.lambda_coarse.unwrap_or(d.lambda_coarse),
            lambda_graph: self.lambda_graph.unwrap_or(d.lambda_graph),
            graph,
            optimizer: match self.optimizer {
                None => d.optimizer,
                Some(OptimizerKind::Adam) => OptimizerConfig::default(),
                Some(OptimizerKind::Sgd) => OptimizerConfig::Sgd,
            },
            clip_norm: match self.clip_norm {
                None => d.clip_norm,
                Some(0.0) => None,
                Some(c) => Some(c),
            },
            window: match self.window {
                None => d.window,
                Some(0) => None,
                Some(w) => Some(w),
            },
        }
    }

    fn validated(&self) -> Result<(NetConfig, TrainConfig)> {
        let (net, train) = (self.net(), self.train());
        net.validate()?;
        train.validate()?;
        Ok((net, train))
    }

    fn dump(&self) -> Result<()> {
        let out = json!({ "net": self.net(), "train": self.train() });
        emit(&serde_json::to_string_pretty(&out)?)
    }
}

/// Prints to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn load_data(path: &Path) -> Result<Vec<Sequence>> {
    let data = read_dataset(path)?;
    let points: usize = data.iter().map(Sequence::point_count).sum();
    eprintln!(
        "loaded {} subject(s), {points} points from {}",
        data.len(),
        path.display()
    );
    Ok(data)
}

fn progress(every: usize, last: usize) -> impl FnMut(&spcseg::training::EpochStats) {
    move |s| {
        if s.epoch % every == 0 || s.epoch == 1 || s.epoch == last {
            eprintln!(
                "epoch {:>4}  loss {:.6}  train_acc {:.2}%",
                s.epoch, s.loss, s.train_acc
            );
        }
    }
}

fn run_generate(args: GenerateArgs) -> Result<()> {
    let cfg = args.config();
    if args.dump_config {
        emit(&serde_json::to_string_pretty(
            &json!({ "generate": cfg, "subjects": args.subjects }),
        )?)?;
        return Ok(());
    }
    let out = args.out.expect("required by clap");
    let data = generate_dataset(&cfg, args.subjects)?;
    write_dataset(&data, &out)?;
    let points: usize = data.iter().map(Sequence::point_count).sum();
    eprintln!(
        "wrote {} subject(s), {} frames each, {points} points to {}",
        data.len(),
        cfg.n_frames,
        out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    if args.hyper.dump_config {
        return args.hyper.dump();
    }
    let (net, cfg) = args.hyper.validated()?;
    let data = load_data(&args.data.expect("required by clap"))?;
    let params = spcseg::segnet::ModelParams::init(&net, cfg.seed)?;
    eprintln!("{} parameters", params.parameter_count());
    let outcome = train_with(params, &data, &cfg, progress(10, cfg.epochs))?;
    let out = args.out.expect("required by clap");
    save_checkpoint(&outcome.params, &out)?;
    eprintln!("saved {}", out.display());
    if let Some(h) = args.history {
        save_history(&outcome.history, &h)?;
        eprintln!("saved {}", h.display());
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let params = load_checkpoint(&args.model)?;
    let data = load_data(&args.data)?;
    let report = evaluate(&params, &data)?;
    if args.json {
        emit(&serde_json::to_string_pretty(&report)?)
    } else {
        emit(&report.to_string())
    }
}

fn run_segment(args: SegmentArgs) -> Result<()> {
    let params = load_checkpoint(&args.model)?;
    let data = load_data(&args.data)?;
    let mut predicted = Vec::with_capacity(data.len());
    for seq in &data {
        let frames = params
            .predict(seq)?
            .into_iter()
            .map(|p| {
                p.fine
                    .labels()
                    .iter()
                    .zip(p.coarse.labels())
                    .map(|(&f, &c)| {
                        let fine = FineLabel::from_index(f).context("fine class out of range")?;
                        let coarse =
                            CoarseLabel::from_index(c).context("coarse class out of range")?;
                        Ok((fine, coarse))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        predicted.push(frames);
    }
    write_predictions(&data, &predicted, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn run_compare(args: CompareArgs) -> Result<()> {
    if args.hyper.dump_config {
        return args.hyper.dump();
    }
    let (net, cfg) = args.hyper.validated()?;
    let data = load_data(&args.data.expect("required by clap"))?;
    let cmp = compare_loss_curves(&net, &data, &cfg)?;
    let (csv, svg) = cmp.write_artifacts(args.out_prefix.expect("required by clap"))?;
    let (base, graph) = cmp.first_epoch_reaching(args.threshold);
    let show = |e: Option<usize>| e.map_or_else(|| "never".to_string(), |e| e.to_string());
    let last = |h: &[spcseg::training::EpochStats]| h.last().map_or(0.0, |s| s.train_acc);
    emit(&format!(
        "epochs {}  seed {}  lambda_graph {}\n\
         baseline: final {:.2}%, first epoch >= {}%: {}\n\
         graph:    final {:.2}%, first epoch >= {}%: {}",
        cmp.epochs,
        cmp.seed,
        cmp.lambda_graph,
        last(&cmp.baseline),
        args.threshold,
        show(base),
        last(&cmp.graph),
        args.threshold,
        show(graph)
    ))?;
    eprintln!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 1,
        Some(Error::NonFiniteLoss { .. }) => 3,
        _ => 2,
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !text.ends_with(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Segment(a) => run_segment(a),
        Command::CompareLoss(a) => run_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
