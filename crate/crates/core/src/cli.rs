//! The `dtouch` command suite.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::{Shutdown, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{self, Dataset, GenerateParams};
use crate::error::{Error, Result};
use crate::gait::{GaitPolicy, DEFAULT_DEBOUNCE_K};
use crate::nn::checkpoint::{load_model, save_model};
use crate::nn::model::predict;
use crate::nn::train::{train_with, TrainConfig};
use crate::nn::Architecture;
use crate::report::{evaluate_indices, EvalReport};
use crate::seed::DEFAULT_SEED;
use crate::sensor::SensorSpec;
use crate::textures::builtin_catalog;
use crate::wire::{
    inference_endpoint, read_predictions, sensor_emulator, EmulatorConfig, DEFAULT_RATE_HZ,
};

pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(
    name = "dtouch",
    version,
    about = "Tactile texture recognition toolkit"
)]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, env = "DTOUCH_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a model on a dataset split.
    Eval(EvalArgs),
    /// Classify a single frame.
    Infer(InferArgs),
    /// Run the inference endpoint on a TCP port.
    Serve(ServeArgs),
    /// Stream dataset frames to an endpoint.
    Emit(EmitArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = crate::sensor::DEFAULT_TOTAL_FORCE_N)]
    pub force: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `key = value` file with epochs, batch_size, learning_rate, momentum,
    /// shuffle, val_fraction.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    Val,
    Train,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitPart::Val)]
    pub split: SplitPart,
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    pub val_fraction: f64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub frame_index: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub listen: String,
    /// Gait policy manifest; identity mapping when absent.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub debounce: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub initial_gait: u8,
    /// Connections to serve before exiting.
    #[arg(long, default_value_t = 1)]
    pub connections: usize,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub connect: String,
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    pub rate: f64,
    /// Seconds to stream; the dataset repeats as needed.
    #[arg(long, conflicts_with = "count")]
    pub duration: Option<f64>,
    /// Packets to send; one pass over the dataset by default.
    #[arg(long)]
    pub count: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub start_seq: u32,
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out`.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}").map_err(|source| io_err("stdout", source))?;
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            return Err(Error::Usage(first.to_string()));
        }
    };
    run(&cli, out)
}

/// One-line `error kind=<tag> msg=<text>` rendering.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("error kind={} msg={msg:?}", e.kind())
}

fn io_err(path: impl AsRef<Path>, source: std::io::Error) -> Error {
    Error::Io {
        path: path.as_ref().to_path_buf(),
        source,
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| io_err("stdout", e))
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli.seed, a, out),
        Command::Train(a) => cmd_train(cli.seed, a, out),
        Command::Eval(a) => cmd_eval(cli.seed, a, out),
        Command::Infer(a) => cmd_infer(a, out),
        Command::Serve(a) => cmd_serve(a, out),
        Command::Emit(a) => cmd_emit(a, out),
    }
}

fn cmd_gen(seed: u64, a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let params = GenerateParams {
        per_class: a.per_class,
        noise_sigma: a.sigma,
        total_force_n: a.force,
        master_seed: seed,
        ..GenerateParams::default()
    };
    let ds = dataset::generate(&builtin_catalog(), &SensorSpec::default(), &params)?;
    dataset::save(&ds, &a.out)?;
    emit(
        out,
        &format!(
            "wrote {} frames to {} (sigma {} N, seed {seed})\n",
            ds.len(),
            a.out.display(),
            a.sigma
        ),
    )
}

/// Training settings read from a `--config` file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub val_fraction: f64,
}

pub fn parse_config(text: &str, seed: u64) -> Result<RunConfig> {
    let mut rc = RunConfig {
        train: TrainConfig {
            seed,
            ..TrainConfig::default()
        },
        val_fraction: DEFAULT_VAL_FRACTION,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Usage(format!("config line {}: {what}", i + 1));
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad("expected key = value"))?;
        let (k, v) = (k.trim(), v.trim());
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| bad(&format!("{k}: not a number: {v}")))
        };
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| bad(&format!("{k}: not an integer: {v}")))
        };
        match k {
            "epochs" => rc.train.epochs = int(v)?,
            "batch_size" => rc.train.batch_size = int(v)?,
            "learning_rate" => rc.train.learning_rate = num(v)?,
            "momentum" => rc.train.momentum = num(v)?,
            "val_fraction" => rc.val_fraction = num(v)?,
            "shuffle" => {
                rc.train.shuffle = v
                    .parse::<bool>()
                    .map_err(|_| bad(&format!("shuffle: expected true/false, got {v}")))?
            }
            _ => return Err(bad(&format!("unknown key {k}"))),
        }
    }
    rc.train.validate()?;
    Ok(rc)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Ok(dataset::load(path)?)
}

fn cmd_train(seed: u64, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut rc = match &a.config {
        Some(p) => parse_config(&fs::read_to_string(p).map_err(|e| io_err(p, e))?, seed)?,
        None => parse_config("", seed)?,
    };
    if let Some(e) = a.epochs {
        rc.train.epochs = e;
    }
    let ds = load_dataset(&a.data)?;
    let split = dataset::split(&ds, rc.val_fraction, seed)?;
    let model = rc.train.init_model(Architecture::tactile());
    let mut progress = Vec::new();
    let (model, history) = train_with(model, &ds, &split, &rc.train, |e| {
        progress.push(format!(
            "epoch {:>3}  train_loss {:.4}  train_acc {:.4}  val_loss {:.4}  val_acc {:.4}\n",
            e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        ));
    })?;
    for line in &progress {
        emit(out, line)?;
    }
    save_model(&model, &a.out_model)?;
    let report = evaluate_indices(&model, &ds, &split.val, history)?;
    finish_report(&report, a.report.as_deref(), out)?;
    emit(
        out,
        &format!("model written to {}\n", a.out_model.display()),
    )
}

fn finish_report(report: &EvalReport, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, report.render_machine()).map_err(|e| io_err(p, e))?;
    }
    emit(out, &report.render_table())
}

fn cmd_eval(seed: u64, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let model = load_model(&a.model)?;
    let indices = match a.split {
        SplitPart::All => (0..ds.len()).collect(),
        part => {
            let s = dataset::split(&ds, a.val_fraction, seed)?;
            if part == SplitPart::Val {
                s.val
            } else {
                s.train
            }
        }
    };
    let report = evaluate_indices(&model, &ds, &indices, Vec::new())?;
    finish_report(&report, a.report.as_deref(), out)
}

fn cmd_infer(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let model = load_model(&a.model)?;
    let frame = ds.frames.get(a.frame_index).ok_or_else(|| {
        Error::Usage(format!(
            "frame index {} outside dataset of {} frames",
            a.frame_index,
            ds.len()
        ))
    })?;
    let p = predict(&model, frame)?;
    let probs: Vec<String> = p.probs.iter().map(|v| format!("{v:.6}")).collect();
    let label = frame.label.map_or("-".to_string(), |l| l.to_string());
    emit(
        out,
        &format!(
            "frame {} label {label} class {} probs {}\n",
            a.frame_index,
            p.class_id,
            probs.join(" ")
        ),
    )
}

fn cmd_serve(a: &ServeArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut policy = match &a.policy {
        Some(p) => GaitPolicy::load(p)?,
        None => GaitPolicy::identity(DEFAULT_DEBOUNCE_K),
    };
    if let Some(k) = a.debounce {
        policy = policy.with_debounce(k)?;
    }
    let listener = TcpListener::bind(&a.listen).map_err(|e| io_err(&a.listen, e))?;
    let addr = listener.local_addr().map_err(|e| io_err(&a.listen, e))?;
    emit(out, &format!("listening on {addr}\n"))?;
    out.flush().map_err(|e| io_err("stdout", e))?;
    for _ in 0..a.connections {
        let (stream, peer) = listener.accept().map_err(|e| io_err(&a.listen, e))?;
        let reader = stream
            .try_clone()
            .map_err(|e| io_err(peer.to_string(), e))?;
        let mut lines = Vec::new();
        let report = inference_endpoint(&model, &policy, a.initial_gait, reader, &stream, |ev| {
            let class = ev
                .prediction
                .as_ref()
                .map_or("-".to_string(), |p| p.class_id.to_string());
            lines.push(format!(
                "seq {} class {class} gait {} {}\n",
                ev.seq, ev.gait, ev.decision
            ));
        })?;
        for l in &lines {
            emit(out, l)?;
        }
        emit(
            out,
            &format!(
                "connection {peer}: received {} classified {} acknowledged {} malformed {}\n",
                report.received, report.classified, report.acknowledged, report.malformed
            ),
        )?;
    }
    Ok(())
}

fn cmd_emit(a: &EmitArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    if ds.is_empty() {
        return Err(Error::Usage("dataset has no frames".into()));
    }
    let stream = TcpStream::connect(&a.connect).map_err(|e| io_err(&a.connect, e))?;
    let reader = stream.try_clone().map_err(|e| io_err(&a.connect, e))?;
    let replies = thread::spawn(move || read_predictions(reader));
    let config = EmulatorConfig {
        rate_hz: a.rate,
        duration: a.duration.map(Duration::from_secs_f64),
        max_packets: match (a.count, a.duration) {
            (Some(n), _) => Some(n),
            (None, None) => Some(ds.len() as u64),
            (None, Some(_)) => None,
        },
        start_seq: a.start_seq,
        ..EmulatorConfig::default()
    };
    let stats = sensor_emulator(ds.frames.iter().cycle().cloned(), &config, &stream)?;
    stream
        .shutdown(Shutdown::Write)
        .map_err(|e| io_err(&a.connect, e))?;
    let msgs = replies
        .join()
        .map_err(|_| Error::Usage("reply reader panicked".into()))??;
    for m in &msgs {
        let line = if m.is_no_contact() {
            format!("seq {} no_contact\n", m.seq)
        } else {
            let probs: Vec<String> = m
                .probabilities()
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect();
            format!(
                "seq {} class {} probs {}\n",
                m.seq,
                m.class_id,
                probs.join(" ")
            )
        };
        emit(out, &line)?;
    }
    emit(
        out,
        &format!(
            "sent {} packets ({} with contact), {} replies\n",
            stats.sent,
            stats.contact,
            msgs.len()
        ),
    )
}
