//! `pista`: simulate data, train the unrolled network, reconstruct, score and
//! export images.
//!
//! [`run`] parses arguments, echoes the resolved configuration to stderr and
//! returns the process exit code: 0 on success, 1 on runtime failure, 2 on a
//! usage error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod export;

use pista_core::net::Variant;

#[derive(Parser, Debug)]
#[command(name = "pista", version, about = "Sparse SENSE reconstruction with an unrolled pISTA network")]
struct Cli {
    /// Run batch-level loops on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a synthetic multi-coil dataset.
    Simulate(SimulateArgs),
    /// Generate one undersampling mask.
    Mask(MaskArgs),
    /// Train the unrolled network and write a checkpoint.
    Train(TrainArgs),
    /// Reconstruct every sample of a dataset.
    Recon(ReconArgs),
    /// Score reconstructions against ground truth.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Write magnitude and error images as 8-bit grayscale PNG.
    ExportPng(ExportPngArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Mask(_) => "mask",
            Command::Train(_) => "train",
            Command::Recon(_) => "recon",
            Command::Eval(_) => "eval",
            Command::Gradcheck(_) => "gradcheck",
            Command::ExportPng(_) => "export-png",
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Image height and width.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    coils: usize,
    /// Acceleration factor.
    #[arg(long, default_value_t = 4.0)]
    af: f64,
    /// Fully sampled center rows (default scales 24 of 320 to the image size).
    #[arg(long)]
    center_lines: Option<usize>,
    /// Per-component standard deviation of complex k-space noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Generate real-valued phantoms.
    #[arg(long)]
    no_phase: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct MaskArgs {
    /// Output array path (without extension).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Number of columns (defaults to the size).
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 4.0)]
    af: f64,
    #[arg(long)]
    center_lines: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the mask as a PNG.
    #[arg(long)]
    png: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    Full,
    Desk,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset, scored after every epoch.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "resnet")]
    #[serde(serialize_with = "display")]
    variant: Variant,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Override the preset's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the per-epoch history as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Zerofill,
    Pista,
    Net,
}

#[derive(Args, Debug, Serialize)]
struct SolverArgs {
    /// pISTA step size.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// pISTA sparsity weight.
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args, Debug, Serialize)]
struct ReconArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Network checkpoint, required with `--method net`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory for reconstructed images.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory written by `recon`.
    #[arg(long, conflicts_with = "method")]
    recon: Option<PathBuf>,
    /// Reconstruct in-process instead of reading a recon directory.
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug, Serialize)]
struct GradcheckArgs {
    /// Check the parameters of this checkpoint instead of a fresh network.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value = "resnet")]
    #[serde(serialize_with = "display")]
    variant: Variant,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 2)]
    coils: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 256)]
    entries: usize,
    /// Fail when the worst relative error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct ExportPngArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory written by `recon`; without it only ground truth is exported.
    #[arg(long)]
    recon: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Sample indices to export (default: all).
    #[arg(long, value_delimiter = ',')]
    index: Vec<usize>,
    /// Error-map amplification.
    #[arg(long, default_value_t = 5.0)]
    amplify: f64,
}

fn display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Why a subcommand stopped.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

macro_rules! runtime_from {
    ($($t:ty),*) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Runtime(e.into())
            }
        })*
    };
}

runtime_from!(anyhow::Error, pista_core::Error, std::io::Error, serde_json::Error, png::EncodingError);

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Runs the tool on `argv` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let exec = if cli.sequential {
        pista_core::Exec::Sequential
    } else {
        pista_core::Exec::default()
    };
    let name = cli.command.name();
    eprintln!(
        "pista {name} config: {}",
        serde_json::to_string(&cli.command).expect("arguments serialize")
    );
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, exec),
        Command::Mask(a) => commands::mask(a),
        Command::Train(a) => commands::train(a, exec),
        Command::Recon(a) => commands::recon(a, exec),
        Command::Eval(a) => commands::eval(a, exec),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::ExportPng(a) => commands::export_png(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let mut cmd = Cli::command();
            let help = cmd
                .find_subcommand_mut(name)
                .map(|c| c.render_usage().to_string())
                .unwrap_or_default();
            eprintln!("error: {msg}\n\n{help}\n\nFor more information, try 'pista {name} --help'.");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
