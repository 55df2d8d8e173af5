//! The `dart` command line: synthetic data, training, conversion, evaluation,
//! embedding export, plotting and codebook sweeps.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dart_core::{Branch, EmbeddingKind, LabelKind};

mod commands;
pub mod error;
pub mod manifest;
pub mod svg;

pub use error::{CliError, CliResult};
pub use manifest::{manifest_path, RunManifest};
pub use svg::{render_scatter_svg, write_scatter_svg};

#[derive(Debug, Parser)]
#[command(name = "dart", version, about = "Speaker/accent disentanglement toolkit")]
pub struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true, env = "DART_SEED", default_value_t = 42)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic factorized dataset.
    SynthData(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Re-synthesize one utterance with another accent.
    Convert(ConvertArgs),
    /// Compute one evaluation metric and print it as JSON.
    Eval(EvalArgs),
    /// Export per-utterance embeddings as CSV.
    Embed(EmbedArgs),
    /// Scatter-plot embeddings projected to 2-D.
    Plot(PlotArgs),
    /// Train once per codebook size and tabulate the results.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON spec; unset fields take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON model config; unset fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Run length; warmup and anneal points are rescaled to it.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Checkpoint to start from instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset holding the utterance and the accent reference set.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub utterance: String,
    #[arg(long)]
    pub target_accent: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Mcd,
    Ffe,
    Cs,
    Wer,
    Bws,
    Mos,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub task: EvalTask,
    /// Reference input: dataset (mcd), F0 CSV (ffe), embedding CSV (cs) or transcript lines (wer).
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// Synthesized counterpart of `--ref` for mcd, ffe and cs.
    #[arg(long)]
    pub syn: Option<PathBuf>,
    /// Hypothesis transcript lines for wer.
    #[arg(long)]
    pub hyp: Option<PathBuf>,
    /// JSON-lines best-worst trials for bws.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// One rating per line for mos.
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    /// Gross pitch error threshold for ffe.
    #[arg(long, default_value_t = dart_core::metrics::DEFAULT_GROSS_THRESHOLD)]
    pub threshold: f64,
    /// Ignore the 0th cepstral coefficient for mcd.
    #[arg(long)]
    pub skip_c0: bool,
    #[arg(long, value_enum, default_value_t = BranchArg::Speaker)]
    pub branch: BranchArg,
    #[arg(long, value_enum, default_value_t = KindArg::Grouped)]
    pub kind: KindArg,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BranchArg {
    Speaker,
    Accent,
}

impl From<BranchArg> for Branch {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Speaker => Branch::Speaker,
            BranchArg::Accent => Branch::Accent,
        }
    }
}

impl From<BranchArg> for LabelKind {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Speaker => LabelKind::Speaker,
            BranchArg::Accent => LabelKind::Accent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    PreVq,
    Grouped,
    Quantized,
}

impl From<KindArg> for EmbeddingKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::PreVq => EmbeddingKind::PreVq,
            KindArg::Grouped => EmbeddingKind::Grouped,
            KindArg::Quantized => EmbeddingKind::Quantized,
        }
    }
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_enum)]
    pub color_by: BranchArg,
    #[arg(long, value_enum)]
    pub branch: BranchArg,
    #[arg(long, value_enum, default_value_t = KindArg::PreVq)]
    pub kind: KindArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sizes used for both codebooks, one training run each.
    #[arg(long, value_delimiter = ',', required = true)]
    pub codebook_sizes: Vec<usize>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Runs trained concurrently; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Results that go to standard output are written to `stdout`.
pub fn run_with_output<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let command_line = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::execute(cli, command_line, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_output(args, &mut std::io::stdout().lock())
}
