use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hod_core::{Error, ErrorKind};

mod data;
mod model;

#[derive(Parser, Debug)]
#[command(name = "hod", version, about = "Hand-object dynamics narrations and a desk-scale video-language model")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enrich narrations with hand-object dynamics.
    Gen(GenArgs),
    /// Word-frequency table of a narration file.
    Stats(StatsArgs),
    /// Train or apply the ego-style clip classifier.
    #[command(subcommand)]
    Filter(FilterCommand),
    /// Write synthetic detections and clip-caption pairs.
    Synth(SynthArgs),
    /// Train, evaluate and inspect the video-language model.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Detection records, one clip per line.
    #[arg(long)]
    pub detections: PathBuf,
    /// Records with `clip_id` and `narration`.
    #[arg(long)]
    pub narrations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Chat-completions endpoint; without it the offline templates are used.
    #[arg(long, requires = "llm_model")]
    pub llm_endpoint: Option<String>,
    #[arg(long, requires = "llm_endpoint")]
    pub llm_model: Option<String>,
    /// Use the offline templates for clips whose LLM call fails.
    #[arg(long)]
    pub offline_fallback: bool,
    /// Boxes are in pixels and get normalized by the clip's `w` and `h`.
    #[arg(long)]
    pub pixels: bool,
    #[arg(long, default_value_t = hod_core::trajectory::DEFAULT_GIOU_THRESHOLD)]
    pub giou_threshold: f64,
    #[arg(long, default_value_t = hod_core::trajectory::DEFAULT_MOTION_EPS)]
    pub motion_eps: f64,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// JSONL with `enriched` or `narration` text per line.
    #[arg(long)]
    pub narrations: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum FilterCommand {
    Train(FilterTrainArgs),
    Apply(FilterApplyArgs),
}

#[derive(Args, Debug)]
pub struct FilterTrainArgs {
    /// Labelled clip records with features.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
}

#[derive(Args, Debug)]
pub struct FilterApplyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub clf: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory receiving detections.jsonl and pairs.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub clips: usize,
    /// Frame side in pixels.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
}

#[derive(Subcommand, Debug)]
enum ModelCommand {
    Train(ModelTrainArgs),
    Eval(ModelEvalArgs),
    Gradcheck(ConfigArgs),
    Params(ConfigArgs),
}

#[derive(Args, Debug)]
pub struct ModelTrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Pair records; defaults to `paths.data` from the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory; defaults to `paths.out` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the loss every this many steps.
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Retrieval,
    Mcq,
    Cls,
}

#[derive(Args, Debug)]
pub struct ModelEvalArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Also write the JSON result here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Transport => 3,
        ErrorKind::Numerical => 4,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let seed = cli.seed;
    match cli.command {
        Command::Gen(a) => data::gen(&a, seed.unwrap_or(0)),
        Command::Stats(a) => data::stats(&a),
        Command::Filter(FilterCommand::Train(a)) => data::filter_train(&a, seed.unwrap_or(0)),
        Command::Filter(FilterCommand::Apply(a)) => data::filter_apply(&a),
        Command::Synth(a) => data::synth(&a, seed.unwrap_or(0)),
        Command::Model(ModelCommand::Train(a)) => model::train(&a, seed),
        Command::Model(ModelCommand::Eval(a)) => model::eval(&a),
        Command::Model(ModelCommand::Gradcheck(a)) => model::gradcheck(&a, seed),
        Command::Model(ModelCommand::Params(a)) => model::params(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
