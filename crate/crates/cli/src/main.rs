//! `conceptkit`: datasets, training, evaluation and the session server.

mod commands;
mod error;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "conceptkit", version, about = "Sketch-to-concept design pipeline tools")]
struct Cli {
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create or split segmentation datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a segmentation model on a split dataset.
    Train(TrainArgs),
    /// Evaluate segmentation IoU or function-mapping accuracy.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderChoice {
    Mock,
    Live,
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Emit generation prompts and, in mock mode, procedural image/mask pairs.
    Gen(GenArgs),
    /// Write an 8:1:1 train/val/test manifest.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// car, nerf-gun, robot-dog, or shapes (3-class synthetic set).
    #[arg(long)]
    pub category: String,
    /// Number of images.
    #[arg(long)]
    pub n: usize,
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    /// Sample `i` is drawn with seed `seed + i`.
    #[arg(long, default_value_t = 1000)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ProviderChoice::Mock)]
    pub provider: ProviderChoice,
    /// Provider configuration JSON (live mode).
    #[arg(long)]
    pub provider_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Training configuration JSON; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Expected dataset category; checked against the dataset schema.
    #[arg(long)]
    pub category: Option<String>,
    /// Also report IoU on the test split after training.
    #[arg(long)]
    pub eval_test: bool,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Mean IoU of a model on a dataset split, or of mask directories.
    Iou(IouArgs),
    /// Function-to-component mapping accuracy over repeated trials.
    Mapping(MappingArgs),
}

#[derive(Debug, Args)]
pub struct IouArgs {
    #[arg(long, requires = "data", conflicts_with_all = ["pred_dir", "gt_dir"])]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Directory of predicted label PNGs, scored against `--gt-dir`.
    #[arg(long, requires_all = ["gt_dir", "schema"])]
    pub pred_dir: Option<PathBuf>,
    #[arg(long)]
    pub gt_dir: Option<PathBuf>,
    /// Category slug, `shapes`, or a schema.json path (directory mode).
    #[arg(long)]
    pub schema: Option<String>,
    #[arg(long)]
    pub include_background: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct MappingArgs {
    #[arg(long)]
    pub category: String,
    /// Gold `{function: component}` file; defaults to gold/<category>.json.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProviderChoice::Mock)]
    pub provider: ProviderChoice,
    #[arg(long)]
    pub provider_config: Option<PathBuf>,
    /// Mock script JSON (`{"seed": .., "rules": [..]}`) replacing the default mock.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Make FUNCTION unmappable in trial TRIAL, written `FUNCTION@TRIAL`.
    #[arg(long)]
    pub plant_error: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub trials: u32,
    #[arg(long, default_value_t = 128)]
    pub size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 7)]
    pub mock_seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Print the JSON report instead of the text table.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Server configuration JSON (see docs/api.md).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Provider configuration JSON; overrides the one in `--config`.
    #[arg(long)]
    pub provider_config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Dataset(DatasetCommand::Gen(a)) => commands::dataset_gen(&a),
        Command::Dataset(DatasetCommand::Split(a)) => commands::dataset_split(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(EvalCommand::Iou(a)) => commands::eval_iou(&a),
        Command::Eval(EvalCommand::Mapping(a)) => commands::eval_mapping(&a),
        Command::Serve(a) => commands::serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
