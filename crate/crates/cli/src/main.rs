//! `bicap`: train, caption, retrieve and inspect bidirectional captioning
//! models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bicap_core::model::ArchitectureKind;
use bicap_core::Error;
use clap::{Args, Parser, Subcommand};

use config::{List, Optional};

#[derive(Debug, Parser)]
#[command(name = "bicap", version, about = "Bidirectional LSTM image captioning")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Random seed for initialisation, shuffling and synthetic data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key = value` settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model architecture: bi-lstm, bi-s-lstm or bi-f-lstm.
    #[arg(long, global = true)]
    pub arch: Option<ArchitectureKind>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint, vocabulary and log.
    Train(TrainArgs),
    /// Caption every image in a feature file.
    Caption(CaptionArgs),
    /// Rank images against sentences and report R@K and Med r.
    Retrieve(RetrieveArgs),
    /// Corpus BLEU of candidate captions against references.
    EvalBleu(BleuArgs),
    /// Compare analytic gradients with finite differences on a random model.
    Gradcheck(GradcheckArgs),
    /// List the crop and mirror variants for one image.
    AugmentPlan(AugmentArgs),
    /// Write per-step gate activations of a greedy decode.
    DumpGates(DumpGatesArgs),
    /// Write a small synthetic captions/features pair.
    MakeToy(ToyArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training captions, `image_id<TAB>text` per line.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    /// Training feature file.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Validation captions; the training set is used when absent.
    #[arg(long)]
    pub val_captions: Option<PathBuf>,
    /// Validation feature file; defaults to the training features.
    #[arg(long)]
    pub val_features: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training log; defaults to `<out>.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Vocabulary file to write; defaults to `<out>.vocab`.
    #[arg(long)]
    pub vocab_out: Option<PathBuf>,
    /// Default set: `full` (H=1000) or `toy` (H=16, small corpora).
    #[arg(long)]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Word embedding width; defaults to the hidden width.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Words seen fewer times become UNK.
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping, or `none`.
    #[arg(long)]
    pub patience: Option<Optional<usize>>,
    /// Global gradient norm cap, or `none`.
    #[arg(long)]
    pub grad_clip: Option<Optional<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    Full,
    Toy,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Profile as clap::ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Vocabulary written by `train`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Directory for per-image greedy gate traces.
    #[arg(long)]
    pub gates_dir: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Cutoffs for R@K, comma separated.
    #[arg(long)]
    pub ks: Option<List<usize>>,
    /// Also write the full image × sentence score grid.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BleuArgs {
    /// `image_id<TAB>text`, one candidate per image.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// `image_id<TAB>text`, any number of references per image.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Highest n-gram order.
    #[arg(long)]
    pub max_n: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// `K,D_feat,D_e,H,T`.
    #[arg(long)]
    pub dims: Option<List<usize>>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub image_id: Option<String>,
    /// Length of the short side after resizing.
    #[arg(long)]
    pub base: Option<u32>,
    /// Crop side, or `default` for 227 at full scale and 196 below.
    #[arg(long)]
    pub crop: Option<CropArg>,
    /// Scale factors, comma separated.
    #[arg(long)]
    pub scales: Option<List<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropArg(pub bicap_core::data::CropSize);

impl std::str::FromStr for CropArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        use bicap_core::data::CropSize;
        if s == "default" {
            return Ok(CropArg(CropSize::Default));
        }
        s.parse()
            .map(|c| CropArg(CropSize::Fixed(c)))
            .map_err(|_| format!("expected `default` or a pixel count, got `{s}`"))
    }
}

#[derive(Debug, Args)]
pub struct DumpGatesArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub image_id: Option<String>,
    /// `forward`, `backward` or `both`.
    #[arg(long)]
    pub direction: Option<DirectionArg>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Vocabulary for the words sidecar.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DirectionArg {
    Forward,
    Backward,
    Both,
}

impl std::str::FromStr for DirectionArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <DirectionArg as clap::ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
}

/// Missing or unreadable inputs exit 2, dimension mismatches 3, anything
/// else 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 2,
        Error::Shape(_) => 3,
        _ => 1,
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("bicap: {}", first.trim_start_matches("error: "));
            return ExitCode::from(64);
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("bicap: {}", one_line(&e.to_string()));
            ExitCode::from(exit_code(&e))
        }
    }
}
