//! Command-line driver: dataset generation, training stages, sampling,
//! style transfer, evaluation, ablation and timing.

pub mod commands;
pub mod export;
pub mod layout;
pub mod runlog;
pub mod schemas;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mulsmo_core::control::Variant;
use mulsmo_core::eval::StyleSource;
use mulsmo_core::Error;

#[derive(Parser, Debug)]
#[command(name = "mulsmo", version, about = "Stylized motion generation with bidirectional style control")]
pub struct Cli {
    /// Root directory for datasets, checkpoints and logs.
    #[arg(long, env = "MULSMO_DATA_DIR", default_value = "mulsmo-data", global = true)]
    pub data_dir: PathBuf,
    /// Worker threads for tensor kernels; 1 gives bit-reproducible runs.
    #[arg(long, default_value_t = 1, global = true)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config document for the command.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Named profile (`mini`/`full` for training; `generation`, `transfer`,
    /// `mini` or a JSON path for sampling).
    #[arg(long)]
    pub profile: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
#[group(multiple = false)]
pub struct StyleArgs {
    /// Reference style motion (`.mot`).
    #[arg(long)]
    pub style_motion: Option<PathBuf>,
    /// Style label looked up in the text-embedding table.
    #[arg(long)]
    pub style_text: Option<String>,
    /// JSON-lines file holding one text or image embedding.
    #[arg(long)]
    pub style_embedding: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ClassifierTarget {
    Style,
    Content,
    Retrieval,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SourceArg {
    Motion,
    Text,
    None,
}

impl From<SourceArg> for StyleSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Motion => StyleSource::Motion,
            SourceArg::Text => StyleSource::Text,
            SourceArg::None => StyleSource::None,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes the procedural style and content datasets.
    SynthData {
        #[command(flatten)]
        common: Common,
    },
    /// Trains the motion VAE on both datasets.
    TrainVae {
        #[command(flatten)]
        common: Common,
    },
    /// Trains the text-conditioned base denoiser on the content dataset.
    TrainBase {
        #[command(flatten)]
        common: Common,
    },
    /// Trains the evaluation models: style classifier (also the guidance
    /// feature extractor), content classifier and text/motion retrieval.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        target: ClassifierTarget,
    },
    /// Trains the style network and fusion maps against the frozen base.
    TrainStyle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "b")]
        variant: Variant,
    },
    /// Aligns semantic style embeddings with the style-motion space.
    TrainAdaptor {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "b")]
        variant: Variant,
        /// JSON-lines text/image embeddings, one per style label.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Samples motions from a content text and an optional style signal.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        style: StyleArgs,
        #[arg(long)]
        content: String,
        #[arg(long, default_value = "b")]
        variant: Variant,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Re-renders a content motion in a new style via DDIM inversion.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        style: StyleArgs,
        #[arg(long)]
        content_motion: PathBuf,
        /// Text describing the content motion.
        #[arg(long)]
        content: Option<String>,
        #[arg(long, default_value = "b")]
        variant: Variant,
        /// Inversion steps; defaults to the profile's sampling steps.
        #[arg(long)]
        inversion_steps: Option<usize>,
        /// Fixed-point refinements per inversion step.
        #[arg(long, default_value_t = mulsmo_core::pipeline::DEFAULT_REFINE)]
        refine: usize,
    },
    /// Samples random (content, style) pairs and writes `eval_report.json`.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Style network variant; omit with `--style-source none`.
        #[arg(long, default_value = "b")]
        variant: Variant,
        #[arg(long, value_enum, default_value = "motion")]
        style_source: SourceArg,
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Trains and evaluates fusion variants with a shared seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "a,b,c,d")]
        variants: Vec<Variant>,
        /// Retrain variants whose checkpoints already exist.
        #[arg(long)]
        retrain: bool,
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Average inference time per generated sequence at batch size 1.
    ReportTiming {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "b")]
        variant: Variant,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 40)]
        frames: usize,
    },
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Shape(_) | Error::Dataset(_) => 2,
        Error::MissingDependency { .. } => 3,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> mulsmo_core::Result<()> {
    commands::dispatch(cli)
}
