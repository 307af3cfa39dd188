//! The `relnet` command line.
//!
//! [`run`] returns the process exit status: 0 on success, 1 on usage errors,
//! 2 on data or contract errors.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod config;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing required flag --{0}")]
    Missing(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] relnet::Error),
    #[error("gradient check failed: max relative error {error:e} is not below {tolerance:e}")]
    GradCheck { error: f64, tolerance: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "relnet",
    version,
    about = "Visual relationship recognition with a bidirectional RNN"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the predicate network and write a checkpoint.
    Train(Flags),
    /// Evaluate Rec@K on annotated test images.
    Eval(Flags),
    /// Write ranked relationship predictions for images with detections.
    Predict(Flags),
    /// Evaluate Rec@K on test triplet types never seen in training.
    Zeroshot(Flags),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(Flags),
    /// Generate a synthetic world with planted semantic groups.
    Synth(Flags),
    /// Query an embedding table.
    Embed(EmbedArgs),
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    query: EmbedQuery,
}

#[derive(Debug, Clone, Subcommand)]
pub(crate) enum EmbedQuery {
    /// Cosine distance between two tokens.
    Distance { a: String, b: String },
    /// Tokens nearest to `b - a + c`.
    Analogy { a: String, b: String, c: String },
    /// Tokens nearest to a token.
    Nearest { word: String },
}

#[derive(Debug, Args)]
struct Flags {
    /// Flat `key = value` file; flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    embeddings: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    train: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    test: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    objects: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    predicates: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Output directory [default: $RELNET_OUT or relnet-out]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Learning rate [default: 0.01]
    #[arg(long)]
    lr: Option<f64>,
    /// Batch size [default: 128]
    #[arg(long)]
    batch: Option<usize>,
    /// Training epochs [default: 50]
    #[arg(long)]
    epochs: Option<usize>,
    /// Global-norm gradient clip [default: 5.0]
    #[arg(long)]
    clip: Option<f64>,
    /// Negatives per positive [default: 1.0]
    #[arg(long = "neg-ratio")]
    neg_ratio: Option<f64>,
    /// Rec@K cut-off, repeatable [default: 50, 100]
    #[arg(long = "k", value_parser = clap::value_parser!(u64).range(1..))]
    k: Vec<u64>,
    #[arg(long, value_parser = ["predicate", "phrase", "relationship"])]
    mode: Option<String>,
    /// Minimum detector score [default: 0.0]
    #[arg(long = "det-threshold")]
    det_threshold: Option<f64>,
    /// Network shape D,H,OUT
    #[arg(long, value_parser = config::parse_dims)]
    dims: Option<(usize, usize, usize)>,
    #[arg(long, value_parser = ["error", "zero"])]
    oov: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let paths = [
            ("embeddings", &self.embeddings),
            ("train", &self.train),
            ("test", &self.test),
            ("objects", &self.objects),
            ("predicates", &self.predicates),
            ("checkpoint", &self.checkpoint),
            ("out", &self.out),
        ];
        for (k, v) in paths {
            if let Some(v) = v {
                out.push((k, v.display().to_string()));
            }
        }
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("batch", self.batch.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("clip", self.clip.map(|v| v.to_string()));
        push("neg-ratio", self.neg_ratio.map(|v| v.to_string()));
        push(
            "k",
            (!self.k.is_empty()).then(|| {
                self.k
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            }),
        );
        push("mode", self.mode.clone());
        push("det-threshold", self.det_threshold.map(|v| v.to_string()));
        push("dims", self.dims.map(|(d, h, o)| format!("{d},{h},{o}")));
        push("oov", self.oov.clone());
        out
    }

    /// Defaults, then the config file, then flags.
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.pairs() {
            cfg.apply(k, &v)?;
        }
        Ok(cfg)
    }
}

/// Runs one command; `argv[0]` is the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(f) => commands::train(&f.resolve()?),
        Command::Eval(f) => commands::eval(&f.resolve()?),
        Command::Predict(f) => commands::predict(&f.resolve()?),
        Command::Zeroshot(f) => commands::zeroshot(&f.resolve()?),
        Command::Gradcheck(f) => commands::gradcheck(&f.resolve()?),
        Command::Synth(f) => commands::synth(&f.resolve()?),
        Command::Embed(a) => commands::embed(&a.flags.resolve()?, &a.query),
    }
}
