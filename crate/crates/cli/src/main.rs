//! `deepbof` command-line pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{Overrides, PipelineConfig};

#[derive(Parser)]
#[command(name = "deepbof", version, about = "Masked-face recognition over CNN feature maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align, normalize and crop face images listed in a manifest
    Preprocess(Flags),
    /// Build an RBF codebook from training feature maps
    Codebook(Flags),
    /// Train the classifier and write a model directory
    Train(Flags),
    /// Cross-validate over a codebook-size sweep and write reports
    Eval(Flags),
    /// Print the top-1 identity and score for feature files
    Predict {
        #[command(flatten)]
        flags: Flags,
        /// `.dbf` feature files to classify
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Print the resolved configuration
    ShowConfig(Flags),
    /// Write a synthetic labelled feature-map set
    Synth {
        #[command(flatten)]
        flags: Flags,
        #[arg(long, default_value_t = 20)]
        identities: usize,
        #[arg(long, default_value_t = 30)]
        samples: usize,
        /// Spatial size of each map
        #[arg(long, default_value_t = 10)]
        size: usize,
        #[arg(long, default_value_t = 32)]
        channels: usize,
    },
}

#[derive(Args, Clone, Default)]
struct Flags {
    /// TOML file with default values for any flag
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tab-separated dataset manifest
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory of `<stem>.dbf` feature maps
    #[arg(long)]
    features: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Existing codebook to train against
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// Model directory written by `train`
    #[arg(long)]
    model: Option<PathBuf>,
    /// Codebook size; a comma-separated list for `eval`
    #[arg(long, value_delimiter = ',')]
    codebook_size: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Joint codebook and classifier epochs after training
    #[arg(long)]
    finetune_epochs: Option<usize>,
    /// Extractor name for report rows
    #[arg(long)]
    extractor: Option<String>,
    /// Feature-map tag for report rows
    #[arg(long = "fm")]
    feature_map: Option<String>,
}

impl Flags {
    fn resolve(self) -> Result<PipelineConfig> {
        let config = self.config.clone();
        let overrides = Overrides {
            manifest: self.manifest,
            features: self.features,
            out: self.out,
            codebook: self.codebook,
            model: self.model,
            codebook_size: self.codebook_size,
            seed: self.seed,
            folds: self.folds,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            finetune_epochs: self.finetune_epochs,
            extractor: self.extractor,
            feature_map: self.feature_map,
        };
        PipelineConfig::resolve(overrides, config.as_deref())
    }
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("DEEPBOF_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("DEEPBOF_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Preprocess(f) => commands::preprocess(&f.resolve()?).context("preprocess failed"),
        Command::Codebook(f) => commands::codebook(&f.resolve()?).context("codebook failed"),
        Command::Train(f) => commands::train(&f.resolve()?).context("train failed"),
        Command::Eval(f) => {
            let report = commands::eval(&f.resolve()?).context("eval failed")?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Predict { flags, files } => {
            let results = commands::predict(&flags.resolve()?, &files).context("predict failed")?;
            for (file, (identity, score)) in files.iter().zip(results) {
                println!("{}\t{identity}\t{score:.6}", file.display());
            }
            Ok(())
        }
        Command::ShowConfig(f) => {
            let cfg = f.resolve()?;
            if cfg.seed.is_none() {
                println!("# seed has no default and must be set");
            }
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Synth { flags, identities, samples, size, channels } => {
            let args = commands::SynthArgs { identities, samples, size, channels };
            let manifest = commands::synth(&flags.resolve()?, &args).context("synth failed")?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
