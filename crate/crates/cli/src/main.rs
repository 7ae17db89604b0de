//! `shellseg`: batch workflows for shell-construction point-cloud segmentation.

mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{LabelColoring, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] shellseg::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        use shellseg::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Output { .. } => 3,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::LabelSpace(_) => 2,
                E::Io { .. }
                | E::Format { .. }
                | E::Unrepresentable { .. }
                | E::Manifest(_)
                | E::Checkpoint(_) => 3,
                E::Diverged { .. } => 4,
                _ => 1,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "shellseg",
    version,
    about = "Semantic segmentation of shell-construction point clouds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML); every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from scratch on a dataset manifest.
    Train(#[command(flatten)] Common),
    /// Reinitialize a checkpoint's head and fine-tune on a target dataset.
    Finetune(#[command(flatten)] Common),
    /// Score a checkpoint on one split of a manifest, across label spaces if needed.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Test-time augmentation.
        #[arg(long)]
        tta: Option<Switch>,
    },
    /// Predict labels for scenes and write labeled copies with summaries.
    Prelabel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tta: Option<Switch>,
        /// Scenes to label, in addition to the configured ones.
        scenes: Vec<PathBuf>,
    },
    /// Per-class statistics of a labeled dataset, with a bar chart.
    Stats(#[command(flatten)] Common),
    /// Generate a synthetic shell-construction dataset.
    Synth(#[command(flatten)] Common),
    /// Render a scanner-centric scene as an equirectangular panorama.
    Render {
        #[command(flatten)]
        common: Common,
        /// Color points by their RGB or by class.
        #[arg(long)]
        labels: Option<LabelColoring>,
        scene: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cwd = std::env::current_dir().map_err(|e| CliError::io(".", e))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(cwd.join(out));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cwd = std::env::current_dir().map_err(|e| CliError::io(".", e))?;
    match cli.command {
        Command::Train(common) => commands::train(load_config(&common)?),
        Command::Finetune(common) => commands::finetune(load_config(&common)?),
        Command::Eval { common, tta } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = tta {
                cfg.eval.tta_enabled = t == Switch::On;
            }
            commands::eval(cfg)
        }
        Command::Prelabel {
            common,
            tta,
            scenes,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = tta {
                cfg.prelabel.tta_enabled = t == Switch::On;
            }
            cfg.prelabel
                .scenes
                .extend(scenes.into_iter().map(|p| cwd.join(p)));
            commands::prelabel(cfg)
        }
        Command::Stats(common) => commands::stats(load_config(&common)?),
        Command::Synth(common) => commands::synth(load_config(&common)?),
        Command::Render {
            common,
            labels,
            scene,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(l) = labels {
                cfg.render.labels = l;
            }
            if let Some(s) = scene {
                cfg.render.scene = Some(cwd.join(s));
            }
            commands::render(cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
