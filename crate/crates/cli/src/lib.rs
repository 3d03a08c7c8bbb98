//! Command-line driver: `octseg prepare|train|evaluate|explain --config <file>`.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, ExitCode};

#[derive(Debug, Parser)]
#[command(name = "octseg", version, about = "OCT retinal-layer segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, summarize, preprocess and split the dataset into a cache.
    Prepare(ConfigArg),
    /// Train a model; writes the checkpoint, CSV log and manifest.
    Train(ConfigArg),
    /// Evaluate a checkpoint and write the report tree.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        /// Defaults to `<output_root>/checkpoint.safetensors`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Grad-CAM overlays and statistics for selected samples.
    Explain {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sample ids (comma separated); defaults to the first validation sample.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        /// Layer to explain (repeatable); overrides the config.
        #[arg(long)]
        layer: Vec<String>,
        /// `all` or comma-separated class ids; overrides the config.
        #[arg(long)]
        classes: Option<String>,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Prepare(c) => commands::prepare(&RunConfig::load(&c.config)?),
        Command::Train(c) => commands::train_command(&RunConfig::load(&c.config)?),
        Command::Evaluate { config, checkpoint } => {
            commands::evaluate_command(&RunConfig::load(&config.config)?, checkpoint.as_deref())
        }
        Command::Explain {
            config,
            checkpoint,
            ids,
            layer,
            classes,
        } => commands::explain_command(
            &RunConfig::load(&config.config)?,
            &commands::ExplainOptions {
                checkpoint,
                ids,
                layers: layer,
                classes,
            },
        ),
    }
}

/// Parse `args` (including the program name), run the command and return
/// the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::Usage.code() } else { ExitCode::Success.code() };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::Success.code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.code.code()
        }
    }
}
