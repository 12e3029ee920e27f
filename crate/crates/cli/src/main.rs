//! Command-line front end: one subcommand per pipeline stage plus a full
//! experiment runner.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "entrysep", version, about = "Entry separation for OCR'd directory pages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Directory with lines.jsonl, entries.jsonl and optionally clean.jsonl.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic directory corpus.
    Synth {
        /// Generator parameters (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the token stream of every document for a preset.
    BuildStream {
        #[command(flatten)]
        data: DataArgs,
        /// Preset name or experiment config file.
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a subword vocabulary on the line texts of a corpus.
    TokenizerTrain {
        #[command(flatten)]
        data: DataArgs,
        /// Experiment settings (JSON) providing the tokenizer size and mode.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model for a preset and seed, and score it on the test pages.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        preset: String,
        /// Experiment settings (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode entries and entities of a corpus with a trained checkpoint.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        preset: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint against the annotations of a corpus.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        preset: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run presets end to end over several seeds and write the summary table.
    Experiment {
        #[command(flatten)]
        data: DataArgs,
        /// Preset name or config file; repeat for several, or `all`.
        #[arg(long, required = true)]
        preset: Vec<String>,
        /// Experiment settings (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seeds of the settings; repeatable.
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use commands as c;
    match cli.command {
        Command::Synth { config, seed, out } => c::synth(config.as_deref(), seed, &out),
        Command::BuildStream { data, preset, out } => c::build_stream(&data.data, &preset, &out),
        Command::TokenizerTrain { data, config, out } => {
            c::tokenizer_train(&data.data, config.as_deref(), &out)
        }
        Command::Train {
            data,
            preset,
            config,
            seed,
            out,
        } => c::train(&data.data, &preset, config.as_deref(), seed, &out),
        Command::Predict {
            data,
            preset,
            checkpoint,
            vocab,
            out,
        } => c::predict(&data.data, &preset, &checkpoint, &vocab, &out),
        Command::Eval {
            data,
            preset,
            checkpoint,
            vocab,
            out,
        } => c::eval(&data.data, &preset, &checkpoint, &vocab, &out),
        Command::Experiment {
            data,
            preset,
            config,
            seed,
            out,
        } => c::experiment(&data.data, &preset, config.as_deref(), &seed, &out),
    }
}

/// 1 for invalid input, 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| {
        e.downcast_ref::<entrysep::Error>().is_some_and(entrysep::Error::is_validation)
            || e.downcast_ref::<commands::InvalidInput>().is_some()
    });
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
