//! `matchforge`: retrieval, feature decoding, matching and evaluation from
//! the command line.

mod decode;
mod error;
mod export;
mod loss;
mod pairs;
mod retrieve;
mod synth;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use matchforge::adalam::AdalamConfig;
use matchforge::par::with_threads;

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "matchforge", version, about = "Image matching front-end for structure-from-motion")]
struct Cli {
    /// Worker threads (default: all cores). Never changes output.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for every randomised step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Flat `key = value` file overriding filter settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Print the effective filter settings and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Shortlist image pairs from global descriptors.
    Retrieve(retrieve::Args),
    /// Turn detector/descriptor head outputs into keypoints and descriptors.
    Decode(decode::Args),
    /// Match, filter and merge features for every shortlisted pair.
    Match(pairs::Args),
    /// Score the filter on synthetic scenes and emit a JSON report.
    SynthEval(synth::Args),
    /// Evaluate the descriptor losses and check their gradient.
    LossCheck(loss::Args),
    /// Convert a match archive to the pairwise text layout.
    Export(export::Args),
}

/// Shared run-wide settings.
pub struct Globals {
    pub seed: u64,
    config_text: Option<String>,
}

impl Globals {
    /// `base` with the `--config` overrides applied.
    pub fn adalam_config(&self, mut base: AdalamConfig) -> CliResult<AdalamConfig> {
        if let Some(text) = &self.config_text {
            base.apply_kv(text).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(base)
    }
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let config_text = match &cli.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let globals = Globals {
        seed: cli.seed,
        config_text,
    };
    if cli.print_config {
        let cfg = globals.adalam_config(AdalamConfig::default())?;
        return emit(None, &cfg.to_kv());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no subcommand given (see --help)".into()));
    };
    if cli.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let threads = cli.threads.unwrap_or(0);
    with_threads(threads, || match command {
        Command::Retrieve(a) => retrieve::run(a),
        Command::Decode(a) => decode::run(a),
        Command::Match(a) => pairs::run(a, &globals),
        Command::SynthEval(a) => synth::run(a, &globals),
        Command::LossCheck(a) => loss::run(a),
        Command::Export(a) => export::run(a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("matchforge: {e}");
            e.exit_code()
        }
    }
}
