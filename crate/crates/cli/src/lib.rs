//! Command-line front end for flexible low-rank quantization.

pub mod ablate;
pub mod args;
pub mod compare;
pub mod error;
pub mod gen_synth;
pub mod layers;
pub mod quantize;
pub mod sweep;
pub mod table;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::{Cli, Command, GlobalArgs};
pub use error::CliError;

pub(crate) fn pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::GenSynth(a) => gen_synth::run(g, a).map(drop),
        Command::Quantize(a) => quantize::run(g, a).map(drop),
        Command::RankSweep(a) => sweep::run(g, a).map(drop),
        Command::Ablate(a) => ablate::run(g, a).map(drop),
        Command::CompareSvd(a) => compare::run(g, a).map(drop),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            let text = text.strip_prefix("error: ").unwrap_or(&text);
            return Err(CliError::usage(text.trim_end()));
        }
    };
    execute(&cli)
}
