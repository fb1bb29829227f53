use std::path::PathBuf;

use matchforge::io::{format_pair_matches_text, MatchArchive};
use matchforge::matching::MatchSet;

use crate::emit;
use crate::error::CliResult;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Match archive written by `match`.
    #[arg(long)]
    archive: PathBuf,

    /// Text destination (stdout when omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn run(args: Args) -> CliResult<()> {
    let archive = MatchArchive::read(&args.archive)?;
    let sets: Vec<MatchSet> = archive.pairs().iter().map(|p| p.to_match_set()).collect();
    emit(args.output.as_deref(), &format_pair_matches_text(&sets)?)
}
