use std::path::PathBuf;

use matchforge::retrieval::{
    load_global_descriptors, pairwise_distances, shortlist_pairs, Metric, DEFAULT_NEIGHBORS,
};

use crate::emit;
use crate::error::{invariant, CliError, CliResult};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Tensor file with one global descriptor per image.
    #[arg(long)]
    descriptors: PathBuf,

    /// Neighbours kept per image; collections this small or smaller are
    /// matched exhaustively.
    #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
    neighbors: usize,

    /// Drop pairs farther apart than this.
    #[arg(long)]
    threshold: Option<f64>,

    #[arg(long, default_value = "euclidean")]
    metric: Metric,

    /// Use vectors as stored instead of L2-normalising them first.
    #[arg(long)]
    raw: bool,

    /// Shortlist destination (stdout when omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn run(args: Args) -> CliResult<()> {
    if args.neighbors == 0 {
        return Err(CliError::Usage("--neighbors must be at least 1".into()));
    }
    let mut descriptors = load_global_descriptors(&args.descriptors)?;
    if !args.raw {
        for d in &mut descriptors {
            d.normalize()?;
        }
    }
    let matrix = pairwise_distances(&descriptors, args.metric)?;
    let ids: Vec<String> = descriptors.iter().map(|d| d.image_id.clone()).collect();
    let shortlist = shortlist_pairs(&matrix, &ids, args.neighbors, args.threshold)?;
    invariant(shortlist.pairs.iter().all(|p| p.id_a < p.id_b), || {
        "shortlist pair not in canonical orientation".into()
    })?;
    eprintln!(
        "{} images, {} pairs{}",
        ids.len(),
        shortlist.pairs.len(),
        if shortlist.exhaustive { " (exhaustive)" } else { "" }
    );
    emit(args.output.as_deref(), &shortlist.to_text())
}
