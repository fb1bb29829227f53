use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use matchforge::adalam::{adalam_filter, AdalamConfig};
use matchforge::ensemble::{enforce_one_to_one, merge_keypoints, merge_matches, SourceTag, UnifiedKeypointTable};
use matchforge::io::{
    export_pair_matches_text, keypoints_to_tensor, read_features, write_tensor, FeatureSet, MatchArchive,
};
use matchforge::matching::{match_pair, MatchSet};
use matchforge::par::map_slice;
use matchforge::retrieval::parse_shortlist;

use crate::error::{invariant, CliError, CliResult};
use crate::Globals;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Shortlist produced by `retrieve`.
    #[arg(long)]
    pairs: PathBuf,

    /// Directory holding `<source>/<image>.mft` feature files.
    #[arg(long)]
    features: PathBuf,

    /// Comma-separated sources, highest priority first (default: every
    /// subdirectory, by name).
    #[arg(long, value_delimiter = ',')]
    sources: Vec<String>,

    /// Maximum Lowe ratio for candidate matches, in (0, 1].
    #[arg(long)]
    ratio: Option<f64>,

    /// Maximum descriptor distance for candidate matches.
    #[arg(long)]
    max_distance: Option<f64>,

    /// Keypoints from different sources closer than this are merged.
    #[arg(long, default_value_t = matchforge::ensemble::DEFAULT_DEDUP_RADIUS)]
    dedup_radius: f64,

    /// Keep at most one match per keypoint after merging.
    #[arg(long)]
    strict_one_to_one: bool,

    /// Match archive to write.
    #[arg(long, short)]
    output: PathBuf,

    /// Also write the pairwise text export here.
    #[arg(long)]
    text: Option<PathBuf>,

    /// Also write merged keypoints as `<dir>/<image>.mft`.
    #[arg(long)]
    keypoints_dir: Option<PathBuf>,
}

/// Features of one image from every source that has them, plus the merged
/// keypoint table.
struct ImageFeatures {
    per_source: Vec<Option<FeatureSet>>,
    table: UnifiedKeypointTable,
}

struct PairOutcome {
    merged: MatchSet,
    raw: usize,
    filtered: usize,
}

fn list_sources(dir: &Path) -> CliResult<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(CliError::Data(format!("no source directories under {}", dir.display())));
    }
    Ok(names)
}

fn load_image(root: &Path, sources: &[String], image: &str, dedup: f64) -> CliResult<Option<ImageFeatures>> {
    let mut per_source = Vec::with_capacity(sources.len());
    let mut tagged = Vec::with_capacity(sources.len());
    for (rank, source) in sources.iter().enumerate() {
        let path = root.join(source).join(format!("{image}.mft"));
        let features = if path.exists() { Some(read_features(&path)?) } else { None };
        // earlier sources win deduplication
        let priority = (sources.len() - rank) as i32;
        let kps = features.as_ref().map(|f| f.keypoints.clone()).unwrap_or_default();
        tagged.push((SourceTag::new(source.clone(), priority), kps));
        per_source.push(features);
    }
    if per_source.iter().all(Option::is_none) {
        return Ok(None);
    }
    let table = merge_keypoints(&tagged, dedup)?;
    Ok(Some(ImageFeatures { per_source, table }))
}

fn match_one(
    a: (&str, &ImageFeatures),
    b: (&str, &ImageFeatures),
    args: &Args,
    cfg: &AdalamConfig,
    seed: u64,
) -> CliResult<PairOutcome> {
    let mut filtered_sets = Vec::new();
    let (mut raw, mut filtered) = (0, 0);
    for (s, (fa, fb)) in a.1.per_source.iter().zip(&b.1.per_source).enumerate() {
        let (Some(fa), Some(fb)) = (fa, fb) else { continue };
        if fa.keypoints.is_empty() || fb.keypoints.is_empty() {
            continue;
        }
        let cand = match_pair(a.0, b.0, &fa.descriptors, &fb.descriptors, args.ratio, args.max_distance)?;
        let kept = adalam_filter(&cand, &fa.keypoints, &fb.keypoints, cfg, seed)?;
        invariant(kept.matches.iter().all(|m| cand.matches.contains(m)), || {
            format!("filtered matches for ({}, {}) are not a subset of the candidates", a.0, b.0)
        })?;
        raw += cand.len();
        filtered += kept.len();
        filtered_sets.push((s, kept));
    }
    let mut merged = if filtered_sets.is_empty() {
        MatchSet::new(a.0, b.0)
    } else {
        let inputs: Vec<(&MatchSet, &[usize], &[usize])> = filtered_sets
            .iter()
            .map(|(s, ms)| (ms, a.1.table.remap[*s].as_slice(), b.1.table.remap[*s].as_slice()))
            .collect();
        merge_matches(&inputs)?
    };
    if args.strict_one_to_one {
        merged = enforce_one_to_one(&merged);
    }
    Ok(PairOutcome { merged, raw, filtered })
}

pub fn run(args: Args, globals: &Globals) -> CliResult<()> {
    if !(args.dedup_radius >= 0.0) {
        return Err(CliError::Usage("--dedup-radius must be non-negative".into()));
    }
    if let Some(r) = args.ratio {
        if !(r > 0.0 && r <= 1.0) {
            return Err(CliError::Usage(format!("--ratio {r} outside (0, 1]")));
        }
    }
    let cfg = globals.adalam_config(AdalamConfig::default())?;
    let text = fs::read_to_string(&args.pairs).map_err(|e| CliError::Data(format!("{}: {e}", args.pairs.display())))?;
    let pairs = parse_shortlist(&text)?;
    let sources = if args.sources.is_empty() { list_sources(&args.features)? } else { args.sources.clone() };
    if sources.iter().collect::<BTreeSet<_>>().len() != sources.len() {
        return Err(CliError::Usage("duplicate source name in --sources".into()));
    }

    let images: Vec<String> = pairs
        .iter()
        .flat_map(|(a, b)| [a.clone(), b.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let loaded = map_slice(&images, |(_, name)| load_image(&args.features, &sources, name, args.dedup_radius));
    let mut features: BTreeMap<&str, ImageFeatures> = BTreeMap::new();
    for (name, f) in images.iter().zip(loaded) {
        match f? {
            Some(f) => {
                features.insert(name, f);
            }
            None => eprintln!("warning: no features for image {name:?}"),
        }
    }

    let outcomes = map_slice(&pairs, |(_, (a, b))| -> CliResult<Option<PairOutcome>> {
        match (features.get(a.as_str()), features.get(b.as_str())) {
            (Some(fa), Some(fb)) => match_one((a, fa), (b, fb), &args, &cfg, globals.seed).map(Some),
            _ => Ok(None),
        }
    });

    let mut archive = MatchArchive::new();
    for (name, f) in &features {
        archive.add_image(*name, f.table.keypoints.len())?;
    }
    let mut summary = String::new();
    let mut merged_sets = Vec::new();
    for ((a, b), outcome) in pairs.iter().zip(outcomes) {
        let Some(o) = outcome? else {
            eprintln!("warning: skipping pair {a} {b}: missing features");
            continue;
        };
        summary += &format!("{a} {b} {} {} {}\n", o.raw, o.filtered, o.merged.len());
        archive.add_pair(&o.merged)?;
        merged_sets.push(o.merged);
    }

    archive.write(&args.output)?;
    if let Some(path) = &args.text {
        export_pair_matches_text(&merged_sets, path)?;
    }
    if let Some(dir) = &args.keypoints_dir {
        fs::create_dir_all(dir)?;
        for (name, f) in &features {
            write_tensor(dir.join(format!("{name}.mft")), &keypoints_to_tensor(&f.table.keypoints))?;
        }
    }
    crate::emit(None, &summary)
}
