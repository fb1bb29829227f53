use std::path::PathBuf;

use matchforge::adalam::AdalamConfig;
use matchforge::synth::{evaluate, SceneParams, DEFAULT_IMAGE_SIZE};

use crate::error::{CliError, CliResult};
use crate::{emit, Globals};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Scenes to evaluate, seeded `--seed`, `--seed + 1`, ...
    #[arg(long, default_value_t = 20)]
    runs: usize,

    /// Correspondences per scene.
    #[arg(long, default_value_t = 200)]
    matches: usize,

    #[arg(long, default_value_t = 0.5)]
    outlier_fraction: f64,

    /// Inlier position noise (pixels).
    #[arg(long, default_value_t = 0.5)]
    noise: f64,

    /// Square image side in pixels.
    #[arg(long, default_value_t = DEFAULT_IMAGE_SIZE)]
    image_size: f64,

    /// Include wall-clock runtime in the report (makes output vary).
    #[arg(long)]
    timing: bool,

    /// Report destination (stdout when omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn run(args: Args, globals: &Globals) -> CliResult<()> {
    let params = SceneParams {
        image_size: args.image_size,
        matches: args.matches,
        outlier_fraction: args.outlier_fraction,
        noise_sigma: args.noise,
        ..SceneParams::default()
    };
    let cfg = globals.adalam_config(AdalamConfig::for_image(args.image_size, args.image_size))?;
    let mut report = evaluate(&params, &cfg, globals.seed, args.runs).map_err(|e| match e {
        matchforge::Error::InvalidArgument(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    if !args.timing {
        report.runtime_ms = None;
    }
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Invariant(e.to_string()))?;
    json.push('\n');
    emit(args.output.as_deref(), &json)
}
