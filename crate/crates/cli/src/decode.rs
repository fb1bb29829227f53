use std::path::PathBuf;

use matchforge::feature_head::{
    decode_heatmap, extract_keypoints, sample_descriptors, DenseDescriptorTensor, DetectionTensor,
    DEFAULT_DETECTION_THRESHOLD, DEFAULT_MAX_KEYPOINTS, DEFAULT_NMS_RADIUS,
};
use matchforge::io::{keypoints_to_tensor, read_tensor, write_features, write_tensor, FeatureSet, Tensor};

use crate::error::{invariant, CliError, CliResult};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Detector logits, `Hc x Wc x 65` (a leading batch axis of 1 is allowed).
    #[arg(long)]
    detection: PathBuf,

    /// Dense descriptors, `Hc x Wc x D`. Without them only keypoints are written.
    #[arg(long)]
    descriptors: Option<PathBuf>,

    /// Minimum keypoint probability.
    #[arg(long, default_value_t = DEFAULT_DETECTION_THRESHOLD)]
    threshold: f64,

    #[arg(long, default_value_t = DEFAULT_MAX_KEYPOINTS)]
    max_keypoints: usize,

    /// Chebyshev suppression radius in pixels.
    #[arg(long, default_value_t = DEFAULT_NMS_RADIUS)]
    nms_radius: usize,

    /// Feature file to write.
    #[arg(long, short)]
    output: PathBuf,
}

/// `(rows, cols, channels)` of a cell-major tensor.
fn grid_shape(t: &Tensor, what: &str) -> CliResult<(usize, usize, usize)> {
    match t.dims() {
        [r, c, ch] | [1, r, c, ch] => Ok((*r, *c, *ch)),
        other => Err(CliError::Data(format!("{what}: expected Hc x Wc x C, found {other:?}"))),
    }
}

pub fn run(args: Args) -> CliResult<()> {
    let det = read_tensor(&args.detection)?;
    let (rows, cols, _) = grid_shape(&det, "detection tensor")?;
    let det = DetectionTensor::new(rows, cols, det.into_data())?;
    let heatmap = decode_heatmap(&det)?;
    let keypoints = extract_keypoints(&heatmap, args.threshold, args.max_keypoints, args.nms_radius);
    invariant(keypoints.len() <= args.max_keypoints, || "keypoint budget exceeded".into())?;

    match &args.descriptors {
        Some(path) => {
            let dense = read_tensor(path)?;
            let (drows, dcols, dim) = grid_shape(&dense, "descriptor tensor")?;
            if (drows, dcols) != (rows, cols) {
                return Err(CliError::Data(format!(
                    "descriptor grid {drows}x{dcols} does not match detection grid {rows}x{cols}"
                )));
            }
            let dense = DenseDescriptorTensor::new(drows, dcols, dim, dense.into_data())?;
            let descriptors = sample_descriptors(&dense, &keypoints)?;
            write_features(&args.output, &FeatureSet { keypoints: keypoints.clone(), descriptors })?;
        }
        None => write_tensor(&args.output, &keypoints_to_tensor(&keypoints))?,
    }
    println!("{} keypoints from a {}x{} image", keypoints.len(), heatmap.width(), heatmap.height());
    Ok(())
}
