//! WebAssembly bindings behind the static demo page in `www/`.
//!
//! Each operation has a plain Rust entry point (usable and testable on
//! any target) and a thin `wasm_bindgen` wrapper.

use matchforge::adalam::AdalamConfig;
use matchforge::feature_head::{decode_heatmap, extract_keypoints, DetectionTensor, CELL, DUSTBIN};
use matchforge::losses::{hardnet_loss, BatchDistanceMatrix};
use matchforge::synth::{evaluate_scene, SceneParams, SynthScene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Candidate matches of a synthetic scene and the filter's verdict on them.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct SceneView {
    size: f64,
    segments: Vec<f64>,
    kept: Vec<u8>,
    correct: Vec<u8>,
    precision: f64,
    recall: f64,
}

#[wasm_bindgen]
impl SceneView {
    pub fn size(&self) -> f64 {
        self.size
    }

    /// `[xa, ya, xb, yb]` per candidate match.
    pub fn segments(&self) -> Vec<f64> {
        self.segments.clone()
    }

    /// 1 where the filter kept the candidate.
    pub fn kept(&self) -> Vec<u8> {
        self.kept.clone()
    }

    /// 1 where the candidate is a true correspondence.
    pub fn correct(&self) -> Vec<u8> {
        self.correct.clone()
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn recall(&self) -> f64 {
        self.recall
    }
}

pub fn run_scene(seed: u32, outlier_fraction: f64, noise: f64) -> Result<SceneView, String> {
    let params = SceneParams {
        outlier_fraction,
        noise_sigma: noise,
        ..SceneParams::default()
    };
    let scene = SynthScene::generate(&params, u64::from(seed)).map_err(|e| e.to_string())?;
    let cand = scene.candidate_matches().map_err(|e| e.to_string())?;
    let cfg = AdalamConfig::for_image(params.image_size, params.image_size);
    let (metrics, kept) = evaluate_scene(&scene, &cfg).map_err(|e| e.to_string())?;
    let mut view = SceneView {
        size: params.image_size,
        segments: Vec::with_capacity(cand.len() * 4),
        kept: Vec::with_capacity(cand.len()),
        correct: Vec::with_capacity(cand.len()),
        precision: metrics.precision,
        recall: metrics.recall,
    };
    for m in &cand.matches {
        let (a, b) = (&scene.keypoints_a[m.idx_a], &scene.keypoints_b[m.idx_b]);
        view.segments.extend([a.x, a.y, b.x, b.y]);
        view.kept.push(u8::from(kept.matches.iter().any(|k| (k.idx_a, k.idx_b) == (m.idx_a, m.idx_b))));
        view.correct.push(u8::from(scene.is_true_match(m.idx_a, m.idx_b)));
    }
    Ok(view)
}

/// Generates a synthetic two-view scene, matches it and filters the matches.
#[wasm_bindgen(js_name = filterScene)]
pub fn filter_scene(seed: u32, outlier_fraction: f64, noise: f64) -> Result<SceneView, JsError> {
    run_scene(seed, outlier_fraction, noise).map_err(|e| JsError::new(&e))
}

/// A decoded heatmap and the keypoints extracted from it.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct DetectionView {
    width: usize,
    height: usize,
    heatmap: Vec<f32>,
    keypoints: Vec<f64>,
}

#[wasm_bindgen]
impl DetectionView {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn heatmap(&self) -> Vec<f32> {
        self.heatmap.clone()
    }

    /// `[x, y, score]` per keypoint, strongest first.
    pub fn keypoints(&self) -> Vec<f64> {
        self.keypoints.clone()
    }
}

pub const DETECT_CELLS: usize = 16;

pub fn run_detection(seed: u32, peaks: u32, threshold: f64, nms_radius: u32) -> Result<DetectionView, String> {
    let side = DETECT_CELLS * CELL;
    let mut t = DetectionTensor::zeros_for_image(side, side).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    for r in 0..DETECT_CELLS {
        for c in 0..DETECT_CELLS {
            for v in t.cell_mut(r, c) {
                *v = rng.gen_range(-2.0..2.0);
            }
            // background cells mostly vote for the dustbin
            t.cell_mut(r, c)[DUSTBIN] = 6.0;
        }
    }
    for _ in 0..peaks {
        let (r, c) = (rng.gen_range(0..DETECT_CELLS), rng.gen_range(0..DETECT_CELLS));
        let k = rng.gen_range(0..DUSTBIN);
        t.cell_mut(r, c)[k] = rng.gen_range(8.0..12.0);
    }
    let h = decode_heatmap(&t).map_err(|e| e.to_string())?;
    let kps = extract_keypoints(&h, threshold, 8081, nms_radius as usize);
    Ok(DetectionView {
        width: h.width(),
        height: h.height(),
        heatmap: h.data().to_vec(),
        keypoints: kps.iter().flat_map(|k| [k.x, k.y, k.score]).collect(),
    })
}

/// Decodes random detector logits with planted peaks and runs NMS.
#[wasm_bindgen]
pub fn detect(seed: u32, peaks: u32, threshold: f64, nms_radius: u32) -> Result<DetectionView, JsError> {
    run_detection(seed, peaks, threshold, nms_radius).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct LossView {
    loss: f64,
    per_sample: Vec<f64>,
}

#[wasm_bindgen]
impl LossView {
    pub fn loss(&self) -> f64 {
        self.loss
    }

    #[wasm_bindgen(js_name = perSample)]
    pub fn per_sample(&self) -> Vec<f64> {
        self.per_sample.clone()
    }
}

pub fn run_hardnet(distances: &[f64]) -> Result<LossView, String> {
    let n = (distances.len() as f64).sqrt().round() as usize;
    if n * n != distances.len() {
        return Err(format!("{} entries do not form a square matrix", distances.len()));
    }
    let rows: Vec<Vec<f64>> = distances.chunks(n.max(1)).map(<[f64]>::to_vec).collect();
    let d = BatchDistanceMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
    let l = hardnet_loss(&d).map_err(|e| e.to_string())?;
    Ok(LossView {
        loss: l.loss,
        per_sample: l.per_sample,
    })
}

/// HardNet loss of a row-major `n x n` distance matrix.
#[wasm_bindgen(js_name = hardnetLoss)]
pub fn hardnet_loss_js(distances: Vec<f64>) -> Result<LossView, JsError> {
    run_hardnet(&distances).map_err(|e| JsError::new(&e))
}
