//! Synthetic two-view scenes with known correspondences, used to score the
//! matching and filtering stages.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adalam::{adalam_filter, AdalamConfig, AffineModel};
use crate::error::{Error, Result};
use crate::feature_head::{Keypoint, LocalDescriptorSet};
use crate::matching::{match_pair, MatchSet};

/// Image side assumed for synthetic scenes (pixels).
pub const DEFAULT_IMAGE_SIZE: f64 = 1024.0;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SceneParams {
    pub image_size: f64,
    /// Total correspondences, inliers plus outliers.
    pub matches: usize,
    pub outlier_fraction: f64,
    pub noise_sigma: f64,
    pub rotation_deg: f64,
    pub scale: f64,
    /// Horizontal shear of the linear part.
    pub shear: f64,
    /// Offset applied after rotating about the image centre.
    pub shift: [f64; 2],
    pub descriptor_dim: usize,
    /// Per-coordinate noise added to the shared descriptor of a pair.
    pub descriptor_noise: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            image_size: DEFAULT_IMAGE_SIZE,
            matches: 200,
            outlier_fraction: 0.5,
            noise_sigma: 0.5,
            rotation_deg: 12.0,
            scale: 0.95,
            shear: 0.05,
            shift: [20.0, -15.0],
            descriptor_dim: 32,
            descriptor_noise: 0.02,
        }
    }
}

impl SceneParams {
    pub fn inlier_count(&self) -> usize {
        (self.matches as f64 * (1.0 - self.outlier_fraction)).round() as usize
    }

    /// Ground-truth map from image A to image B pixels.
    pub fn transform(&self) -> AffineModel {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let k = self.scale;
        // rotation * scale * shear
        let linear = [[k * c, k * (c * self.shear - s)], [k * s, k * (s * self.shear + c)]];
        let centre = self.image_size / 2.0;
        let translation = [
            centre + self.shift[0] - (linear[0][0] * centre + linear[0][1] * centre),
            centre + self.shift[1] - (linear[1][0] * centre + linear[1][1] * centre),
        ];
        AffineModel { linear, translation }
    }

    fn validate(&self) -> Result<()> {
        if !(self.outlier_fraction >= 0.0 && self.outlier_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "outlier fraction {} outside [0, 1)",
                self.outlier_fraction
            )));
        }
        if !(self.image_size > 0.0) || !(self.noise_sigma >= 0.0) || self.descriptor_dim == 0 {
            return Err(Error::InvalidArgument("image size, noise and descriptor dim must be valid".into()));
        }
        if self.transform().det().abs() < 1e-6 {
            return Err(Error::InvalidArgument("degenerate transform (|det| < 1e-6)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub params: SceneParams,
    pub rng_seed: u64,
    pub transform: AffineModel,
    pub keypoints_a: Vec<Keypoint>,
    /// `keypoints_b[i]` is the intended partner of `keypoints_a[i]`.
    pub keypoints_b: Vec<Keypoint>,
    pub gt_inlier: Vec<bool>,
    pub descriptors_a: LocalDescriptorSet,
    pub descriptors_b: LocalDescriptorSet,
}

impl SynthScene {
    /// Inliers map through the transform plus Gaussian noise truncated at
    /// three sigma and stay inside frame B; outliers land uniformly in B.
    /// Each pair shares a random descriptor perturbed independently per
    /// image. Pairs are shuffled so indices carry no label information.
    pub fn generate(params: &SceneParams, rng_seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let size = params.image_size;
        let t = params.transform();
        let n_in = params.inlier_count();
        let inside = |p: [f64; 2]| p[0] >= 0.0 && p[1] >= 0.0 && p[0] < size && p[1] < size;

        let mut pairs: Vec<([f64; 2], [f64; 2], bool)> = Vec::with_capacity(params.matches);
        let mut attempts = 0usize;
        while pairs.len() < n_in {
            attempts += 1;
            if attempts > 1000 * (n_in + 1) {
                return Err(Error::InvalidArgument("transform maps too little of A into B".into()));
            }
            let a = [rng.gen_range(0.0..size), rng.gen_range(0.0..size)];
            let mut b = t.apply(a);
            if params.noise_sigma > 0.0 {
                let mut offset = [0.0f64; 2];
                for o in &mut offset {
                    *o = loop {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        if z.abs() <= 3.0 {
                            break z * params.noise_sigma;
                        }
                    };
                }
                // both coordinates within 3 sigma can still exceed it radially
                let r = offset[0].hypot(offset[1]);
                let cap = 3.0 * params.noise_sigma;
                if r > cap {
                    offset = [offset[0] * cap / r, offset[1] * cap / r];
                }
                b = [b[0] + offset[0], b[1] + offset[1]];
            }
            if inside(b) {
                pairs.push((a, b, true));
            }
        }
        while pairs.len() < params.matches {
            let a = [rng.gen_range(0.0..size), rng.gen_range(0.0..size)];
            let b = [rng.gen_range(0.0..size), rng.gen_range(0.0..size)];
            pairs.push((a, b, false));
        }
        pairs.shuffle(&mut rng);

        let dim = params.descriptor_dim;
        let mut da = Vec::with_capacity(pairs.len() * dim);
        let mut db = Vec::with_capacity(pairs.len() * dim);
        for _ in 0..pairs.len() {
            let base: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = base.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for out in [&mut da, &mut db] {
                for &v in &base {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    out.push((v / norm + params.descriptor_noise * e) as f32);
                }
            }
        }

        Ok(Self {
            params: params.clone(),
            rng_seed,
            transform: t,
            keypoints_a: pairs.iter().map(|p| Keypoint::new(p.0[0], p.0[1], 1.0)).collect(),
            keypoints_b: pairs.iter().map(|p| Keypoint::new(p.1[0], p.1[1], 1.0)).collect(),
            gt_inlier: pairs.iter().map(|p| p.2).collect(),
            descriptors_a: LocalDescriptorSet::normalized(dim, da)?,
            descriptors_b: LocalDescriptorSet::normalized(dim, db)?,
        })
    }

    /// Whether `(i, j)` is a designed inlier correspondence.
    pub fn is_true_match(&self, i: usize, j: usize) -> bool {
        i == j && self.gt_inlier[i]
    }

    pub fn inlier_count(&self) -> usize {
        self.gt_inlier.iter().filter(|&&b| b).count()
    }

    /// Candidate matches from mutual nearest neighbours.
    pub fn candidate_matches(&self) -> Result<MatchSet> {
        match_pair("A", "B", &self.descriptors_a, &self.descriptors_b, None, None)
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct RunMetrics {
    pub rng_seed: u64,
    pub candidates: usize,
    pub kept: usize,
    pub kept_inliers: usize,
    pub gt_inliers: usize,
    /// Kept inliers over kept; 1 when nothing is kept.
    pub precision: f64,
    /// Kept inliers over ground-truth inliers; 1 when there are none.
    pub recall: f64,
}

/// Matches and filters one scene, scoring the kept set against ground truth.
pub fn evaluate_scene(scene: &SynthScene, cfg: &AdalamConfig) -> Result<(RunMetrics, MatchSet)> {
    let candidates = scene.candidate_matches()?;
    let filtered = adalam_filter(&candidates, &scene.keypoints_a, &scene.keypoints_b, cfg, scene.rng_seed)?;
    let kept_inliers = filtered
        .matches
        .iter()
        .filter(|m| scene.is_true_match(m.idx_a, m.idx_b))
        .count();
    let kept = filtered.len();
    let gt = scene.inlier_count();
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok((
        RunMetrics {
            rng_seed: scene.rng_seed,
            candidates: candidates.len(),
            kept,
            kept_inliers,
            gt_inliers: gt,
            precision: ratio(kept_inliers, kept),
            recall: ratio(kept_inliers, gt),
        },
        filtered,
    ))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct EvalReport {
    pub params: SceneParams,
    pub config: AdalamConfig,
    pub base_seed: u64,
    pub runs: Vec<RunMetrics>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

/// Evaluates `runs` scenes seeded `base_seed, base_seed + 1, ...`.
pub fn evaluate(params: &SceneParams, cfg: &AdalamConfig, base_seed: u64, runs: usize) -> Result<EvalReport> {
    if runs == 0 {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    let start = Instant::now();
    let metrics = (0..runs as u64)
        .map(|k| {
            let scene = SynthScene::generate(params, base_seed.wrapping_add(k))?;
            evaluate_scene(&scene, cfg).map(|(m, _)| m)
        })
        .collect::<Result<Vec<_>>>()?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let mean = |f: fn(&RunMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / metrics.len() as f64;
    Ok(EvalReport {
        params: params.clone(),
        config: cfg.clone(),
        base_seed,
        mean_precision: mean(|m| m.precision),
        mean_recall: mean(|m| m.recall),
        runs: metrics,
        runtime_ms: Some(elapsed),
    })
}
