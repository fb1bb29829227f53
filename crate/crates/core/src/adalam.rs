//! Spatially adaptive outlier filtering (AdaLAM).
//!
//! 1. Seeds: greedy non-maximum suppression of matches by confidence in
//!    image A, so seeds are confident and spread out.
//! 2. Neighbourhoods: every match close to a seed in *both* images (and,
//!    when keypoints carry local frames, with a consistent rotation and
//!    scale change) joins that seed's neighbourhood.
//! 3. Verification: RANSAC over 2-match samples fits a local similarity in
//!    seed-centred coordinates, refined to a full affine on its consensus.
//!    The best consensus is accepted only if it is unlikely under a uniform
//!    null: `P[Binomial(m, p0) >= k] <= alpha` with
//!    `p0 = tol^2 / radius_b^2`, and `k >= min_inliers`.
//! 4. Output: the union of accepted consensus sets.
//!
//! Each neighbourhood draws from its own random stream keyed by
//! `(rng_seed, seed match index)`, so results do not depend on scheduling.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_head::Keypoint;
use crate::grid::PointGrid;
use crate::matching::{Match, MatchSet};
use crate::par;

/// Upper bound on the null inlier probability, so that a tolerance disc
/// covering the whole search disc still yields a finite tail.
const MAX_NULL_PROBABILITY: f64 = 1.0 - 1e-6;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct AdalamConfig {
    /// Seed suppression radius in image A (pixels).
    pub seed_radius: f64,
    pub neighborhood_radius_a: f64,
    pub neighborhood_radius_b: f64,
    pub ransac_iters: usize,
    /// Transfer residual tolerance (pixels), multiplied by the seed's
    /// image-B keypoint scale.
    pub inlier_tol: f64,
    /// Significance level of the binomial test.
    pub alpha: f64,
    pub min_inliers: usize,
    /// Admissible range of `|det A|` for local models.
    pub det_min: f64,
    pub det_max: f64,
    /// Allowed deviation of a member's rotation change from the seed's.
    pub orientation_tol_deg: f64,
    /// Allowed factor between a member's and the seed's scale change.
    pub scale_ratio_max: f64,
    /// Least-squares affine refinement on the consensus of each sample.
    pub refine_affine: bool,
}

impl AdalamConfig {
    /// Defaults scaled to an image of the given size.
    pub fn for_image(width: f64, height: f64) -> Self {
        let diag = width.hypot(height);
        Self {
            seed_radius: diag / 40.0,
            neighborhood_radius_a: diag / 6.0,
            neighborhood_radius_b: diag / 6.0,
            ransac_iters: 128,
            inlier_tol: 4.0,
            alpha: 0.01,
            min_inliers: 6,
            det_min: 0.1,
            det_max: 10.0,
            orientation_tol_deg: 30.0,
            scale_ratio_max: 2.0,
            refine_affine: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seed_radius", self.seed_radius),
            ("neighborhood_radius_a", self.neighborhood_radius_a),
            ("neighborhood_radius_b", self.neighborhood_radius_b),
            ("inlier_tol", self.inlier_tol),
            ("det_max", self.det_max),
            ("scale_ratio_max", self.scale_ratio_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.det_min >= 0.0 && self.det_min <= self.det_max) {
            return Err(Error::Config("need 0 <= det_min <= det_max".into()));
        }
        if self.ransac_iters == 0 {
            return Err(Error::Config("ransac_iters must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.orientation_tol_deg >= 0.0) {
            return Err(Error::Config("orientation_tol_deg must be >= 0".into()));
        }
        Ok(())
    }

    /// Sets one field from its textual `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}")))
        }
        match key {
            "seed_radius" => self.seed_radius = num(key, value)?,
            "neighborhood_radius_a" => self.neighborhood_radius_a = num(key, value)?,
            "neighborhood_radius_b" => self.neighborhood_radius_b = num(key, value)?,
            "ransac_iters" => self.ransac_iters = num(key, value)?,
            "inlier_tol" => self.inlier_tol = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "min_inliers" => self.min_inliers = num(key, value)?,
            "det_min" => self.det_min = num(key, value)?,
            "det_max" => self.det_max = num(key, value)?,
            "orientation_tol_deg" => self.orientation_tol_deg = num(key, value)?,
            "scale_ratio_max" => self.scale_ratio_max = num(key, value)?,
            "refine_affine" => self.refine_affine = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies flat `key = value` lines on top of `self`. Blank lines and
    /// `#` comments are ignored; unknown keys are errors.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed_radius = {}", self.seed_radius);
        let _ = writeln!(s, "neighborhood_radius_a = {}", self.neighborhood_radius_a);
        let _ = writeln!(s, "neighborhood_radius_b = {}", self.neighborhood_radius_b);
        let _ = writeln!(s, "ransac_iters = {}", self.ransac_iters);
        let _ = writeln!(s, "inlier_tol = {}", self.inlier_tol);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "min_inliers = {}", self.min_inliers);
        let _ = writeln!(s, "det_min = {}", self.det_min);
        let _ = writeln!(s, "det_max = {}", self.det_max);
        let _ = writeln!(s, "orientation_tol_deg = {}", self.orientation_tol_deg);
        let _ = writeln!(s, "scale_ratio_max = {}", self.scale_ratio_max);
        let _ = writeln!(s, "refine_affine = {}", self.refine_affine);
        s
    }
}

impl Default for AdalamConfig {
    fn default() -> Self {
        Self::for_image(1024.0, 1024.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedPoint {
    pub match_index: usize,
    pub score: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub seed: SeedPoint,
    /// Match indices, ascending; always contains the seed.
    pub members: Vec<usize>,
}

/// `q = linear * p + translation`, in seed-centred coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineModel {
    pub linear: [[f64; 2]; 2],
    pub translation: [f64; 2],
}

impl AffineModel {
    pub fn det(&self) -> f64 {
        self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0]
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let l = &self.linear;
        [
            l[0][0] * p[0] + l[0][1] * p[1] + self.translation[0],
            l[1][0] * p[0] + l[1][1] * p[1] + self.translation[1],
        ]
    }

    /// Similarity through two correspondences; `None` if the sources coincide.
    pub fn similarity_from_two(p: [[f64; 2]; 2], q: [[f64; 2]; 2]) -> Option<Self> {
        let dp = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
        let dq = [q[1][0] - q[0][0], q[1][1] - q[0][1]];
        let den = dp[0] * dp[0] + dp[1] * dp[1];
        if den <= f64::EPSILON {
            return None;
        }
        // complex division dq / dp = a + ib
        let a = (dq[0] * dp[0] + dq[1] * dp[1]) / den;
        let b = (dq[1] * dp[0] - dq[0] * dp[1]) / den;
        let linear = [[a, -b], [b, a]];
        let translation = [
            q[0][0] - (a * p[0][0] - b * p[0][1]),
            q[0][1] - (b * p[0][0] + a * p[0][1]),
        ];
        Some(Self { linear, translation })
    }

    /// Least-squares affine fit; `None` for fewer than 3 points or
    /// (near-)collinear sources.
    pub fn fit_least_squares(p: &[[f64; 2]], q: &[[f64; 2]]) -> Option<Self> {
        let n = p.len();
        if n < 3 || q.len() != n {
            return None;
        }
        let mean = |v: &[[f64; 2]]| {
            let s = v.iter().fold([0.0, 0.0], |acc, x| [acc[0] + x[0], acc[1] + x[1]]);
            [s[0] / n as f64, s[1] / n as f64]
        };
        let (pm, qm) = (mean(p), mean(q));
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        let mut c = [[0.0; 2]; 2]; // sum of q~ p~^T
        for (pi, qi) in p.iter().zip(q) {
            let (x, y) = (pi[0] - pm[0], pi[1] - pm[1]);
            let (u, v) = (qi[0] - qm[0], qi[1] - qm[1]);
            sxx += x * x;
            sxy += x * y;
            syy += y * y;
            c[0][0] += u * x;
            c[0][1] += u * y;
            c[1][0] += v * x;
            c[1][1] += v * y;
        }
        let det = sxx * syy - sxy * sxy;
        if det <= 1e-12 * (sxx * syy).max(f64::MIN_POSITIVE) {
            return None;
        }
        let inv = [[syy / det, -sxy / det], [-sxy / det, sxx / det]];
        let linear = [
            [
                c[0][0] * inv[0][0] + c[0][1] * inv[1][0],
                c[0][0] * inv[0][1] + c[0][1] * inv[1][1],
            ],
            [
                c[1][0] * inv[0][0] + c[1][1] * inv[1][0],
                c[1][0] * inv[0][1] + c[1][1] * inv[1][1],
            ],
        ];
        let translation = [
            qm[0] - (linear[0][0] * pm[0] + linear[0][1] * pm[1]),
            qm[1] - (linear[1][0] * pm[0] + linear[1][1] * pm[1]),
        ];
        Some(Self { linear, translation })
    }
}

/// `P[X >= k]` for `X ~ Binomial(m, p)`.
pub fn binomial_tail(m: usize, k: usize, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > m || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let ln_choose: f64 = (1..=k).map(|j| ((m - k + j) as f64 / j as f64).ln()).sum();
    let mut term = (ln_choose + k as f64 * p.ln() + (m - k) as f64 * (1.0 - p).ln()).exp();
    let odds = p / (1.0 - p);
    let mut total = 0.0;
    for i in k..=m {
        total += term;
        term *= (m - i) as f64 / (i + 1) as f64 * odds;
    }
    total.min(1.0)
}

fn position(k: &Keypoint) -> [f64; 2] {
    [k.x, k.y]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_indices(matches: &[Match], kps_a: &[Keypoint], kps_b: &[Keypoint]) -> Result<()> {
    if let Some(m) = matches
        .iter()
        .find(|m| m.idx_a >= kps_a.len() || m.idx_b >= kps_b.len())
    {
        return Err(Error::InvalidArgument(format!(
            "match ({}, {}) out of range for {}/{} keypoints",
            m.idx_a,
            m.idx_b,
            kps_a.len(),
            kps_b.len()
        )));
    }
    Ok(())
}

/// Greedy NMS over matches by descending confidence (ties by match index):
/// a match becomes a seed unless an earlier seed lies within `seed_radius`
/// of it in image A.
pub fn select_seeds(matches: &[Match], kps_a: &[Keypoint], cfg: &AdalamConfig) -> Vec<SeedPoint> {
    let mut order: Vec<usize> = (0..matches.len()).collect();
    order.sort_by(|&x, &y| {
        matches[y]
            .confidence
            .total_cmp(&matches[x].confidence)
            .then(x.cmp(&y))
    });
    let mut grid = PointGrid::new(cfg.seed_radius);
    let mut seeds: Vec<SeedPoint> = Vec::new();
    for i in order {
        let p = position(&kps_a[matches[i].idx_a]);
        let blocked = grid.candidates(p[0], p[1], cfg.seed_radius).into_iter().any(|s| {
            let q = position(&kps_a[matches[seeds[s].match_index].idx_a]);
            dist(p, q) <= cfg.seed_radius
        });
        if !blocked {
            grid.insert(p[0], p[1], seeds.len());
            seeds.push(SeedPoint {
                match_index: i,
                score: matches[i].confidence,
            });
        }
    }
    seeds
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Rotation and log-scale change a match implies between its two frames.
fn frame_change(a: &Keypoint, b: &Keypoint) -> (f64, f64) {
    (wrap_angle(b.orientation - a.orientation), (b.scale / a.scale).ln())
}

/// Members of each seed's neighbourhood: matches within
/// `neighborhood_radius_a` of the seed in A and `neighborhood_radius_b` in
/// B. If any matched keypoint carries a local frame, members must also
/// agree with the seed's rotation change (within `orientation_tol_deg`)
/// and scale change (within a factor `scale_ratio_max`).
pub fn assign_neighborhoods(
    seeds: &[SeedPoint],
    matches: &[Match],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    cfg: &AdalamConfig,
) -> Vec<Neighborhood> {
    let use_frames = matches
        .iter()
        .any(|m| kps_a[m.idx_a].has_frame() || kps_b[m.idx_b].has_frame());
    let grid = PointGrid::with_points(
        cfg.neighborhood_radius_a,
        matches.iter().map(|m| (kps_a[m.idx_a].x, kps_a[m.idx_a].y)),
    );
    let rot_tol = cfg.orientation_tol_deg.to_radians();
    let log_scale_tol = cfg.scale_ratio_max.ln();

    seeds
        .iter()
        .map(|seed| {
            let sm = &matches[seed.match_index];
            let (sa, sb) = (&kps_a[sm.idx_a], &kps_b[sm.idx_b]);
            let seed_change = frame_change(sa, sb);
            let mut members: Vec<usize> = grid
                .candidates(sa.x, sa.y, cfg.neighborhood_radius_a)
                .into_iter()
                .filter(|&i| {
                    let m = &matches[i];
                    let (a, b) = (&kps_a[m.idx_a], &kps_b[m.idx_b]);
                    if dist(position(a), position(sa)) > cfg.neighborhood_radius_a
                        || dist(position(b), position(sb)) > cfg.neighborhood_radius_b
                    {
                        return false;
                    }
                    if use_frames && i != seed.match_index {
                        let (rot, scale) = frame_change(a, b);
                        if wrap_angle(rot - seed_change.0).abs() > rot_tol
                            || (scale - seed_change.1).abs() > log_scale_tol
                        {
                            return false;
                        }
                    }
                    true
                })
                .collect();
            members.sort_unstable();
            Neighborhood {
                seed: *seed,
                members,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    /// Match indices of the accepted consensus (empty unless significant).
    pub inliers: Vec<usize>,
    pub significant: bool,
    /// Size of the best consensus found, accepted or not.
    pub best_count: usize,
    pub p_value: f64,
    pub model: Option<AffineModel>,
}

impl Verification {
    fn rejected(best_count: usize, p_value: f64, model: Option<AffineModel>) -> Self {
        Self {
            inliers: Vec::new(),
            significant: false,
            best_count,
            p_value,
            model,
        }
    }
}

/// Random stream for one neighbourhood.
pub fn neighborhood_rng(rng_seed: u64, seed_match_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(seed_match_index as u64);
    rng
}

/// Local RANSAC plus significance test for one neighbourhood.
///
/// When the number of distinct member pairs does not exceed
/// `ransac_iters`, every pair is tried (no randomness); otherwise
/// `ransac_iters` pairs are drawn from the neighbourhood's stream.
pub fn verify_neighborhood(
    n: &Neighborhood,
    matches: &[Match],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    cfg: &AdalamConfig,
    rng_seed: u64,
) -> Verification {
    let m = n.members.len();
    if m < 2 {
        return Verification::rejected(m.min(1), 1.0, None);
    }
    let seed = &matches[n.seed.match_index];
    let (sa, sb) = (position(&kps_a[seed.idx_a]), position(&kps_b[seed.idx_b]));
    let src: Vec<[f64; 2]> = n
        .members
        .iter()
        .map(|&i| {
            let p = position(&kps_a[matches[i].idx_a]);
            [p[0] - sa[0], p[1] - sa[1]]
        })
        .collect();
    let dst: Vec<[f64; 2]> = n
        .members
        .iter()
        .map(|&i| {
            let q = position(&kps_b[matches[i].idx_b]);
            [q[0] - sb[0], q[1] - sb[1]]
        })
        .collect();

    let tol = cfg.inlier_tol * kps_b[seed.idx_b].scale;
    let admissible = |model: &AffineModel| {
        let d = model.det().abs();
        d.is_finite() && d >= cfg.det_min && d <= cfg.det_max
    };
    let consensus_into = |model: &AffineModel, out: &mut Vec<usize>| {
        out.clear();
        out.extend((0..m).filter(|&k| dist(model.apply(src[k]), dst[k]) <= tol));
    };

    let mut best: Option<(Vec<usize>, AffineModel)> = None;
    let (mut inl, mut refined_inl) = (Vec::with_capacity(m), Vec::with_capacity(m));
    let (mut p, mut q) = (Vec::with_capacity(m), Vec::with_capacity(m));
    let mut try_sample = |i: usize, j: usize| -> bool {
        let Some(model) = AffineModel::similarity_from_two([src[i], src[j]], [dst[i], dst[j]]) else {
            return false;
        };
        if !admissible(&model) {
            return false;
        }
        consensus_into(&model, &mut inl);
        let mut chosen = model;
        if cfg.refine_affine && inl.len() >= 3 {
            p.clear();
            q.clear();
            p.extend(inl.iter().map(|&k| src[k]));
            q.extend(inl.iter().map(|&k| dst[k]));
            if let Some(refined) = AffineModel::fit_least_squares(&p, &q).filter(admissible) {
                consensus_into(&refined, &mut refined_inl);
                if refined_inl.len() >= inl.len() {
                    std::mem::swap(&mut inl, &mut refined_inl);
                    chosen = refined;
                }
            }
        }
        if best.as_ref().is_none_or(|(b, _)| inl.len() > b.len()) {
            best = Some((inl.clone(), chosen));
        }
        // nothing can beat a model that explains every member
        inl.len() == m
    };

    let pairs = m * (m - 1) / 2;
    if pairs <= cfg.ransac_iters {
        'outer: for i in 0..m {
            for j in (i + 1)..m {
                if try_sample(i, j) {
                    break 'outer;
                }
            }
        }
    } else {
        let mut rng = neighborhood_rng(rng_seed, n.seed.match_index);
        for _ in 0..cfg.ransac_iters {
            let i = rng.gen_range(0..m);
            let mut j = rng.gen_range(0..m - 1);
            if j >= i {
                j += 1;
            }
            if try_sample(i, j) {
                break;
            }
        }
    }

    let Some((inl, model)) = best else {
        return Verification::rejected(0, 1.0, None);
    };
    let k = inl.len();
    let p0 = (tol * tol / (cfg.neighborhood_radius_b * cfg.neighborhood_radius_b)).min(MAX_NULL_PROBABILITY);
    let p_value = binomial_tail(m, k, p0);
    if p_value <= cfg.alpha && k >= cfg.min_inliers {
        Verification {
            inliers: inl.into_iter().map(|k| n.members[k]).collect(),
            significant: true,
            best_count: k,
            p_value,
            model: Some(model),
        }
    } else {
        Verification::rejected(k, p_value, Some(model))
    }
}

/// Per-stage counts and the kept match indices.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    /// Indices into the input match list, ascending.
    pub kept: Vec<usize>,
    pub seeds: usize,
    pub significant_neighborhoods: usize,
}

/// Runs the full filter and reports which input matches survive.
pub fn adalam_filter_indices(
    matches: &[Match],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    cfg: &AdalamConfig,
    rng_seed: u64,
) -> Result<FilterOutcome> {
    cfg.validate()?;
    check_indices(matches, kps_a, kps_b)?;
    if matches.is_empty() {
        return Ok(FilterOutcome {
            kept: Vec::new(),
            seeds: 0,
            significant_neighborhoods: 0,
        });
    }
    let seeds = select_seeds(matches, kps_a, cfg);
    let hoods = assign_neighborhoods(&seeds, matches, kps_a, kps_b, cfg);
    let verdicts = par::map_slice(&hoods, |(_, n)| verify_neighborhood(n, matches, kps_a, kps_b, cfg, rng_seed));

    let mut kept = BTreeSet::new();
    let mut significant = 0;
    for v in verdicts.into_iter().filter(|v| v.significant) {
        significant += 1;
        kept.extend(v.inliers);
    }
    Ok(FilterOutcome {
        kept: kept.into_iter().collect(),
        seeds: seeds.len(),
        significant_neighborhoods: significant,
    })
}

/// Filters a candidate match set; the result is a subset of the input,
/// sorted by `(idx_a, idx_b)`.
pub fn adalam_filter(
    ms: &MatchSet,
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    cfg: &AdalamConfig,
    rng_seed: u64,
) -> Result<MatchSet> {
    let outcome = adalam_filter_indices(&ms.matches, kps_a, kps_b, cfg, rng_seed)?;
    let mut matches: Vec<Match> = outcome.kept.iter().map(|&i| ms.matches[i]).collect();
    matches.sort_by_key(|m| (m.idx_a, m.idx_b));
    Ok(MatchSet {
        pair: ms.pair.clone(),
        matches,
    })
}
