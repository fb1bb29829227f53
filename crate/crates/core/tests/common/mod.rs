//! Brute-force reference implementations shared by the integration suites.
//! None of these call into the code paths they are used to check.

#![allow(dead_code)]

use std::collections::BTreeSet;

use matchforge::feature_head::Keypoint;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn random_unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let row: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.extend(row.iter().map(|v| (v / n) as f32));
    }
    out
}

// ---------------------------------------------------------------- retrieval

pub fn oracle_distance(a: &[f32], b: &[f32], cosine: bool) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    let mut sq = 0.0;
    for k in 0..a.len() {
        let (x, y) = (a[k] as f64, b[k] as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
        sq += (x - y) * (x - y);
    }
    if cosine {
        1.0 - dot / (na.sqrt() * nb.sqrt())
    } else {
        sq.sqrt()
    }
}

pub fn oracle_matrix(vs: &[Vec<f32>], cosine: bool) -> Vec<Vec<f64>> {
    let m = vs.len();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            out[i][j] = if i == j { 0.0 } else { oracle_distance(&vs[i], &vs[j], cosine) };
        }
    }
    out
}

/// Top-`n` neighbours per image (ties by neighbour id), union, canonical
/// orientation, optional threshold, sorted by (distance, id_a, id_b).
pub fn oracle_shortlist(
    d: &[Vec<f64>],
    ids: &[String],
    n: usize,
    threshold: Option<f64>,
) -> (Vec<(String, String, f64)>, bool) {
    let m = ids.len();
    let exhaustive = m <= n;
    let mut set: BTreeSet<(String, String)> = BTreeSet::new();
    for i in 0..m {
        let mut cands: Vec<(f64, &String, usize)> =
            (0..m).filter(|&j| j != i).map(|j| (d[i][j], &ids[j], j)).collect();
        cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
        let take = if exhaustive { cands.len() } else { n };
        for &(_, _, j) in cands.iter().take(take) {
            let (a, b) = if ids[i] < ids[j] { (&ids[i], &ids[j]) } else { (&ids[j], &ids[i]) };
            set.insert((a.clone(), b.clone()));
        }
    }
    let pos = |id: &String| ids.iter().position(|x| x == id).unwrap();
    let mut out: Vec<(String, String, f64)> = set
        .into_iter()
        .map(|(a, b)| {
            let dist = d[pos(&a)][pos(&b)];
            (a, b, dist)
        })
        .filter(|p| threshold.is_none_or(|t| p.2 <= t))
        .collect();
    out.sort_by(|x, y| {
        x.2.partial_cmp(&y.2)
            .unwrap()
            .then(x.0.cmp(&y.0))
            .then(x.1.cmp(&y.1))
    });
    (out, exhaustive)
}

// ------------------------------------------------------------- feature head

/// Softmax over one cell's 65 logits, straight from the definition.
pub fn oracle_softmax(logits: &[f32]) -> Vec<f64> {
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// O(P^2) greedy suppression: each candidate (score desc, then (y, x)) is
/// compared against every kept point.
pub fn oracle_nms(
    scores: &[f32],
    width: usize,
    threshold: f64,
    k_max: usize,
    radius: usize,
) -> Vec<(usize, usize, f32)> {
    let mut cands: Vec<(usize, usize, f32)> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s as f64 >= threshold)
        .map(|(i, &s)| (i / width, i % width, s))
        .collect();
    cands.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut kept: Vec<(usize, usize, f32)> = Vec::new();
    for c in cands {
        let near = kept.iter().any(|k| {
            let dy = (k.0 as i64 - c.0 as i64).abs();
            let dx = (k.1 as i64 - c.1 as i64).abs();
            dy.max(dx) <= radius as i64
        });
        if !near {
            kept.push(c);
        }
    }
    kept.truncate(k_max);
    kept
}

/// Keys cubic convolution kernel with a = -1/2, written in its
/// piecewise-polynomial form.
fn keys_kernel(s: f64) -> f64 {
    let a = -0.5;
    let s = s.abs();
    if s < 1.0 {
        (a + 2.0) * s.powi(3) - (a + 3.0) * s.powi(2) + 1.0
    } else if s < 2.0 {
        a * s.powi(3) - 5.0 * a * s.powi(2) + 8.0 * a * s - 4.0 * a
    } else {
        0.0
    }
}

/// Full 4x4-tap bicubic evaluation with border clamping, then normalisation.
pub fn oracle_bicubic(
    data: &[f32],
    rows: usize,
    cols: usize,
    dim: usize,
    x: f64,
    y: f64,
) -> Vec<f64> {
    let u = (x + 0.5) / 8.0 - 0.5;
    let v = (y + 0.5) / 8.0 - 0.5;
    let (u0, v0) = (u.floor() as i64, v.floor() as i64);
    let mut acc = vec![0.0; dim];
    for dy in -1..=2i64 {
        for dx in -1..=2i64 {
            let r = (v0 + dy).clamp(0, rows as i64 - 1) as usize;
            let c = (u0 + dx).clamp(0, cols as i64 - 1) as usize;
            let w = keys_kernel(v - (v0 + dy) as f64) * keys_kernel(u - (u0 + dx) as f64);
            for k in 0..dim {
                acc[k] += w * data[(r * cols + c) * dim + k] as f64;
            }
        }
    }
    let n = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
    acc.iter().map(|a| a / n).collect()
}

// ----------------------------------------------------------------- matching

/// Exhaustive mutual-NN with smallest-index ties and the symmetric ratio.
pub fn oracle_mutual_nn(
    a: &[f32],
    b: &[f32],
    dim: usize,
    ratio_max: Option<f64>,
    dist_max: Option<f64>,
) -> Vec<(usize, usize)> {
    let (na, nb) = (a.len() / dim, b.len() / dim);
    let d: Vec<Vec<f64>> = (0..na)
        .map(|i| {
            (0..nb)
                .map(|j| oracle_distance(&a[i * dim..(i + 1) * dim], &b[j * dim..(j + 1) * dim], false))
                .collect()
        })
        .collect();
    let argmin = |vals: Vec<f64>| -> (usize, f64, Option<f64>) {
        let mut best = 0;
        for k in 1..vals.len() {
            if vals[k] < vals[best] {
                best = k;
            }
        }
        let second = (0..vals.len())
            .filter(|&k| k != best)
            .map(|k| vals[k])
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
        (best, vals[best], second)
    };
    let ratio = |first: f64, second: Option<f64>| match second {
        None => 0.0,
        Some(0.0) => 1.0,
        Some(s) => first / s,
    };
    let mut out = Vec::new();
    for i in 0..na {
        let (j, f, s) = argmin(d[i].clone());
        let (back, bf, bs) = argmin((0..na).map(|k| d[k][j]).collect());
        if back != i {
            continue;
        }
        if dist_max.is_some_and(|m| f > m) {
            continue;
        }
        let r = ratio(f, s).max(ratio(bf, bs));
        if ratio_max.is_some_and(|m| r > m) {
            continue;
        }
        out.push((i, j));
    }
    out
}

// ------------------------------------------------------------------- adalam

pub fn oracle_seed_nms(pos: &[(f64, f64)], conf: &[f32], radius: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pos.len()).collect();
    order.sort_by(|&x, &y| conf[y].partial_cmp(&conf[x]).unwrap().then(x.cmp(&y)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| {
            let (dx, dy) = (pos[i].0 - pos[k].0, pos[i].1 - pos[k].1);
            (dx * dx + dy * dy).sqrt() > radius
        }) {
            kept.push(i);
        }
    }
    kept
}

pub fn oracle_membership(
    seed: usize,
    pa: &[(f64, f64)],
    pb: &[(f64, f64)],
    ra: f64,
    rb: f64,
) -> Vec<usize> {
    let within = |p: (f64, f64), q: (f64, f64), r: f64| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() <= r;
    (0..pa.len())
        .filter(|&i| within(pa[i], pa[seed], ra) && within(pb[i], pb[seed], rb))
        .collect()
}

// ------------------------------------------------------------------- losses

/// Per-sample HardNet hinge via explicit loops over every candidate.
pub fn oracle_hardnet(d: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let n = d.len();
    let mut per = vec![0.0; n];
    for i in 0..n {
        let mut neg = f64::INFINITY;
        for j in 0..n {
            for k in 0..n {
                if j != i && d[i][j] < neg {
                    neg = d[i][j];
                }
                if k != i && d[k][i] < neg {
                    neg = d[k][i];
                }
            }
        }
        let v = 1.0 + d[i][i] - neg;
        per[i] = if v > 0.0 { v } else { 0.0 };
    }
    (per.iter().sum::<f64>() / n as f64, per)
}

pub fn oracle_distance_rows(anchors: &[f64], positives: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let n = anchors.len() / dim;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    (0..dim)
                        .map(|k| (anchors[i * dim + k] - positives[j * dim + k]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect()
}

/// Smallest gap between the active hinge and zero, and between the two
/// smallest negative candidates, over all samples. Used to keep finite
/// differences away from kinks.
pub fn kink_margin(d: &[Vec<f64>]) -> f64 {
    let n = d.len();
    let mut margin = f64::INFINITY;
    for i in 0..n {
        let mut cands: Vec<f64> = Vec::new();
        for j in 0..n {
            if j != i {
                cands.push(d[i][j]);
                cands.push(d[j][i]);
            }
        }
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
        margin = margin.min((1.0 + d[i][i] - cands[0]).abs());
        if cands.len() > 1 {
            margin = margin.min(cands[1] - cands[0]);
        }
        margin = margin.min(d[i][i]);
    }
    margin
}

pub fn oracle_loss_of(anchors: &[f64], positives: &[f64], dim: usize) -> f64 {
    oracle_hardnet(&oracle_distance_rows(anchors, positives, dim)).0
}

/// Central differences with step `h` over every coordinate.
pub fn finite_difference_grad(anchors: &[f64], positives: &[f64], dim: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut ga = vec![0.0; anchors.len()];
    let mut gp = vec![0.0; positives.len()];
    for idx in 0..anchors.len() {
        let mut plus = anchors.to_vec();
        let mut minus = anchors.to_vec();
        plus[idx] += h;
        minus[idx] -= h;
        ga[idx] = (oracle_loss_of(&plus, positives, dim) - oracle_loss_of(&minus, positives, dim)) / (2.0 * h);
    }
    for idx in 0..positives.len() {
        let mut plus = positives.to_vec();
        let mut minus = positives.to_vec();
        plus[idx] += h;
        minus[idx] -= h;
        gp[idx] = (oracle_loss_of(anchors, &plus, dim) - oracle_loss_of(anchors, &minus, dim)) / (2.0 * h);
    }
    (ga, gp)
}

/// Max-norm relative deviation between two gradients; 0 when both vanish.
pub fn relative_deviation(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

// ----------------------------------------------------------------- ensemble

/// Pairwise dedup: each keypoint, visited in merge order, is dropped if any
/// retained keypoint lies within `radius`, remapped to the closest one
/// (earliest on ties).
pub fn oracle_dedup(ordered: &[(f64, f64)], radius: f64) -> (Vec<usize>, Vec<usize>) {
    let mut retained: Vec<usize> = Vec::new();
    let mut remap = vec![0; ordered.len()];
    for (i, p) in ordered.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        if radius > 0.0 {
            for (slot, &r) in retained.iter().enumerate() {
                let q = ordered[r];
                let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
                if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, slot));
                }
            }
        }
        match best {
            Some((_, slot)) => remap[i] = slot,
            None => {
                remap[i] = retained.len();
                retained.push(i);
            }
        }
    }
    (retained, remap)
}

// ----------------------------------------------------------------------- io

/// Parses the pairwise match text grammar:
/// `file := block*`, `block := name SP name LF (uint SP uint LF)* LF`.
pub fn parse_pair_text(text: &str) -> Result<Vec<(String, String, Vec<(usize, usize)>)>, String> {
    let mut out = Vec::new();
    let mut lines = text.split('\n').peekable();
    while let Some(header) = lines.next() {
        if header.is_empty() && lines.peek().is_none() {
            break;
        }
        let names: Vec<&str> = header.split(' ').collect();
        if names.len() != 2 || names.iter().any(|n| n.is_empty()) {
            return Err(format!("bad header {header:?}"));
        }
        let mut idx = Vec::new();
        loop {
            let line = lines.next().ok_or("missing blank terminator")?;
            if line.is_empty() {
                break;
            }
            let nums: Vec<&str> = line.split(' ').collect();
            if nums.len() != 2 || nums.iter().any(|n| n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit())) {
                return Err(format!("bad match line {line:?}"));
            }
            idx.push((nums[0].parse().unwrap(), nums[1].parse().unwrap()));
        }
        out.push((names[0].to_string(), names[1].to_string(), idx));
    }
    Ok(out)
}

/// Independent renderer of the same grammar.
pub fn render_pair_text(blocks: &[(String, String, Vec<(usize, usize)>)]) -> String {
    let mut s = String::new();
    for (a, b, idx) in blocks {
        s += a;
        s += " ";
        s += b;
        s += "\n";
        for (i, j) in idx {
            s += &i.to_string();
            s += " ";
            s += &j.to_string();
            s += "\n";
        }
        s += "\n";
    }
    s
}

pub fn kp(x: f64, y: f64) -> Keypoint {
    Keypoint::new(x, y, 1.0)
}
