//! Mutual nearest-neighbour matching in descriptor space.

use crate::error::{Error, Result};
use crate::feature_head::LocalDescriptorSet;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Match {
    pub idx_a: usize,
    pub idx_b: usize,
    pub distance: f32,
    /// `1 - min(1, ratio)` for the Lowe ratio of the match.
    pub confidence: f32,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MatchSet {
    pub pair: (String, String),
    pub matches: Vec<Match>,
}

impl MatchSet {
    pub fn new(id_a: impl Into<String>, id_b: impl Into<String>) -> Self {
        Self {
            pair: (id_a.into(), id_b.into()),
            matches: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// The same matches seen from image B.
    pub fn swapped(&self) -> Self {
        let mut matches: Vec<Match> = self
            .matches
            .iter()
            .map(|m| Match {
                idx_a: m.idx_b,
                idx_b: m.idx_a,
                ..*m
            })
            .collect();
        matches.sort_by_key(|m| (m.idx_a, m.idx_b));
        Self {
            pair: (self.pair.1.clone(), self.pair.0.clone()),
            matches,
        }
    }
}

/// Euclidean distance accumulated in f64.
pub fn descriptor_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Nearest index (smallest index on ties), its distance and the runner-up
/// distance (`None` when there is a single candidate).
#[derive(Clone, Copy, Debug)]
struct Nearest {
    index: usize,
    first: f64,
    second: Option<f64>,
}

fn nearest_in(query: &[f32], set: &LocalDescriptorSet) -> Nearest {
    let mut best = Nearest {
        index: 0,
        first: f64::INFINITY,
        second: None,
    };
    for (j, row) in set.rows().enumerate() {
        let d = descriptor_distance(query, row);
        if d < best.first {
            if j > 0 {
                best.second = Some(best.first);
            }
            best.first = d;
            best.index = j;
        } else if best.second.is_none_or(|s| d < s) {
            best.second = Some(d);
        }
    }
    best
}

/// First-to-second nearest distance ratio; 0 with no competitor, 1 when
/// both are at distance zero.
fn lowe_ratio(n: &Nearest) -> f64 {
    match n.second {
        None => 0.0,
        Some(0.0) => 1.0,
        Some(s) => n.first / s,
    }
}

/// Mutual nearest-neighbour matches between two descriptor sets.
///
/// A pair `(i, j)` is kept when each is the other's nearest neighbour,
/// its distance is at most `dist_max`, and its ratio is at most
/// `ratio_max`. The ratio is the larger of the two directional Lowe ratios
/// (A to B and B to A), which keeps the result symmetric under swapping
/// the inputs. Output is sorted by `idx_a`.
pub fn mutual_nn_match(
    da: &LocalDescriptorSet,
    db: &LocalDescriptorSet,
    ratio_max: Option<f64>,
    dist_max: Option<f64>,
) -> Result<Vec<Match>> {
    if da.dim() != db.dim() {
        return Err(Error::DimensionMismatch(da.dim(), db.dim()));
    }
    if da.is_empty() || db.is_empty() {
        return Err(Error::EmptyCollection);
    }
    if let Some(r) = ratio_max {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::InvalidArgument(format!("ratio_max {r} outside (0, 1]")));
        }
    }

    let forward: Vec<Nearest> = par::map_range(da.len(), |i| nearest_in(da.row(i), db));
    let backward: Vec<Nearest> = par::map_range(db.len(), |j| nearest_in(db.row(j), da));

    let mut out = Vec::new();
    for (i, f) in forward.iter().enumerate() {
        let b = &backward[f.index];
        if b.index != i {
            continue;
        }
        if dist_max.is_some_and(|m| f.first > m) {
            continue;
        }
        let ratio = lowe_ratio(f).max(lowe_ratio(b));
        if ratio_max.is_some_and(|r| ratio > r) {
            continue;
        }
        out.push(Match {
            idx_a: i,
            idx_b: f.index,
            distance: f.first as f32,
            confidence: (1.0 - ratio.min(1.0)) as f32,
        });
    }
    Ok(out)
}

/// [`mutual_nn_match`] wrapped into a [`MatchSet`] for the named pair.
pub fn match_pair(
    id_a: &str,
    id_b: &str,
    da: &LocalDescriptorSet,
    db: &LocalDescriptorSet,
    ratio_max: Option<f64>,
    dist_max: Option<f64>,
) -> Result<MatchSet> {
    Ok(MatchSet {
        pair: (id_a.to_string(), id_b.to_string()),
        matches: mutual_nn_match(da, db, ratio_max, dist_max)?,
    })
}
