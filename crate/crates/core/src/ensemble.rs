//! Merging keypoints and matches produced by several extractors/matchers.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::feature_head::Keypoint;
use crate::grid::PointGrid;
use crate::matching::{Match, MatchSet};

pub const DEFAULT_DEDUP_RADIUS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize)]
pub struct SourceTag {
    pub name: String,
    /// Larger values merge first and win deduplication.
    pub priority: i32,
}

impl SourceTag {
    pub fn new(name: impl Into<String>, priority: i32) -> Self {
        Self {
            name: name.into(),
            priority,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnifiedKeypointTable {
    pub sources: Vec<SourceTag>,
    pub keypoints: Vec<Keypoint>,
    /// `(source position in `sources`, original index)` per retained keypoint.
    pub origin: Vec<(usize, usize)>,
    /// Per source (same order as `sources`), original index -> unified index.
    pub remap: Vec<Vec<usize>>,
}

impl UnifiedKeypointTable {
    pub fn remap_for(&self, name: &str) -> Option<&[usize]> {
        self.sources
            .iter()
            .position(|s| s.name == name)
            .map(|i| self.remap[i].as_slice())
    }
}

/// Closest retained keypoint within `radius`; ties go to the earlier one.
fn nearest_retained(grid: &PointGrid, kps: &[Keypoint], x: f64, y: f64, radius: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for id in grid.candidates(x, y, radius) {
        let d = (kps[id].x - x).hypot(kps[id].y - y);
        if d <= radius && best.is_none_or(|(bd, bid)| d < bd || (d == bd && id < bid)) {
            best = Some((d, id));
        }
    }
    best.map(|(_, id)| id)
}

/// Concatenates keypoints from several sources in priority order,
/// optionally collapsing near-duplicates onto the earlier retained point.
///
/// Sources are visited by descending priority (input order among equals),
/// keypoints within a source by original index. With `dedup_radius > 0` a
/// keypoint within that Euclidean distance of an already retained keypoint
/// is dropped and remapped to the closest such keypoint.
pub fn merge_keypoints(sources: &[(SourceTag, Vec<Keypoint>)], dedup_radius: f64) -> Result<UnifiedKeypointTable> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument("no keypoint sources".into()));
    }
    if !(dedup_radius >= 0.0) || !dedup_radius.is_finite() {
        return Err(Error::InvalidArgument(format!("dedup radius {dedup_radius}")));
    }
    let mut names = HashSet::new();
    for (tag, _) in sources {
        if !names.insert(tag.name.as_str()) {
            return Err(Error::DuplicateSource(tag.name.clone()));
        }
    }

    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.sort_by_key(|&s| std::cmp::Reverse(sources[s].0.priority));

    let mut keypoints = Vec::new();
    let mut origin = Vec::new();
    let mut remap: Vec<Vec<usize>> = sources.iter().map(|(_, k)| vec![0; k.len()]).collect();
    let mut grid = (dedup_radius > 0.0).then(|| PointGrid::new(dedup_radius));

    for &s in &order {
        for (orig, kp) in sources[s].1.iter().enumerate() {
            if let Some(g) = grid.as_ref() {
                if let Some(hit) = nearest_retained(g, &keypoints, kp.x, kp.y, dedup_radius) {
                    remap[s][orig] = hit;
                    continue;
                }
            }
            let id = keypoints.len();
            keypoints.push(*kp);
            origin.push((s, orig));
            remap[s][orig] = id;
            if let Some(g) = grid.as_mut() {
                g.insert(kp.x, kp.y, id);
            }
        }
    }

    Ok(UnifiedKeypointTable {
        sources: sources.iter().map(|(t, _)| t.clone()).collect(),
        keypoints,
        origin,
        remap,
    })
}

/// Remaps every source's matches into unified indices and drops exact
/// duplicates, keeping the highest confidence (first seen on ties).
/// Output is sorted by `(idx_a, idx_b)`; one-to-one is not enforced.
pub fn merge_matches(per_source: &[(&MatchSet, &[usize], &[usize])]) -> Result<MatchSet> {
    let Some(first) = per_source.first() else {
        return Err(Error::InvalidArgument("no match sources".into()));
    };
    let pair = first.0.pair.clone();
    let mut best: BTreeMap<(usize, usize), Match> = BTreeMap::new();
    for (ms, remap_a, remap_b) in per_source {
        if ms.pair != pair {
            return Err(Error::PairMismatch(
                pair.0.clone(),
                pair.1.clone(),
                ms.pair.0.clone(),
                ms.pair.1.clone(),
            ));
        }
        for m in &ms.matches {
            let (Some(&ia), Some(&ib)) = (remap_a.get(m.idx_a), remap_b.get(m.idx_b)) else {
                return Err(Error::InvalidArgument(format!(
                    "match ({}, {}) outside remap tables",
                    m.idx_a, m.idx_b
                )));
            };
            let remapped = Match {
                idx_a: ia,
                idx_b: ib,
                ..*m
            };
            best.entry((ia, ib))
                .and_modify(|cur| {
                    if remapped.confidence > cur.confidence {
                        *cur = remapped;
                    }
                })
                .or_insert(remapped);
        }
    }
    Ok(MatchSet {
        pair,
        matches: best.into_values().collect(),
    })
}

/// Keeps the highest-confidence match per index on either side
/// (ties by `(idx_a, idx_b)`), returning a one-to-one set sorted by `idx_a`.
pub fn enforce_one_to_one(ms: &MatchSet) -> MatchSet {
    let mut order: Vec<&Match> = ms.matches.iter().collect();
    order.sort_by(|x, y| {
        y.confidence
            .total_cmp(&x.confidence)
            .then((x.idx_a, x.idx_b).cmp(&(y.idx_a, y.idx_b)))
    });
    let (mut used_a, mut used_b) = (HashSet::new(), HashSet::new());
    let mut kept: Vec<Match> = order
        .into_iter()
        .filter(|m| {
            if used_a.contains(&m.idx_a) || used_b.contains(&m.idx_b) {
                return false;
            }
            used_a.insert(m.idx_a);
            used_b.insert(m.idx_b);
            true
        })
        .copied()
        .collect();
    kept.sort_by_key(|m| (m.idx_a, m.idx_b));
    MatchSet {
        pair: ms.pair.clone(),
        matches: kept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(x: f64, y: f64) -> Keypoint {
        Keypoint::new(x, y, 1.0)
    }

    fn m(a: usize, b: usize, c: f32) -> Match {
        Match {
            idx_a: a,
            idx_b: b,
            distance: 0.1,
            confidence: c,
        }
    }

    #[test]
    fn single_source_is_identity() {
        let kps = vec![kp(1.0, 1.0), kp(1.2, 1.0), kp(5.0, 5.0)];
        let t = merge_keypoints(&[(SourceTag::new("sp", 0), kps.clone())], 0.0).unwrap();
        assert_eq!(t.keypoints, kps);
        assert_eq!(t.remap, vec![vec![0, 1, 2]]);
        assert_eq!(t.origin, vec![(0, 0), (0, 1), (0, 2)]);
    }

    #[test]
    fn exact_duplicate_collapses_to_higher_priority() {
        let low = vec![kp(3.0, 3.0), kp(10.0, 10.0)];
        let high = vec![kp(10.0, 10.0), kp(20.0, 0.0)];
        let t = merge_keypoints(
            &[(SourceTag::new("keynet", 1), low), (SourceTag::new("superpoint", 2), high)],
            1.0,
        )
        .unwrap();
        // superpoint first: its two keypoints take ids 0 and 1
        assert_eq!(t.keypoints.len(), 3);
        assert_eq!(t.remap_for("superpoint").unwrap(), &[0, 1]);
        assert_eq!(t.remap_for("keynet").unwrap(), &[2, 0]);
        assert_eq!(t.origin[2], (0, 0));
    }

    #[test]
    fn zero_radius_concatenates() {
        let a = vec![kp(1.0, 1.0), kp(2.0, 2.0)];
        let b = vec![kp(1.0, 1.0)];
        let t = merge_keypoints(&[(SourceTag::new("a", 0), a), (SourceTag::new("b", 0), b)], 0.0).unwrap();
        assert_eq!(t.keypoints.len(), 3);
        assert_eq!(t.remap, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = merge_keypoints(&[(SourceTag::new("a", 0), vec![]), (SourceTag::new("a", 1), vec![])], 1.0)
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateSource(_)));
        assert!(merge_keypoints(&[], 1.0).is_err());
    }

    #[test]
    fn merge_keeps_highest_confidence() {
        let id: Vec<usize> = (0..4).collect();
        let s1 = MatchSet { pair: ("a".into(), "b".into()), matches: vec![m(0, 1, 0.4), m(2, 3, 0.5)] };
        let s2 = MatchSet { pair: ("a".into(), "b".into()), matches: vec![m(0, 1, 0.9)] };
        let out = merge_matches(&[(&s1, &id, &id), (&s2, &id, &id)]).unwrap();
        assert_eq!(out.matches.len(), 2);
        assert_eq!(out.matches[0].confidence, 0.9);
        let single = merge_matches(&[(&s1, &id, &id)]).unwrap();
        assert_eq!(single, s1);
    }

    #[test]
    fn disjoint_ranges_concatenate() {
        let s1 = MatchSet { pair: ("a".into(), "b".into()), matches: vec![m(0, 0, 0.4), m(1, 1, 0.4)] };
        let s2 = MatchSet { pair: ("a".into(), "b".into()), matches: vec![m(0, 1, 0.4)] };
        let (ra1, rb1) = (vec![0, 1], vec![0, 1]);
        let (ra2, rb2) = (vec![2], vec![2, 3]);
        let out = merge_matches(&[(&s1, &ra1, &rb1), (&s2, &ra2, &rb2)]).unwrap();
        let idx: Vec<_> = out.matches.iter().map(|m| (m.idx_a, m.idx_b)).collect();
        assert_eq!(idx, vec![(0, 0), (1, 1), (2, 3)]);
    }

    #[test]
    fn mismatched_pairs_rejected() {
        let id = vec![0usize];
        let s1 = MatchSet::new("a", "b");
        let s2 = MatchSet::new("a", "c");
        assert!(matches!(
            merge_matches(&[(&s1, &id, &id), (&s2, &id, &id)]),
            Err(Error::PairMismatch(..))
        ));
    }

    #[test]
    fn strict_one_to_one_prefers_confidence() {
        let ms = MatchSet {
            pair: ("a".into(), "b".into()),
            matches: vec![m(0, 0, 0.3), m(0, 1, 0.8), m(1, 1, 0.6), m(2, 2, 0.1)],
        };
        let out = enforce_one_to_one(&ms);
        let idx: Vec<_> = out.matches.iter().map(|m| (m.idx_a, m.idx_b)).collect();
        assert_eq!(idx, vec![(0, 1), (2, 2)]);
    }
}
