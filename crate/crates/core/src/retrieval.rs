//! Image-pair shortlisting from per-image global descriptors.
//!
//! Every image contributes its `n` nearest neighbours; the union of those
//! pairs, oriented and sorted canonically, is the shortlist. Scenes with at
//! most `n` images fall back to exhaustive pairing.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io;
use crate::par;

/// Default neighbours per image, also the exhaustive-search cutoff.
pub const DEFAULT_NEIGHBORS: usize = 45;

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDescriptor {
    pub image_id: String,
    vector: Vec<f32>,
    normalized: bool,
}

impl GlobalDescriptor {
    pub fn new(image_id: impl Into<String>, vector: Vec<f32>) -> Self {
        let normalized = (norm(&vector) - 1.0).abs() <= 1e-5;
        Self {
            image_id: image_id.into(),
            vector,
            normalized,
        }
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Scales the vector to unit L2 norm.
    pub fn normalize(&mut self) -> Result<()> {
        let n = norm(&self.vector);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "global descriptor {:?} cannot be normalized",
                self.image_id
            )));
        }
        for v in &mut self.vector {
            *v = (f64::from(*v) / n) as f32;
        }
        self.normalized = true;
        Ok(())
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`.
    Cosine,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Dense symmetric matrix of pairwise distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..size {
                data[i * size + j] = f(i, j);
            }
        }
        Self { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.size).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Reads every record of a descriptor file.
///
/// The file holds one or more concatenated tensors; each is either a single
/// rank-1 vector or a rank-2 block of rows. Record names become image ids;
/// unnamed records are numbered by their position in the file.
pub fn load_global_descriptors(path: impl AsRef<Path>) -> Result<Vec<GlobalDescriptor>> {
    let tensors = io::read_tensor_file_all(path)?;
    let mut out: Vec<GlobalDescriptor> = Vec::new();
    for t in tensors {
        let (rows, dim) = match t.dims() {
            [d] => (1, *d),
            [r, d] => (*r, *d),
            other => {
                return Err(Error::format(
                    "descriptor file",
                    format!("expected rank 1 or 2 records, found rank {}", other.len()),
                ))
            }
        };
        if let Some(first) = out.first() {
            if first.dim() != dim {
                return Err(Error::InconsistentDimension {
                    expected: first.dim(),
                    found: dim,
                });
            }
        }
        for r in 0..rows {
            let id = t
                .names()
                .get(r)
                .cloned()
                .unwrap_or_else(|| out.len().to_string());
            out.push(GlobalDescriptor::new(id, t.data()[r * dim..(r + 1) * dim].to_vec()));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCollection);
    }
    if out[0].dim() == 0 {
        return Err(Error::format("descriptor file", "zero-length descriptors"));
    }
    let mut seen = HashSet::new();
    for d in &out {
        if !seen.insert(d.image_id.as_str()) {
            return Err(Error::format(
                "descriptor file",
                format!("duplicate image id {:?}", d.image_id),
            ));
        }
    }
    Ok(out)
}

/// All-pairs distances under `metric`. Only the upper triangle is computed;
/// the lower one is mirrored so the result is exactly symmetric.
pub fn pairwise_distances(descriptors: &[GlobalDescriptor], metric: Metric) -> Result<DistanceMatrix> {
    let m = descriptors.len();
    if m == 0 {
        return Err(Error::EmptyCollection);
    }
    let dim = descriptors[0].dim();
    if let Some(bad) = descriptors.iter().find(|d| d.dim() != dim) {
        return Err(Error::InconsistentDimension {
            expected: dim,
            found: bad.dim(),
        });
    }
    let norms: Vec<f64> = descriptors.iter().map(|d| norm(d.vector())).collect();
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::ZeroNorm(i));
        }
    }

    let rows: Vec<Vec<f64>> = par::map_range(m, |i| {
        let a = descriptors[i].vector();
        ((i + 1)..m)
            .map(|j| {
                let b = descriptors[j].vector();
                match metric {
                    Metric::Euclidean => a
                        .iter()
                        .zip(b)
                        .map(|(&x, &y)| {
                            let d = f64::from(x) - f64::from(y);
                            d * d
                        })
                        .sum::<f64>()
                        .sqrt(),
                    Metric::Cosine => {
                        let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
                        (1.0 - dot / (norms[i] * norms[j])).max(0.0)
                    }
                }
            })
            .collect()
    });

    let mut data = vec![0.0; m * m];
    for (i, row) in rows.into_iter().enumerate() {
        for (off, d) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            data[i * m + j] = d;
            data[j * m + i] = d;
        }
    }
    Ok(DistanceMatrix { size: m, data })
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ShortlistPair {
    pub id_a: String,
    pub id_b: String,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct PairShortlist {
    pub pairs: Vec<ShortlistPair>,
    pub exhaustive: bool,
}

impl PairShortlist {
    /// One `<id_a> <id_b> <distance>` line per pair, six decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.pairs {
            let _ = writeln!(s, "{} {} {:.6}", p.id_a, p.id_b, p.distance);
        }
        s
    }
}

/// Orders pairs by distance, then by their canonical ids.
fn cmp_pairs(a: &ShortlistPair, b: &ShortlistPair) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| a.id_a.cmp(&b.id_a))
        .then_with(|| a.id_b.cmp(&b.id_b))
}

/// Builds the candidate pair list from a distance matrix.
///
/// `ids[i]` names row `i` of `matrix`. When the scene has at most `n`
/// images every pair is emitted (`exhaustive = true`); otherwise each
/// image contributes its `n` nearest neighbours, equal distances resolved
/// by the neighbour's id. The optional threshold drops pairs farther apart
/// than it in both modes.
pub fn shortlist_pairs(
    matrix: &DistanceMatrix,
    ids: &[String],
    n: usize,
    threshold: Option<f64>,
) -> Result<PairShortlist> {
    let m = matrix.size();
    if ids.len() != m {
        return Err(Error::LengthMismatch(ids.len(), m));
    }
    if m < 2 {
        return Err(Error::TooFewImages);
    }
    if n == 0 {
        return Err(Error::InvalidArgument("neighbour count must be positive".into()));
    }

    let exhaustive = m <= n;
    let mut selected: BTreeSet<(usize, usize)> = BTreeSet::new();
    if exhaustive {
        for i in 0..m {
            for j in (i + 1)..m {
                selected.insert((i, j));
            }
        }
    } else {
        for i in 0..m {
            let mut others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            others.sort_by(|&x, &y| {
                matrix
                    .get(i, x)
                    .total_cmp(&matrix.get(i, y))
                    .then_with(|| ids[x].cmp(&ids[y]))
            });
            for &j in others.iter().take(n) {
                selected.insert((i.min(j), i.max(j)));
            }
        }
    }

    let mut pairs: Vec<ShortlistPair> = selected
        .into_iter()
        .map(|(i, j)| {
            let (a, b) = if ids[i] <= ids[j] { (i, j) } else { (j, i) };
            ShortlistPair {
                id_a: ids[a].clone(),
                id_b: ids[b].clone(),
                distance: matrix.get(a, b),
            }
        })
        .filter(|p| threshold.is_none_or(|t| p.distance <= t))
        .collect();
    pairs.sort_by(cmp_pairs);
    Ok(PairShortlist { pairs, exhaustive })
}

/// Parses shortlist text back into `(id_a, id_b)` pairs. The distance
/// column is optional.
pub fn parse_shortlist(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [a, b] | [a, b, _] => out.push((a.to_string(), b.to_string())),
            _ => {
                return Err(Error::format(
                    "shortlist",
                    format!("line {}: expected `<id_a> <id_b> [distance]`", lineno + 1),
                ))
            }
        }
    }
    Ok(out)
}
