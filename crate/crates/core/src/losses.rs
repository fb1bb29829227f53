//! Hard-negative margin losses for local descriptor learning.
//!
//! `hardnet_loss` mines, for every matching pair `(a_i, p_i)`, the closest
//! non-matching descriptor in either direction (row and column minima of the
//! anchor/positive distance matrix) and averages the unit-margin hinge.
//! `hardneg_constant_loss` is the summed unit-margin hinge over precomputed
//! positive/negative distances.

use crate::error::{Error, Result};

/// Tie tolerance for the hardest-negative selection in the gradient.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Matched anchor/positive descriptors, row `i` of each forming pair `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorBatch {
    n: usize,
    dim: usize,
    anchors: Vec<f64>,
    positives: Vec<f64>,
}

impl DescriptorBatch {
    pub fn new(dim: usize, anchors: Vec<f64>, positives: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("descriptor dimension is zero".into()));
        }
        if anchors.len() != positives.len() {
            return Err(Error::LengthMismatch(anchors.len(), positives.len()));
        }
        if !anchors.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch(anchors.len(), dim));
        }
        if anchors.iter().chain(&positives).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("descriptor batch"));
        }
        Ok(Self {
            n: anchors.len() / dim,
            dim,
            anchors,
            positives,
        })
    }

    pub fn from_f32(dim: usize, anchors: &[f32], positives: &[f32]) -> Result<Self> {
        let widen = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect();
        Self::new(dim, widen(anchors), widen(positives))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn anchor(&self, i: usize) -> &[f64] {
        &self.anchors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positive(&self, i: usize) -> &[f64] {
        &self.positives[i * self.dim..(i + 1) * self.dim]
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn positives(&self) -> &[f64] {
        &self.positives
    }

    pub fn anchors_mut(&mut self) -> &mut [f64] {
        &mut self.anchors
    }

    pub fn positives_mut(&mut self) -> &mut [f64] {
        &mut self.positives
    }
}

/// `d[i][j] = |a_i - p_j|`; the diagonal holds the positive distances.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchDistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl BatchDistanceMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::LengthMismatch(r.len(), n));
        }
        let d: Vec<f64> = rows.iter().flatten().copied().collect();
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("distance matrix"));
        }
        if d.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("negative distance".into()));
        }
        Ok(Self { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// Closest non-matching distance for pair `i`: the smaller of the
    /// off-diagonal row minimum and column minimum.
    pub fn hardest_negative(&self, i: usize) -> f64 {
        (0..self.n)
            .filter(|&j| j != i)
            .map(|j| self.get(i, j).min(self.get(j, i)))
            .fold(f64::INFINITY, f64::min)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn batch_distance_matrix(b: &DescriptorBatch) -> Result<BatchDistanceMatrix> {
    if b.n < 2 {
        return Err(Error::NoNegatives(b.n));
    }
    let n = b.n;
    let mut d = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            d.push(euclid(b.anchor(i), b.positive(j)));
        }
    }
    Ok(BatchDistanceMatrix { n, d })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HardNetLoss {
    pub loss: f64,
    pub per_sample: Vec<f64>,
}

/// Mean over pairs of `max(0, 1 + d[i][i] - hardest_negative(i))`.
pub fn hardnet_loss(d: &BatchDistanceMatrix) -> Result<HardNetLoss> {
    if d.n < 2 {
        return Err(Error::NoNegatives(d.n));
    }
    let per_sample: Vec<f64> = (0..d.n)
        .map(|i| (1.0 + d.get(i, i) - d.hardest_negative(i)).max(0.0))
        .collect();
    let loss = per_sample.iter().sum::<f64>() / d.n as f64;
    Ok(HardNetLoss { loss, per_sample })
}

/// Positive and hardest-negative distances per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct HardNegPairs {
    d_pos: Vec<f64>,
    d_neg: Vec<f64>,
}

impl HardNegPairs {
    pub fn new(d_pos: Vec<f64>, d_neg: Vec<f64>) -> Result<Self> {
        if d_pos.len() != d_neg.len() {
            return Err(Error::LengthMismatch(d_pos.len(), d_neg.len()));
        }
        if d_pos.is_empty() {
            return Err(Error::EmptyCollection);
        }
        if d_pos.iter().chain(&d_neg).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("distances must be finite and non-negative".into()));
        }
        Ok(Self { d_pos, d_neg })
    }

    pub fn d_pos(&self) -> &[f64] {
        &self.d_pos
    }

    pub fn d_neg(&self) -> &[f64] {
        &self.d_neg
    }
}

/// Sum (not mean) of `max(0, 1 + d_pos[i] - d_neg[i])`.
pub fn hardneg_constant_loss(p: &HardNegPairs) -> f64 {
    p.d_pos
        .iter()
        .zip(&p.d_neg)
        .map(|(pos, neg)| (1.0 + pos - neg).max(0.0))
        .sum()
}

/// Gradients of [`hardnet_loss`] with respect to anchors and positives,
/// laid out like the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct HardNetGrad {
    pub anchors: Vec<f64>,
    pub positives: Vec<f64>,
}

/// Which distance entry supplies the hardest negative of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NegSource {
    /// `d(a_i, p_j)`
    Row(usize),
    /// `d(a_k, p_i)`
    Col(usize),
}

/// Analytic gradient of the batch-mean HardNet loss.
///
/// Only pairs with an active hinge contribute. A tie (within
/// [`TIE_TOLERANCE`]) between the two smallest hardest-negative candidates
/// of an active pair is reported as [`Error::NonDifferentiable`]. The
/// derivative of a zero distance is taken as zero.
pub fn hardnet_loss_grad(b: &DescriptorBatch) -> Result<HardNetGrad> {
    let d = batch_distance_matrix(b)?;
    let (n, dim) = (b.n, b.dim);
    let mut ga = vec![0f64; n * dim];
    let mut gp = vec![0f64; n * dim];
    let w = 1.0 / n as f64;

    // d|a - p| / da = (a - p) / |a - p|; the positive side gets the negation
    let mut accumulate = |ai: usize, pj: usize, sign: f64| {
        let dist = d.get(ai, pj);
        if dist == 0.0 {
            return;
        }
        let (a, p) = (b.anchor(ai), b.positive(pj));
        for k in 0..dim {
            let g = sign * w * (a[k] - p[k]) / dist;
            ga[ai * dim + k] += g;
            gp[pj * dim + k] -= g;
        }
    };

    for i in 0..n {
        let mut cands: Vec<(f64, NegSource)> = Vec::with_capacity(2 * (n - 1));
        for j in (0..n).filter(|&j| j != i) {
            cands.push((d.get(i, j), NegSource::Row(j)));
            cands.push((d.get(j, i), NegSource::Col(j)));
        }
        cands.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (neg, source) = cands[0];
        if 1.0 + d.get(i, i) - neg <= 0.0 {
            continue;
        }
        if cands.len() > 1 && cands[1].0 - neg <= TIE_TOLERANCE {
            return Err(Error::NonDifferentiable(i));
        }
        accumulate(i, i, 1.0);
        match source {
            NegSource::Row(j) => accumulate(i, j, -1.0),
            NegSource::Col(k) => accumulate(k, i, -1.0),
        }
    }
    Ok(HardNetGrad {
        anchors: ga,
        positives: gp,
    })
}
