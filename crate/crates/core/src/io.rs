//! Binary and text persistence.
//!
//! Tensor file (`MFT1`), little-endian throughout:
//!
//! ```text
//! magic   b"MFT1"
//! dtype   u8        0 = f32
//! rank    u8        1..=4
//! dims    u32[rank]
//! payload f32[prod(dims)], row-major
//! names   u32 count (0 or dims[0]), u32[count] end offsets, UTF-8 bytes
//! ```
//!
//! Several tensors may be concatenated in one file. A file that ends right
//! after a payload is read as having no names.
//!
//! Match archive (`MFA1`):
//!
//! ```text
//! magic b"MFA1", version u32, pair count u32,
//! image count u32, then per image: name (u32 len + UTF-8), keypoint count u32
//! per pair: id_a, id_b (u32 len + UTF-8), match count u32,
//!           then (u32 idx_a, u32 idx_b, f32 confidence) per match
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::feature_head::{Keypoint, LocalDescriptorSet};
use crate::matching::{Match, MatchSet};

pub const TENSOR_MAGIC: &[u8; 4] = b"MFT1";
pub const ARCHIVE_MAGIC: &[u8; 4] = b"MFA1";
pub const ARCHIVE_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const MAX_RANK: usize = 4;

/// Columns of a keypoint tensor: x, y, score, scale, orientation, a00, a01, a10, a11.
pub const KEYPOINT_COLUMNS: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
    names: Vec<String>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::InvalidArgument(format!("unsupported rank {}", dims.len())));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::InvalidArgument("dimension exceeds u32".into()));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::LengthMismatch(data.len(), len));
        }
        Ok(Self {
            dims,
            data,
            names: Vec::new(),
        })
    }

    /// Attaches one name per leading-axis record.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if !names.is_empty() && names.len() != self.dims[0] {
            return Err(Error::LengthMismatch(names.len(), self.dims[0]));
        }
        self.names = names;
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Exact byte size of the encoded tensor.
    pub fn encoded_len(&self) -> usize {
        6 + 4 * self.dims.len()
            + 4 * self.data.len()
            + 4
            + 4 * self.names.len()
            + self.names.iter().map(String::len).sum::<usize>()
    }
}

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.reserve(t.encoded_len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(DTYPE_F32);
    out.push(t.dims.len() as u8);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(t.names.len() as u32).to_le_bytes());
    let mut end = 0u32;
    for n in &t.names {
        end += n.len() as u32;
        out.extend_from_slice(&end.to_le_bytes());
    }
    for n in &t.names {
        out.extend_from_slice(n.as_bytes());
    }
}

/// Little-endian byte cursor.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(self.what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::format(self.what, "invalid UTF-8"))
    }
}

fn decode_tensor(r: &mut Reader<'_>) -> Result<Tensor> {
    if r.take(4)? != TENSOR_MAGIC {
        return Err(Error::format("tensor", "bad magic"));
    }
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::format("tensor", format!("unsupported dtype {dtype}")));
    }
    let rank = r.u8()? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::format("tensor", format!("unsupported rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32()? as usize);
    }
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("tensor", "payload size overflows"))?;
    if len.checked_mul(4).is_none_or(|bytes| bytes > r.remaining()) {
        return Err(Error::Truncated("tensor"));
    }
    let payload = r.take(len * 4)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut names = Vec::new();
    if r.remaining() > 0 {
        let count = r.u32()? as usize;
        if count != 0 && count != dims[0] {
            return Err(Error::format(
                "tensor",
                format!("name table has {count} entries for {} records", dims[0]),
            ));
        }
        let mut ends = Vec::with_capacity(count);
        for _ in 0..count {
            ends.push(r.u32()? as usize);
        }
        let total = ends.last().copied().unwrap_or(0);
        let blob = r.take(total)?;
        let mut start = 0;
        for end in ends {
            if end < start || end > total {
                return Err(Error::format("tensor", "name offsets out of order"));
            }
            let s = std::str::from_utf8(&blob[start..end])
                .map_err(|_| Error::format("tensor", "name is not UTF-8"))?;
            names.push(s.to_string());
            start = end;
        }
    }
    Ok(Tensor { dims, data, names })
}

/// Decodes exactly one tensor; trailing bytes are an error.
pub fn decode_tensor_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut all = decode_tensors_bytes(bytes)?;
    match all.len() {
        0 => Err(Error::EmptyCollection),
        1 => Ok(all.pop().unwrap()),
        n => Err(Error::format("tensor", format!("expected one tensor, found {n}"))),
    }
}

/// Decodes every concatenated tensor in `bytes`.
pub fn decode_tensors_bytes(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader::new(bytes, "tensor");
    let mut out = Vec::new();
    while r.remaining() > 0 {
        out.push(decode_tensor(&mut r)?);
    }
    Ok(out)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_tensors(path, std::slice::from_ref(t))
}

pub fn write_tensors(path: impl AsRef<Path>, ts: &[Tensor]) -> Result<()> {
    let mut buf = Vec::new();
    for t in ts {
        encode_tensor(t, &mut buf);
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor_bytes(&fs::read(path)?)
}

pub fn read_tensor_file_all(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    decode_tensors_bytes(&fs::read(path)?)
}

pub fn keypoints_to_tensor(kps: &[Keypoint]) -> Tensor {
    let data = kps
        .iter()
        .flat_map(|k| {
            [
                k.x,
                k.y,
                k.score,
                k.scale,
                k.orientation,
                k.affine[0][0],
                k.affine[0][1],
                k.affine[1][0],
                k.affine[1][1],
            ]
        })
        .map(|v| v as f32)
        .collect();
    Tensor {
        dims: vec![kps.len(), KEYPOINT_COLUMNS],
        data,
        names: Vec::new(),
    }
}

/// Accepts `K x 9` tensors, or `K x 2` / `K x 3` (x, y[, score]) with
/// default frames.
pub fn tensor_to_keypoints(t: &Tensor) -> Result<Vec<Keypoint>> {
    let cols = match t.dims() {
        [_, c] if matches!(*c, 2 | 3 | KEYPOINT_COLUMNS) => *c,
        other => {
            return Err(Error::format(
                "keypoint tensor",
                format!("expected K x {{2, 3, {KEYPOINT_COLUMNS}}}, found {other:?}"),
            ))
        }
    };
    Ok(t.data()
        .chunks_exact(cols)
        .map(|r| {
            let v = |i: usize| f64::from(r[i]);
            let mut k = Keypoint::new(v(0), v(1), if cols > 2 { v(2) } else { 1.0 });
            if cols == KEYPOINT_COLUMNS {
                k.scale = v(3);
                k.orientation = v(4);
                k.affine = [[v(5), v(6)], [v(7), v(8)]];
            }
            k
        })
        .collect())
}

/// Keypoints plus row-aligned descriptors for one image from one extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: LocalDescriptorSet,
}

/// Writes a keypoint tensor followed by a descriptor tensor.
pub fn write_features(path: impl AsRef<Path>, f: &FeatureSet) -> Result<()> {
    let desc = Tensor::new(
        vec![f.descriptors.len(), f.descriptors.dim()],
        f.descriptors.data().to_vec(),
    )?;
    write_tensors(path, &[keypoints_to_tensor(&f.keypoints), desc])
}

/// Reads a feature file; descriptors are re-normalised on load.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let ts = read_tensor_file_all(path)?;
    let [kt, dt] = ts.as_slice() else {
        return Err(Error::format(
            "feature file",
            format!("expected keypoint and descriptor tensors, found {}", ts.len()),
        ));
    };
    let keypoints = tensor_to_keypoints(kt)?;
    let [rows, dim] = *dt.dims() else {
        return Err(Error::format("feature file", "descriptor tensor must be rank 2"));
    };
    if rows != keypoints.len() {
        return Err(Error::LengthMismatch(rows, keypoints.len()));
    }
    let descriptors = LocalDescriptorSet::normalized(dim, dt.data().to_vec())?;
    Ok(FeatureSet {
        keypoints,
        descriptors,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchivedMatch {
    pub idx_a: u32,
    pub idx_b: u32,
    pub confidence: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchivedPair {
    pub id_a: String,
    pub id_b: String,
    pub matches: Vec<ArchivedMatch>,
}

impl ArchivedPair {
    /// Distances are not archived and come back as NaN.
    pub fn to_match_set(&self) -> MatchSet {
        MatchSet {
            pair: (self.id_a.clone(), self.id_b.clone()),
            matches: self
                .matches
                .iter()
                .map(|m| Match {
                    idx_a: m.idx_a as usize,
                    idx_b: m.idx_b as usize,
                    distance: f32::NAN,
                    confidence: m.confidence,
                })
                .collect(),
        }
    }
}

/// Verified matches for a set of image pairs plus per-image keypoint counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchArchive {
    images: BTreeMap<String, u32>,
    pairs: Vec<ArchivedPair>,
}

impl MatchArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_image(&mut self, name: impl Into<String>, keypoints: usize) -> Result<()> {
        let count = u32::try_from(keypoints)
            .map_err(|_| Error::InvalidArgument("keypoint count exceeds u32".into()))?;
        self.images.insert(name.into(), count);
        Ok(())
    }

    /// Adds a pair, flipping it to canonical orientation if needed. Both
    /// images must already be registered.
    pub fn add_pair(&mut self, ms: &MatchSet) -> Result<()> {
        let (a, b) = (&ms.pair.0, &ms.pair.1);
        let flip = a > b;
        let (id_a, id_b) = if flip { (b, a) } else { (a, b) };
        if id_a == id_b {
            return Err(Error::InvalidArgument(format!("self pair {id_a:?}")));
        }
        let mut matches: Vec<ArchivedMatch> = ms
            .matches
            .iter()
            .map(|m| {
                let (ia, ib) = if flip { (m.idx_b, m.idx_a) } else { (m.idx_a, m.idx_b) };
                ArchivedMatch {
                    idx_a: ia as u32,
                    idx_b: ib as u32,
                    confidence: m.confidence,
                }
            })
            .collect();
        if flip {
            matches.sort_by_key(|m| (m.idx_a, m.idx_b));
        }
        let pair = ArchivedPair {
            id_a: id_a.clone(),
            id_b: id_b.clone(),
            matches,
        };
        self.check_pair(&pair)?;
        let at = self
            .pairs
            .binary_search_by(|p| (&p.id_a, &p.id_b).cmp(&(&pair.id_a, &pair.id_b)));
        match at {
            Ok(_) => Err(Error::InvalidArgument(format!(
                "pair ({}, {}) already archived",
                pair.id_a, pair.id_b
            ))),
            Err(pos) => {
                self.pairs.insert(pos, pair);
                Ok(())
            }
        }
    }

    fn check_pair(&self, p: &ArchivedPair) -> Result<()> {
        let count = |id: &str| {
            self.images
                .get(id)
                .copied()
                .ok_or_else(|| Error::format("match archive", format!("unknown image {id:?}")))
        };
        let (ka, kb) = (count(&p.id_a)?, count(&p.id_b)?);
        if let Some(m) = p.matches.iter().find(|m| m.idx_a >= ka || m.idx_b >= kb) {
            return Err(Error::format(
                "match archive",
                format!(
                    "match ({}, {}) out of range for ({}, {}) with {ka}/{kb} keypoints",
                    m.idx_a, m.idx_b, p.id_a, p.id_b
                ),
            ));
        }
        Ok(())
    }

    pub fn images(&self) -> impl Iterator<Item = (&str, usize)> {
        self.images.iter().map(|(k, &v)| (k.as_str(), v as usize))
    }

    pub fn pairs(&self) -> &[ArchivedPair] {
        &self.pairs
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.pairs.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.images.len() as u32).to_le_bytes());
        for (name, &count) in &self.images {
            put_str(&mut out, name);
            out.extend_from_slice(&count.to_le_bytes());
        }
        for p in &self.pairs {
            put_str(&mut out, &p.id_a);
            put_str(&mut out, &p.id_b);
            out.extend_from_slice(&(p.matches.len() as u32).to_le_bytes());
            for m in &p.matches {
                out.extend_from_slice(&m.idx_a.to_le_bytes());
                out.extend_from_slice(&m.idx_b.to_le_bytes());
                out.extend_from_slice(&m.confidence.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "match archive");
        if r.take(4)? != ARCHIVE_MAGIC {
            return Err(Error::format("match archive", "bad magic"));
        }
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(Error::format("match archive", format!("unsupported version {version}")));
        }
        let pair_count = r.u32()? as usize;
        let image_count = r.u32()? as usize;
        let mut archive = MatchArchive::new();
        let mut prev: Option<String> = None;
        for _ in 0..image_count {
            let name = r.string()?;
            let count = r.u32()?;
            if prev.as_ref().is_some_and(|p| *p >= name) {
                return Err(Error::format("match archive", "image table not sorted"));
            }
            archive.images.insert(name.clone(), count);
            prev = Some(name);
        }
        for _ in 0..pair_count {
            let id_a = r.string()?;
            let id_b = r.string()?;
            let n = r.u32()? as usize;
            if n.saturating_mul(12) > r.remaining() {
                return Err(Error::Truncated("match archive"));
            }
            let mut matches = Vec::with_capacity(n);
            for _ in 0..n {
                matches.push(ArchivedMatch {
                    idx_a: r.u32()?,
                    idx_b: r.u32()?,
                    confidence: r.f32()?,
                });
            }
            let pair = ArchivedPair { id_a, id_b, matches };
            if pair.id_a >= pair.id_b {
                return Err(Error::format("match archive", "pair not canonically oriented"));
            }
            if archive
                .pairs
                .last()
                .is_some_and(|q| (&q.id_a, &q.id_b) >= (&pair.id_a, &pair.id_b))
            {
                return Err(Error::format("match archive", "pairs not canonically ordered"));
            }
            archive.check_pair(&pair)?;
            archive.pairs.push(pair);
        }
        if r.remaining() != 0 {
            return Err(Error::format("match archive", "trailing bytes"));
        }
        Ok(archive)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn check_export_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(Error::UnrepresentableName(name.to_string()));
    }
    Ok(())
}

/// Renders pairwise matches in the raw text layout accepted by COLMAP's
/// match importer:
///
/// ```text
/// <name_a> <name_b>
/// <idx_a> <idx_b>
/// ...
/// <blank line>
/// ```
///
/// Pairs are flipped to canonical orientation and sorted by name.
pub fn format_pair_matches_text(sets: &[MatchSet]) -> Result<String> {
    let mut blocks: Vec<(&str, &str, Vec<(usize, usize)>)> = Vec::with_capacity(sets.len());
    for ms in sets {
        let (a, b) = (ms.pair.0.as_str(), ms.pair.1.as_str());
        check_export_name(a)?;
        check_export_name(b)?;
        if a == b {
            return Err(Error::InvalidArgument(format!("self pair {a:?}")));
        }
        let mut idx: Vec<(usize, usize)> = ms.matches.iter().map(|m| (m.idx_a, m.idx_b)).collect();
        if a > b {
            idx = idx.into_iter().map(|(i, j)| (j, i)).collect();
            idx.sort_unstable();
            blocks.push((b, a, idx));
        } else {
            blocks.push((a, b, idx));
        }
    }
    blocks.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    if let Some(w) = blocks.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
        return Err(Error::InvalidArgument(format!("pair ({}, {}) given twice", w[0].0, w[0].1)));
    }

    let mut s = String::new();
    for (a, b, idx) in blocks {
        let _ = writeln!(s, "{a} {b}");
        for (i, j) in idx {
            let _ = writeln!(s, "{i} {j}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn export_pair_matches_text(sets: &[MatchSet], path: impl AsRef<Path>) -> Result<()> {
    let text = format_pair_matches_text(sets)?;
    fs::write(path, text)?;
    Ok(())
}
