use std::collections::HashMap;

/// Uniform bucket grid for fixed-radius neighbour queries in the plane.
pub(crate) struct PointGrid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl PointGrid {
    pub(crate) fn new(cell: f64) -> Self {
        debug_assert!(cell > 0.0);
        Self {
            cell,
            buckets: HashMap::new(),
        }
    }

    pub(crate) fn with_points(cell: f64, points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut g = Self::new(cell);
        for (id, (x, y)) in points.into_iter().enumerate() {
            g.insert(x, y, id);
        }
        g
    }

    fn key(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell).floor() as i64, (y / self.cell).floor() as i64)
    }

    pub(crate) fn insert(&mut self, x: f64, y: f64, id: usize) {
        let k = self.key(x, y);
        self.buckets.entry(k).or_default().push(id);
    }

    /// Ids in every bucket that may hold a point within `radius` of `(x, y)`.
    /// Callers still check the exact distance.
    pub(crate) fn candidates(&self, x: f64, y: f64, radius: f64) -> Vec<usize> {
        let reach = (radius / self.cell).ceil() as i64;
        let (cx, cy) = self.key(x, y);
        let mut out = Vec::new();
        for gx in cx - reach..=cx + reach {
            for gy in cy - reach..=cy + reach {
                if let Some(ids) = self.buckets.get(&(gx, gy)) {
                    out.extend_from_slice(ids);
                }
            }
        }
        out
    }
}
