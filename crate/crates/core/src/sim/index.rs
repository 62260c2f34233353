//! Uniform-grid cell list over 3-D points.

use rustc_hash::FxHashMap;

use crate::geom::{dist2, Vec3};

type Key = [i32; 3];

/// Hash-bucketed uniform grid. Bucket contents keep insertion order, and
/// removal uses `swap_remove`, so iteration order is a deterministic
/// function of the operation sequence.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    inv_cell: f64,
    buckets: FxHashMap<Key, Vec<(u32, Vec3)>>,
    len: usize,
}

impl SpatialIndex {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        Self { inv_cell: 1.0 / cell_size, buckets: FxHashMap::default(), len: 0 }
    }

    pub fn from_points(cell_size: f64, points: impl IntoIterator<Item = (u32, Vec3)>) -> Self {
        let mut idx = Self::new(cell_size);
        for (id, p) in points {
            idx.insert(id, p);
        }
        idx
    }

    #[inline]
    fn key(&self, p: &Vec3) -> Key {
        [
            (p[0] * self.inv_cell).floor() as i32,
            (p[1] * self.inv_cell).floor() as i32,
            (p[2] * self.inv_cell).floor() as i32,
        ]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, id: u32, pos: Vec3) {
        let k = self.key(&pos);
        self.buckets.entry(k).or_default().push((id, pos));
        self.len += 1;
    }

    /// Removes `id`, which must have been inserted at `pos`. Returns whether it was found.
    pub fn remove(&mut self, id: u32, pos: &Vec3) -> bool {
        let k = self.key(pos);
        let Some(bucket) = self.buckets.get_mut(&k) else { return false };
        let Some(i) = bucket.iter().position(|&(j, _)| j == id) else { return false };
        bucket.swap_remove(i);
        if bucket.is_empty() {
            self.buckets.remove(&k);
        }
        self.len -= 1;
        true
    }

    /// Calls `f(id, pos, squared_distance)` for every point with distance `<= radius`.
    pub fn for_each_within(&self, center: &Vec3, radius: f64, mut f: impl FnMut(u32, &Vec3, f64)) {
        let r2 = radius * radius;
        let lo = self.key(&[center[0] - radius, center[1] - radius, center[2] - radius]);
        let hi = self.key(&[center[0] + radius, center[1] + radius, center[2] + radius]);
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(bucket) = self.buckets.get(&[x, y, z]) {
                        for (id, p) in bucket {
                            let d2 = dist2(center, p);
                            if d2 <= r2 {
                                f(*id, p, d2);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Ids of all points within `radius` of `center` (inclusive), sorted ascending.
    pub fn query(&self, center: &Vec3, radius: f64) -> Vec<u32> {
        let mut out = Vec::new();
        self.for_each_within(center, radius, |id, _, _| out.push(id));
        out.sort_unstable();
        out
    }
}
