//! Static kd-tree over Gaussian centers.
//!
//! The tree is implicit: entries are permuted so that each node sits at the
//! midpoint of its range, with the left subtree before it and the right after.
//! Neighbor results are ordered by (distance, id) so ties resolve identically
//! on every run.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::field_io::GaussianField;
use crate::GaussianSet;

#[derive(Debug, Clone, Copy)]
struct Entry {
    p: [f64; 3],
    id: u32,
}

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    entries: Vec<Entry>,
    axes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    d2: f64,
    id: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

impl SpatialIndex {
    pub fn new(points: impl IntoIterator<Item = ([f64; 3], u32)>) -> Self {
        let mut entries: Vec<Entry> = points.into_iter().map(|(p, id)| Entry { p, id }).collect();
        let mut axes = vec![0u8; entries.len()];
        build(&mut entries, &mut axes);
        Self { entries, axes }
    }

    /// Index over the given Gaussians of a field.
    pub fn from_field(field: &GaussianField, members: &GaussianSet) -> Self {
        Self::new(members.iter().map(|&g| (field.position(g as usize), g)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The `k` nearest points to `q` as (distance, id), skipping `exclude`.
    pub fn knn(&self, q: &[f64; 3], k: usize, exclude: Option<u32>) -> Vec<(f64, u32)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, self.entries.len(), q, k, exclude, &mut heap);
        let mut out: Vec<Cand> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.d2.sqrt(), c.id)).collect()
    }

    fn knn_rec(&self, lo: usize, hi: usize, q: &[f64; 3], k: usize, exclude: Option<u32>, heap: &mut BinaryHeap<Cand>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let e = &self.entries[mid];
        let axis = self.axes[mid] as usize;
        if Some(e.id) != exclude {
            let c = Cand { d2: dist2(q, &e.p), id: e.id };
            if heap.len() < k {
                heap.push(c);
            } else if c < *heap.peek().expect("heap is full") {
                heap.pop();
                heap.push(c);
            }
        }
        let diff = q[axis] - e.p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_rec(near.0, near.1, q, k, exclude, heap);
        if heap.len() < k || diff * diff <= heap.peek().expect("heap is non-empty").d2 {
            self.knn_rec(far.0, far.1, q, k, exclude, heap);
        }
    }

    pub fn nearest(&self, q: &[f64; 3], exclude: Option<u32>) -> Option<(f64, u32)> {
        self.knn(q, 1, exclude).into_iter().next()
    }

    /// Ids within distance `r` of `q` (inclusive), ascending.
    pub fn within(&self, q: &[f64; 3], r: f64) -> Vec<u32> {
        let mut out = Vec::new();
        self.within_rec(0, self.entries.len(), q, r * r, &mut out);
        out.sort_unstable();
        out
    }

    fn within_rec(&self, lo: usize, hi: usize, q: &[f64; 3], r2: f64, out: &mut Vec<u32>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let e = &self.entries[mid];
        let axis = self.axes[mid] as usize;
        if dist2(q, &e.p) <= r2 {
            out.push(e.id);
        }
        let diff = q[axis] - e.p[axis];
        if diff <= 0.0 || diff * diff <= r2 {
            self.within_rec(lo, mid, q, r2, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.within_rec(mid + 1, hi, q, r2, out);
        }
    }
}

fn build(entries: &mut [Entry], axes: &mut [u8]) {
    if entries.is_empty() {
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for e in entries.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(e.p[a]);
            hi[a] = hi[a].max(e.p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .expect("three axes");
    let mid = entries.len() / 2;
    entries.select_nth_unstable_by(mid, |x, y| x.p[axis].total_cmp(&y.p[axis]).then(x.id.cmp(&y.id)));
    axes[mid] = axis as u8;
    let (left, rest) = entries.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build(left, left_axes);
    build(&mut rest[1..], &mut rest_axes[1..]);
}
