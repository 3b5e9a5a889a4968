//! Balanced kd-tree over point positions.
//!
//! Built once per scan, the index answers k-nearest-neighbour and radius
//! queries deterministically: results are sorted by ascending distance with
//! ties broken by point id, and the query point itself is excluded. The tree
//! is an implicit median-split structure (node = median of its segment along
//! the widest axis), so equal inputs always produce equal trees regardless
//! of thread count.

use crate::real::Real;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Parameters of the adaptive neighbourhood radius
/// `r = clamp(lambda * d_k, r_min, r_max)`, where `d_k` is the distance to
/// the `k_ref`-th nearest neighbour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveRadius<T> {
    /// Multiplier on the reference neighbour distance.
    pub lambda: T,
    /// Which nearest-neighbour distance to use as the local density probe.
    pub k_ref: usize,
    /// Lower clamp, metres.
    pub r_min: T,
    /// Upper clamp, metres.
    pub r_max: T,
}

impl<T: Real> Default for AdaptiveRadius<T> {
    /// Defaults tuned for terrestrial forest scans at metre scale.
    fn default() -> Self {
        AdaptiveRadius {
            lambda: T::from_f64_lossy(1.5),
            k_ref: 10,
            r_min: T::from_f64_lossy(0.02),
            r_max: T::from_f64_lossy(0.3),
        }
    }
}

/// Adaptive neighbourhood radius for point `id`.
///
/// Falls back to the farthest available neighbour when the cloud has fewer
/// than `k_ref` other points, and to `r_max` for a single-point cloud.
pub fn adaptive_radius<T: Real>(
    index: &SpatialIndex<T>,
    id: usize,
    spec: &AdaptiveRadius<T>,
) -> T {
    let k = spec.k_ref.max(1);
    let nn = index.knn(id, k);
    match nn.last() {
        Some(&(_, d)) => (spec.lambda * d).max(spec.r_min).min(spec.r_max),
        None => spec.r_max,
    }
}

/// Heap entry ordered by (distance², id); the heap top is the current worst.
#[derive(Clone, Copy)]
struct Cand<T> {
    d2: T,
    id: u32,
}

impl<T: Real> PartialEq for Cand<T> {
    fn eq(&self, other: &Self) -> bool {
        self.d2 == other.d2 && self.id == other.id
    }
}
impl<T: Real> Eq for Cand<T> {}
impl<T: Real> PartialOrd for Cand<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for Cand<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .partial_cmp(&other.d2)
            .expect("finite distances")
            .then(self.id.cmp(&other.id))
    }
}

/// Balanced kd-tree on a snapshot of point positions.
pub struct SpatialIndex<T> {
    pts: Vec<[T; 3]>,
    /// Permutation of ids; each segment's median slot is its tree node.
    order: Vec<u32>,
    /// Split axis per permutation slot (only median slots are meaningful).
    axes: Vec<u8>,
}

const PARALLEL_BUILD_CUTOFF: usize = 4096;

impl<T: Real> SpatialIndex<T> {
    /// Builds the index over a copy of `positions`. Coordinates must be
    /// finite.
    pub fn build(positions: &[[T; 3]]) -> Self {
        assert!(
            positions.len() < u32::MAX as usize,
            "point count exceeds u32 id space"
        );
        let pts = positions.to_vec();
        let mut order: Vec<u32> = (0..pts.len() as u32).collect();
        let mut axes = vec![0u8; pts.len()];
        build_segment(&pts, &mut order, &mut axes);
        SpatialIndex { pts, order, axes }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Position snapshot held by the index.
    pub fn position(&self, id: usize) -> [T; 3] {
        self.pts[id]
    }

    /// The `k` nearest neighbours of point `query_id`, excluding the query
    /// point itself. Returns exactly `min(k, len() - 1)` entries sorted by
    /// ascending distance, ties broken by id.
    pub fn knn(&self, query_id: usize, k: usize) -> Vec<(usize, T)> {
        self.knn_impl(self.pts[query_id], k, Some(query_id as u32))
    }

    /// The `k` points nearest to an arbitrary position (no exclusion).
    pub fn knn_at(&self, pos: [T; 3], k: usize) -> Vec<(usize, T)> {
        self.knn_impl(pos, k, None)
    }

    fn knn_impl(&self, query: [T; 3], k: usize, exclude: Option<u32>) -> Vec<(usize, T)> {
        if k == 0 || self.pts.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Cand<T>> = BinaryHeap::with_capacity(k + 1);
        self.knn_segment(0, self.pts.len(), query, k, exclude, &mut heap);
        let mut out: Vec<(usize, T)> = heap
            .into_iter()
            .map(|c| (c.id as usize, c.d2.sqrt()))
            .collect();
        out.sort_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .expect("finite distances")
                .then(a.0.cmp(&b.0))
        });
        out
    }

    fn knn_segment(
        &self,
        lo: usize,
        hi: usize,
        query: [T; 3],
        k: usize,
        exclude: Option<u32>,
        heap: &mut BinaryHeap<Cand<T>>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let id = self.order[mid];
        let p = self.pts[id as usize];
        if Some(id) != exclude {
            let d2 = dist2(query, p);
            let cand = Cand { d2, id };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(&worst) = heap.peek() {
                if cand < worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        if hi - lo == 1 {
            return;
        }
        let axis = self.axes[mid] as usize;
        let delta = query[axis] - p[axis];
        let (near, far) = if delta < T::zero() {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_segment(near.0, near.1, query, k, exclude, heap);
        // The far half-space can still hold a candidate when the splitting
        // plane is closer than (or tied with) the current worst neighbour.
        let must_visit = match heap.peek() {
            Some(&worst) if heap.len() == k => delta * delta <= worst.d2,
            _ => true,
        };
        if must_visit {
            self.knn_segment(far.0, far.1, query, k, exclude, heap);
        }
    }

    /// All points within the closed ball of `radius` around point
    /// `query_id`, excluding the query point; sorted by ascending distance,
    /// ties by id.
    pub fn neighbors_in_radius(&self, query_id: usize, radius: T) -> Vec<(usize, T)> {
        self.radius_at_impl(self.pts[query_id], radius, Some(query_id as u32))
    }

    /// All points within the closed ball of `radius` around an arbitrary
    /// position (no exclusion); sorted by ascending distance, ties by id.
    pub fn radius_at(&self, pos: [T; 3], radius: T) -> Vec<(usize, T)> {
        self.radius_at_impl(pos, radius, None)
    }

    fn radius_at_impl(&self, query: [T; 3], radius: T, exclude: Option<u32>) -> Vec<(usize, T)> {
        let mut hits: Vec<(usize, T)> = Vec::new();
        if radius >= T::zero() && !self.pts.is_empty() {
            self.radius_segment(0, self.pts.len(), query, radius * radius, exclude, &mut hits);
            hits.sort_by(|a, b| {
                a.1.partial_cmp(&b.1)
                    .expect("finite distances")
                    .then(a.0.cmp(&b.0))
            });
            for h in &mut hits {
                h.1 = h.1.sqrt();
            }
        }
        hits
    }

    fn radius_segment(
        &self,
        lo: usize,
        hi: usize,
        query: [T; 3],
        r2: T,
        exclude: Option<u32>,
        hits: &mut Vec<(usize, T)>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let id = self.order[mid];
        let p = self.pts[id as usize];
        if Some(id) != exclude {
            let d2 = dist2(query, p);
            if d2 <= r2 {
                hits.push((id as usize, d2));
            }
        }
        if hi - lo == 1 {
            return;
        }
        let axis = self.axes[mid] as usize;
        let delta = query[axis] - p[axis];
        let (near, far) = if delta < T::zero() {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.radius_segment(near.0, near.1, query, r2, exclude, hits);
        if delta * delta <= r2 {
            self.radius_segment(far.0, far.1, query, r2, exclude, hits);
        }
    }
}

#[inline]
fn dist2<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn build_segment<T: Real>(pts: &[[T; 3]], order: &mut [u32], axes: &mut [u8]) {
    let n = order.len();
    if n <= 1 {
        return;
    }
    // Split along the widest extent of this segment's bounding box.
    let mut lo = [T::infinity(); 3];
    let mut hi = [T::neg_infinity(); 3];
    for &id in order.iter() {
        let p = pts[id as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut axis = 0usize;
    let mut extent = hi[0] - lo[0];
    for a in 1..3 {
        let e = hi[a] - lo[a];
        if e > extent {
            extent = e;
            axis = a;
        }
    }
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&i, &j| {
        pts[i as usize][axis]
            .partial_cmp(&pts[j as usize][axis])
            .expect("finite coordinates")
            .then(i.cmp(&j))
    });
    axes[mid] = axis as u8;
    let (order_left, order_rest) = order.split_at_mut(mid);
    let (axes_left, axes_rest) = axes.split_at_mut(mid);
    let order_right = &mut order_rest[1..];
    let axes_right = &mut axes_rest[1..];
    if n > PARALLEL_BUILD_CUTOFF {
        rayon::join(
            || build_segment(pts, order_left, axes_left),
            || build_segment(pts, order_right, axes_right),
        );
    } else {
        build_segment(pts, order_left, axes_left);
        build_segment(pts, order_right, axes_right);
    }
}
