//! Static 3-D k-d tree for exact nearest-neighbor and fixed-radius queries.
//!
//! The tree is built once over an owned point set and never mutated. Nodes
//! are stored implicitly: the subtree over `order[lo..hi]` has its splitting
//! point at the median slot `(lo + hi) / 2`, and `axes` records the split
//! axis for that slot.

use crate::point::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    axes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub index: usize,
    pub distance: f64,
}

impl KdTree {
    pub fn build(points: Vec<Point3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build_range(&points, &mut order, &mut axes, 0, points.len());
        Self {
            points,
            order,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Exact nearest neighbor. `None` only for an empty tree.
    pub fn nearest(&self, query: &Point3) -> Option<Nearest> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(query, 0, self.points.len(), &mut best);
        Some(Nearest {
            index: best.0,
            distance: best.1.sqrt(),
        })
    }

    fn nearest_in(&self, q: &Point3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                let d2 = q.distance_squared(&self.points[i]);
                if d2 < best.1 || (d2 == best.1 && i < best.0) {
                    *best = (i, d2);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let axis = self.axes[mid] as usize;
        let d2 = q.distance_squared(&self.points[idx]);
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let delta = q.coord(axis) - self.points[idx].coord(axis);
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(q, near.0, near.1, best);
        if delta * delta <= best.1 {
            self.nearest_in(q, far.0, far.1, best);
        }
    }

    /// Indices of all points with squared distance `<= radius²`, ascending.
    pub fn within_radius(&self, query: &Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_radius_into(query, radius, &mut out);
        out
    }

    /// Like [`within_radius`](Self::within_radius) but reuses `out`.
    pub fn within_radius_into(&self, query: &Point3, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if !self.points.is_empty() {
            self.radius_in(query, radius * radius, 0, self.points.len(), out);
        }
        out.sort_unstable();
    }

    fn radius_in(&self, q: &Point3, r2: f64, lo: usize, hi: usize, out: &mut Vec<usize>) {
        if hi - lo <= LEAF_SIZE {
            out.extend(
                self.order[lo..hi]
                    .iter()
                    .copied()
                    .filter(|&i| q.distance_squared(&self.points[i]) <= r2),
            );
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let axis = self.axes[mid] as usize;
        if q.distance_squared(&self.points[idx]) <= r2 {
            out.push(idx);
        }
        let delta = q.coord(axis) - self.points[idx].coord(axis);
        if delta <= 0.0 || delta * delta <= r2 {
            self.radius_in(q, r2, lo, mid, out);
        }
        if delta >= 0.0 || delta * delta <= r2 {
            self.radius_in(q, r2, mid + 1, hi, out);
        }
    }
}

fn build_range(points: &[Point3], order: &mut [usize], axes: &mut [u8], lo: usize, hi: usize) {
    if hi - lo <= LEAF_SIZE {
        return;
    }
    let axis = widest_axis(points, &order[lo..hi]);
    let mid = (lo + hi) / 2;
    order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
        points[a].coord(axis).total_cmp(&points[b].coord(axis))
    });
    axes[mid] = axis as u8;
    build_range(points, order, axes, lo, mid);
    build_range(points, order, axes, mid + 1, hi);
}

fn widest_axis(points: &[Point3], idx: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx {
        for a in 0..3 {
            let c = points[i].coord(a);
            lo[a] = lo[a].min(c);
            hi[a] = hi[a].max(c);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0)
}
