use rayon::prelude::*;

use super::Point;
use crate::error::{HsrError, Result};

/// Static 3-d tree over a point set, split at the median of the widest axis.
pub struct KdTree {
    points: Vec<Point>,
    // per node (in implicit order over `points`), the split axis
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Point]) -> Self {
        let mut points = points.to_vec();
        let mut axes = vec![0u8; points.len()];
        build(&mut points, &mut axes);
        Self { points, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Euclidean distance from `q` to its nearest point; `None` when empty.
    pub fn nearest_distance(&self, q: &Point) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        search(&self.points, &self.axes, q, &mut best);
        Some(best.sqrt())
    }
}

fn build(points: &mut [Point], axes: &mut [u8]) {
    if points.len() <= 1 {
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points.iter() {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    axes[mid] = axis as u8;
    let (left, rest) = points.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build(left, left_axes);
    build(&mut rest[1..], &mut rest_axes[1..]);
}

fn search(points: &[Point], axes: &[u8], q: &Point, best: &mut f64) {
    if points.is_empty() {
        return;
    }
    let mid = points.len() / 2;
    let p = &points[mid];
    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
    if d2 < *best {
        *best = d2;
    }
    if points.len() == 1 {
        return;
    }
    let axis = axes[mid] as usize;
    let diff = q[axis] - p[axis];
    let (near, far, near_axes, far_axes) = if diff < 0.0 {
        (&points[..mid], &points[mid + 1..], &axes[..mid], &axes[mid + 1..])
    } else {
        (&points[mid + 1..], &points[..mid], &axes[mid + 1..], &axes[..mid])
    };
    search(near, near_axes, q, best);
    if diff * diff < *best {
        search(far, far_axes, q, best);
    }
}

/// `0.5 (mean_a min_b ‖a-b‖ + mean_b min_a ‖a-b‖)`.
pub fn chamfer_distance(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(HsrError::EmptyPointSet);
    }
    let one_way = |from: &[Point], to: &[Point]| -> f64 {
        let tree = KdTree::new(to);
        let sum: f64 = from
            .par_iter()
            .map(|p| tree.nearest_distance(p).expect("non-empty"))
            .sum();
        sum / from.len() as f64
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)))
}
