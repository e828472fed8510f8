//! Convex polygon primitives for the sandbox: containment, separating-axis
//! overlap with minimum translation vector, distance, and ray casting.

use nalgebra::Vector2;

pub fn centroid(poly: &[Vector2<f64>]) -> Vector2<f64> {
    let mut c = Vector2::new(0.0, 0.0);
    for v in poly {
        c += v;
    }
    c / poly.len() as f64
}

/// Counterclockwise convexity check (collinear edges allowed).
pub fn is_convex_ccw(poly: &[Vector2<f64>]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
        if cross < -1e-12 {
            return false;
        }
    }
    true
}

pub fn point_in_convex(poly: &[Vector2<f64>], p: Vector2<f64>) -> bool {
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if cross < 0.0 {
            return false;
        }
    }
    true
}

fn project(poly: &[Vector2<f64>], axis: Vector2<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in poly {
        let d = v.dot(&axis);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Separating-axis overlap test. Returns the minimum translation vector as
/// `(unit axis, depth)` oriented so translating `b` by `axis * depth`
/// separates it from `a`. `None` when disjoint (or touching).
pub fn polygon_overlap_mtv(
    a: &[Vector2<f64>],
    b: &[Vector2<f64>],
) -> Option<(Vector2<f64>, f64)> {
    let mut best_axis = Vector2::new(0.0, 0.0);
    let mut best_depth = f64::INFINITY;
    for (poly, other) in [(a, b), (b, a)] {
        let n = poly.len();
        for i in 0..n {
            let e = poly[(i + 1) % n] - poly[i];
            let len = e.norm();
            if len < 1e-12 {
                continue;
            }
            let axis = Vector2::new(-e.y / len, e.x / len);
            let (alo, ahi) = project(poly, axis);
            let (blo, bhi) = project(other, axis);
            let overlap = ahi.min(bhi) - alo.max(blo);
            if overlap <= 0.0 {
                return None;
            }
            if overlap < best_depth {
                best_depth = overlap;
                best_axis = axis;
            }
        }
    }
    let dir = centroid(b) - centroid(a);
    if dir.dot(&best_axis) < 0.0 {
        best_axis = -best_axis;
    }
    Some((best_axis, best_depth))
}

fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let e = b - a;
    let len2 = e.dot(&e);
    if len2 < 1e-24 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&e) / len2).clamp(0.0, 1.0);
    (p - (a + e * t)).norm()
}

/// Distance between two convex polygons; zero when they overlap or touch.
pub fn polygon_distance(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    if polygon_overlap_mtv(a, b).is_some() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (poly, other) in [(a, b), (b, a)] {
        let n = other.len();
        for &v in poly {
            for i in 0..n {
                best = best.min(point_segment_distance(v, other[i], other[(i + 1) % n]));
            }
        }
    }
    best
}

/// Ray-segment intersection parameter along the ray, if any.
pub fn ray_segment(
    origin: Vector2<f64>,
    dir: Vector2<f64>,
    a: Vector2<f64>,
    b: Vector2<f64>,
) -> Option<f64> {
    let e = b - a;
    let denom = dir.x * (-e.y) - dir.y * (-e.x);
    if denom.abs() < 1e-15 {
        return None;
    }
    let rel = a - origin;
    let t = (rel.x * (-e.y) - rel.y * (-e.x)) / denom;
    let s = (dir.x * rel.y - dir.y * rel.x) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&s) {
        Some(t)
    } else {
        None
    }
}
