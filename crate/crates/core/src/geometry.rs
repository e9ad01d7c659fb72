//! Planar convex hulls and containment tests on the complex plane.

use nalgebra::Complex;

pub type Point = Complex<f64>;

/// Cross-product tolerance below which three points are treated as collinear.
pub const COLLINEAR_TOL: f64 = 1e-10;

/// Boundary tolerance for containment tests.
pub const CONTAINS_TOL: f64 = 1e-9;

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.re - o.re) * (b.im - o.im) - (a.im - o.im) * (b.re - o.re)
}

/// Vertices of the convex hull, counterclockwise, starting from the
/// lowest-leftmost point. Collinear boundary points are dropped. A single
/// distinct point yields one vertex; a collinear set yields its two extremes.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    pts.dedup_by(|a, b| (a.re - b.re).abs() <= COLLINEAR_TOL && (a.im - b.im).abs() <= COLLINEAR_TOL);
    if pts.len() <= 2 {
        return pts;
    }

    let mut lower: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= COLLINEAR_TOL {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= COLLINEAR_TOL {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() == 2 && (lower[0] - lower[1]).norm() <= COLLINEAR_TOL {
        lower.truncate(1);
    }
    lower
}

/// Distance from `z` to the segment `[a, b]`.
fn segment_distance(a: Point, b: Point, z: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    if len2 == 0.0 {
        return (z - a).norm();
    }
    let t = (((z - a) * ab.conj()).re / len2).clamp(0.0, 1.0);
    (z - (a + ab * t)).norm()
}

/// Containment in a convex polygon given counterclockwise; the boundary
/// counts as inside within [`CONTAINS_TOL`].
pub fn point_in_convex_polygon(hull: &[Point], z: Point) -> bool {
    match hull.len() {
        0 => false,
        1 => (z - hull[0]).norm() <= CONTAINS_TOL,
        2 => segment_distance(hull[0], hull[1], z) <= CONTAINS_TOL,
        n => (0..n).all(|i| {
            let a = hull[i];
            let b = hull[(i + 1) % n];
            let len = (b - a).norm().max(f64::MIN_POSITIVE);
            cross(a, b, z) / len >= -CONTAINS_TOL
        }),
    }
}

/// Unsigned distance from `z` to the polygon boundary.
pub fn boundary_distance(hull: &[Point], z: Point) -> f64 {
    match hull.len() {
        0 => f64::INFINITY,
        1 => (z - hull[0]).norm(),
        n => (0..n)
            .map(|i| segment_distance(hull[i], hull[(i + 1) % n], z))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Arithmetic mean of the vertices (lies inside any convex polygon).
pub fn vertex_centroid(hull: &[Point]) -> Option<Point> {
    if hull.is_empty() {
        return None;
    }
    let sum: Point = hull.iter().sum();
    Some(sum / hull.len() as f64)
}

/// Polygon closed under complex conjugation: hull of the points and their conjugates.
pub fn conjugate_closed_hull(points: &[Point]) -> Vec<Point> {
    let mut all = Vec::with_capacity(points.len() * 2);
    for &p in points {
        all.push(p);
        all.push(p.conj());
    }
    convex_hull(&all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Point {
        Complex::new(re, im)
    }

    #[test]
    fn square_with_interior_and_edge_points() {
        let pts = [c(0.0, 0.0), c(1.0, 0.0), c(1.0, 1.0), c(0.0, 1.0), c(0.5, 0.5), c(0.5, 0.0)];
        let hull = convex_hull(&pts);
        assert_eq!(hull, vec![c(0.0, 0.0), c(1.0, 0.0), c(1.0, 1.0), c(0.0, 1.0)]);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(convex_hull(&[c(1.0, 0.0); 5]), vec![c(1.0, 0.0)]);
        assert_eq!(convex_hull(&[c(2.0, 0.0), c(1.0, 0.0), c(3.0, 0.0)]), vec![c(1.0, 0.0), c(3.0, 0.0)]);
        assert!(convex_hull(&[]).is_empty());
    }

    #[test]
    fn containment() {
        let hull = convex_hull(&[c(0.0, -0.5), c(1.0, -0.5), c(1.0, 0.5), c(0.0, 0.5)]);
        assert!(point_in_convex_polygon(&hull, c(0.5, 0.0)));
        assert!(point_in_convex_polygon(&hull, c(1.0, 0.0)));
        assert!(!point_in_convex_polygon(&hull, c(1.0 + 1e-6, 0.0)));
        let centroid = vertex_centroid(&hull).unwrap();
        assert!(point_in_convex_polygon(&hull, centroid));
        assert!((boundary_distance(&hull, c(0.5, 0.0)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn segment_and_point_hulls() {
        let seg = [c(1.0, 0.0), c(3.0, 0.0)];
        assert!(point_in_convex_polygon(&seg, c(2.0, 0.0)));
        assert!(!point_in_convex_polygon(&seg, c(2.0, 0.1)));
        assert!(point_in_convex_polygon(&[c(1.0, 0.0)], c(1.0, 0.0)));
    }

    #[test]
    fn conjugate_closure_is_symmetric() {
        let hull = conjugate_closed_hull(&[c(0.1, 0.0), c(0.1, 1.0), c(2.0, 1.5), c(3.0, 0.0)]);
        for v in &hull {
            assert!(hull.iter().any(|w| (w - v.conj()).norm() < 1e-12));
        }
    }
}
