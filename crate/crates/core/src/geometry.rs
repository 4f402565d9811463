//! Planar convex geometry: points, halfplanes, convex polygons and the
//! metric functionals evaluated on them (area, perimeter, centroid,
//! diameter, width, Hausdorff distance).
//!
//! Conventions:
//! - Polygons store their vertices counterclockwise. An empty polygon is a
//!   first-class value (`ConvexPolygon::empty()`), not an error; degenerate
//!   clip results collapse to it.
//! - Halfplanes are `{x : normal · x <= offset}` with a unit normal.
//! - Canonicalization merges duplicate and collinear vertices at a relative
//!   tolerance of `COLLINEAR_REL_TOL` times the bounding-box diagonal.

use std::fmt;
use thiserror::Error;

/// Relative tolerance for merging collinear vertices, scaled by the
/// bounding-box diagonal of the polygon being canonicalized.
pub const COLLINEAR_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("operation undefined on empty polygon")]
    EmptyPolygon,
    #[error("halfplane normal must be nonzero")]
    ZeroNormal,
    #[error("polygon parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A point (or vector) in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn add(self, other: Point2) -> Point2 {
        Point2::new(self.x + other.x, self.y + other.y)
    }

    pub fn sub(self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the cross product, positive when `other` is
    /// counterclockwise from `self`.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dist(self, other: Point2) -> f64 {
        self.sub(other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Closed halfplane `{x : normal · x <= offset}` with `|normal| = 1`.
#[derive(Debug, Clone, Copy)]
pub struct HalfPlane {
    pub normal: Point2,
    pub offset: f64,
}

impl HalfPlane {
    /// Builds a halfplane, normalizing the given normal vector.
    pub fn new(normal: Point2, offset: f64) -> Result<Self, GeometryError> {
        let len = normal.norm();
        if !(len > 0.0) || !len.is_finite() {
            return Err(GeometryError::ZeroNormal);
        }
        Ok(Self {
            normal: normal.scale(1.0 / len),
            offset: offset / len,
        })
    }

    /// Signed distance of `p` from the boundary line; negative inside.
    pub fn signed_distance(&self, p: Point2) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// The complementary halfplane `{x : normal · x >= offset}`.
    pub fn complement(&self) -> HalfPlane {
        HalfPlane {
            normal: self.normal.scale(-1.0),
            offset: -self.offset,
        }
    }
}

/// Convex polygon with counterclockwise vertices, canonicalized on
/// construction. The empty polygon has no vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
}

impl ConvexPolygon {
    pub fn empty() -> Self {
        Self { vertices: Vec::new() }
    }

    /// Builds a polygon from vertices in convex position (either
    /// orientation); collinear triples are merged and orientation is fixed
    /// to counterclockwise. Degenerate input collapses to the empty polygon.
    pub fn new(vertices: Vec<Point2>) -> Self {
        let mut verts = vertices;
        if signed_area(&verts) < 0.0 {
            verts.reverse();
        }
        canonicalize(&mut verts);
        Self { vertices: verts }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).max(0.0)
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        if n < 2 {
            return 0.0;
        }
        (0..n)
            .map(|i| self.vertices[i].dist(self.vertices[(i + 1) % n]))
            .sum()
    }

    /// Area-weighted centroid.
    pub fn centroid(&self) -> Result<Point2, GeometryError> {
        if self.is_empty() {
            return Err(GeometryError::EmptyPolygon);
        }
        let n = self.vertices.len();
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut a = 0.0;
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = p.cross(q);
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
            a += w;
        }
        Ok(Point2::new(cx / (3.0 * a), cy / (3.0 * a)))
    }

    /// Maximum pairwise vertex distance.
    pub fn diameter(&self) -> Result<f64, GeometryError> {
        if self.is_empty() {
            return Err(GeometryError::EmptyPolygon);
        }
        let mut best: f64 = 0.0;
        for (i, p) in self.vertices.iter().enumerate() {
            for q in &self.vertices[i + 1..] {
                best = best.max(p.dist(*q));
            }
        }
        Ok(best)
    }

    /// Minimum directional extent, computed over edge normals (rotating
    /// calipers: the minimizing direction is perpendicular to some edge).
    pub fn width(&self) -> Result<f64, GeometryError> {
        if self.is_empty() {
            return Err(GeometryError::EmptyPolygon);
        }
        let n = self.vertices.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let e = b.sub(a);
            let len = e.norm();
            if len == 0.0 {
                continue;
            }
            let extent = self
                .vertices
                .iter()
                .map(|v| e.cross(v.sub(a)).abs() / len)
                .fold(0.0, f64::max);
            best = best.min(extent);
        }
        Ok(best)
    }

    pub fn bounding_box(&self) -> Option<(Point2, Point2)> {
        bounding_box(&self.vertices)
    }

    /// Length of the bounding-box diagonal; 0 for empty polygons.
    pub fn bbox_diagonal(&self) -> f64 {
        match self.bounding_box() {
            Some((lo, hi)) => hi.dist(lo),
            None => 0.0,
        }
    }

    /// Point-in-polygon test with an absolute slack on each edge.
    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            b.sub(a).cross(p.sub(a)) >= -tol * b.sub(a).norm()
        })
    }

    /// Distance from `p` to this polygon (0 if `p` lies inside).
    pub fn distance_to_point(&self, p: Point2) -> Result<f64, GeometryError> {
        if self.is_empty() {
            return Err(GeometryError::EmptyPolygon);
        }
        if self.contains(p, 0.0) {
            return Ok(0.0);
        }
        let n = self.vertices.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            best = best.min(point_segment_distance(p, a, b));
        }
        Ok(best)
    }

    pub fn translate(&self, v: Point2) -> ConvexPolygon {
        ConvexPolygon {
            vertices: self.vertices.iter().map(|p| p.add(v)).collect(),
        }
    }
}

fn signed_area(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|i| vertices[i].cross(vertices[(i + 1) % n]))
        .sum::<f64>()
}

fn bounding_box(vertices: &[Point2]) -> Option<(Point2, Point2)> {
    let first = vertices.first()?;
    let mut lo = *first;
    let mut hi = *first;
    for v in vertices {
        lo.x = lo.x.min(v.x);
        lo.y = lo.y.min(v.y);
        hi.x = hi.x.max(v.x);
        hi.y = hi.y.max(v.y);
    }
    Some((lo, hi))
}

/// Merges duplicate and collinear vertices in place; clears the list when
/// the result is degenerate. Runs to a fixed point so that canonical lists
/// pass through unchanged.
fn canonicalize(vertices: &mut Vec<Point2>) {
    let diag = match bounding_box(vertices) {
        Some((lo, hi)) => hi.dist(lo),
        None => {
            vertices.clear();
            return;
        }
    };
    let tol = COLLINEAR_REL_TOL * diag;
    loop {
        let n = vertices.len();
        if n < 3 {
            vertices.clear();
            return;
        }
        let mut removed = false;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let prev = vertices[(i + n - 1) % n];
            let cur = vertices[i];
            let next = vertices[(i + 1) % n];
            if cur.dist(prev) <= tol && i != 0 {
                removed = true;
                continue;
            }
            // distance of cur from the chord prev-next
            let chord = next.sub(prev);
            let clen = chord.norm();
            if clen > 0.0 && chord.cross(cur.sub(prev)).abs() / clen <= tol {
                removed = true;
                continue;
            }
            out.push(cur);
        }
        *vertices = out;
        if !removed {
            break;
        }
    }
    if signed_area(vertices) <= 0.0 {
        vertices.clear();
    }
}

/// Clips a convex polygon against a halfplane (Sutherland-Hodgman step).
/// Returns the empty polygon when the intersection has no area. Clipping a
/// polygon already inside `h` returns the identical vertex list.
pub fn clip(poly: &ConvexPolygon, h: &HalfPlane) -> ConvexPolygon {
    if poly.is_empty() {
        return ConvexPolygon::empty();
    }
    let verts = poly.vertices();
    let n = verts.len();
    let eps = COLLINEAR_REL_TOL * poly.bbox_diagonal().max(h.offset.abs());
    let d: Vec<f64> = verts.iter().map(|v| h.signed_distance(*v)).collect();
    if d.iter().all(|&di| di <= eps) {
        return poly.clone();
    }
    let mut out: Vec<Point2> = Vec::with_capacity(n + 2);
    for i in 0..n {
        let j = (i + 1) % n;
        let (p, q) = (verts[i], verts[j]);
        let (dp, dq) = (d[i], d[j]);
        if dp <= eps {
            out.push(p);
        }
        // crossing edge: insert the boundary intersection; endpoints within
        // the tolerance band count as boundary points and need no extra vertex
        if (dp > eps && dq < -eps) || (dp < -eps && dq > eps) {
            let t = dp / (dp - dq);
            out.push(p.add(q.sub(p).scale(t)));
        }
    }
    ConvexPolygon::new(out)
}

fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b.sub(a);
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.dist(a.add(ab.scale(t)))
}

/// Hausdorff distance between two nonempty convex polygons. For convex
/// sets the supremum of the distance function is attained at a vertex, so
/// only vertices need to be examined.
pub fn hausdorff_distance(
    a: &ConvexPolygon,
    b: &ConvexPolygon,
) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptyPolygon);
    }
    let mut best: f64 = 0.0;
    for v in a.vertices() {
        best = best.max(b.distance_to_point(*v)?);
    }
    for v in b.vertices() {
        best = best.max(a.distance_to_point(*v)?);
    }
    Ok(best)
}

/// Parses the polygon text format: one `x y` pair per line, CCW order,
/// `#` starts a comment, blank lines ignored.
pub fn parse_polygon(text: &str) -> Result<ConvexPolygon, GeometryError> {
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>, idx: usize| -> Result<f64, GeometryError> {
            tok.ok_or(GeometryError::Parse {
                line: idx + 1,
                msg: "expected two coordinates".into(),
            })?
            .parse::<f64>()
            .map_err(|e| GeometryError::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })
        };
        let x = parse(it.next(), idx)?;
        let y = parse(it.next(), idx)?;
        if it.next().is_some() {
            return Err(GeometryError::Parse {
                line: idx + 1,
                msg: "trailing tokens after coordinates".into(),
            });
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(GeometryError::Parse {
                line: idx + 1,
                msg: "coordinates must be finite".into(),
            });
        }
        points.push(Point2::new(x, y));
    }
    if points.len() < 3 {
        return Err(GeometryError::Parse {
            line: text.lines().count(),
            msg: format!("need at least 3 vertices, got {}", points.len()),
        });
    }
    Ok(ConvexPolygon::new(points))
}

/// Formats a polygon in the same text format accepted by [`parse_polygon`].
pub fn format_polygon(poly: &ConvexPolygon) -> String {
    let mut s = String::new();
    for v in poly.vertices() {
        s.push_str(&format!("{} {}\n", v.x, v.y));
    }
    s
}

/// Axis-aligned unit square `[0,1]^2`; ubiquitous in tests.
pub fn unit_square() -> ConvexPolygon {
    ConvexPolygon::new(vec![
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.0),
        Point2::new(1.0, 1.0),
        Point2::new(0.0, 1.0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn square() -> ConvexPolygon {
        unit_square()
    }

    fn halfplane(nx: f64, ny: f64, off: f64) -> HalfPlane {
        HalfPlane::new(Point2::new(nx, ny), off).unwrap()
    }

    #[test]
    fn clip_axis_aligned_cut() {
        let r = clip(&square(), &halfplane(1.0, 0.0, 0.5));
        assert_abs_diff_eq!(r.area(), 0.5, epsilon = 1e-12);
        let (lo, hi) = r.bounding_box().unwrap();
        assert_abs_diff_eq!(lo.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi.x, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn clip_containing_halfplane_is_identity() {
        let r = clip(&square(), &halfplane(1.0, 0.0, 2.0));
        assert_eq!(r.vertices(), square().vertices());
    }

    #[test]
    fn clip_disjoint_halfplane_is_empty() {
        let r = clip(&square(), &halfplane(1.0, 0.0, -1.0));
        assert!(r.is_empty());
    }

    #[test]
    fn clip_is_idempotent() {
        let h = halfplane(1.0, 0.3, 0.6);
        let once = clip(&square(), &h);
        let twice = clip(&once, &h);
        assert_eq!(once.vertices(), twice.vertices());
    }

    #[test]
    fn clip_splits_area() {
        let h = halfplane(0.7, -0.2, 0.4);
        let a = clip(&square(), &h).area();
        let b = clip(&square(), &h.complement()).area();
        assert_abs_diff_eq!(a + b, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn square_functionals() {
        let s = square();
        assert_abs_diff_eq!(s.area(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.perimeter(), 4.0, epsilon = 1e-15);
        let c = s.centroid().unwrap();
        assert_abs_diff_eq!(c.x, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.y, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.diameter().unwrap(), 2.0_f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.width().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rectangle_perimeter() {
        let r = ConvexPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 0.5),
            Point2::new(0.0, 0.5),
        ]);
        assert_abs_diff_eq!(r.perimeter(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn regular_256gon_area_near_pi() {
        // analytic n-gon area inscribed in the unit circle: n/2 * sin(2*pi/n)
        let n = 256;
        let verts: Vec<Point2> = (0..n)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                Point2::new(t.cos(), t.sin())
            })
            .collect();
        let poly = ConvexPolygon::new(verts);
        let exact = 0.5 * n as f64 * (2.0 * std::f64::consts::PI / n as f64).sin();
        assert_abs_diff_eq!(poly.area(), exact, epsilon = 1e-12);
        // analytic gap to pi is 2*pi^3 / (3*n^2) ~ 3.154e-4
        assert!((poly.area() - std::f64::consts::PI).abs() < 3.2e-4);
    }

    #[test]
    fn hausdorff_identity_and_translation() {
        let s = square();
        assert_abs_diff_eq!(hausdorff_distance(&s, &s).unwrap(), 0.0, epsilon = 1e-15);
        let t = s.translate(Point2::new(0.3, 0.0));
        assert_abs_diff_eq!(hausdorff_distance(&s, &t).unwrap(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn hausdorff_square_vs_wide_rectangle() {
        // brute-force oracle: dense boundary samples of both polygons
        let s = square();
        let r = ConvexPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(0.0, 1.0),
        ]);
        let d = hausdorff_distance(&s, &r).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-12);

        let sample = |p: &ConvexPolygon, k: usize| -> Vec<Point2> {
            let vs = p.vertices();
            let n = vs.len();
            let mut pts = Vec::new();
            for i in 0..n {
                let (a, b) = (vs[i], vs[(i + 1) % n]);
                for j in 0..k {
                    let t = j as f64 / k as f64;
                    pts.push(a.add(b.sub(a).scale(t)));
                }
            }
            pts
        };
        let one_sided = |from: &ConvexPolygon, to: &ConvexPolygon| -> f64 {
            sample(from, 200)
                .iter()
                .map(|p| to.distance_to_point(*p).unwrap())
                .fold(0.0, f64::max)
        };
        let brute = one_sided(&s, &r).max(one_sided(&r, &s));
        assert_abs_diff_eq!(d, brute, epsilon = 1e-2);
    }

    #[test]
    fn hausdorff_empty_is_error() {
        assert!(hausdorff_distance(&square(), &ConvexPolygon::empty()).is_err());
    }

    #[test]
    fn collinear_vertices_merged() {
        let p = ConvexPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(0.5, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ]);
        assert_eq!(p.vertices().len(), 4);
    }

    #[test]
    fn clockwise_input_reversed() {
        let p = ConvexPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 0.0),
        ]);
        assert!(p.area() > 0.0);
    }

    #[test]
    fn rigid_motion_invariance() {
        let p = ConvexPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.3),
            Point2::new(1.7, 1.9),
            Point2::new(0.2, 1.4),
        ]);
        let (c, s) = (0.83_f64.cos(), 0.83_f64.sin());
        let moved = ConvexPolygon::new(
            p.vertices()
                .iter()
                .map(|v| Point2::new(c * v.x - s * v.y + 5.0, s * v.x + c * v.y - 3.0))
                .collect(),
        );
        assert!((p.area() - moved.area()).abs() <= 1e-10 * p.area());
        assert!((p.perimeter() - moved.perimeter()).abs() <= 1e-10 * p.perimeter());
    }

    #[test]
    fn intersection_convergence_smoke() {
        // two overlapping squares; perturb one and watch the Hausdorff
        // distance of the intersections shrink with the perturbation
        let a = square();
        let b = square().translate(Point2::new(0.4, 0.2));
        let intersect = |p: &ConvexPolygon, q: &ConvexPolygon| -> ConvexPolygon {
            let mut acc = p.clone();
            let vs = q.vertices().to_vec();
            let n = vs.len();
            for i in 0..n {
                let edge = vs[(i + 1) % n].sub(vs[i]);
                let normal = Point2::new(edge.y, -edge.x);
                let h = HalfPlane::new(normal, normal.dot(vs[i])).unwrap();
                acc = clip(&acc, &h);
            }
            acc
        };
        let base = intersect(&a, &b);
        let mut last = f64::INFINITY;
        for scale in [1e-2, 1e-4, 1e-6] {
            let perturbed = intersect(&a, &b.translate(Point2::new(scale, -scale)));
            let d = hausdorff_distance(&base, &perturbed).unwrap();
            assert!(d < last);
            last = d;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn parse_roundtrip_and_errors() {
        let text = "# a square\n0 0\n1 0 # corner\n1 1\n0 1\n";
        let p = parse_polygon(text).unwrap();
        assert_eq!(p.vertices().len(), 4);
        let again = parse_polygon(&format_polygon(&p)).unwrap();
        assert_eq!(p, again);

        let err = parse_polygon("0 0\nnot numbers\n1 1\n").unwrap_err();
        match err {
            GeometryError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
