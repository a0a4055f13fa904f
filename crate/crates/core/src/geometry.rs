//! Planar geometry helpers and the local equirectangular projection.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// A WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        GeoPoint { lat, lon }
    }
}

/// Planar offset in meters, east and north of some origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;

    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
}

fn wrap_lon_delta(d: f64) -> f64 {
    if d > 180.0 {
        d - 360.0
    } else if d < -180.0 {
        d + 360.0
    } else {
        d
    }
}

/// Equirectangular projection of `point` into meters around `origin`.
///
/// Accurate to well under a meter within a few kilometers of the origin.
pub fn project_local(origin: GeoPoint, point: GeoPoint) -> Vec2 {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let dlon = wrap_lon_delta(point.lon - origin.lon);
    Vec2::new(
        dlon * origin.lat.to_radians().cos() * k,
        (point.lat - origin.lat) * k,
    )
}

/// Inverse of [`project_local`] for the same origin.
pub fn unproject_local(origin: GeoPoint, v: Vec2) -> GeoPoint {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    GeoPoint::new(
        origin.lat + v.y / k,
        origin.lon + v.x / (k * origin.lat.to_radians().cos()),
    )
}

/// Unit direction of a compass bearing (clockwise from north).
pub fn bearing_direction(bearing_deg: f64) -> Vec2 {
    let r = bearing_deg.to_radians();
    Vec2::new(r.sin(), r.cos())
}

const EPS: f64 = 1e-12;

/// Smallest parameter `t` in [0, 1] where the segment `0 -> end` touches the
/// closed segment `a -> b`.
pub fn segment_hit(end: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let d = b - a;
    let denom = end.cross(d);
    let scale = end.norm() * d.norm();
    if scale == 0.0 {
        // zero-length edge: a point
        if d.norm() == 0.0 {
            return point_on_segment_param(end, a);
        }
        return None;
    }
    if denom.abs() > EPS * scale {
        let t = a.cross(d) / denom;
        let u = a.cross(end) / denom;
        if (-EPS..=1.0 + EPS).contains(&t) && (-EPS..=1.0 + EPS).contains(&u) {
            return Some(t.clamp(0.0, 1.0));
        }
        return None;
    }
    // parallel: only collinear edges can touch
    if a.cross(end).abs() > EPS * end.norm() * a.norm().max(end.norm()) {
        return None;
    }
    let len2 = end.dot(end);
    let ta = a.dot(end) / len2;
    let tb = b.dot(end) / len2;
    let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
    if hi < -EPS || lo > 1.0 + EPS {
        return None;
    }
    Some(lo.clamp(0.0, 1.0))
}

fn point_on_segment_param(end: Vec2, p: Vec2) -> Option<f64> {
    let len2 = end.dot(end);
    let t = p.dot(end) / len2;
    let off = end.cross(p).abs() / len2.sqrt();
    ((-EPS..=1.0 + EPS).contains(&t) && off <= EPS * len2.sqrt()).then(|| t.clamp(0.0, 1.0))
}

/// Whether `p` lies on the closed segment `a -> b`.
fn on_segment(p: Vec2, a: Vec2, b: Vec2) -> bool {
    let d = b - a;
    let ap = p - a;
    let tol = EPS * d.norm().max(1.0);
    ap.cross(d).abs() <= tol * d.norm().max(1.0)
        && ap.dot(d) >= -tol
        && (p - b).dot(d) <= tol
}

/// Even-odd point-in-polygon over all rings. Boundary points count as inside.
pub fn contains_point(rings: &[Vec<Vec2>], p: Vec2) -> bool {
    let mut inside = false;
    for ring in rings {
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if on_segment(p, a, b) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

/// Whether two closed segments share at least one point.
pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    fn orient(p: Vec2, q: Vec2, r: Vec2) -> f64 {
        (q - p).cross(r - p)
    }
    fn within(p: Vec2, q: Vec2, r: Vec2) -> bool {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    }
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && within(a, b, c))
        || (o2 == 0.0 && within(a, b, d))
        || (o3 == 0.0 && within(c, d, a))
        || (o4 == 0.0 && within(c, d, b))
}

/// Closed ring (first vertex repeated last) without self-intersections.
///
/// Non-adjacent edges must not touch; adjacent edges must not fold back
/// onto each other.
pub fn ring_is_simple(ring: &[Vec2]) -> bool {
    let n = ring.len();
    if n < 4 || ring[0] != ring[n - 1] {
        return false;
    }
    let edges = n - 1;
    for i in 0..edges {
        let (a, b) = (ring[i], ring[i + 1]);
        if a == b {
            return false;
        }
        for j in i + 1..edges {
            let (c, d) = (ring[j], ring[j + 1]);
            let adjacent = j == i + 1 || (i == 0 && j == edges - 1);
            if adjacent {
                // shared vertex; reject only collinear fold-backs
                let (shared, p, q) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                let u = p - shared;
                let v = q - shared;
                if u.cross(v) == 0.0 && u.dot(v) > 0.0 {
                    return false;
                }
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Twice the signed area of a closed ring.
pub fn ring_area2(ring: &[Vec2]) -> f64 {
    ring.windows(2).map(|w| w[0].cross(w[1])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_projects_to_zero() {
        let o = GeoPoint::new(48.1, 11.5);
        assert_eq!(project_local(o, o), Vec2::new(0.0, 0.0));
    }

    #[test]
    fn one_millidegree_north() {
        // 0.001 deg of arc on R = 6371008.8 m: 111.19508 m
        let o = GeoPoint::new(10.0, 20.0);
        let p = project_local(o, GeoPoint::new(10.001, 20.0));
        assert!(p.x.abs() < 1e-9);
        assert!((p.y - 111.195).abs() < 0.01, "{}", p.y);
    }

    #[test]
    fn one_millidegree_east_at_sixty() {
        let o = GeoPoint::new(60.0, 5.0);
        let p = project_local(o, GeoPoint::new(60.0, 5.001));
        assert!((p.x - 55.597).abs() < 0.01, "{}", p.x);
        assert!(p.y.abs() < 1e-9);
    }

    #[test]
    fn unproject_inverts_project() {
        let o = GeoPoint::new(-33.9, 18.4);
        let v = Vec2::new(123.4, -456.7);
        let back = project_local(o, unproject_local(o, v));
        assert!((back.x - v.x).abs() < 1e-6 && (back.y - v.y).abs() < 1e-6);
    }

    #[test]
    fn antimeridian_wraps() {
        let o = GeoPoint::new(0.0, 179.9995);
        let p = project_local(o, GeoPoint::new(0.0, -179.9995));
        assert!((p.x - 111.195).abs() < 0.01, "{}", p.x);
    }

    #[test]
    fn hits() {
        let end = Vec2::new(0.0, 100.0);
        // crossing edge at y = 10
        assert_eq!(segment_hit(end, Vec2::new(-5.0, 10.0), Vec2::new(5.0, 10.0)), Some(0.1));
        // touching at a vertex
        assert_eq!(segment_hit(end, Vec2::new(0.0, 20.0), Vec2::new(5.0, 30.0)), Some(0.2));
        // behind the origin
        assert_eq!(segment_hit(end, Vec2::new(-5.0, -10.0), Vec2::new(5.0, -10.0)), None);
        // collinear overlap starting at 30
        assert_eq!(segment_hit(end, Vec2::new(0.0, 50.0), Vec2::new(0.0, 30.0)), Some(0.3));
        // parallel, offset
        assert_eq!(segment_hit(end, Vec2::new(1.0, 50.0), Vec2::new(1.0, 30.0)), None);
        // beyond the end
        assert_eq!(segment_hit(end, Vec2::new(-5.0, 110.0), Vec2::new(5.0, 110.0)), None);
    }

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Vec2> {
        vec![
            Vec2::new(x0, y0),
            Vec2::new(x0 + s, y0),
            Vec2::new(x0 + s, y0 + s),
            Vec2::new(x0, y0 + s),
            Vec2::new(x0, y0),
        ]
    }

    #[test]
    fn point_in_polygon_with_hole() {
        let rings = vec![square(0.0, 0.0, 10.0), square(3.0, 3.0, 4.0)];
        assert!(contains_point(&rings, Vec2::new(1.0, 1.0)));
        assert!(!contains_point(&rings, Vec2::new(5.0, 5.0)));
        assert!(contains_point(&rings, Vec2::new(3.0, 5.0)));
        assert!(contains_point(&rings, Vec2::new(0.0, 5.0)));
        assert!(!contains_point(&rings, Vec2::new(-1.0, 5.0)));
    }

    #[test]
    fn simple_rings() {
        assert!(ring_is_simple(&square(0.0, 0.0, 1.0)));
        let bowtie = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(0.0, 0.0),
        ];
        assert!(!ring_is_simple(&bowtie));
        let open = &square(0.0, 0.0, 1.0)[..4];
        assert!(!ring_is_simple(open));
        let spike = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 0.0),
        ];
        assert!(!ring_is_simple(&spike));
    }
}
