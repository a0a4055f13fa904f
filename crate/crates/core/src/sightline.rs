//! Sightline stage: cast a ray from the camera along its compass bearing and
//! take the nearest building it meets.
//!
//! The building index stores bounding boxes in degrees. For a fixed origin
//! the local projection is affine in (lat, lon), so the ray is a straight
//! segment in degree space too and its bounding box selects exactly the
//! candidates the projected test needs.

use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, AABB};

use crate::geometry::{
    bearing_direction, contains_point, project_local, ring_area2, segment_hit, unproject_local,
    GeoPoint, Vec2,
};
use crate::manifest::{normalize_bearing, FunctionClass};
use crate::osm::BuildingFootprint;

pub const DEFAULT_MAX_RANGE_M: f64 = 500.0;

// ~1 cm of padding around query boxes against rounding in the inverse projection
const QUERY_PAD_DEG: f64 = 1e-7;

/// Line of sight from a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SightRay {
    pub origin: GeoPoint,
    /// Degrees clockwise from north, in [0, 360).
    pub bearing: f64,
    /// Ray length in meters.
    pub max_range: f64,
}

impl SightRay {
    pub fn new(origin: GeoPoint, bearing: f64, max_range: f64) -> Self {
        assert!(max_range > 0.0, "max_range must be positive");
        SightRay {
            origin,
            bearing: normalize_bearing(bearing),
            max_range,
        }
    }

    /// Ray end in local meters.
    pub fn end(&self) -> Vec2 {
        let d = bearing_direction(self.bearing);
        Vec2::new(d.x * self.max_range, d.y * self.max_range)
    }
}

/// A building the ray selected.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Position of the building in the index.
    pub building: usize,
    pub building_id: String,
    /// Meters from the camera to where the ray first meets the building.
    pub p_dist: f64,
}

type BoxEntry = GeomWithData<Rectangle<[f64; 2]>, usize>;

/// R-tree over building bounding boxes.
#[derive(Debug, Clone)]
pub struct BuildingIndex {
    buildings: Vec<BuildingFootprint>,
    tree: RTree<BoxEntry>,
}

impl BuildingIndex {
    pub fn new(buildings: Vec<BuildingFootprint>) -> Self {
        let items = buildings
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.polygons.is_empty())
            .map(|(i, b)| {
                let [x0, y0, x1, y1] = b.bbox();
                GeomWithData::new(Rectangle::from_corners([x0, y0], [x1, y1]), i)
            })
            .collect();
        BuildingIndex {
            buildings,
            tree: RTree::bulk_load(items),
        }
    }

    pub fn buildings(&self) -> &[BuildingFootprint] {
        &self.buildings
    }

    pub fn get(&self, i: usize) -> &BuildingFootprint {
        &self.buildings[i]
    }

    pub fn len(&self) -> usize {
        self.buildings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buildings.is_empty()
    }

    /// Buildings whose bounding box meets the ray's bounding box.
    pub fn candidates(&self, ray: &SightRay) -> Vec<usize> {
        let end = unproject_local(ray.origin, ray.end());
        let lo = [
            ray.origin.lon.min(end.lon) - QUERY_PAD_DEG,
            ray.origin.lat.min(end.lat) - QUERY_PAD_DEG,
        ];
        let hi = [
            ray.origin.lon.max(end.lon) + QUERY_PAD_DEG,
            ray.origin.lat.max(end.lat) + QUERY_PAD_DEG,
        ];
        let mut out: Vec<usize> = self
            .tree
            .locate_in_envelope_intersecting(AABB::from_corners(lo, hi))
            .map(|e| e.data)
            .collect();
        out.sort_unstable();
        out
    }
}

/// Distance along the ray to a building, `None` if the ray misses it.
///
/// Zero when the camera stands inside or on the footprint.
pub fn hit_distance(ray: &SightRay, building: &BuildingFootprint) -> Option<f64> {
    let end = ray.end();
    let mut best: Option<f64> = None;
    for poly in &building.polygons {
        let rings: Vec<Vec<Vec2>> = poly
            .rings()
            .map(|r| r.iter().map(|p| project_local(ray.origin, *p)).collect())
            .collect();
        if rings[0].len() < 4 || ring_area2(&rings[0]) == 0.0 {
            log::warn!("skipping degenerate polygon of building {}", building.building_id);
            continue;
        }
        if contains_point(&rings, Vec2::default()) {
            return Some(0.0);
        }
        for ring in &rings {
            for w in ring.windows(2) {
                if let Some(t) = segment_hit(end, w[0], w[1]) {
                    let d = t * ray.max_range;
                    if best.is_none_or(|b| d < b) {
                        best = Some(d);
                    }
                }
            }
        }
    }
    best.map(|d| d.min(ray.max_range))
}

/// The nearest building the ray meets.
///
/// Equal distances go to the smaller building id, so the result does not
/// depend on index layout or insertion order.
pub fn reference_building(ray: &SightRay, index: &BuildingIndex) -> Option<Assignment> {
    let mut best: Option<(f64, usize)> = None;
    for i in index.candidates(ray) {
        let Some(d) = hit_distance(ray, index.get(i)) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((bd, bi)) => {
                d < bd || (d == bd && index.get(i).building_id < index.get(bi).building_id)
            }
        };
        if better {
            best = Some((d, i));
        }
    }
    best.map(|(p_dist, i)| Assignment {
        building: i,
        building_id: index.get(i).building_id.clone(),
        p_dist,
    })
}

/// Distance gate; `t_dist` is an upper limit.
pub fn filter_by_distance(p_dist: f64, t_dist: f64) -> bool {
    p_dist <= t_dist
}

/// Label gate: passes with the building's class when it has one.
pub fn require_labeled(building: &BuildingFootprint) -> Option<FunctionClass> {
    building.mapped_class
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::osm::PolygonRings;
    use rand::{Rng, SeedableRng};

    const ORIGIN: GeoPoint = GeoPoint {
        lat: 48.137,
        lon: 11.575,
    };

    fn rect(id: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> BuildingFootprint {
        let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)];
        BuildingFootprint {
            building_id: id.into(),
            polygons: vec![PolygonRings {
                exterior: corners
                    .iter()
                    .map(|&(x, y)| unproject_local(ORIGIN, Vec2::new(x, y)))
                    .collect(),
                interiors: vec![],
            }],
            tags: Default::default(),
            mapped_class: None,
        }
    }

    #[test]
    fn square_due_north() {
        let idx = BuildingIndex::new(vec![rect("b", -5.0, 10.0, 5.0, 20.0)]);
        let a = reference_building(&SightRay::new(ORIGIN, 0.0, 500.0), &idx).unwrap();
        assert_eq!(a.building_id, "b");
        assert!((a.p_dist - 10.0).abs() < 0.01, "{}", a.p_dist);
        assert!(reference_building(&SightRay::new(ORIGIN, 180.0, 500.0), &idx).is_none());
    }

    #[test]
    fn nearest_of_several() {
        let idx = BuildingIndex::new(vec![
            rect("far", -5.0, 60.0, 5.0, 70.0),
            rect("near", -5.0, 30.0, 5.0, 40.0),
            rect("side", 20.0, 0.0, 30.0, 10.0),
        ]);
        let a = reference_building(&SightRay::new(ORIGIN, 0.0, 500.0), &idx).unwrap();
        assert_eq!(a.building_id, "near");
        assert!((a.p_dist - 30.0).abs() < 1e-6);
    }

    #[test]
    fn camera_inside_gives_zero() {
        let idx = BuildingIndex::new(vec![rect("home", -5.0, -5.0, 5.0, 5.0), rect("n", -5.0, 10.0, 5.0, 20.0)]);
        let a = reference_building(&SightRay::new(ORIGIN, 0.0, 500.0), &idx).unwrap();
        assert_eq!((a.building_id.as_str(), a.p_dist), ("home", 0.0));
    }

    #[test]
    fn out_of_range_is_missed() {
        let idx = BuildingIndex::new(vec![rect("b", -5.0, 600.0, 5.0, 620.0)]);
        assert!(reference_building(&SightRay::new(ORIGIN, 0.0, 500.0), &idx).is_none());
        let a = reference_building(&SightRay::new(ORIGIN, 0.0, 700.0), &idx).unwrap();
        assert!((a.p_dist - 600.0).abs() < 1e-6);
    }

    #[test]
    fn vertex_touch_counts() {
        // diamond whose left corner sits exactly on the ray
        let pts = [(0.0, 10.0), (5.0, 15.0), (0.0, 20.0), (-5.0, 15.0), (0.0, 10.0)];
        let mut b = rect("d", 0.0, 0.0, 1.0, 1.0);
        b.polygons[0].exterior = pts.iter().map(|&(x, y)| unproject_local(ORIGIN, Vec2::new(x, y))).collect();
        let idx = BuildingIndex::new(vec![b]);
        let a = reference_building(&SightRay::new(ORIGIN, 0.0, 100.0), &idx).unwrap();
        assert!((a.p_dist - 10.0).abs() < 1e-6);
    }

    #[test]
    fn distance_and_label_gates() {
        assert!(filter_by_distance(10.0, 250.0));
        assert!(filter_by_distance(250.0, 250.0));
        assert!(!filter_by_distance(251.0, 250.0));
        let mut b = rect("b", 0.0, 0.0, 1.0, 1.0);
        assert_eq!(require_labeled(&b), None);
        b.mapped_class = Some(FunctionClass::Commercial);
        assert_eq!(require_labeled(&b), Some(FunctionClass::Commercial));
    }

    #[test]
    fn labeled_count_matches_direct_count() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let buildings: Vec<_> = (0..20)
            .map(|i| {
                let mut b = rect(&format!("b{i}"), i as f64 * 20.0, 0.0, i as f64 * 20.0 + 10.0, 10.0);
                if rng.gen_bool(0.5) {
                    b.mapped_class = Some(FunctionClass::ALL[rng.gen_range(0..3)]);
                }
                b
            })
            .collect();
        let assignments: Vec<usize> = (0..100).map(|_| rng.gen_range(0..20)).collect();
        let passed = assignments.iter().filter(|&&i| require_labeled(&buildings[i]).is_some()).count();
        let expected = assignments.iter().filter(|&&i| buildings[i].mapped_class.is_some()).count();
        assert_eq!(passed, expected);
    }

    #[test]
    fn distance_sweep_is_monotone() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        let dists: Vec<f64> = (0..300).map(|_| rng.gen_range(0.0..500.0)).collect();
        let mut last = 0;
        for t in (0..=50).map(|k| k as f64 * 10.0) {
            let n = dists.iter().filter(|&&d| filter_by_distance(d, t)).count();
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn holes_are_not_inside() {
        let mut b = rect("court", -20.0, -20.0, 20.0, 20.0);
        let hole = [(-5.0, -5.0), (5.0, -5.0), (5.0, 5.0), (-5.0, 5.0), (-5.0, -5.0)];
        b.polygons[0].interiors = vec![hole.iter().map(|&(x, y)| unproject_local(ORIGIN, Vec2::new(x, y))).collect()];
        let idx = BuildingIndex::new(vec![b]);
        let a = reference_building(&SightRay::new(ORIGIN, 0.0, 100.0), &idx).unwrap();
        assert!((a.p_dist - 5.0).abs() < 1e-6, "{}", a.p_dist);
    }
}
