//! Casts a ray from the camera along its bearing and picks the first
//! building footprint it enters.
//!
//! Run with `cargo run --example sightline [bearing]`.

use geosift::geometry::GeoPoint;
use geosift::manifest::Thresholds;
use geosift::sightline::{filter_by_distance, reference_building, BuildingIndex, SightRay, DEFAULT_MAX_RANGE_M};
use geosift::synthetic::rectangle;

fn main() {
    let bearing: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.0);
    let camera = GeoPoint::new(48.137, 11.575);
    // rectangles in meters east/north of the camera
    let index = BuildingIndex::new(vec![
        rectangle("way/1", camera, -5.0, 10.0, 5.0, 20.0, &[("building", "retail")]),
        rectangle("way/2", camera, -20.0, 40.0, 20.0, 60.0, &[("building", "apartments")]),
        rectangle("way/3", camera, 150.0, -10.0, 170.0, 10.0, &[("building", "church")]),
        rectangle("way/4", camera, -10.0, -320.0, 10.0, -300.0, &[("building", "house")]),
    ]);
    let t_dist = Thresholds::default().t_dist;
    for b in [bearing, 90.0, 180.0, 270.0] {
        let ray = SightRay::new(camera, b, DEFAULT_MAX_RANGE_M);
        match reference_building(&ray, &index) {
            Some(a) => {
                let class = index.get(a.building).mapped_class;
                println!(
                    "bearing {b:>5.1}: {} at {:.1} m, class {:?}, within t_dist: {}",
                    a.building_id,
                    a.p_dist,
                    class,
                    filter_by_distance(a.p_dist, t_dist)
                );
            }
            None => println!("bearing {b:>5.1}: nothing within {DEFAULT_MAX_RANGE_M} m"),
        }
    }
}
