//! Drops images whose coordinates are shared with another image, a sign of
//! a place-level or snapped geotag.
//!
//! Run with `cargo run --example unique_location`.

use geosift::geoindex::{build_index, unique_location_filter};
use geosift::manifest::ImageRecord;

fn main() {
    let records = vec![
        ImageRecord::new("cafe-1", 48.137154, 11.576124),
        ImageRecord::new("cafe-2", 48.137154, 11.576124),
        ImageRecord::new("church", 48.138620, 11.573460),
        ImageRecord::new("square-1", 48.139100, 11.580000),
        ImageRecord::new("square-2", 48.139100, 11.580000),
        ImageRecord::new("square-3", 48.139100, 11.580000),
        ImageRecord::new("near-square", 48.139100, 11.5800001),
    ];
    let unique = unique_location_filter(&build_index(&records));
    for r in &records {
        let verdict = if unique.contains(&r.image_id) { "unique" } else { "shared" };
        println!("{:<12} ({:.7}, {:.7})  {verdict}", r.image_id, r.lat, r.lon);
    }
}
