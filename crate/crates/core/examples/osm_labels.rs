//! Maps OpenStreetMap tags to a coarse building function. Buildings whose
//! tags disagree get no label.
//!
//! Run with `cargo run --example osm_labels`.

use geosift::osm::{default_table, homogenize_label};

fn main() {
    let table = default_table();
    let cases: [&[(&str, &str)]; 6] = [
        &[("building", "retail")],
        &[("building", "house")],
        &[("building", "church")],
        &[("building", "yes")],
        &[("building", "yes"), ("amenity", "restaurant")],
        &[("building", "house"), ("shop", "bakery")],
    ];
    for tags in cases {
        let label = homogenize_label(tags.iter().copied(), table);
        let shown: Vec<String> = tags.iter().map(|(k, v)| format!("{k}={v}")).collect();
        match label {
            Some(c) => println!("{:<36} -> {c}", shown.join(" ")),
            None => println!("{:<36} -> (none)", shown.join(" ")),
        }
    }
    println!("{} mapping entries loaded", table.entries().len());
}
