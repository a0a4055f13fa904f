//! Reads the camera bearing from EXIF GPS tags. Images without one are
//! dropped.
//!
//! Run with `cargo run --example exif_direction [FILE...]`. Without
//! arguments it parses a few generated blobs.

use geosift::exif::{filter_by_direction, parse_exif, DirectionRef};
use geosift::synthetic::{gps_tiff, tiff_without_gps};

fn report(name: &str, bytes: &[u8]) {
    match parse_exif(bytes) {
        Ok(gps) => {
            let out = filter_by_direction(Some(&gps));
            match out.bearing {
                Some(b) => println!("{name}: bearing {b:.2} ({:?})", out.bearing_ref),
                None => println!("{name}: no direction, dropped"),
            }
        }
        Err(e) => println!("{name}: unreadable ({e}), dropped"),
    }
}

fn main() {
    let files: Vec<String> = std::env::args().skip(1).collect();
    if !files.is_empty() {
        for f in files {
            match std::fs::read(&f) {
                Ok(bytes) => report(&f, &bytes),
                Err(e) => println!("{f}: {e}"),
            }
        }
        return;
    }
    report("true north", &gps_tiff(Some((12345, 100)), Some(DirectionRef::TrueNorth)));
    report("magnetic", &gps_tiff(Some((90, 1)), Some(DirectionRef::MagneticNorth)));
    report("full turn", &gps_tiff(Some((360, 1)), None));
    report("ref only", &gps_tiff(None, Some(DirectionRef::TrueNorth)));
    report("no gps", &tiff_without_gps());
    report("garbage", b"not an image");
}
