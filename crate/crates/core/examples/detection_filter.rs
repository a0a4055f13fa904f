//! Keeps images where a detector found a large, confident building or house.
//!
//! Run with `cargo run --example detection_filter`.

use geosift::detfilter::{filter_by_detection, DetectionLine, ThresholdMode};
use geosift::manifest::Thresholds;

fn main() {
    let t = Thresholds::default();
    let line = |id: &str, class: &str, score: f64, w: f64, h: f64| DetectionLine {
        image_id: id.into(),
        class_name: class.into(),
        score,
        x0: 0.0,
        y0: 0.0,
        x1: w,
        y1: h,
    };
    let images = [
        ("big-house", vec![line("big-house", "house", 0.8, 0.6, 0.7)]),
        ("tiny-building", vec![line("tiny-building", "building", 0.9, 0.1, 0.1)]),
        ("car-only", vec![line("car-only", "car", 0.99, 0.9, 0.9)]),
        (
            "mixed",
            vec![
                line("mixed", "Building", 0.05, 0.9, 0.9),
                line("mixed", "building", 0.4, 0.5, 0.5),
            ],
        ),
        ("nothing", vec![]),
    ];

    println!("t_score {}  t_size {}", t.t_score, t.t_size);
    for (id, lines) in &images {
        let dets: Vec<_> = lines.iter().map(DetectionLine::to_detection).collect();
        for mode in [ThresholdMode::Inclusive, ThresholdMode::Strict] {
            match filter_by_detection(&dets, t.t_size, t.t_score, mode) {
                Ok(o) => println!(
                    "{id:<14} {mode:?}: pass {}  p_score {:?}  p_size {:?}",
                    o.pass, o.p_score, o.p_size
                ),
                Err(e) => println!("{id:<14} rejected input: {e}"),
            }
        }
    }
}
