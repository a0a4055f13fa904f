//! Scores classifier predictions against weak labels, per model and for
//! the mean ensemble.
//!
//! Run with `cargo run --example evaluate_predictions`.

use geosift::eval::{by_model, compute_metrics, ensemble_by_image};
use geosift::pipeline::{final_items, run_pipeline, Inputs, RunOptions};
use geosift::synthetic::Scene;

fn main() -> geosift::Result<()> {
    let scene = Scene::new();
    let detections = scene.detection_table();
    let buildings = scene.building_index();
    let inputs = Inputs {
        candidates: &scene.candidates,
        seeds: &scene.seeds,
        detections: &detections,
        exif: &scene.exif,
        buildings: &buildings,
    };
    let out = run_pipeline(scene.records.clone(), inputs, &RunOptions::default())?;
    let truth = final_items(&out.records);

    let mut sets = by_model(&scene.predictions);
    sets.insert("ensemble".into(), ensemble_by_image(&scene.predictions)?);
    for (name, preds) in &sets {
        let pairs: Vec<_> = truth
            .iter()
            .filter_map(|t| preds.get(&t.image_id).map(|p| (t.weak_label, p.predicted())))
            .collect();
        println!("{name} ({} images)", pairs.len());
        println!("{}", compute_metrics(&pairs)?);
    }
    Ok(())
}
