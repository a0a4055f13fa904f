//! Runs every stage on a generated 50-image scene and prints the funnel and
//! the labeled images.
//!
//! Run with `cargo run --example full_pipeline`.

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
    print!("{}", out.funnel);
    println!();
    for item in final_items(&out.records) {
        println!("{}  {}  {}", item.image_id, item.building_id, item.weak_label);
    }

    // the same scene as files, ready for the command-line tool
    let dir = tempfile::tempdir().expect("temp dir");
    let paths = scene.write_to_dir(dir.path())?;
    println!("\nscene files written under {}", paths.manifest.parent().unwrap().display());
    Ok(())
}
