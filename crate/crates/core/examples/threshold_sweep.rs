//! Re-evaluates the final set over a grid of one threshold, from the
//! parameter cache of a single run.
//!
//! Run with `cargo run --example threshold_sweep [param] [grid]`, for
//! example `t_dist 25:200:25`.

use std::collections::HashMap;

use geosift::eval::ensemble_by_image;
use geosift::manifest::Thresholds;
use geosift::pipeline::{parse_grid, run_pipeline, sweep, CacheDepth, Inputs, RunOptions, SweepParam};
use geosift::synthetic::Scene;

fn main() -> geosift::Result<()> {
    let mut args = std::env::args().skip(1);
    let param: SweepParam = args.next().as_deref().unwrap_or("t_sim").parse()?;
    let grid = parse_grid(args.next().as_deref().unwrap_or("0.6:0.9:0.05"))?;

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
    // exhaustive depth evaluates every stage for every image, so no grid
    // point needs a re-run
    let opts = RunOptions {
        depth: CacheDepth::Exhaustive,
        ..RunOptions::default()
    };
    let cache = run_pipeline(scene.records.clone(), inputs, &opts)?.cache;

    let predicted: HashMap<String, _> = ensemble_by_image(&scene.predictions)?
        .into_iter()
        .map(|(id, p)| (id, p.predicted()))
        .collect();
    print!("{}", sweep(&cache, param, &grid, &Thresholds::default(), Some(&predicted))?);
    Ok(())
}
