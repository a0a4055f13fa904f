//! Command-line front end. Every stage is a subcommand that reads and
//! writes manifests, so stages can be chained by hand.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::detfilter::{read_detections, ThresholdMode};
use crate::embedding::read_embeddings;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_votes, by_model, compute_metrics, ensemble_by_image, osm_accuracy_report, read_predictions,
    read_votes, validated_subset, MetricsReport, PredictionVector,
};
use crate::exif::ExifDir;
use crate::manifest::{read_manifest, write_manifest, FunctionClass, ImageRecord, Thresholds};
use crate::osm::{default_table, ingest_buildings, write_buildings, TagMappingTable};
use crate::pipeline::{
    parse_grid, run_pipeline, sweep, CacheDepth, ContentOrder, Inputs, ParameterCache, PipelineState,
    RunOptions, SweepParam,
};
use crate::sightline::{BuildingIndex, DEFAULT_MAX_RANGE_M};

#[derive(Debug, Parser)]
#[command(name = "geosift", version, about = "Filter and geo-reference geotagged building photos")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "GEOSIFT_THREADS")]
    pub threads: Option<usize>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run all stages and write the manifest, parameter cache and funnel.
    Run(RunArgs),
    /// Similarity gate against seed embeddings.
    Similarity(SimilarityArgs),
    /// Building/house detection gate.
    Detect(DetectArgs),
    /// Drop images whose coordinates another image shares.
    UniqueLocation(UniqueArgs),
    /// Keep images whose EXIF has an image direction.
    Direction(DirectionArgs),
    /// Assign the building in the line of sight and its weak label.
    Sightline(SightlineArgs),
    /// Re-evaluate the final set over a threshold grid from a cache.
    Sweep(SweepArgs),
    /// Score classifier predictions against weak labels.
    Evaluate(EvaluateArgs),
    /// Aggregate three-vote human validation of weak labels.
    Votes(VotesArgs),
    /// Read building footprints and attach mapped function classes.
    IngestOsm(IngestArgs),
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long, default_value_t = Thresholds::default().t_sim)]
    pub t_sim: f64,
    #[arg(long, default_value_t = Thresholds::default().t_score)]
    pub t_score: f64,
    #[arg(long, default_value_t = Thresholds::default().t_size)]
    pub t_size: f64,
    #[arg(long, default_value_t = Thresholds::default().t_dist)]
    pub t_dist: f64,
    /// Compare detections with `>` instead of `>=`.
    #[arg(long)]
    pub strict_thresholds: bool,
}

impl ThresholdArgs {
    fn thresholds(&self) -> Thresholds {
        Thresholds {
            t_sim: self.t_sim,
            t_score: self.t_score,
            t_size: self.t_size,
            t_dist: self.t_dist,
        }
    }
}

fn mode(strict: bool) -> ThresholdMode {
    if strict {
        ThresholdMode::Strict
    } else {
        ThresholdMode::Inclusive
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Candidate embeddings.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Seed embeddings.
    #[arg(long)]
    pub seed: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub exif_dir: PathBuf,
    /// Building footprints (GeoJSON).
    #[arg(long)]
    pub buildings: PathBuf,
    /// Tag mapping table replacing the built-in one.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Sight ray length in meters.
    #[arg(long, default_value_t = DEFAULT_MAX_RANGE_M)]
    pub max_range: f64,
    /// Parameter cache path; defaults to OUT.cache.jsonl.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Also write the funnel report as JSON.
    #[arg(long)]
    pub funnel: Option<PathBuf>,
    /// Evaluate every stage on every image so sweeps never need a re-run.
    #[arg(long)]
    pub exhaustive_cache: bool,
    /// Run the detection gate before the similarity gate.
    #[arg(long)]
    pub detection_first: bool,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub seed: PathBuf,
    #[arg(long, default_value_t = Thresholds::default().t_sim)]
    pub t_sim: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value_t = Thresholds::default().t_score)]
    pub t_score: f64,
    #[arg(long, default_value_t = Thresholds::default().t_size)]
    pub t_size: f64,
    #[arg(long)]
    pub strict_thresholds: bool,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct UniqueArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct DirectionArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub exif_dir: PathBuf,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SightlineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub buildings: PathBuf,
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    #[arg(long, default_value_t = Thresholds::default().t_dist)]
    pub t_dist: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_RANGE_M)]
    pub max_range: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub cache: PathBuf,
    /// One of t_sim, t_score, t_size, t_dist.
    #[arg(long)]
    pub param: String,
    /// `start:stop:step` or `a,b,c`.
    #[arg(long)]
    pub grid: String,
    /// Fixed values for the other thresholds; default to the cached run's.
    #[arg(long)]
    pub t_sim: Option<f64>,
    #[arg(long)]
    pub t_score: Option<f64>,
    #[arg(long)]
    pub t_size: Option<f64>,
    #[arg(long)]
    pub t_dist: Option<f64>,
    /// Predictions used to report weighted F1 per grid point.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub ensemble: bool,
    /// Also write the sweep as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Average all models per image before taking the argmax.
    #[arg(long)]
    pub ensemble: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct VotesArgs {
    #[arg(long)]
    pub votes: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Also score these predictions on the validated subset.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub ensemble: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub buildings: PathBuf,
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .try_init();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
        .and_then(|pool| pool.install(|| execute(cli.command)));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn check_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::invalid(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mapping_table(path: Option<&Path>) -> Result<TagMappingTable> {
    match path {
        Some(p) => TagMappingTable::load(p),
        None => Ok(default_table().clone()),
    }
}

fn load_buildings(path: &Path, mapping: Option<&Path>) -> Result<BuildingIndex> {
    let report = ingest_buildings(path, &mapping_table(mapping)?)?;
    if !report.skipped.is_empty() {
        log::warn!("skipped {} building features", report.skipped.len());
    }
    Ok(BuildingIndex::new(report.buildings))
}

fn exif_dir(path: &Path) -> Result<ExifDir> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if !meta.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", path.display())));
    }
    Ok(ExifDir::new(path))
}

fn cache_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".cache.jsonl");
    PathBuf::from(s)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::Similarity(a) => {
            check_writable(&a.output.out, a.output.force)?;
            let candidates = read_embeddings(&a.embeddings)?;
            let seeds = read_embeddings(&a.seed)?;
            stage(&a.manifest, &a.output.out, |s| s.similarity(&candidates, &seeds, a.t_sim))
        }
        Command::Detect(a) => {
            check_writable(&a.output.out, a.output.force)?;
            let table = read_detections(&a.detections)?;
            let t = Thresholds {
                t_score: a.t_score,
                t_size: a.t_size,
                ..Thresholds::default()
            };
            t.validate()?;
            stage(&a.manifest, &a.output.out, |s| {
                s.detection(&table, &t, mode(a.strict_thresholds));
                Ok(())
            })
        }
        Command::UniqueLocation(a) => {
            check_writable(&a.output.out, a.output.force)?;
            stage(&a.manifest, &a.output.out, |s| {
                s.unique_location();
                Ok(())
            })
        }
        Command::Direction(a) => {
            check_writable(&a.output.out, a.output.force)?;
            let exif = exif_dir(&a.exif_dir)?;
            stage(&a.manifest, &a.output.out, |s| {
                s.direction(&exif);
                Ok(())
            })
        }
        Command::Sightline(a) => {
            check_writable(&a.output.out, a.output.force)?;
            Thresholds {
                t_dist: a.t_dist,
                ..Thresholds::default()
            }
            .validate()?;
            let index = load_buildings(&a.buildings, a.mapping.as_deref())?;
            stage(&a.manifest, &a.output.out, |s| {
                s.sightline(&index, a.t_dist, a.max_range)?;
                s.labeled();
                Ok(())
            })
        }
        Command::Sweep(a) => cmd_sweep(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Votes(a) => cmd_votes(a),
        Command::IngestOsm(a) => {
            check_writable(&a.output.out, a.output.force)?;
            let report = ingest_buildings(&a.buildings, &mapping_table(a.mapping.as_deref())?)?;
            for reason in &report.skipped {
                log::warn!("{reason}");
            }
            write_buildings(&report.buildings, &a.output.out)?;
            let labeled = report.buildings.iter().filter(|b| b.mapped_class.is_some()).count();
            println!(
                "buildings {}  labeled {}  skipped {}",
                report.buildings.len(),
                labeled,
                report.skipped.len()
            );
            Ok(())
        }
    }
}

/// Applies one stage to a manifest and writes the result.
fn stage(manifest: &Path, out: &Path, f: impl FnOnce(&mut PipelineState) -> Result<()>) -> Result<()> {
    let records = read_manifest(manifest)?;
    let mut state = PipelineState::new(records, CacheDepth::Survivors);
    f(&mut state)?;
    write_manifest(&state.records, out)?;
    if let Some(s) = state.stages.last() {
        println!("{}: {} of {} passed", s.stage, s.passed, s.processed);
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let out = &a.output.out;
    let cache = a.cache.clone().unwrap_or_else(|| cache_path(out));
    for p in [Some(out), Some(&cache), a.funnel.as_ref()].into_iter().flatten() {
        check_writable(p, a.output.force)?;
    }
    let opts = RunOptions {
        thresholds: a.thresholds.thresholds(),
        mode: mode(a.thresholds.strict_thresholds),
        max_range: a.max_range,
        depth: if a.exhaustive_cache {
            CacheDepth::Exhaustive
        } else {
            CacheDepth::Survivors
        },
        order: if a.detection_first {
            ContentOrder::DetectionFirst
        } else {
            ContentOrder::SimilarityFirst
        },
    };
    opts.thresholds.validate()?;
    if opts.thresholds.t_dist > opts.max_range {
        log::warn!("t_dist {} exceeds max_range {}", opts.thresholds.t_dist, opts.max_range);
    }
    let records = read_manifest(&a.manifest)?;
    let candidates = read_embeddings(&a.embeddings)?;
    let seeds = read_embeddings(&a.seed)?;
    let detections = read_detections(&a.detections)?;
    let exif = exif_dir(&a.exif_dir)?;
    let buildings = load_buildings(&a.buildings, a.mapping.as_deref())?;
    let result = run_pipeline(
        records,
        Inputs {
            candidates: &candidates,
            seeds: &seeds,
            detections: &detections,
            exif: &exif,
            buildings: &buildings,
        },
        &opts,
    )?;
    write_manifest(&result.records, out)?;
    result.cache.write(&cache)?;
    if let Some(f) = &a.funnel {
        fs::write(f, result.funnel.to_json() + "\n").map_err(|e| Error::io(f, e))?;
    }
    print!("{}", result.funnel);
    Ok(())
}

/// Predicted class per image, either per model or from the ensemble.
fn predicted_classes(preds: &[PredictionVector], ensemble: bool) -> Result<Vec<(String, HashMap<String, FunctionClass>)>> {
    if ensemble {
        let e = ensemble_by_image(preds)?;
        Ok(vec![(
            "ensemble".into(),
            e.into_iter().map(|(id, v)| (id, v.predicted())).collect(),
        )])
    } else {
        Ok(by_model(preds)
            .into_iter()
            .map(|(m, per)| (m, per.into_iter().map(|(id, v)| (id, v.predicted())).collect()))
            .collect())
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    if let Some(o) = &a.out {
        check_writable(o, a.force)?;
    }
    let param: SweepParam = a.param.parse()?;
    let grid = parse_grid(&a.grid)?;
    let cache = ParameterCache::read(&a.cache)?;
    let base = cache.header.thresholds;
    let fixed = Thresholds {
        t_sim: a.t_sim.unwrap_or(base.t_sim),
        t_score: a.t_score.unwrap_or(base.t_score),
        t_size: a.t_size.unwrap_or(base.t_size),
        t_dist: a.t_dist.unwrap_or(base.t_dist),
    };
    let preds = match &a.predictions {
        Some(p) => {
            let mut classes = predicted_classes(&read_predictions(p)?, a.ensemble)?;
            if classes.len() != 1 {
                return Err(Error::invalid(
                    "predictions hold several models; pass --ensemble to combine them",
                ));
            }
            classes.pop().map(|(_, c)| c)
        }
        None => None,
    };
    let report = sweep(&cache, param, &grid, &fixed, preds.as_ref())?;
    print!("{report}");
    if let Some(o) = &a.out {
        write_json(o, &serde_json::to_value(&report).expect("serializable"))?;
    }
    Ok(())
}

fn labeled_truth(records: &[ImageRecord]) -> HashMap<String, FunctionClass> {
    records
        .iter()
        .filter_map(|r| r.weak_label.map(|l| (r.image_id.clone(), l)))
        .collect()
}

/// Metrics of each prediction set against `truth`, printed as tables.
fn score_against(truth: &HashMap<String, FunctionClass>, classes: &[(String, HashMap<String, FunctionClass>)], order: &[String]) -> Result<serde_json::Map<String, serde_json::Value>> {
    let mut out = serde_json::Map::new();
    for (name, pred) in classes {
        let pairs: Vec<_> = order
            .iter()
            .filter_map(|id| Some((*truth.get(id)?, *pred.get(id)?)))
            .collect();
        let missing = truth.len() - pairs.len();
        if missing > 0 {
            log::warn!("{name}: {missing} labeled images have no prediction");
        }
        let report: MetricsReport = compute_metrics(&pairs)
            .map_err(|_| Error::invalid(format!("{name}: no labeled image has a prediction")))?;
        println!("{name} ({} images)", pairs.len());
        println!("{report}");
        out.insert(name.clone(), serde_json::to_value(&report).expect("serializable"));
    }
    Ok(out)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    if let Some(o) = &a.out {
        check_writable(o, a.force)?;
    }
    let records = read_manifest(&a.manifest)?;
    let truth = labeled_truth(&records);
    if truth.is_empty() {
        return Err(Error::invalid("manifest has no labeled images"));
    }
    let order: Vec<String> = records.iter().map(|r| r.image_id.clone()).collect();
    let classes = predicted_classes(&read_predictions(&a.predictions)?, a.ensemble)?;
    let reports = score_against(&truth, &classes, &order)?;
    if let Some(o) = &a.out {
        write_json(o, &serde_json::Value::Object(reports))?;
    }
    Ok(())
}

fn cmd_votes(a: VotesArgs) -> Result<()> {
    if let Some(o) = &a.out {
        check_writable(o, a.force)?;
    }
    let records = read_manifest(&a.manifest)?;
    let weak = labeled_truth(&records);
    let votes = read_votes(&a.votes)?;
    let verdicts = aggregate_votes(&votes)?;
    for (id, v) in &verdicts {
        match weak.get(id) {
            None => return Err(Error::invalid(format!("voted image {id} has no weak label in the manifest"))),
            Some(w) if *w != v.shown_label => log::warn!("{id}: shown {} but manifest says {w}", v.shown_label),
            _ => {}
        }
    }
    let report = osm_accuracy_report(&verdicts);
    print!("{report}");
    let mut out = json!({
        "accuracy": report,
        "verdicts": verdicts,
    });
    if let Some(p) = &a.predictions {
        let gold = validated_subset(&verdicts);
        let order: Vec<String> = gold.keys().cloned().collect();
        let gold: HashMap<String, FunctionClass> = gold.into_iter().collect();
        println!();
        let classes = predicted_classes(&read_predictions(p)?, a.ensemble)?;
        out["validated_metrics"] = serde_json::Value::Object(score_against(&gold, &classes, &order)?);
    }
    if let Some(o) = &a.out {
        write_json(o, &out)?;
    }
    Ok(())
}
