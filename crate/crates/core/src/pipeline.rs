//! Stage orchestration, the parameter cache, the funnel report and
//! threshold sweeps.
//!
//! Every stage only looks at records that passed the stage before it. The
//! cache keeps the raw per-record parameters so that other thresholds can be
//! evaluated without touching embeddings, detections, EXIF or footprints.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detfilter::{filter_by_detection, is_building_class, DetectionTable, ThresholdMode};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::compute_metrics;
use crate::exif::{filter_by_direction, DirectionRef, ExifSource};
use crate::geoindex::LocationIndex;
use crate::geometry::GeoPoint;
use crate::manifest::{Detection, FunctionClass, ImageRecord, Stage, Thresholds};
use crate::sightline::{
    filter_by_distance, reference_building, BuildingIndex, SightRay, DEFAULT_MAX_RANGE_M,
};
use crate::simfilter::NormalizedSeeds;

/// How much the cache records beyond what the run itself needed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheDepth {
    /// Parameters only for records that entered each stage.
    #[default]
    Survivors,
    /// Parameters for every record at every stage, so any threshold
    /// combination can be answered from the cache.
    Exhaustive,
}

/// Order of the two content filters. The final set does not depend on it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContentOrder {
    #[default]
    SimilarityFirst,
    DetectionFirst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub thresholds: Thresholds,
    pub mode: ThresholdMode,
    /// Length of the sight ray in meters.
    pub max_range: f64,
    pub depth: CacheDepth,
    pub order: ContentOrder,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            thresholds: Thresholds::default(),
            mode: ThresholdMode::default(),
            max_range: DEFAULT_MAX_RANGE_M,
            depth: CacheDepth::default(),
            order: ContentOrder::default(),
        }
    }
}

/// Everything the stages read besides the manifest.
#[derive(Clone, Copy)]
pub struct Inputs<'a> {
    pub candidates: &'a EmbeddingMatrix,
    pub seeds: &'a EmbeddingMatrix,
    pub detections: &'a DetectionTable,
    pub exif: &'a dyn ExifSource,
    pub buildings: &'a BuildingIndex,
}

/// Raw parameters of one record. `*_checked` tells whether a stage looked
/// at the record at all; an unchecked stage cannot be re-evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub image_id: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub similarity_checked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_sim: Option<f64>,
    #[serde(default)]
    pub detection_checked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_size: Option<f64>,
    /// Non-dominated `[score, rel_size]` pairs of building/house detections.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detection_frontier: Vec<[f64; 2]>,
    #[serde(default)]
    pub direction_checked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearing_ref: Option<DirectionRef>,
    #[serde(default)]
    pub sightline_checked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub building_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_dist: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub building_class: Option<FunctionClass>,
    #[serde(default)]
    pub stage_reached: Stage,
}

impl CacheEntry {
    pub fn new(record: &ImageRecord) -> Self {
        CacheEntry {
            image_id: record.image_id.clone(),
            lat: record.lat,
            lon: record.lon,
            similarity_checked: false,
            p_sim: None,
            detection_checked: false,
            p_score: None,
            p_size: None,
            detection_frontier: Vec::new(),
            direction_checked: false,
            bearing: None,
            bearing_ref: None,
            sightline_checked: false,
            building_id: None,
            p_dist: None,
            building_class: None,
            stage_reached: Stage::Ingested,
        }
    }

    fn passes_similarity(&self, t_sim: f64) -> Option<bool> {
        self.similarity_checked
            .then(|| self.p_sim.is_some_and(|p| p >= t_sim))
    }

    fn passes_detection(&self, t_size: f64, t_score: f64, mode: ThresholdMode) -> Option<bool> {
        self.detection_checked
            .then(|| frontier_passes(&self.detection_frontier, t_size, t_score, mode))
    }
}

/// Building/house detections not dominated in both score and size.
///
/// An image passes the detection gate at some thresholds exactly when one of
/// these points does, so the frontier answers every `(t_size, t_score)`.
pub fn detection_frontier(detections: &[Detection]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = detections
        .iter()
        .filter(|d| is_building_class(&d.class_name))
        .map(|d| [d.score, d.rel_size])
        .collect();
    pts.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
    let mut out: Vec<[f64; 2]> = Vec::new();
    for p in pts {
        if out.last().is_none_or(|l| p[1] > l[1]) {
            out.push(p);
        }
    }
    out
}

pub fn frontier_passes(frontier: &[[f64; 2]], t_size: f64, t_score: f64, mode: ThresholdMode) -> bool {
    frontier
        .iter()
        .any(|&[score, size]| mode.meets(size, t_size) && mode.meets(score, t_score))
}

/// Timing and counts of one executed stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRun {
    pub stage: Stage,
    /// Records the stage evaluated.
    pub processed: usize,
    /// Records that passed.
    pub passed: usize,
    /// Records dropped because their inputs were missing or invalid.
    pub skipped: usize,
    pub elapsed: Duration,
}

/// Records plus the cache being filled while stages run.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub records: Vec<ImageRecord>,
    pub cache: Vec<CacheEntry>,
    pub stages: Vec<StageRun>,
    pub depth: CacheDepth,
}

impl PipelineState {
    pub fn new(records: Vec<ImageRecord>, depth: CacheDepth) -> Self {
        let cache = records.iter().map(CacheEntry::new).collect();
        PipelineState {
            records,
            cache,
            stages: Vec::new(),
            depth,
        }
    }

    fn at_stage(&self, stage: Stage) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].stage_reached == stage)
            .collect()
    }

    fn scope(&self, entrants: &[usize]) -> Vec<usize> {
        match self.depth {
            CacheDepth::Survivors => entrants.to_vec(),
            CacheDepth::Exhaustive => (0..self.records.len()).collect(),
        }
    }

    fn log_stage(&mut self, run: StageRun) {
        if run.skipped > 0 {
            log::warn!("{}: skipped {} records with missing or invalid inputs", run.stage, run.skipped);
        }
        log::info!(
            "{}: {} of {} passed in {:.3}s",
            run.stage,
            run.passed,
            run.processed,
            run.elapsed.as_secs_f64()
        );
        self.stages.push(run);
    }

    fn eval_similarity(&mut self, idx: &[usize], candidates: &EmbeddingMatrix, seeds: &EmbeddingMatrix) -> Result<usize> {
        let stage_err = |e: Error| Error::Stage {
            stage: Stage::Similarity.name(),
            message: e.to_string(),
        };
        let seeds = NormalizedSeeds::new(seeds).map_err(stage_err)?;
        if !candidates.is_empty() && candidates.dim() != seeds.dim() {
            return Err(Error::Stage {
                stage: Stage::Similarity.name(),
                message: format!(
                    "candidate dimension {} does not match seed dimension {}",
                    candidates.dim(),
                    seeds.dim()
                ),
            });
        }
        let rows = candidates.id_index();
        let scores: Vec<Option<f64>> = idx
            .par_iter()
            .map(|&i| {
                let row = rows.get(self.records[i].image_id.as_str())?;
                seeds.max_similarity(candidates.row(*row)).ok().map(f64::from)
            })
            .collect();
        let mut skipped = 0;
        for (&i, p) in idx.iter().zip(scores) {
            skipped += usize::from(p.is_none());
            let e = &mut self.cache[i];
            e.similarity_checked = true;
            e.p_sim = p;
        }
        Ok(skipped)
    }

    fn eval_detection(&mut self, idx: &[usize], table: &DetectionTable, t: &Thresholds, mode: ThresholdMode) -> usize {
        let no_detections: Vec<Detection> = Vec::new();
        let results: Vec<_> = idx
            .par_iter()
            .map(|&i| {
                let dets = table
                    .get(self.records[i].image_id.as_str())
                    .unwrap_or(&no_detections);
                filter_by_detection(dets, t.t_size, t.t_score, mode).map(|o| (o, detection_frontier(dets)))
            })
            .collect();
        let mut skipped = 0;
        for (&i, r) in idx.iter().zip(results) {
            let e = &mut self.cache[i];
            e.detection_checked = true;
            match r {
                Ok((o, frontier)) => {
                    e.p_score = o.p_score;
                    e.p_size = o.p_size;
                    e.detection_frontier = frontier;
                }
                Err(msg) => {
                    log::debug!("detection input for {}: {msg}", e.image_id);
                    skipped += 1;
                }
            }
        }
        skipped
    }

    fn apply_similarity(&mut self, i: usize, t_sim: f64) -> bool {
        self.records[i].p_sim = self.cache[i].p_sim;
        self.cache[i].passes_similarity(t_sim) == Some(true)
    }

    fn apply_detection(&mut self, i: usize, t: &Thresholds, mode: ThresholdMode) -> bool {
        let e = &self.cache[i];
        self.records[i].p_score = e.p_score;
        self.records[i].p_size = e.p_size;
        e.passes_detection(t.t_size, t.t_score, mode) == Some(true)
    }

    fn advance(&mut self, i: usize, stage: Stage) {
        self.records[i].stage_reached = stage;
        self.cache[i].stage_reached = stage;
    }

    /// Similarity gate over records still at `Ingested`.
    pub fn similarity(&mut self, candidates: &EmbeddingMatrix, seeds: &EmbeddingMatrix, t_sim: f64) -> Result<()> {
        let start = Instant::now();
        let entrants = self.at_stage(Stage::Ingested);
        let scope = self.scope(&entrants);
        let skipped = self.eval_similarity(&scope, candidates, seeds)?;
        let mut passed = 0;
        for &i in &entrants {
            if self.apply_similarity(i, t_sim) {
                self.advance(i, Stage::Similarity);
                passed += 1;
            }
        }
        self.log_stage(StageRun {
            stage: Stage::Similarity,
            processed: scope.len(),
            passed,
            skipped,
            elapsed: start.elapsed(),
        });
        Ok(())
    }

    /// Detection gate over records at `Similarity`.
    pub fn detection(&mut self, table: &DetectionTable, t: &Thresholds, mode: ThresholdMode) {
        let start = Instant::now();
        let entrants = self.at_stage(Stage::Similarity);
        let scope = match self.depth {
            CacheDepth::Survivors => entrants.clone(),
            CacheDepth::Exhaustive => (0..self.records.len()).filter(|&i| !self.cache[i].detection_checked).collect(),
        };
        let skipped = self.eval_detection(&scope, table, t, mode);
        let mut passed = 0;
        for &i in &entrants {
            if self.apply_detection(i, t, mode) {
                self.advance(i, Stage::Detection);
                passed += 1;
            }
        }
        self.log_stage(StageRun {
            stage: Stage::Detection,
            processed: scope.len(),
            passed,
            skipped,
            elapsed: start.elapsed(),
        });
    }

    /// Detection first, then similarity on its survivors. Records passing
    /// both end at `Detection`, exactly as with the default order.
    fn content_detection_first(
        &mut self,
        candidates: &EmbeddingMatrix,
        seeds: &EmbeddingMatrix,
        table: &DetectionTable,
        t: &Thresholds,
        mode: ThresholdMode,
    ) -> Result<()> {
        let start = Instant::now();
        let entrants = self.at_stage(Stage::Ingested);
        let scope = self.scope(&entrants);
        let skipped = self.eval_detection(&scope, table, t, mode);
        let det_pass: Vec<usize> = entrants
            .iter()
            .copied()
            .filter(|&i| self.apply_detection(i, t, mode))
            .collect();
        self.log_stage(StageRun {
            stage: Stage::Detection,
            processed: scope.len(),
            passed: det_pass.len(),
            skipped,
            elapsed: start.elapsed(),
        });

        let start = Instant::now();
        let scope = self.scope(&det_pass);
        let skipped = self.eval_similarity(&scope, candidates, seeds)?;
        let mut passed = 0;
        for &i in &det_pass {
            if self.apply_similarity(i, t.t_sim) {
                self.advance(i, Stage::Detection);
                passed += 1;
            }
        }
        self.log_stage(StageRun {
            stage: Stage::Similarity,
            processed: scope.len(),
            passed,
            skipped,
            elapsed: start.elapsed(),
        });
        Ok(())
    }

    /// Drops every record at `Detection` whose coordinates another such
    /// record shares exactly.
    pub fn unique_location(&mut self) {
        let start = Instant::now();
        let entrants = self.at_stage(Stage::Detection);
        let index = LocationIndex::from_points(
            entrants
                .iter()
                .map(|&i| (self.records[i].lat, self.records[i].lon, self.records[i].image_id.as_str())),
        );
        let flags = index.unique_flags();
        let mut passed = 0;
        for (&i, unique) in entrants.iter().zip(flags) {
            if unique {
                self.advance(i, Stage::UniqueLocation);
                passed += 1;
            }
        }
        self.log_stage(StageRun {
            stage: Stage::UniqueLocation,
            processed: entrants.len(),
            passed,
            skipped: 0,
            elapsed: start.elapsed(),
        });
    }

    /// Keeps records at `UniqueLocation` whose EXIF has an image direction.
    pub fn direction(&mut self, exif: &dyn ExifSource) {
        let start = Instant::now();
        let entrants = self.at_stage(Stage::UniqueLocation);
        let scope = self.scope(&entrants);
        let outcomes: Vec<_> = scope
            .par_iter()
            .map(|&i| {
                let id = self.records[i].image_id.as_str();
                match exif.gps(id) {
                    Ok(g) => (filter_by_direction(g.as_ref()), false),
                    Err(e) => {
                        log::debug!("EXIF of {id}: {e}");
                        (filter_by_direction(None), true)
                    }
                }
            })
            .collect();
        let mut skipped = 0;
        for (&i, (o, bad)) in scope.iter().zip(outcomes) {
            skipped += usize::from(bad);
            let e = &mut self.cache[i];
            e.direction_checked = true;
            e.bearing = o.bearing;
            e.bearing_ref = o.bearing_ref;
        }
        let mut passed = 0;
        for &i in &entrants {
            self.records[i].bearing = self.cache[i].bearing;
            if self.cache[i].bearing.is_some() {
                self.advance(i, Stage::Direction);
                passed += 1;
            }
        }
        self.log_stage(StageRun {
            stage: Stage::Direction,
            processed: scope.len(),
            passed,
            skipped,
            elapsed: start.elapsed(),
        });
    }

    /// Casts sight rays for records at `Direction` and keeps those whose
    /// nearest building is within `t_dist`.
    pub fn sightline(&mut self, buildings: &BuildingIndex, t_dist: f64, max_range: f64) -> Result<()> {
        if !(max_range.is_finite() && max_range > 0.0) {
            return Err(Error::invalid(format!("max_range {max_range} must be > 0")));
        }
        let start = Instant::now();
        let entrants = self.at_stage(Stage::Direction);
        let scope: Vec<usize> = self
            .scope(&entrants)
            .into_iter()
            .filter(|&i| self.cache[i].bearing.or(self.records[i].bearing).is_some())
            .collect();
        let hits: Vec<_> = scope
            .par_iter()
            .map(|&i| {
                let r = &self.records[i];
                let bearing = self.cache[i].bearing.or(r.bearing)?;
                let ray = SightRay::new(GeoPoint::new(r.lat, r.lon), bearing, max_range);
                reference_building(&ray, buildings)
            })
            .collect();
        for (&i, hit) in scope.iter().zip(hits) {
            let e = &mut self.cache[i];
            e.sightline_checked = true;
            if let Some(a) = hit {
                e.building_class = buildings.get(a.building).mapped_class;
                e.building_id = Some(a.building_id);
                e.p_dist = Some(a.p_dist);
            }
        }
        let mut passed = 0;
        for &i in &entrants {
            let e = &self.cache[i];
            self.records[i].p_dist = e.p_dist;
            if e.p_dist.is_some_and(|d| filter_by_distance(d, t_dist)) {
                self.records[i].building_id = e.building_id.clone();
                self.advance(i, Stage::Sightline);
                passed += 1;
            }
        }
        self.log_stage(StageRun {
            stage: Stage::Sightline,
            processed: scope.len(),
            passed,
            skipped: 0,
            elapsed: start.elapsed(),
        });
        Ok(())
    }

    /// Keeps records at `Sightline` whose building has a function class.
    pub fn labeled(&mut self) {
        let start = Instant::now();
        let entrants = self.at_stage(Stage::Sightline);
        let mut passed = 0;
        for &i in &entrants {
            if let Some(class) = self.cache[i].building_class {
                self.records[i].weak_label = Some(class);
                self.advance(i, Stage::Labeled);
                passed += 1;
            }
        }
        self.log_stage(StageRun {
            stage: Stage::Labeled,
            processed: entrants.len(),
            passed,
            skipped: 0,
            elapsed: start.elapsed(),
        });
    }

    pub fn funnel(&self) -> FunnelReport {
        FunnelReport::new(self.records.len(), &self.stages, &self.records)
    }
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub records: Vec<ImageRecord>,
    pub cache: ParameterCache,
    pub funnel: FunnelReport,
}

/// Runs all stages in order from scratch. Earlier results on the records
/// are cleared first.
pub fn run_pipeline(mut records: Vec<ImageRecord>, inputs: Inputs<'_>, opts: &RunOptions) -> Result<PipelineOutput> {
    let t = opts.thresholds;
    t.validate()?;
    records.iter_mut().for_each(ImageRecord::reset);
    let mut state = PipelineState::new(records, opts.depth);
    match opts.order {
        ContentOrder::SimilarityFirst => {
            state.similarity(inputs.candidates, inputs.seeds, t.t_sim)?;
            state.detection(inputs.detections, &t, opts.mode);
        }
        ContentOrder::DetectionFirst => {
            state.content_detection_first(inputs.candidates, inputs.seeds, inputs.detections, &t, opts.mode)?;
        }
    }
    state.unique_location();
    state.direction(inputs.exif);
    state.sightline(inputs.buildings, t.t_dist, opts.max_range)?;
    state.labeled();
    let funnel = state.funnel();
    Ok(PipelineOutput {
        cache: ParameterCache {
            header: CacheHeader::new(opts),
            entries: state.cache,
        },
        records: state.records,
        funnel,
    })
}

/// An image that made it through every stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FinalItem {
    pub image_id: String,
    pub building_id: String,
    pub weak_label: FunctionClass,
}

/// The labeled set of a finished run, in record order.
pub fn final_items(records: &[ImageRecord]) -> Vec<FinalItem> {
    records
        .iter()
        .filter(|r| r.stage_reached == Stage::Labeled)
        .filter_map(|r| {
            Some(FinalItem {
                image_id: r.image_id.clone(),
                building_id: r.building_id.clone()?,
                weak_label: r.weak_label?,
            })
        })
        .collect()
}

pub const CACHE_FORMAT: &str = "geosift-parameter-cache";
pub const CACHE_VERSION: u32 = 1;

/// First line of a cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub format: String,
    pub version: u32,
    /// Thresholds of the run that filled the cache.
    pub thresholds: Thresholds,
    pub mode: ThresholdMode,
    pub max_range: f64,
    pub depth: CacheDepth,
    pub order: ContentOrder,
}

impl CacheHeader {
    pub fn new(opts: &RunOptions) -> Self {
        CacheHeader {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            thresholds: opts.thresholds,
            mode: opts.mode,
            max_range: opts.max_range,
            depth: opts.depth,
            order: opts.order,
        }
    }
}

/// A sweep point the cache cannot answer because some stage never looked
/// at records that would now reach it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheMiss {
    pub stage: Stage,
    pub missing: usize,
}

impl fmt::Display for CacheMiss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} records never evaluated by stage {}; re-run the pipeline",
            self.missing, self.stage
        )
    }
}

/// Per-record stage parameters of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterCache {
    pub header: CacheHeader,
    pub entries: Vec<CacheEntry>,
}

impl ParameterCache {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: serde_json::Error| Error::io(path, e.into());
        serde_json::to_writer(&mut w, &self.header).map_err(io_err)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e).map_err(io_err)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header: Option<CacheHeader> = None;
        let mut entries = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            };
            if header.is_none() {
                let h: CacheHeader = serde_json::from_str(&line).map_err(parse_err)?;
                if h.format != CACHE_FORMAT || h.version != CACHE_VERSION {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        message: format!("unsupported cache {} v{}", h.format, h.version),
                    });
                }
                header = Some(h);
            } else {
                entries.push(serde_json::from_str(&line).map_err(parse_err)?);
            }
        }
        let header = header.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "missing cache header".into(),
        })?;
        Ok(ParameterCache { header, entries })
    }

    /// The labeled set at thresholds `t`, computed from cached parameters
    /// alone, or the first stage that lacks data for it.
    pub fn final_set(&self, t: &Thresholds) -> std::result::Result<Vec<FinalItem>, CacheMiss> {
        let mode = self.header.mode;
        let mut missing: Option<CacheMiss> = None;
        let mut miss = |stage: Stage| {
            let m = missing.get_or_insert(CacheMiss { stage, missing: 0 });
            if m.stage == stage {
                m.missing += 1;
            } else if stage < m.stage {
                *m = CacheMiss { stage, missing: 1 };
            }
        };

        let mut content: Vec<usize> = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            let sim = e.passes_similarity(t.t_sim);
            let det = e.passes_detection(t.t_size, t.t_score, mode);
            match (sim, det) {
                (Some(false), _) | (_, Some(false)) => {}
                (Some(true), Some(true)) => content.push(i),
                (None, _) => miss(Stage::Similarity),
                (_, None) => miss(Stage::Detection),
            }
        }
        let index = LocationIndex::from_points(
            content
                .iter()
                .map(|&i| (self.entries[i].lat, self.entries[i].lon, self.entries[i].image_id.as_str())),
        );
        let mut out = Vec::new();
        for (&i, unique) in content.iter().zip(index.unique_flags()) {
            if !unique {
                continue;
            }
            let e = &self.entries[i];
            if !e.direction_checked {
                miss(Stage::Direction);
                continue;
            }
            if e.bearing.is_none() {
                continue;
            }
            if !e.sightline_checked {
                miss(Stage::Sightline);
                continue;
            }
            if !e.p_dist.is_some_and(|d| filter_by_distance(d, t.t_dist)) {
                continue;
            }
            if let (Some(b), Some(c)) = (&e.building_id, e.building_class) {
                out.push(FinalItem {
                    image_id: e.image_id.clone(),
                    building_id: b.clone(),
                    weak_label: c,
                });
            }
        }
        match missing {
            Some(m) => Err(m),
            None => Ok(out),
        }
    }
}

/// One line of the funnel table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunnelRow {
    pub stage: Stage,
    pub count: usize,
    /// Share of the input in percent.
    pub percent: f64,
    /// Wall-clock seconds per evaluated image; absent for the input row
    /// and for stages that evaluated nothing.
    pub mean_seconds_per_image: Option<f64>,
    /// Distinct buildings among the stage's survivors, for the stages that
    /// assign buildings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distinct_buildings: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunnelReport {
    pub rows: Vec<FunnelRow>,
    pub skipped: usize,
}

impl FunnelReport {
    fn new(input: usize, stages: &[StageRun], records: &[ImageRecord]) -> Self {
        let pct = |n: usize| if input == 0 { 0.0 } else { n as f64 * 100.0 / input as f64 };
        let buildings_at = |s: Stage| {
            records
                .iter()
                .filter(|r| r.stage_reached >= s)
                .filter_map(|r| r.building_id.as_deref())
                .collect::<BTreeSet<_>>()
                .len()
        };
        let mut rows = vec![FunnelRow {
            stage: Stage::Ingested,
            count: input,
            percent: pct(input),
            mean_seconds_per_image: None,
            distinct_buildings: None,
        }];
        for s in stages {
            rows.push(FunnelRow {
                stage: s.stage,
                count: s.passed,
                percent: pct(s.passed),
                mean_seconds_per_image: (s.processed > 0)
                    .then(|| s.elapsed.as_secs_f64() / s.processed as f64),
                distinct_buildings: matches!(s.stage, Stage::Sightline | Stage::Labeled)
                    .then(|| buildings_at(s.stage)),
            });
        }
        FunnelReport {
            rows,
            skipped: stages.iter().map(|s| s.skipped).sum(),
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.count).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("funnel report serializes")
    }
}

impl fmt::Display for FunnelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16}{:>10}{:>10}{:>12}{:>11}", "Stage", "Images", "Percent", "s/image", "Buildings")?;
        for r in &self.rows {
            let name = if r.stage == Stage::Ingested { "input" } else { r.stage.name() };
            let secs = r.mean_seconds_per_image.map_or("-".into(), |s| format!("{s:.6}"));
            let b = r.distinct_buildings.map_or("-".into(), |b| b.to_string());
            writeln!(f, "{:<16}{:>10}{:>10.4}{:>12}{:>11}", name, r.count, r.percent, secs, b)?;
        }
        if self.skipped > 0 {
            writeln!(f, "skipped records: {}", self.skipped)?;
        }
        Ok(())
    }
}

/// A threshold a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    TSim,
    TScore,
    TSize,
    TDist,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::TSim => "t_sim",
            SweepParam::TScore => "t_score",
            SweepParam::TSize => "t_size",
            SweepParam::TDist => "t_dist",
        }
    }

    pub fn set(self, t: &mut Thresholds, v: f64) {
        match self {
            SweepParam::TSim => t.t_sim = v,
            SweepParam::TScore => t.t_score = v,
            SweepParam::TSize => t.t_size = v,
            SweepParam::TDist => t.t_dist = v,
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t_sim" => Ok(SweepParam::TSim),
            "t_score" => Ok(SweepParam::TScore),
            "t_size" => Ok(SweepParam::TSize),
            "t_dist" => Ok(SweepParam::TDist),
            _ => Err(Error::invalid(format!(
                "unknown parameter {s:?}; expected t_sim, t_score, t_size or t_dist"
            ))),
        }
    }
}

// grid values are rounded so that 0.70 + 3 * 0.01 prints as 0.73
const GRID_DECIMALS: f64 = 1e9;
const MAX_GRID_POINTS: usize = 100_000;

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let num = |p: &str| {
        p.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::invalid(format!("bad grid value {p:?}")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if step <= 0.0 || b < a {
                return Err(Error::invalid(format!("grid {s:?} needs start <= stop and step > 0")));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            if n >= MAX_GRID_POINTS {
                return Err(Error::invalid(format!("grid {s:?} has too many points")));
            }
            Ok((0..=n)
                .map(|k| ((a + k as f64 * step) * GRID_DECIMALS).round() / GRID_DECIMALS)
                .collect())
        }
        [list] if !list.trim().is_empty() => list.split(',').map(num).collect(),
        _ => Err(Error::invalid(format!("bad grid {s:?}; use start:stop:step or a,b,c"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SweepOutcome {
    Ok {
        count: usize,
        /// `count` relative to the count at the fixed thresholds.
        fraction: Option<f64>,
        /// Support-weighted F1 of the predictions against weak labels.
        weighted_f1: Option<f64>,
        /// Final-set images that had a prediction.
        evaluated: usize,
    },
    RequiresRerun {
        stage: Stage,
        missing: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    #[serde(flatten)]
    pub outcome: SweepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub fixed: Thresholds,
    pub baseline_count: Option<usize>,
    pub points: Vec<SweepPoint>,
}

/// Evaluates the final set at every grid value of `param`, holding the
/// other thresholds at `fixed`.
pub fn sweep(
    cache: &ParameterCache,
    param: SweepParam,
    grid: &[f64],
    fixed: &Thresholds,
    predictions: Option<&HashMap<String, FunctionClass>>,
) -> Result<SweepReport> {
    fixed.validate()?;
    let baseline_count = cache.final_set(fixed).ok().map(|s| s.len());
    let points = grid
        .iter()
        .map(|&value| {
            let mut t = *fixed;
            param.set(&mut t, value);
            t.validate()?;
            let outcome = match cache.final_set(&t) {
                Err(m) => SweepOutcome::RequiresRerun {
                    stage: m.stage,
                    missing: m.missing,
                },
                Ok(set) => {
                    let pairs: Vec<_> = predictions
                        .map(|p| {
                            set.iter()
                                .filter_map(|it| p.get(&it.image_id).map(|pred| (it.weak_label, *pred)))
                                .collect()
                        })
                        .unwrap_or_default();
                    SweepOutcome::Ok {
                        count: set.len(),
                        fraction: baseline_count
                            .filter(|&b| b > 0)
                            .map(|b| set.len() as f64 / b as f64),
                        weighted_f1: compute_metrics(&pairs).ok().map(|m| m.weighted.f1),
                        evaluated: pairs.len(),
                    }
                }
            };
            Ok(SweepPoint { value, outcome })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        param,
        fixed: *fixed,
        baseline_count,
        points,
    })
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10}{:>10}{:>10}{:>10}{:>8}", self.param.name(), "images", "fraction", "F1", "eval")?;
        for p in &self.points {
            match &p.outcome {
                SweepOutcome::Ok {
                    count,
                    fraction,
                    weighted_f1,
                    evaluated,
                } => {
                    let fr = fraction.map_or("-".into(), |x| format!("{x:.4}"));
                    let f1 = weighted_f1.map_or("-".into(), |x| format!("{x:.4}"));
                    writeln!(f, "{:>10}{:>10}{:>10}{:>10}{:>8}", p.value, count, fr, f1, evaluated)?;
                }
                SweepOutcome::RequiresRerun { stage, missing } => {
                    writeln!(f, "{:>10}  requires re-run ({missing} records missing at {stage})", p.value)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detfilter::filter_by_detection;
    use proptest::prelude::*;

    fn det(class: &str, score: f64, size: f64) -> Detection {
        Detection {
            class_name: class.into(),
            score,
            rel_size: size,
        }
    }

    #[test]
    fn frontier_drops_dominated() {
        let f = detection_frontier(&[
            det("building", 0.9, 0.1),
            det("house", 0.5, 0.6),
            det("building", 0.4, 0.5),
            det("car", 0.99, 0.99),
            det("house", 0.9, 0.05),
        ]);
        assert_eq!(f, vec![[0.9, 0.1], [0.5, 0.6]]);
    }

    proptest! {
        #[test]
        fn frontier_agrees_with_gate(
            dets in prop::collection::vec((0usize..3, 0.0f64..=1.0, 0.0f64..=1.0), 0..8),
            t_size in 0.0f64..=1.0,
            t_score in 0.0f64..=1.0,
            strict in any::<bool>(),
        ) {
            let names = ["building", "house", "tree"];
            let dets: Vec<_> = dets.into_iter().map(|(c, s, z)| det(names[c], s, z)).collect();
            let mode = if strict { ThresholdMode::Strict } else { ThresholdMode::Inclusive };
            let direct = filter_by_detection(&dets, t_size, t_score, mode).unwrap().pass;
            prop_assert_eq!(frontier_passes(&detection_frontier(&dets), t_size, t_score, mode), direct);
        }
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.70:0.85:0.01").unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g[3], 0.73);
        assert_eq!(*g.last().unwrap(), 0.85);
        assert_eq!(parse_grid("100, 250,500").unwrap(), vec![100.0, 250.0, 500.0]);
        assert_eq!(parse_grid("5:5:1").unwrap(), vec![5.0]);
        for bad in ["", "1:0:0.1", "0:1:0", "a,b", "0:1"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn sweep_param_names() {
        for p in [SweepParam::TSim, SweepParam::TScore, SweepParam::TSize, SweepParam::TDist] {
            assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
        }
        assert!("t_other".parse::<SweepParam>().is_err());
    }

    fn entry(id: &str, lat: f64) -> CacheEntry {
        let mut e = CacheEntry::new(&ImageRecord::new(id, lat, 11.0));
        e.similarity_checked = true;
        e.p_sim = Some(0.8);
        e.detection_checked = true;
        e.detection_frontier = vec![[0.9, 0.5]];
        e.direction_checked = true;
        e.bearing = Some(10.0);
        e.sightline_checked = true;
        e.building_id = Some(format!("b-{id}"));
        e.p_dist = Some(100.0);
        e.building_class = Some(FunctionClass::Other);
        e
    }

    fn cache(entries: Vec<CacheEntry>) -> ParameterCache {
        ParameterCache {
            header: CacheHeader::new(&RunOptions::default()),
            entries,
        }
    }

    #[test]
    fn cache_final_set_and_misses() {
        let mut dup = entry("c", 48.0);
        dup.lat = 48.0;
        let mut unchecked = entry("d", 49.0);
        unchecked.p_sim = Some(0.5);
        unchecked.detection_checked = false;
        let c = cache(vec![entry("a", 47.0), entry("b", 48.0), dup, unchecked]);
        let t = Thresholds::default();
        let set = c.final_set(&t).unwrap();
        assert_eq!(set.iter().map(|i| i.image_id.as_str()).collect::<Vec<_>>(), ["a"]);
        let low = Thresholds { t_sim: 0.4, ..t };
        assert_eq!(
            c.final_set(&low).unwrap_err(),
            CacheMiss {
                stage: Stage::Detection,
                missing: 1
            }
        );
        let short = Thresholds { t_dist: 50.0, ..t };
        assert!(c.final_set(&short).unwrap().is_empty());
    }

    #[test]
    fn cache_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = cache(vec![entry("a", 47.0), CacheEntry::new(&ImageRecord::new("z", 1.0, 2.0))]);
        c.write(&path).unwrap();
        assert_eq!(ParameterCache::read(&path).unwrap(), c);
        std::fs::write(&path, "{\"image_id\":\"a\"}\n").unwrap();
        assert!(ParameterCache::read(&path).is_err());
    }

    #[test]
    fn sweep_reports_fraction_and_f1() {
        let c = cache(vec![entry("a", 47.0), entry("b", 48.0)]);
        let preds: HashMap<String, FunctionClass> =
            [("a".to_string(), FunctionClass::Other), ("b".to_string(), FunctionClass::Commercial)].into();
        let r = sweep(&c, SweepParam::TDist, &[50.0, 100.0, 250.0], &Thresholds::default(), Some(&preds)).unwrap();
        assert_eq!(r.baseline_count, Some(2));
        match &r.points[0].outcome {
            SweepOutcome::Ok { count, fraction, .. } => assert_eq!((*count, *fraction), (0, Some(0.0))),
            o => panic!("{o:?}"),
        }
        match &r.points[2].outcome {
            SweepOutcome::Ok { count, evaluated, weighted_f1, .. } => {
                assert_eq!((*count, *evaluated), (2, 2));
                // Oth: P=1 R=0.5 F1=2/3, support 2
                assert!((weighted_f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
            }
            o => panic!("{o:?}"),
        }
        assert!(sweep(&c, SweepParam::TDist, &[-1.0], &Thresholds::default(), None).is_err());
    }
}
