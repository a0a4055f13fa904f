//! Image records and the line-delimited manifest format every stage reads and writes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::jsonl;

/// Building function class.
///
/// Variant order is the fixed class order of prediction vectors
/// (commercial, other, residential) and breaks argmax ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionClass {
    Commercial,
    Other,
    Residential,
}

impl FunctionClass {
    pub const ALL: [FunctionClass; 3] = [
        FunctionClass::Commercial,
        FunctionClass::Other,
        FunctionClass::Residential,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FunctionClass::Commercial => "commercial",
            FunctionClass::Other => "other",
            FunctionClass::Residential => "residential",
        }
    }

    /// Three-letter abbreviation used in report tables.
    pub fn short(self) -> &'static str {
        match self {
            FunctionClass::Commercial => "Com",
            FunctionClass::Other => "Oth",
            FunctionClass::Residential => "Res",
        }
    }
}

impl fmt::Display for FunctionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FunctionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "commercial" => Ok(FunctionClass::Commercial),
            "other" => Ok(FunctionClass::Other),
            "residential" => Ok(FunctionClass::Residential),
            _ => Err(Error::invalid(format!("unknown function class {s:?}"))),
        }
    }
}

/// Last pipeline stage a record has passed, in pipeline order.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Not yet through any filter.
    #[default]
    Ingested,
    Similarity,
    Detection,
    UniqueLocation,
    Direction,
    Sightline,
    Labeled,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingested,
        Stage::Similarity,
        Stage::Detection,
        Stage::UniqueLocation,
        Stage::Direction,
        Stage::Sightline,
        Stage::Labeled,
    ];

    /// The six filters, without the `Ingested` starting point.
    pub const FILTERS: [Stage; 6] = [
        Stage::Similarity,
        Stage::Detection,
        Stage::UniqueLocation,
        Stage::Direction,
        Stage::Sightline,
        Stage::Labeled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingested => "ingested",
            Stage::Similarity => "similarity",
            Stage::Detection => "detection",
            Stage::UniqueLocation => "unique-location",
            Stage::Direction => "direction",
            Stage::Sightline => "sightline",
            Stage::Labeled => "labeled",
        }
    }

    /// The stage a record must have reached to enter this one.
    pub fn previous(self) -> Option<Stage> {
        let i = self as usize;
        (i > 0).then(|| Stage::ALL[i - 1])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The four pipeline hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Minimum max-seed cosine similarity.
    pub t_sim: f64,
    /// Minimum building/house detection confidence.
    pub t_score: f64,
    /// Minimum building/house detection size relative to the image.
    pub t_size: f64,
    /// Maximum distance in meters to the referenced building.
    pub t_dist: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            t_sim: 0.70,
            t_score: 0.3,
            t_size: 0.2,
            t_dist: 250.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
        if !in_range(self.t_sim, -1.0, 1.0) {
            return Err(Error::invalid(format!("t_sim {} outside [-1, 1]", self.t_sim)));
        }
        if !in_range(self.t_score, 0.0, 1.0) {
            return Err(Error::invalid(format!("t_score {} outside [0, 1]", self.t_score)));
        }
        if !in_range(self.t_size, 0.0, 1.0) {
            return Err(Error::invalid(format!("t_size {} outside [0, 1]", self.t_size)));
        }
        if !(self.t_dist.is_finite() && self.t_dist > 0.0) {
            return Err(Error::invalid(format!("t_dist {} must be > 0", self.t_dist)));
        }
        Ok(())
    }
}

/// One object found by the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_name: String,
    pub score: f64,
    /// Bounding-box area divided by image area.
    pub rel_size: f64,
}

impl Detection {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.score.is_finite() && (0.0..=1.0).contains(&self.score)) {
            return Err(format!("detection score {} outside [0, 1]", self.score));
        }
        if !(self.rel_size.is_finite() && (0.0..=1.0).contains(&self.rel_size)) {
            return Err(format!("detection rel_size {} outside [0, 1]", self.rel_size));
        }
        Ok(())
    }
}

/// Maps any finite compass angle into [0, 360).
pub fn normalize_bearing(deg: f64) -> f64 {
    let b = deg.rem_euclid(360.0);
    // rem_euclid can round tiny negative inputs up to exactly 360
    if b >= 360.0 {
        0.0
    } else {
        b
    }
}

/// One geotagged image and everything the pipeline learned about it.
///
/// Fields not known to this type are kept in `extra` and written back
/// unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_sim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_dist: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub building_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_label: Option<FunctionClass>,
    #[serde(default)]
    pub stage_reached: Stage,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, lat: f64, lon: f64) -> Self {
        ImageRecord {
            image_id: image_id.into(),
            lat,
            lon,
            bearing: None,
            p_sim: None,
            p_score: None,
            p_size: None,
            p_dist: None,
            building_id: None,
            weak_label: None,
            stage_reached: Stage::Ingested,
            extra: Map::new(),
        }
    }

    /// Clears everything the pipeline writes, keeping id, position and extras.
    pub fn reset(&mut self) {
        self.bearing = None;
        self.p_sim = None;
        self.p_score = None;
        self.p_size = None;
        self.p_dist = None;
        self.building_id = None;
        self.weak_label = None;
        self.stage_reached = Stage::Ingested;
    }

    /// Checks value ranges, normalizing the bearing in place.
    pub fn validate(&mut self) -> std::result::Result<(), String> {
        if self.image_id.is_empty() {
            return Err("empty image_id".into());
        }
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(format!("lat {} outside [-90, 90]", self.lat));
        }
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            return Err(format!("lon {} outside [-180, 180]", self.lon));
        }
        if let Some(b) = self.bearing {
            if !b.is_finite() || !(0.0..=360.0).contains(&b) {
                return Err(format!("bearing {b} outside [0, 360]"));
            }
            self.bearing = Some(normalize_bearing(b));
        }
        check_opt("p_sim", self.p_sim, -1.0, 1.0)?;
        check_opt("p_score", self.p_score, 0.0, 1.0)?;
        check_opt("p_size", self.p_size, 0.0, 1.0)?;
        check_opt("p_dist", self.p_dist, 0.0, f64::INFINITY)?;
        if self.building_id.is_some() && self.stage_reached < Stage::Sightline {
            return Err(format!(
                "building_id set but stage_reached is {}",
                self.stage_reached
            ));
        }
        if self.weak_label.is_some() && self.stage_reached < Stage::Labeled {
            return Err(format!(
                "weak_label set but stage_reached is {}",
                self.stage_reached
            ));
        }
        Ok(())
    }
}

fn check_opt(name: &str, v: Option<f64>, lo: f64, hi: f64) -> std::result::Result<(), String> {
    match v {
        Some(x) if !(x.is_finite() && x >= lo && x <= hi) => {
            Err(format!("{name} {x} outside [{lo}, {hi}]"))
        }
        _ => Ok(()),
    }
}

/// Reads a manifest, one record per line, in file order.
pub fn read_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    jsonl::read(path, ImageRecord::validate)
}

pub fn write_manifest(records: &[ImageRecord], path: &Path) -> Result<()> {
    jsonl::write(path, records)
}
