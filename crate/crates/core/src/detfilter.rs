//! Detection stage: keep images showing a large, confident building or house.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::manifest::Detection;

/// Detector classes that count as a building.
pub const BUILDING_CLASSES: [&str; 2] = ["house", "building"];

/// How a parameter is compared against its threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// `value >= threshold`
    #[default]
    Inclusive,
    /// `value > threshold`
    Strict,
}

impl ThresholdMode {
    pub fn meets(self, value: f64, threshold: f64) -> bool {
        match self {
            ThresholdMode::Inclusive => value >= threshold,
            ThresholdMode::Strict => value > threshold,
        }
    }
}

pub fn is_building_class(name: &str) -> bool {
    BUILDING_CLASSES
        .iter()
        .any(|c| c.eq_ignore_ascii_case(name.trim()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionOutcome {
    /// Score of the defining building/house detection, if any was found.
    pub p_score: Option<f64>,
    /// Relative size of that same detection.
    pub p_size: Option<f64>,
    pub pass: bool,
}

/// Gates one image on its detections.
///
/// Passes when a single building/house detection meets both `t_size` and
/// `t_score`. The recorded parameters come from the highest-scoring
/// qualifying detection, or from the highest-scoring building/house when
/// none qualifies. Ties keep the earlier detection.
pub fn filter_by_detection(
    detections: &[Detection],
    t_size: f64,
    t_score: f64,
    mode: ThresholdMode,
) -> std::result::Result<DetectionOutcome, String> {
    let mut best: Option<&Detection> = None;
    let mut best_qualifying: Option<&Detection> = None;
    for d in detections {
        d.validate()?;
        if !is_building_class(&d.class_name) {
            continue;
        }
        if best.is_none_or(|b| d.score > b.score) {
            best = Some(d);
        }
        let qualifies = mode.meets(d.rel_size, t_size) && mode.meets(d.score, t_score);
        if qualifies && best_qualifying.is_none_or(|b| d.score > b.score) {
            best_qualifying = Some(d);
        }
    }
    let pass = best_qualifying.is_some();
    let defining = best_qualifying.or(best);
    Ok(DetectionOutcome {
        p_score: defining.map(|d| d.score),
        p_size: defining.map(|d| d.rel_size),
        pass,
    })
}

/// One line of a detections file. Box corners are normalized to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLine {
    pub image_id: String,
    pub class_name: String,
    pub score: f64,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl DetectionLine {
    fn validate(&mut self) -> std::result::Result<(), String> {
        for (name, v) in [("x0", self.x0), ("y0", self.y0), ("x1", self.x1), ("y1", self.y1)] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.x1 < self.x0 || self.y1 < self.y0 {
            return Err("box corners are inverted".into());
        }
        self.to_detection().validate()
    }

    pub fn to_detection(&self) -> Detection {
        Detection {
            class_name: self.class_name.clone(),
            score: self.score,
            rel_size: (self.x1 - self.x0) * (self.y1 - self.y0),
        }
    }
}

/// Detections grouped by image id, in first-seen order.
pub type DetectionTable = IndexMap<String, Vec<Detection>>;

pub fn read_detections(path: &Path) -> Result<DetectionTable> {
    let lines: Vec<DetectionLine> = jsonl::read(path, DetectionLine::validate)?;
    let mut table = DetectionTable::new();
    for line in lines {
        let d = line.to_detection();
        table.entry(line.image_id).or_default().push(d);
    }
    Ok(table)
}

pub fn write_detections(lines: &[DetectionLine], path: &Path) -> Result<()> {
    for l in lines {
        l.clone()
            .validate()
            .map_err(|m| Error::invalid(format!("{}: {m}", l.image_id)))?;
    }
    jsonl::write(path, lines)
}
