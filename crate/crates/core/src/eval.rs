//! Classifier evaluation against weak labels, probability ensembling, and
//! aggregation of three-vote human label validation.

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::manifest::FunctionClass;

/// Allowed deviation of a probability vector's sum from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Class probabilities in the fixed order commercial, other, residential.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    pub image_id: String,
    pub model_id: String,
    pub probs: [f64; 3],
}

impl PredictionVector {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(format!("probabilities {:?} must be finite and non-negative", self.probs));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(format!("probabilities sum to {sum}, not 1"));
        }
        Ok(())
    }

    pub fn predicted(&self) -> FunctionClass {
        argmax(&self.probs)
    }
}

/// Line format of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub image_id: String,
    pub model_id: String,
    pub p_com: f64,
    pub p_oth: f64,
    pub p_res: f64,
}

impl From<PredictionLine> for PredictionVector {
    fn from(l: PredictionLine) -> Self {
        PredictionVector {
            image_id: l.image_id,
            model_id: l.model_id,
            probs: [l.p_com, l.p_oth, l.p_res],
        }
    }
}

impl From<&PredictionVector> for PredictionLine {
    fn from(v: &PredictionVector) -> Self {
        PredictionLine {
            image_id: v.image_id.clone(),
            model_id: v.model_id.clone(),
            p_com: v.probs[0],
            p_oth: v.probs[1],
            p_res: v.probs[2],
        }
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionVector>> {
    let lines: Vec<PredictionLine> = jsonl::read(path, |l: &mut PredictionLine| {
        PredictionVector::from(l.clone()).validate()
    })?;
    Ok(lines.into_iter().map(PredictionVector::from).collect())
}

pub fn write_predictions(preds: &[PredictionVector], path: &Path) -> Result<()> {
    let lines: Vec<PredictionLine> = preds.iter().map(PredictionLine::from).collect();
    jsonl::write(path, &lines)
}

/// Index of the largest probability; ties go to the lowest class index.
pub fn argmax(probs: &[f64; 3]) -> FunctionClass {
    let mut best = 0;
    for i in 1..3 {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    FunctionClass::ALL[best]
}

/// Elementwise mean of several models' vectors for one image.
pub fn ensemble_mean(predictions: &[PredictionVector]) -> Result<PredictionVector> {
    let first = predictions
        .first()
        .ok_or_else(|| Error::invalid("cannot ensemble an empty list of predictions"))?;
    let mut sum = [0.0f64; 3];
    for p in predictions {
        for (s, v) in sum.iter_mut().zip(p.probs) {
            *s += v;
        }
    }
    let n = predictions.len() as f64;
    let mut probs = sum.map(|s| s / n);
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOLERANCE && total > 0.0 {
        probs = probs.map(|p| p / total);
    }
    Ok(PredictionVector {
        image_id: first.image_id.clone(),
        model_id: "ensemble".into(),
        probs,
    })
}

/// Groups vectors by image and averages each group, keeping first-seen order.
pub fn ensemble_by_image(predictions: &[PredictionVector]) -> Result<IndexMap<String, PredictionVector>> {
    let mut groups: IndexMap<&str, Vec<PredictionVector>> = IndexMap::new();
    for p in predictions {
        groups.entry(&p.image_id).or_default().push(p.clone());
    }
    groups
        .into_iter()
        .map(|(id, g)| Ok((id.to_owned(), ensemble_mean(&g)?)))
        .collect()
}

/// Splits vectors by model id, then by image.
pub fn by_model(predictions: &[PredictionVector]) -> IndexMap<String, IndexMap<String, PredictionVector>> {
    let mut out: IndexMap<String, IndexMap<String, PredictionVector>> = IndexMap::new();
    for p in predictions {
        out.entry(p.model_id.clone())
            .or_default()
            .insert(p.image_id.clone(), p.clone());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: FunctionClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of pairs whose true class is this one.
    pub support: usize,
    pub true_positives: usize,
    pub predicted: usize,
    /// Class appears neither as truth nor as prediction.
    pub absent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// One-vs-rest metrics per class plus support-weighted averages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_class: [ClassMetrics; 3],
    pub weighted: AverageMetrics,
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics from `(true class, predicted class)` pairs.
pub fn compute_metrics(pairs: &[(FunctionClass, FunctionClass)]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("no prediction pairs to evaluate"));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (truth, pred) in pairs {
        confusion[truth.index()][pred.index()] += 1;
    }
    let per_class = FunctionClass::ALL.map(|c| {
        let i = c.index();
        let tp = confusion[i][i];
        let support: usize = confusion[i].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            class: c,
            precision,
            recall,
            f1,
            support,
            true_positives: tp,
            predicted,
            absent: support == 0 && predicted == 0,
        }
    });
    let total = pairs.len();
    let weigh = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    Ok(MetricsReport {
        weighted: AverageMetrics {
            precision: weigh(|m| m.precision),
            recall: weigh(|m| m.recall),
            f1: weigh(|m| m.f1),
        },
        per_class,
        total,
    })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6}{:>8}{:>8}{:>8}{:>9}", "Class", "F1", "Prec", "Rec", "Support")?;
        for m in &self.per_class {
            write!(
                f,
                "{:<6}{:>8.4}{:>8.4}{:>8.4}{:>9}",
                m.class.short(),
                m.f1,
                m.precision,
                m.recall,
                m.support
            )?;
            if m.absent {
                write!(f, "  (absent)")?;
            }
            writeln!(f)?;
        }
        writeln!(
            f,
            "{:<6}{:>8.4}{:>8.4}{:>8.4}{:>9}",
            "Avg", self.weighted.f1, self.weighted.precision, self.weighted.recall, self.total
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    Yes,
    Unsure,
    No,
}

/// One person's judgement of the label shown with an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub image_id: String,
    pub shown_label: FunctionClass,
    pub vote: Vote,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_label: Option<FunctionClass>,
}

impl VoteRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        match (self.vote, self.corrected_label) {
            (Vote::No, None) => Err("a \"no\" vote needs a corrected_label".into()),
            (Vote::No, Some(c)) if c == self.shown_label => {
                Err("corrected_label repeats the shown label".into())
            }
            (Vote::Yes | Vote::Unsure, Some(_)) => {
                Err("corrected_label is only allowed with a \"no\" vote".into())
            }
            _ => Ok(()),
        }
    }
}

pub fn read_votes(path: &Path) -> Result<Vec<VoteRecord>> {
    jsonl::read(path, |v: &mut VoteRecord| v.validate())
}

pub const VOTES_PER_IMAGE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum VoteOutcome {
    /// Every voter accepted the shown label.
    ConfirmedOriginal,
    /// Every voter rejected it and proposed the same class.
    ConfirmedNew { label: FunctionClass },
    /// Anything else. `all_unsure` marks three "unsure" votes.
    Inconsistent { all_unsure: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ImageVerdict {
    pub shown_label: FunctionClass,
    #[serde(flatten)]
    pub outcome: VoteOutcome,
}

/// Combines exactly three votes per image. Order of votes does not matter.
pub fn aggregate_votes(votes: &[VoteRecord]) -> Result<IndexMap<String, ImageVerdict>> {
    let mut groups: IndexMap<&str, Vec<&VoteRecord>> = IndexMap::new();
    for v in votes {
        v.validate()
            .map_err(|m| Error::invalid(format!("vote for {}: {m}", v.image_id)))?;
        groups.entry(&v.image_id).or_default().push(v);
    }
    let mut out = IndexMap::with_capacity(groups.len());
    for (id, group) in groups {
        if group.len() != VOTES_PER_IMAGE {
            return Err(Error::invalid(format!(
                "image {id} has {} votes, expected {VOTES_PER_IMAGE}",
                group.len()
            )));
        }
        let shown = group[0].shown_label;
        if group.iter().any(|v| v.shown_label != shown) {
            return Err(Error::invalid(format!("image {id} was shown with different labels")));
        }
        let outcome = if group.iter().all(|v| v.vote == Vote::Yes) {
            VoteOutcome::ConfirmedOriginal
        } else if group.iter().all(|v| v.vote == Vote::No)
            && group.iter().all(|v| v.corrected_label == group[0].corrected_label)
        {
            VoteOutcome::ConfirmedNew {
                label: group[0].corrected_label.expect("validated"),
            }
        } else {
            VoteOutcome::Inconsistent {
                all_unsure: group.iter().all(|v| v.vote == Vote::Unsure),
            }
        };
        out.insert(
            id.to_owned(),
            ImageVerdict {
                shown_label: shown,
                outcome,
            },
        );
    }
    Ok(out)
}

/// Images with a clear verdict and their resolved label.
pub fn validated_subset(verdicts: &IndexMap<String, ImageVerdict>) -> IndexMap<String, FunctionClass> {
    verdicts
        .iter()
        .filter_map(|(id, v)| match v.outcome {
            VoteOutcome::ConfirmedOriginal => Some((id.clone(), v.shown_label)),
            VoteOutcome::ConfirmedNew { label } => Some((id.clone(), label)),
            VoteOutcome::Inconsistent { .. } => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub class: FunctionClass,
    pub confirmed: usize,
    pub relabeled: usize,
    /// `confirmed / (confirmed + relabeled)`, absent without clear votes.
    pub correct_fraction: Option<f64>,
}

/// How often the shown OSM label survived human review.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub per_class: [ClassAccuracy; 3],
    pub overall: Option<f64>,
    /// Rows: shown label. Columns: label after review.
    pub confusion: [[usize; 3]; 3],
    pub clear_votes: usize,
    pub inconsistent: usize,
    pub all_unsure: usize,
}

impl AccuracyReport {
    pub fn no_clear_votes(&self) -> bool {
        self.clear_votes == 0
    }
}

pub fn osm_accuracy_report(verdicts: &IndexMap<String, ImageVerdict>) -> AccuracyReport {
    let mut confusion = [[0usize; 3]; 3];
    let (mut inconsistent, mut all_unsure) = (0, 0);
    for v in verdicts.values() {
        let s = v.shown_label.index();
        match v.outcome {
            VoteOutcome::ConfirmedOriginal => confusion[s][s] += 1,
            VoteOutcome::ConfirmedNew { label } => confusion[s][label.index()] += 1,
            VoteOutcome::Inconsistent { all_unsure: u } => {
                inconsistent += 1;
                if u {
                    all_unsure += 1;
                }
            }
        }
    }
    let per_class = FunctionClass::ALL.map(|c| {
        let row = confusion[c.index()];
        let confirmed = row[c.index()];
        let total: usize = row.iter().sum();
        ClassAccuracy {
            class: c,
            confirmed,
            relabeled: total - confirmed,
            correct_fraction: (total > 0).then(|| confirmed as f64 / total as f64),
        }
    });
    let clear: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
    AccuracyReport {
        per_class,
        overall: (clear > 0).then(|| correct as f64 / clear as f64),
        confusion,
        clear_votes: clear,
        inconsistent,
        all_unsure,
    }
}

impl fmt::Display for AccuracyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.no_clear_votes() {
            writeln!(f, "no clear votes")?;
        } else {
            writeln!(f, "{:<8}{:>10}{:>10}{:>10}", "Shown", "Confirmed", "Relabeled", "Correct")?;
            for c in &self.per_class {
                let pct = c
                    .correct_fraction
                    .map_or("-".to_string(), |x| format!("{:.1}%", x * 100.0));
                writeln!(f, "{:<8}{:>10}{:>10}{:>10}", c.class.short(), c.confirmed, c.relabeled, pct)?;
            }
            writeln!(f, "overall {:.1}%", self.overall.unwrap_or(0.0) * 100.0)?;
            writeln!(f)?;
            writeln!(f, "{:<8}{:>6}{:>6}{:>6}", "shown\\is", "Com", "Oth", "Res")?;
            for c in FunctionClass::ALL {
                let row = self.confusion[c.index()];
                writeln!(f, "{:<8}{:>6}{:>6}{:>6}", c.short(), row[0], row[1], row[2])?;
            }
        }
        writeln!(
            f,
            "clear {}  inconsistent {}  (of which all unsure {})",
            self.clear_votes, self.inconsistent, self.all_unsure
        )
    }
}
