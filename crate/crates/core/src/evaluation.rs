//! Error metrics over estimation records, detection AP and the per-food
//! report.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::calorimetry::EstimationRecord;
use crate::dataset::{BoundingBox, FoodClass};
use crate::error::{Error, Result};

pub const REPORT_HEADER: [&str; 8] = [
    "food",
    "n_images",
    "mean_volume",
    "mean_est_volume",
    "volume_error_pct",
    "mean_mass",
    "mean_est_mass",
    "mass_error_pct",
];

fn mean_relative_error(pairs: impl Iterator<Item = Result<(f64, f64)>>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for pair in pairs {
        let (est, reference) = pair?;
        if reference == 0.0 {
            return Err(Error::InvalidValue("reference value is zero".into()));
        }
        sum += (est - reference) / reference;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidValue("no records".into()));
    }
    Ok(sum / n as f64)
}

/// Mean of the per-record signed relative volume errors `(v - V) / V`.
pub fn mean_volume_error(records: &[EstimationRecord]) -> Result<f64> {
    mean_relative_error(records.iter().map(|r| {
        r.ref_volume
            .map(|v| (r.est_volume, v))
            .ok_or_else(|| Error::InvalidValue(format!("({}, {}) lacks a reference volume", r.scene_id, r.food)))
    }))
}

/// Mean of the per-record signed relative mass errors `(m - M) / M`.
pub fn mean_mass_error(records: &[EstimationRecord]) -> Result<f64> {
    mean_relative_error(records.iter().map(|r| match (r.est_mass, r.ref_mass) {
        (Some(m), Some(mm)) => Ok((m, mm)),
        _ => Err(Error::InvalidValue(format!(
            "({}, {}) lacks an estimated or reference mass",
            r.scene_id, r.food
        ))),
    }))
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = a.x_max.min(b.x_max).saturating_sub(a.x_min.max(b.x_min)) as f64;
    let iy = a.y_max.min(b.y_max).saturating_sub(a.y_min.max(b.y_min)) as f64;
    let inter = ix * iy;
    let union = a.area() as f64 + b.area() as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Interpolation {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoints,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBox {
    pub image: String,
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub image: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMatch {
    pub prediction: ScoredBox,
    /// Index into the ground-truth slice.
    pub matched: Option<usize>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    pub matches: Vec<DetectionMatch>,
    pub warning: Option<String>,
}

/// Greedy matching in descending score order (ties keep input order):
/// each prediction claims the unmatched ground truth in its image with the
/// highest IoU, if that IoU reaches `threshold`.
pub fn match_detections(predictions: &[ScoredBox], ground_truths: &[GroundTruthBox], threshold: f64) -> Vec<DetectionMatch> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .score
            .partial_cmp(&predictions[a].score)
            .unwrap_or(Ordering::Equal)
    });
    let mut taken = vec![false; ground_truths.len()];
    order
        .into_iter()
        .map(|p| {
            let pred = &predictions[p];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in ground_truths.iter().enumerate() {
                if taken[g] || gt.image != pred.image {
                    continue;
                }
                let o = iou(&pred.bbox, &gt.bbox);
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            match best {
                Some((g, o)) if o >= threshold => {
                    taken[g] = true;
                    DetectionMatch {
                        prediction: pred.clone(),
                        matched: Some(g),
                        iou: o,
                    }
                }
                other => DetectionMatch {
                    prediction: pred.clone(),
                    matched: None,
                    iou: other.map_or(0.0, |(_, o)| o),
                },
            }
        })
        .collect()
}

pub fn average_precision(
    predictions: &[ScoredBox],
    ground_truths: &[GroundTruthBox],
    threshold: f64,
    interpolation: Interpolation,
) -> ApResult {
    let matches = match_detections(predictions, ground_truths, threshold);
    if ground_truths.is_empty() {
        let warning = if predictions.is_empty() {
            "no ground truth and no predictions".to_string()
        } else {
            format!("{} prediction(s) but no ground truth", predictions.len())
        };
        log::warn!("{warning}");
        return ApResult {
            ap: 0.0,
            matches,
            warning: Some(warning),
        };
    }
    let n_gt = ground_truths.len() as f64;
    let mut tp = 0.0;
    let mut recall = Vec::with_capacity(matches.len());
    let mut precision = Vec::with_capacity(matches.len());
    for (i, m) in matches.iter().enumerate() {
        if m.matched.is_some() {
            tp += 1.0;
        }
        recall.push(tp / n_gt);
        precision.push(tp / (i + 1) as f64);
    }
    let ap = match interpolation {
        Interpolation::AllPoints => {
            let mut mrec = vec![0.0];
            mrec.extend(&recall);
            mrec.push(1.0);
            let mut mpre = vec![0.0];
            mpre.extend(&precision);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (1..mrec.len())
                .filter(|&i| mrec[i] != mrec[i - 1])
                .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
                .sum()
        }
        Interpolation::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    recall
                        .iter()
                        .zip(&precision)
                        .filter(|(r, _)| **r >= t)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    };
    ApResult {
        ap,
        matches,
        warning: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationSummary {
    pub food: FoodClass,
    pub n_estimations: usize,
    pub mean_ref_volume: f64,
    pub mean_est_volume: f64,
    pub mean_volume_error: f64,
    pub mean_ref_mass: Option<f64>,
    pub mean_est_mass: Option<f64>,
    pub mean_mass_error: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn summarize_food(food: &FoodClass, records: &[EstimationRecord]) -> Result<EvaluationSummary> {
    let mean_volume_error = mean_volume_error(records)?;
    let with_mass: Vec<EstimationRecord> = records
        .iter()
        .filter(|r| r.est_mass.is_some() && r.ref_mass.is_some())
        .cloned()
        .collect();
    let (mean_ref_mass, mean_est_mass, mean_mass_error) = if with_mass.is_empty() {
        (None, None, None)
    } else {
        (
            Some(mean(with_mass.iter().filter_map(|r| r.ref_mass))),
            Some(mean(with_mass.iter().filter_map(|r| r.est_mass))),
            Some(mean_mass_error(&with_mass)?),
        )
    };
    Ok(EvaluationSummary {
        food: food.clone(),
        n_estimations: records.len(),
        mean_ref_volume: mean(records.iter().filter_map(|r| r.ref_volume)),
        mean_est_volume: mean(records.iter().map(|r| r.est_volume)),
        mean_volume_error,
        mean_ref_mass,
        mean_est_mass,
        mean_mass_error,
    })
}

/// Per-food summaries in food-name order. Foods listed in `expected` that
/// have no records are left out and reported as warnings.
pub fn summarize(records: &[EstimationRecord], expected: &[FoodClass]) -> Result<(Vec<EvaluationSummary>, Vec<String>)> {
    let mut groups: BTreeMap<&FoodClass, Vec<EstimationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.food).or_default().push(r.clone());
    }
    let warnings = expected
        .iter()
        .filter(|f| !groups.contains_key(f))
        .map(|f| format!("no evaluation records for `{f}`"))
        .collect();
    let summaries = groups
        .into_iter()
        .map(|(food, recs)| summarize_food(food, &recs))
        .collect::<Result<_>>()?;
    Ok((summaries, warnings))
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt2_opt(v: Option<f64>) -> String {
    v.map(fmt2).unwrap_or_default()
}

/// Writes the per-food CSV report. `n_images` counts two images per
/// estimation.
pub fn emit_report<W: Write>(summaries: &[EvaluationSummary], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let map_err = |e: csv::Error| Error::InvalidValue(e.to_string());
    writer.write_record(REPORT_HEADER).map_err(map_err)?;
    for s in summaries {
        writer
            .write_record([
                s.food.to_string(),
                (2 * s.n_estimations).to_string(),
                fmt2(s.mean_ref_volume),
                fmt2(s.mean_est_volume),
                fmt2(100.0 * s.mean_volume_error),
                fmt2_opt(s.mean_ref_mass),
                fmt2_opt(s.mean_est_mass),
                fmt2_opt(s.mean_mass_error.map(|e| 100.0 * e)),
            ])
            .map_err(map_err)?;
    }
    writer.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

/// Fixed-width text rendering of the report.
pub fn render_table(summaries: &[EvaluationSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:>8} {:>10} {:>10} {:>9} {:>10} {:>10} {:>9}",
        "food", "images", "volume", "est.vol", "vol.err%", "mass", "est.mass", "mass.err%"
    );
    for r in summaries {
        let _ = writeln!(
            s,
            "{:<20} {:>8} {:>10.2} {:>10.2} {:>9.2} {:>10} {:>10} {:>9}",
            r.food.as_str(),
            2 * r.n_estimations,
            r.mean_ref_volume,
            r.mean_est_volume,
            100.0 * r.mean_volume_error,
            fmt2_opt(r.mean_ref_mass),
            fmt2_opt(r.mean_est_mass),
            fmt2_opt(r.mean_mass_error.map(|e| 100.0 * e)),
        );
    }
    s
}
