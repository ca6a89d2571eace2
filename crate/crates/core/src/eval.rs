//! Greedy IoU matching, all-point average precision and the breakdown of
//! AP by the angle an object subtends at the sensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::nms::IouKind;
use crate::scene::{subtended_angle, ObjectClass, ObjectTruth};

/// Lower edges of the subtended-angle bins, degrees. The last bin is open.
pub const ANGLE_BIN_EDGES: [f64; 5] = [0.0, 5.0, 15.0, 25.0, 35.0];
pub const ANGLE_BIN_LABELS: [&str; 5] = ["0-5", "5-15", "15-25", "25-35", ">=35"];

pub fn angle_bin(degrees: f64) -> usize {
    ANGLE_BIN_EDGES.iter().rposition(|&e| degrees >= e).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub vehicle_iou: f64,
    pub pedestrian_iou: f64,
    pub iou_kind: IouKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            vehicle_iou: 0.7,
            pedestrian_iou: 0.5,
            iou_kind: IouKind::Bev,
        }
    }
}

impl EvalConfig {
    pub fn threshold(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Vehicle => self.vehicle_iou,
            ObjectClass::Pedestrian => self.pedestrian_iou,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub id: u64,
    pub class: ObjectClass,
    pub score: f64,
    /// Index into the scan's truths when the detection is a true positive.
    pub truth: Option<usize>,
}

impl DetectionOutcome {
    pub fn is_tp(&self) -> bool {
        self.truth.is_some()
    }
}

/// Matching of one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// In processing order: descending score, ties by ascending id.
    pub detections: Vec<DetectionOutcome>,
    pub truth_classes: Vec<ObjectClass>,
    pub truth_matched: Vec<bool>,
}

impl MatchResult {
    pub fn false_negatives(&self, class: ObjectClass) -> usize {
        self.truth_classes
            .iter()
            .zip(&self.truth_matched)
            .filter(|(c, m)| **c == class && !**m)
            .count()
    }
}

/// Each detection, best score first, takes the unmatched same-class truth
/// it overlaps most if that overlap reaches the class threshold.
pub fn match_detections(dets: &[Detection], truths: &[ObjectTruth], config: &EvalConfig) -> MatchResult {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    let mut matched = vec![false; truths.len()];
    let mut outcomes = Vec::with_capacity(dets.len());
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths.iter().enumerate() {
            if matched[t] || truth.class != d.class {
                continue;
            }
            let iou = match config.iou_kind {
                IouKind::Bev => crate::geometry::iou_bev(&d.bbox, &truth.bbox),
                IouKind::ThreeD => crate::geometry::iou_3d(&d.bbox, &truth.bbox),
            };
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((t, iou));
            }
        }
        let truth = best.filter(|&(_, iou)| iou >= config.threshold(d.class)).map(|(t, _)| t);
        if let Some(t) = truth {
            matched[t] = true;
        }
        outcomes.push(DetectionOutcome {
            id: d.id,
            class: d.class,
            score: d.score,
            truth,
        });
    }
    MatchResult {
        detections: outcomes,
        truth_classes: truths.iter().map(|t| t.class).collect(),
        truth_matched: matched,
    }
}

/// Area under the precision envelope for a ranked TP/FP sequence.
pub fn ap_from_ranked(ranked_tp: &[bool], n_truths: usize) -> Result<f64> {
    if n_truths == 0 {
        return Err(Error::UndefinedMetric("no ground truths".into()));
    }
    let mut tp = 0usize;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(ranked_tp.len());
    for (rank, &hit) in ranked_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp as f64 / n_truths as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut envelope = 0.0f64;
    for p in points.iter_mut().rev() {
        envelope = envelope.max(p.1);
        p.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in points {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Pools detections of `class` over every scan (descending score; ties by
/// scan, then processing order) and computes all-point AP.
pub fn average_precision(results: &[MatchResult], class: ObjectClass) -> Result<f64> {
    let n_truths = results
        .iter()
        .map(|r| r.truth_classes.iter().filter(|c| **c == class).count())
        .sum();
    ap_from_ranked(&ranked(results, class, |_, _| true), n_truths)
        .map_err(|_| Error::UndefinedMetric(format!("no {} ground truths", class.name())))
}

fn ranked(
    results: &[MatchResult],
    class: ObjectClass,
    keep: impl Fn(usize, &DetectionOutcome) -> bool,
) -> Vec<bool> {
    let mut pooled: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (s, r) in results.iter().enumerate() {
        for (k, d) in r.detections.iter().enumerate() {
            if d.class == class && keep(s, d) {
                pooled.push((d.score, s, k, d.is_tp()));
            }
        }
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    pooled.into_iter().map(|p| p.3).collect()
}

/// AP per subtended-angle bin. A true positive belongs to its truth's bin;
/// false positives count against every bin. Empty bins give `None`.
pub fn ap_by_angle_bin(
    results: &[MatchResult],
    truths: &[Vec<ObjectTruth>],
    class: ObjectClass,
) -> Result<[Option<f64>; 5]> {
    if results.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} match results for {} truth sets",
            results.len(),
            truths.len()
        )));
    }
    let bins: Vec<Vec<usize>> = truths
        .iter()
        .map(|scan| scan.iter().map(|t| subtended_angle(t).map(angle_bin)).collect())
        .collect::<Result<_>>()?;
    let mut out = [None; 5];
    for (b, slot) in out.iter_mut().enumerate() {
        let n_truths = truths
            .iter()
            .zip(&bins)
            .map(|(scan, sb)| scan.iter().zip(sb).filter(|(t, bin)| t.class == class && **bin == b).count())
            .sum();
        if n_truths == 0 {
            continue;
        }
        let ranked = ranked(results, class, |s, d| d.truth.is_none_or(|t| bins[s][t] == b));
        *slot = Some(ap_from_ranked(&ranked, n_truths)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: ObjectClass,
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub bins: [Option<f64>; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// Mean of the defined per-class APs.
    pub map: Option<f64>,
}

impl EvalReport {
    pub fn class(&self, class: ObjectClass) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn fp_total(&self) -> usize {
        self.classes.iter().map(|c| c.fp).sum()
    }
}

pub fn evaluate(results: &[MatchResult], truths: &[Vec<ObjectTruth>]) -> Result<EvalReport> {
    let mut classes = Vec::new();
    for class in ObjectClass::ALL {
        let (mut tp, mut fp) = (0, 0);
        for d in results.iter().flat_map(|r| &r.detections).filter(|d| d.class == class) {
            if d.is_tp() {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let ap = match average_precision(results, class) {
            Ok(ap) => Some(ap),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        classes.push(ClassReport {
            class,
            ap,
            tp,
            fp,
            fn_: results.iter().map(|r| r.false_negatives(class)).sum(),
            bins: ap_by_angle_bin(results, truths, class)?,
        });
    }
    let defined: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let map = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(EvalReport { classes, map })
}

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub const BIN_CSV_HEADER: &str = "variant,n,class,bin,ap";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// One CSV row per (class, bin), prefixed by variant and slice count.
pub fn bin_csv_rows(variant: &str, n: usize, report: &EvalReport) -> Vec<String> {
    let mut rows = Vec::new();
    for c in &report.classes {
        for (b, ap) in c.bins.iter().enumerate() {
            rows.push(format!(
                "{variant},{n},{},{},{}",
                c.class.name(),
                ANGLE_BIN_LABELS[b],
                fmt_opt(*ap)
            ));
        }
    }
    rows
}

pub fn write_bin_csv(path: &Path, variant: &str, n: usize, report: &EvalReport) -> Result<()> {
    let mut text = String::from(BIN_CSV_HEADER);
    text.push('\n');
    for row in bin_csv_rows(variant, n, report) {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
