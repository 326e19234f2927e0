//! Evaluation metric aggregation: mIoU, recall at IoU thresholds, and
//! answer accuracy.
//!
//! Grounding pairs (any task carrying a time range) contribute to mIoU and
//! the recall curve; pairs with discrete answers contribute to accuracy. A
//! missing prediction counts as IoU 0 / incorrect rather than being dropped,
//! so unparseable answers are penalized instead of hidden.

use serde::{Deserialize, Serialize};

use crate::rewards::{iou, GroundTruth, Prediction, TaskKind};

/// Recall at one IoU threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RecallPoint {
    pub threshold: f64,
    pub recall: f64,
}

/// Aggregated evaluation metrics. Metrics are absent when no pair of the
/// corresponding kind was seen.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalResult {
    pub miou: Option<f64>,
    pub recall_at: Vec<RecallPoint>,
    pub accuracy: Option<f64>,
    pub n: usize,
}

fn letters_match(pred: Option<&str>, truth: Option<&str>) -> bool {
    matches!((pred, truth), (Some(p), Some(t)) if p.trim().eq_ignore_ascii_case(t.trim()))
}

fn numbers_match(pred: Option<f64>, truth: Option<f64>) -> bool {
    match (pred, truth) {
        (Some(p), Some(t)) => p == t || (p - t).abs() <= 1e-6 * p.abs().max(t.abs()),
        _ => false,
    }
}

/// Aggregate metrics over (prediction, ground truth, task) triples.
///
/// `thresholds` are the recall IoU cutoffs, typically `{0.3, 0.5, 0.7}`;
/// they are reported in ascending order regardless of input order.
pub fn evaluate(
    pairs: &[(Prediction, GroundTruth, TaskKind)],
    thresholds: &[f64],
) -> EvalResult {
    let mut ious: Vec<f64> = Vec::new();
    let mut correct = 0usize;
    let mut discrete = 0usize;
    for (pred, gt, task) in pairs {
        if task.requires_time_range() {
            let value = pred
                .time_range
                .as_ref()
                .zip(gt.time_range.as_ref())
                .map(|(p, g)| iou(p, g))
                .unwrap_or(0.0);
            ious.push(value);
        }
        if task.is_discrete() {
            discrete += 1;
            let is_correct = match task {
                TaskKind::VqaNumber => numbers_match(pred.answer_number, gt.answer_number),
                _ => letters_match(pred.answer_text.as_deref(), gt.answer_text.as_deref()),
            };
            if is_correct {
                correct += 1;
            }
        }
    }

    let miou = if ious.is_empty() {
        None
    } else {
        Some(ious.iter().sum::<f64>() / ious.len() as f64)
    };
    let mut sorted_thresholds: Vec<f64> = thresholds.to_vec();
    sorted_thresholds.sort_by(f64::total_cmp);
    let recall_at = if ious.is_empty() {
        Vec::new()
    } else {
        sorted_thresholds
            .iter()
            .map(|&threshold| RecallPoint {
                threshold,
                recall: ious.iter().filter(|&&v| v >= threshold).count() as f64
                    / ious.len() as f64,
            })
            .collect()
    };
    let accuracy = if discrete == 0 { None } else { Some(correct as f64 / discrete as f64) };
    EvalResult { miou, recall_at, accuracy, n: pairs.len() }
}

impl EvalResult {
    /// CSV export in the benchmark-table layout: one `R@x` column per
    /// threshold, then mIoU, accuracy and the pair count. Absent metrics
    /// render as empty cells.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> =
            self.recall_at.iter().map(|p| format!("R@{}", p.threshold)).collect();
        header.extend(["mIoU".to_string(), "Acc".to_string(), "n".to_string()]);
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let mut row: Vec<String> =
            self.recall_at.iter().map(|p| format!("{:.4}", p.recall)).collect();
        row.extend([fmt(self.miou), fmt(self.accuracy), self.n.to_string()]);
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}
