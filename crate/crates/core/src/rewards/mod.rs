//! The three-part rollout reward: task accuracy, strict format, and tool
//! use.
//!
//! Accuracy covers five answer metrics — interval IoU for grounding, exact
//! match for multiple choice and numbers, Rouge for open-ended answers, word
//! error rate for OCR, relative L1 for regression — plus the averaged
//! grounded-VQA combinations. Answer extraction prefers a canonical JSON
//! grammar and falls back to lenient scanning so audits can tell the two
//! apart.

mod text;

pub use text::{rouge_mean, tokenize, wer_reward, word_edit_distance, word_error_rate};

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::jsonl::Validate;
use crate::pipeline::Sample;
use crate::protocol::{validate_format, Trajectory};

/// Closed set of training/eval task kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TemporalGrounding,
    VqaMcq,
    VqaNumber,
    VqaOpen,
    VqaOcr,
    VqaRegression,
    GroundedVqaMcq,
    GroundedVqaOpen,
}

impl TaskKind {
    /// Tasks whose ground truth carries a time range.
    pub fn requires_time_range(&self) -> bool {
        matches!(
            self,
            TaskKind::TemporalGrounding | TaskKind::GroundedVqaMcq | TaskKind::GroundedVqaOpen
        )
    }

    /// Tasks whose answers are discretely right or wrong.
    pub fn is_discrete(&self) -> bool {
        matches!(self, TaskKind::VqaMcq | TaskKind::VqaNumber | TaskKind::GroundedVqaMcq)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::TemporalGrounding => "temporal_grounding",
            TaskKind::VqaMcq => "vqa_mcq",
            TaskKind::VqaNumber => "vqa_number",
            TaskKind::VqaOpen => "vqa_open",
            TaskKind::VqaOcr => "vqa_ocr",
            TaskKind::VqaRegression => "vqa_regression",
            TaskKind::GroundedVqaMcq => "grounded_vqa_mcq",
            TaskKind::GroundedVqaOpen => "grounded_vqa_open",
        }
    }
}

/// A closed time interval in seconds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TimeRange {
    pub start: f64,
    pub end: f64,
}

impl TimeRange {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Ground truth for one sample; which fields are present depends on the
/// task.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct GroundTruth {
    pub time_range: Option<TimeRange>,
    pub answer_text: Option<String>,
    pub answer_number: Option<f64>,
}

impl GroundTruth {
    /// Check the per-task field invariants.
    pub fn validate_for(&self, task: TaskKind) -> Result<(), String> {
        if task.requires_time_range() {
            match &self.time_range {
                None => {
                    return Err(format!(
                        "field `ground_truth.time_range` is required for {}",
                        task.as_str()
                    ))
                }
                Some(r) if !(r.start < r.end) => {
                    return Err("field `ground_truth.time_range` must have start < end".into())
                }
                Some(r) if r.start < 0.0 => {
                    return Err("field `ground_truth.time_range` must be non-negative".into())
                }
                _ => {}
            }
        }
        match task {
            TaskKind::VqaMcq
            | TaskKind::VqaOpen
            | TaskKind::VqaOcr
            | TaskKind::GroundedVqaMcq
            | TaskKind::GroundedVqaOpen => {
                if self.answer_text.is_none() {
                    return Err(format!(
                        "field `ground_truth.answer_text` is required for {}",
                        task.as_str()
                    ));
                }
            }
            TaskKind::VqaNumber | TaskKind::VqaRegression => {
                if self.answer_number.is_none() {
                    return Err(format!(
                        "field `ground_truth.answer_number` is required for {}",
                        task.as_str()
                    ));
                }
            }
            TaskKind::TemporalGrounding => {}
        }
        Ok(())
    }
}

/// Structured view of an extracted answer. All fields may be absent when
/// extraction failed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Prediction {
    pub time_range: Option<TimeRange>,
    pub answer_text: Option<String>,
    pub answer_number: Option<f64>,
}

impl Prediction {
    pub fn is_empty(&self) -> bool {
        self.time_range.is_none() && self.answer_text.is_none() && self.answer_number.is_none()
    }
}

/// Per-rollout reward components. `iou` and `text_score` expose the halves
/// of grounded-VQA accuracy so downstream reward shaping can rescale the
/// IoU part on its own.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RewardComponents {
    pub accuracy: f64,
    pub format: f64,
    pub tool: f64,
    pub iou: Option<f64>,
    pub text_score: Option<f64>,
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").expect("valid regex")
    })
}

fn numeric_literals(text: &str) -> Vec<f64> {
    number_regex()
        .find_iter(text)
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .filter(|x| x.is_finite())
        .collect()
}

fn fallback_range(text: &str) -> Option<TimeRange> {
    let nums = numeric_literals(text);
    if nums.len() < 2 {
        return None;
    }
    let (a, b) = (nums[0], nums[1]);
    Some(TimeRange { start: a.min(b), end: a.max(b) })
}

/// First standalone capital letter A-E: not adjacent to other alphanumerics.
fn fallback_letter(text: &str) -> Option<String> {
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !('A'..='E').contains(&c) {
            continue;
        }
        let prev_ok = i == 0 || !chars[i - 1].is_alphanumeric();
        let next_ok = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        if prev_ok && next_ok {
            return Some(c.to_string());
        }
    }
    None
}

fn canonical_letter(text: &str) -> Option<String> {
    let t = text.trim();
    let mut chars = t.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() && c.to_ascii_uppercase() <= 'E' => {
            Some(c.to_ascii_uppercase().to_string())
        }
        _ => None,
    }
}

fn json_number(value: &serde_json::Value) -> Option<f64> {
    value.as_f64().filter(|x| x.is_finite())
}

fn canonical_range(text: &str) -> Option<TimeRange> {
    let value: serde_json::Value = serde_json::from_str(text.trim()).ok()?;
    let obj = value.as_object()?;
    let start = json_number(obj.get("start")?)?;
    let end = json_number(obj.get("end")?)?;
    Some(TimeRange { start: start.min(end), end: start.max(end) })
}

fn canonical_grounded(text: &str) -> Option<(TimeRange, String)> {
    let value: serde_json::Value = serde_json::from_str(text.trim()).ok()?;
    let obj = value.as_object()?;
    let start = json_number(obj.get("start")?)?;
    let end = json_number(obj.get("end")?)?;
    let answer = match obj.get("answer")? {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Number(n) => n.to_string(),
        _ => return None,
    };
    Some((TimeRange { start: start.min(end), end: start.max(end) }, answer))
}

/// Extract a structured prediction from the text inside the answer tags.
///
/// Canonical grammar first — JSON `{"start", "end"[, "answer"]}` for
/// grounding tasks, a single letter for MCQ, a decimal literal for numeric
/// tasks — then a lenient fallback (first two numeric literals as a range,
/// first standalone capital letter as a choice). Total: failure yields an
/// empty prediction, never an error.
pub fn extract_prediction(answer: &str, task: TaskKind) -> Prediction {
    let trimmed = answer.trim();
    match task {
        TaskKind::TemporalGrounding => {
            let range = canonical_range(trimmed).or_else(|| fallback_range(trimmed));
            Prediction { time_range: range, ..Prediction::default() }
        }
        TaskKind::GroundedVqaMcq | TaskKind::GroundedVqaOpen => {
            if let Some((range, answer)) = canonical_grounded(trimmed) {
                return Prediction {
                    time_range: Some(range),
                    answer_text: Some(answer),
                    answer_number: None,
                };
            }
            let answer_text = if task == TaskKind::GroundedVqaMcq {
                fallback_letter(trimmed)
            } else if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_string())
            };
            Prediction {
                time_range: fallback_range(trimmed),
                answer_text,
                answer_number: None,
            }
        }
        TaskKind::VqaMcq => Prediction {
            answer_text: canonical_letter(trimmed).or_else(|| fallback_letter(trimmed)),
            ..Prediction::default()
        },
        TaskKind::VqaNumber | TaskKind::VqaRegression => {
            let number = trimmed
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .or_else(|| numeric_literals(trimmed).first().copied());
            Prediction { answer_number: number, ..Prediction::default() }
        }
        TaskKind::VqaOpen | TaskKind::VqaOcr => Prediction {
            answer_text: if trimmed.is_empty() { None } else { Some(trimmed.to_string()) },
            ..Prediction::default()
        },
    }
}

/// Intersection over union of two time intervals; zero when the union has
/// zero length.
pub fn iou(a: &TimeRange, b: &TimeRange) -> f64 {
    let intersection = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - intersection;
    if union <= 0.0 {
        0.0
    } else {
        intersection / union
    }
}

fn exact_match_letter(pred: Option<&str>, truth: Option<&str>) -> f64 {
    match (pred, truth) {
        (Some(p), Some(t)) if p.trim().eq_ignore_ascii_case(t.trim()) => 1.0,
        _ => 0.0,
    }
}

fn numbers_match(pred: f64, truth: f64) -> bool {
    if pred == truth {
        return true;
    }
    (pred - truth).abs() <= 1e-6 * pred.abs().max(truth.abs())
}

fn regression_reward(pred: Option<f64>, truth: f64) -> f64 {
    let Some(pred) = pred else { return 0.0 };
    if truth == 0.0 {
        return if pred == 0.0 { 1.0 } else { 0.0 };
    }
    (1.0 - (pred - truth).abs() / truth.abs()).clamp(0.0, 1.0)
}

/// Accuracy with its grounded-VQA halves exposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyBreakdown {
    pub accuracy: f64,
    pub iou: Option<f64>,
    pub text_score: Option<f64>,
}

/// Task-specific accuracy with the IoU/text split preserved for downstream
/// reward shaping.
pub fn accuracy_breakdown(task: TaskKind, pred: &Prediction, gt: &GroundTruth) -> AccuracyBreakdown {
    let iou_value = || {
        pred.time_range
            .as_ref()
            .zip(gt.time_range.as_ref())
            .map(|(p, g)| iou(p, g))
            .unwrap_or(0.0)
    };
    match task {
        TaskKind::TemporalGrounding => {
            let v = iou_value();
            AccuracyBreakdown { accuracy: v, iou: Some(v), text_score: None }
        }
        TaskKind::VqaMcq => {
            let v = exact_match_letter(pred.answer_text.as_deref(), gt.answer_text.as_deref());
            AccuracyBreakdown { accuracy: v, iou: None, text_score: Some(v) }
        }
        TaskKind::VqaNumber => {
            let v = match (pred.answer_number, gt.answer_number) {
                (Some(p), Some(t)) if numbers_match(p, t) => 1.0,
                _ => 0.0,
            };
            AccuracyBreakdown { accuracy: v, iou: None, text_score: Some(v) }
        }
        TaskKind::VqaOpen => {
            let v = match (&pred.answer_text, &gt.answer_text) {
                (Some(p), Some(t)) => rouge_mean(p, t),
                _ => 0.0,
            };
            AccuracyBreakdown { accuracy: v, iou: None, text_score: Some(v) }
        }
        TaskKind::VqaOcr => {
            let v = match (&pred.answer_text, &gt.answer_text) {
                (Some(p), Some(t)) => wer_reward(t, p),
                _ => 0.0,
            };
            AccuracyBreakdown { accuracy: v, iou: None, text_score: Some(v) }
        }
        TaskKind::VqaRegression => {
            let v = regression_reward(pred.answer_number, gt.answer_number.unwrap_or(0.0));
            AccuracyBreakdown { accuracy: v, iou: None, text_score: Some(v) }
        }
        TaskKind::GroundedVqaMcq => {
            let i = iou_value();
            let t = exact_match_letter(pred.answer_text.as_deref(), gt.answer_text.as_deref());
            AccuracyBreakdown { accuracy: (i + t) / 2.0, iou: Some(i), text_score: Some(t) }
        }
        TaskKind::GroundedVqaOpen => {
            let i = iou_value();
            let t = match (&pred.answer_text, &gt.answer_text) {
                (Some(p), Some(g)) => rouge_mean(p, g),
                _ => 0.0,
            };
            AccuracyBreakdown { accuracy: (i + t) / 2.0, iou: Some(i), text_score: Some(t) }
        }
    }
}

/// Task-specific accuracy reward in `[0, 1]`.
pub fn accuracy_reward(task: TaskKind, pred: &Prediction, gt: &GroundTruth) -> f64 {
    accuracy_breakdown(task, pred, gt).accuracy
}

/// Strict format reward: 0.5 with tools, 1.0 without, granted only when the
/// whole-rollout concatenation matches an accepted shape exactly.
pub fn format_reward(traj: &Trajectory, tools_enabled: bool) -> f64 {
    if validate_format(&traj.raw_texts, tools_enabled) {
        if tools_enabled {
            0.5
        } else {
            1.0
        }
    } else {
        0.0
    }
}

/// Tool reward: 0.5 when at least one tool call succeeded, 0 otherwise, and
/// always 0 with tools disabled.
pub fn tool_reward(traj: &Trajectory, tools_enabled: bool) -> f64 {
    if tools_enabled && traj.successful_tool_rounds() > 0 {
        0.5
    } else {
        0.0
    }
}

/// Score a finished trajectory against its sample.
pub fn score_trajectory(traj: &Trajectory, sample: &Sample, tools_enabled: bool) -> RewardComponents {
    let (accuracy, iou, text_score) = match &traj.final_answer {
        Some(answer) => {
            let pred = extract_prediction(answer, sample.task);
            let b = accuracy_breakdown(sample.task, &pred, &sample.ground_truth);
            (b.accuracy, b.iou, b.text_score)
        }
        None => (0.0, None, None),
    };
    RewardComponents {
        accuracy,
        format: format_reward(traj, tools_enabled),
        tool: tool_reward(traj, tools_enabled),
        iou,
        text_score,
    }
}

/// One line of the reward report, keyed for downstream grouping.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RewardRecord {
    pub sample_id: String,
    pub task: TaskKind,
    pub source: String,
    pub accuracy: f64,
    pub format: f64,
    pub tool: f64,
    pub iou: Option<f64>,
    pub text_score: Option<f64>,
}

impl RewardRecord {
    pub fn new(sample: &Sample, components: &RewardComponents) -> Self {
        Self {
            sample_id: sample.sample_id.clone(),
            task: sample.task,
            source: sample.source.clone(),
            accuracy: components.accuracy,
            format: components.format,
            tool: components.tool,
            iou: components.iou,
            text_score: components.text_score,
        }
    }

    pub fn components(&self) -> RewardComponents {
        RewardComponents {
            accuracy: self.accuracy,
            format: self.format,
            tool: self.tool,
            iou: self.iou,
            text_score: self.text_score,
        }
    }
}

impl Validate for RewardRecord {
    fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err("field `accuracy` must be in [0, 1]".into());
        }
        if ![0.0, 0.5, 1.0].contains(&self.format) {
            return Err("field `format` must be one of 0, 0.5, 1".into());
        }
        if ![0.0, 0.5].contains(&self.tool) {
            return Err("field `tool` must be 0 or 0.5".into());
        }
        Ok(())
    }
}
