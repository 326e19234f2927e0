//! Multi-task training-data curation: k-rollout difficulty filtering,
//! tool-parameter suggestions with bounded noise, and chain-of-thought
//! post-processing rules.
//!
//! The pipeline never calls an external annotator itself. It emits
//! `cot_candidates` (samples plus suggested clip windows) for an external
//! reasoning model to author, and ingests the authored trajectories back
//! through [`postprocess_cot`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, DataError, Validate};
use crate::policy::PolicyProvider;
use crate::protocol::{run_episode, EpisodeConfig, TerminalReason, Toolbox, Trajectory};
use crate::rewards::{
    accuracy_breakdown, extract_prediction, score_trajectory, GroundTruth, TaskKind, TimeRange,
};
use crate::seed;
use crate::toolbox::VideoMeta;

/// One curated training/eval instance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub task: TaskKind,
    /// Dataset name; keys into the alpha/beta table for grounding tasks.
    pub source: String,
    pub video: VideoMeta,
    pub question: String,
    pub ground_truth: GroundTruth,
}

impl Validate for Sample {
    fn validate(&self) -> Result<(), String> {
        if self.sample_id.is_empty() {
            return Err("field `sample_id` must be non-empty".into());
        }
        if self.source.is_empty() {
            return Err("field `source` must be non-empty".into());
        }
        self.video.validate()?;
        self.ground_truth.validate_for(self.task)?;
        if let Some(range) = &self.ground_truth.time_range {
            if range.end > self.video.duration {
                return Err("field `ground_truth.time_range` must lie within the video duration"
                    .into());
            }
        }
        Ok(())
    }
}

/// Pipeline-level failures.
#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("rollout rewards must be non-empty")]
    EmptyRewards,
    #[error("invalid suggestion input: {0}")]
    InvalidSuggestion(String),
}

/// Default reward-range threshold: ranges at or below it are discarded.
pub const DEFAULT_DELTA_THRESHOLD: f64 = 0.05;

/// Tolerance when classifying rewards as "at the ceiling" or "at zero".
const CLASSIFY_EPS: f64 = 1e-9;

/// How a sample's rollout batch behaved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterClassification {
    /// Every rollout at the maximum achievable reward: too easy.
    PassAll,
    /// Every rollout at zero: too hard.
    PassNone,
    Informative,
}

/// Reward-range statistics for one sample's k rollouts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RolloutBatchStats {
    pub rewards: Vec<f64>,
    pub delta: f64,
    pub classification: FilterClassification,
}

/// Stats plus the discard decision at a given threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub stats: RolloutBatchStats,
    /// True when `delta <= threshold` (inclusive).
    pub discard: bool,
}

/// Classify one sample's rollout rewards and decide whether to discard it.
///
/// `ceiling` is the maximum achievable reward for the values being compared
/// (1.0 when filtering on accuracy alone, 2.0 on total reward). The discard
/// rule is the reward range: `max - min <= threshold`.
pub fn filter_sample(
    rewards: &[f64],
    threshold: f64,
    ceiling: f64,
) -> Result<FilterOutcome, PipelineError> {
    if rewards.is_empty() {
        return Err(PipelineError::EmptyRewards);
    }
    let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
    let delta = max - min;
    let classification = if rewards.iter().all(|r| (r - ceiling).abs() <= CLASSIFY_EPS) {
        FilterClassification::PassAll
    } else if rewards.iter().all(|r| r.abs() <= CLASSIFY_EPS) {
        FilterClassification::PassNone
    } else {
        FilterClassification::Informative
    };
    Ok(FilterOutcome {
        stats: RolloutBatchStats { rewards: rewards.to_vec(), delta, classification },
        discard: delta <= threshold,
    })
}

/// A ground-truth window widened by bounded noise, used to seed
/// annotation-time tool calls.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Suggestion {
    pub start_suggest: f64,
    pub end_suggest: f64,
    pub lambda: f64,
    pub seed: u64,
}

/// The widening map with explicit noise draws `u1, u2`:
/// `s' = clamp(s - lambda*|s|*u1, 0, L)` and
/// `e' = clamp(e + lambda*|L - e|*u2, 0, L)`.
pub fn suggest_with_noise(
    gt: &TimeRange,
    duration: f64,
    lambda: f64,
    u1: f64,
    u2: f64,
    seed: u64,
) -> Suggestion {
    let start_suggest = (gt.start - lambda * gt.start.abs() * u1).clamp(0.0, duration);
    let end_suggest = (gt.end + lambda * (duration - gt.end).abs() * u2).clamp(0.0, duration);
    Suggestion { start_suggest, end_suggest, lambda, seed }
}

/// Draw `u1, u2` uniformly from `[0, 1)` with the given seed and apply the
/// widening map. Deterministic per seed.
pub fn suggest_tool_params(
    gt: &TimeRange,
    duration: f64,
    lambda: f64,
    seed: u64,
) -> Result<Suggestion, PipelineError> {
    if !(0.0 <= gt.start && gt.start < gt.end && gt.end <= duration) {
        return Err(PipelineError::InvalidSuggestion(format!(
            "need 0 <= start < end <= duration, got [{}, {}] in {duration}",
            gt.start, gt.end
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(PipelineError::InvalidSuggestion(format!(
            "lambda must be non-negative and finite, got {lambda}"
        )));
    }
    use rand::Rng;
    let mut rng = seed::rng(seed);
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    Ok(suggest_with_noise(gt, duration, lambda, u1, u2, seed))
}

/// Post-processing verdict for an authored chain-of-thought.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    RejectIncomplete,
    RejectWrongAnswer,
    RejectLeak,
}

/// An authored chain-of-thought with its post-processing outcome.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CotRecord {
    pub sample: Sample,
    pub rounds: Trajectory,
    pub verdict: Verdict,
    pub reject_detail: String,
}

impl Validate for CotRecord {
    fn validate(&self) -> Result<(), String> {
        self.sample.validate()?;
        self.rounds.validate()?;
        if self.verdict == Verdict::Keep && self.rounds.final_answer.is_none() {
            return Err("field `verdict` cannot be keep without a final answer".into());
        }
        Ok(())
    }
}

/// Thresholds and phrase list for [`postprocess_cot`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PostprocessConfig {
    /// Minimum IoU for a grounding answer to count as matching.
    pub grounding_keep_threshold: f64,
    /// Minimum score for continuous text/number answers to count as
    /// matching; discrete answers always require an exact match.
    pub text_keep_threshold: f64,
    /// Phrases that must not appear in think text (matched
    /// case-insensitively).
    pub forbidden_phrases: Vec<String>,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            grounding_keep_threshold: 0.9,
            text_keep_threshold: 1.0,
            forbidden_phrases: vec!["ground truth".into(), "suggestion".into()],
        }
    }
}

fn answer_matches(sample: &Sample, answer: &str, cfg: &PostprocessConfig) -> Result<(), String> {
    let pred = extract_prediction(answer, sample.task);
    let breakdown = accuracy_breakdown(sample.task, &pred, &sample.ground_truth);
    if sample.task.requires_time_range() {
        let iou = breakdown.iou.unwrap_or(0.0);
        if iou < cfg.grounding_keep_threshold {
            return Err(format!(
                "IoU {iou:.4} below keep threshold {}",
                cfg.grounding_keep_threshold
            ));
        }
    }
    match sample.task {
        TaskKind::TemporalGrounding => Ok(()),
        TaskKind::VqaMcq | TaskKind::VqaNumber | TaskKind::GroundedVqaMcq => {
            if breakdown.text_score.unwrap_or(0.0) < 1.0 {
                Err("answer does not exactly match the ground truth".into())
            } else {
                Ok(())
            }
        }
        _ => {
            let score = breakdown.text_score.unwrap_or(0.0);
            if score < cfg.text_keep_threshold {
                Err(format!(
                    "answer score {score:.4} below keep threshold {}",
                    cfg.text_keep_threshold
                ))
            } else {
                Ok(())
            }
        }
    }
}

/// Apply the rule-based quality gates to an authored chain-of-thought, in
/// order: completeness, answer correctness, leaked annotation hints.
pub fn postprocess_cot(
    sample: &Sample,
    rounds: &Trajectory,
    cfg: &PostprocessConfig,
) -> CotRecord {
    let dangling_tool_call = rounds
        .rounds
        .iter()
        .any(|r| r.output.tool_call.is_some() && r.tool_result.is_none());
    let (verdict, reject_detail) = if rounds.final_answer.is_none()
        || rounds.terminal_reason != TerminalReason::Answered
        || dangling_tool_call
    {
        (
            Verdict::RejectIncomplete,
            if dangling_tool_call {
                "dangling tool call without a result".to_string()
            } else {
                "no final answer reached".to_string()
            },
        )
    } else if let Err(detail) =
        answer_matches(sample, rounds.final_answer.as_deref().unwrap_or(""), cfg)
    {
        (Verdict::RejectWrongAnswer, detail)
    } else if let Some(phrase) = leaked_phrase(rounds, &cfg.forbidden_phrases) {
        (Verdict::RejectLeak, format!("think text mentions `{phrase}`"))
    } else {
        (Verdict::Keep, String::new())
    };
    CotRecord { sample: sample.clone(), rounds: rounds.clone(), verdict, reject_detail }
}

fn leaked_phrase(traj: &Trajectory, phrases: &[String]) -> Option<String> {
    let think_text: String = traj
        .rounds
        .iter()
        .flat_map(|r| r.output.think_segments.iter())
        .map(|s| s.to_lowercase())
        .collect::<Vec<_>>()
        .join("\n");
    phrases
        .iter()
        .find(|p| !p.is_empty() && think_text.contains(&p.to_lowercase()))
        .cloned()
}

/// Knobs of the curation run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CurationConfig {
    /// Rollouts per sample.
    pub k: usize,
    /// Inclusive reward-range discard threshold.
    pub delta_threshold: f64,
    /// Filter on total reward instead of the accuracy component.
    pub delta_on_total: bool,
    pub episode: EpisodeConfig,
    /// Suggestion noise scale.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            k: 8,
            delta_threshold: DEFAULT_DELTA_THRESHOLD,
            delta_on_total: false,
            episode: EpisodeConfig::default(),
            lambda: 0.2,
            seed: 0,
        }
    }
}

/// Per-source tallies. Classification counts and the delta-rule decision are
/// tracked separately: a sample can be informative yet still discarded by a
/// small reward range.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct SourceCounts {
    pub input: u64,
    pub pass_all: u64,
    pub pass_none: u64,
    pub informative: u64,
    pub discarded_by_delta: u64,
    pub kept: u64,
    pub failed: u64,
}

impl SourceCounts {
    fn absorb_classification(&mut self, c: FilterClassification) {
        match c {
            FilterClassification::PassAll => self.pass_all += 1,
            FilterClassification::PassNone => self.pass_none += 1,
            FilterClassification::Informative => self.informative += 1,
        }
    }
}

/// A per-sample failure that did not abort the run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleFailure {
    pub sample_id: String,
    pub message: String,
}

/// Aggregate curation outcome counts and the reward histogram.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CurationReport {
    pub totals: SourceCounts,
    pub per_source: BTreeMap<String, SourceCounts>,
    /// 20 bins of width 0.1 over rollout filter values in `[0, 2]`.
    pub reward_histogram: Vec<u64>,
    pub failures: Vec<SampleFailure>,
}

impl CurationReport {
    fn new() -> Self {
        Self {
            totals: SourceCounts::default(),
            per_source: BTreeMap::new(),
            reward_histogram: vec![0; 20],
            failures: Vec::new(),
        }
    }

    fn record_value(&mut self, value: f64) {
        let bin = ((value / 0.1).floor() as usize).min(19);
        self.reward_histogram[bin] += 1;
    }
}

/// A kept sample paired with its annotation-time suggestion (grounding
/// tasks only).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CotCandidate {
    pub sample: Sample,
    pub suggestion: Option<Suggestion>,
}

impl Validate for CotCandidate {
    fn validate(&self) -> Result<(), String> {
        self.sample.validate()
    }
}

/// Everything a curation run produces.
#[derive(Debug, Clone)]
pub struct CurationOutput {
    pub rl_split: Vec<Sample>,
    pub cot_candidates: Vec<CotCandidate>,
    pub report: CurationReport,
}

/// Run k rollouts per sample, score them, and keep the samples whose reward
/// range shows a learnable spread.
///
/// Per-sample failures (policy transport) are recorded in the report and
/// never abort the stream. Deterministic for a fixed (input, seed, policy)
/// triple: every rollout's randomness derives from the top-level seed and
/// the sample id.
pub fn run_curation(
    samples: &[Sample],
    provider: &dyn PolicyProvider,
    toolbox: &Toolbox,
    cfg: &CurationConfig,
) -> CurationOutput {
    let ceiling = if cfg.delta_on_total { 2.0 } else { 1.0 };
    let mut report = CurationReport::new();
    let mut rl_split = Vec::new();
    let mut cot_candidates = Vec::new();

    for sample in samples {
        report.totals.input += 1;
        let per_source = report.per_source.entry(sample.source.clone()).or_default();
        per_source.input += 1;

        let mut values = Vec::with_capacity(cfg.k);
        let mut failure: Option<String> = None;
        for rollout in 0..cfg.k {
            let sub_seed = seed::rollout_seed(cfg.seed, &sample.sample_id, rollout);
            let episode = provider
                .make(sample, rollout, sub_seed)
                .and_then(|mut policy| run_episode(policy.as_mut(), sample, toolbox, &cfg.episode));
            match episode {
                Ok(traj) => {
                    let c = score_trajectory(&traj, sample, cfg.episode.tools_enabled);
                    let value = if cfg.delta_on_total {
                        c.accuracy + c.format + c.tool
                    } else {
                        c.accuracy
                    };
                    values.push(value);
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(message) = failure {
            report.totals.failed += 1;
            let per_source = report.per_source.entry(sample.source.clone()).or_default();
            per_source.failed += 1;
            report
                .failures
                .push(SampleFailure { sample_id: sample.sample_id.clone(), message });
            continue;
        }
        for &v in &values {
            report.record_value(v);
        }
        let outcome = filter_sample(&values, cfg.delta_threshold, ceiling)
            .expect("k >= 1 rollouts scored");
        report.totals.absorb_classification(outcome.stats.classification);
        let per_source = report.per_source.entry(sample.source.clone()).or_default();
        per_source.absorb_classification(outcome.stats.classification);
        if outcome.discard {
            report.totals.discarded_by_delta += 1;
            per_source.discarded_by_delta += 1;
        } else {
            report.totals.kept += 1;
            per_source.kept += 1;
            rl_split.push(sample.clone());
            let suggestion = sample.ground_truth.time_range.as_ref().and_then(|range| {
                let suggestion_seed = seed::derive(cfg.seed, &[&sample.sample_id, "suggestion"]);
                suggest_tool_params(range, sample.video.duration, cfg.lambda, suggestion_seed).ok()
            });
            cot_candidates.push(CotCandidate { sample: sample.clone(), suggestion });
        }
    }

    CurationOutput { rl_split, cot_candidates, report }
}

/// Read a sample dataset (JSONL, one record per line) with strict schema
/// validation.
pub fn read_dataset(path: &std::path::Path) -> Result<Vec<Sample>, DataError> {
    jsonl::read_file(path)
}

/// Write a sample dataset as canonical JSONL.
pub fn write_dataset(path: &std::path::Path, samples: &[Sample]) -> Result<(), DataError> {
    jsonl::write_file(path, samples)
}

/// Read authored chain-of-thought records.
pub fn read_cot_records(path: &std::path::Path) -> Result<Vec<CotRecord>, DataError> {
    jsonl::read_file(path)
}

/// Write chain-of-thought records.
pub fn write_cot_records(path: &std::path::Path, records: &[CotRecord]) -> Result<(), DataError> {
    jsonl::write_file(path, records)
}

/// Annotation prompt template for round 1 (initial thinking), with named
/// placeholders.
pub fn cot_prompt_round1() -> &'static str {
    include_str!("../assets/cot_prompt_round1.txt")
}

/// Annotation prompt template for round 2 (tool call, optionally seeded
/// with a suggested window).
pub fn cot_prompt_round2() -> &'static str {
    include_str!("../assets/cot_prompt_round2.txt")
}

/// Annotation prompt template for round 3 (reflection and final answer).
pub fn cot_prompt_round3() -> &'static str {
    include_str!("../assets/cot_prompt_round3.txt")
}
