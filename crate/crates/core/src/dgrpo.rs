//! Difficulty-aware group-relative reward shaping.
//!
//! For each rollout the accuracy reward is first rescaled task-wise: on
//! grounding tasks the IoU passes through the clamped affine map
//! `clamp((iou - alpha) / (beta - alpha), 0, 1)`, and on grounded VQA only
//! the IoU half is transformed before averaging with the text score. The
//! rescaled reward plus format and tool components gives `R^`; the sample
//! difficulty `D` is the group mean of `R^`; a weight function of `D`
//! down-weights easy samples; and the final rewards `R^ * w` are normalized
//! group-relative into advantages.
//!
//! Also provides the non-negative k3 KL estimator `r - ln r - 1` and a
//! scalar objective estimate for verification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::Validate;
use crate::rewards::{RewardComponents, TaskKind};

/// Task-difficulty knots of the IoU rescaling map.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TaskDifficultyParams {
    pub alpha: f64,
    pub beta: f64,
}

impl TaskDifficultyParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, DgrpoError> {
        let params = Self { alpha, beta };
        params.check()?;
        Ok(params)
    }

    fn check(&self) -> Result<(), DgrpoError> {
        if !(self.alpha < self.beta)
            || !(0.0..=1.0).contains(&self.alpha)
            || !(0.0..=1.0).contains(&self.beta)
        {
            return Err(DgrpoError::InvalidParams { alpha: self.alpha, beta: self.beta });
        }
        Ok(())
    }
}

/// Sample-wise difficulty weight variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFunction {
    Omega1,
    Omega2,
    Omega3,
    Omega4,
}

impl WeightFunction {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeightFunction::Omega1 => "omega1",
            WeightFunction::Omega2 => "omega2",
            WeightFunction::Omega3 => "omega3",
            WeightFunction::Omega4 => "omega4",
        }
    }
}

impl std::str::FromStr for WeightFunction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "omega1" => Ok(WeightFunction::Omega1),
            "omega2" => Ok(WeightFunction::Omega2),
            "omega3" => Ok(WeightFunction::Omega3),
            "omega4" => Ok(WeightFunction::Omega4),
            other => Err(format!("unknown weight function `{other}`")),
        }
    }
}

/// Shaping failures: all programmer/config errors, never model behavior.
#[derive(Debug, Error, PartialEq)]
pub enum DgrpoError {
    #[error("group must contain at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("invalid difficulty params: alpha {alpha} must be < beta {beta}, both in [0, 1]")]
    InvalidParams { alpha: f64, beta: f64 },
    #[error("task {task} requires alpha/beta params for source `{dataset}`; none configured")]
    UnknownSource { task: &'static str, dataset: String },
    #[error("ratios/kls must align one-to-one with rollouts: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("sample `{sample_id}` has {got} rollouts, expected {expected}")]
    RaggedGroup { sample_id: String, expected: usize, got: usize },
}

/// Default epsilon in the advantage normalizer.
pub const DEFAULT_ADVANTAGE_EPS: f64 = 1e-6;

/// Default KL coefficient.
pub const DEFAULT_KL_COEF: f64 = 1e-2;

/// KL term configuration for the objective estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct KlConfig {
    pub beta_kl: f64,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self { beta_kl: DEFAULT_KL_COEF }
    }
}

/// `clamp((iou - alpha) / (beta - alpha), 0, 1)`.
pub fn scale_grounding_reward(iou: f64, params: &TaskDifficultyParams) -> f64 {
    ((iou - params.alpha) / (params.beta - params.alpha)).clamp(0.0, 1.0)
}

/// Task-wise rescaled reward `R^ = S1 + format + tool`.
///
/// `S1` is the scaled IoU on grounding tasks, the average of scaled IoU and
/// text score on grounded VQA, and the raw accuracy everywhere else.
/// `params` is required exactly for the tasks whose IoU gets transformed.
pub fn scaled_reward(
    components: &RewardComponents,
    task: TaskKind,
    params: Option<&TaskDifficultyParams>,
) -> Result<f64, DgrpoError> {
    let s1 = if task.requires_time_range() {
        let params = params.ok_or(DgrpoError::UnknownSource {
            task: task.as_str(),
            dataset: "<unset>".into(),
        })?;
        params.check()?;
        let scaled_iou = scale_grounding_reward(components.iou.unwrap_or(0.0), params);
        match task {
            TaskKind::TemporalGrounding => scaled_iou,
            _ => (scaled_iou + components.text_score.unwrap_or(0.0)) / 2.0,
        }
    } else {
        components.accuracy
    };
    Ok(s1 + components.format + components.tool)
}

/// Sample-difficulty weight `w(D)` for the chosen variant.
pub fn difficulty_weight(difficulty: f64, f: WeightFunction) -> f64 {
    match f {
        WeightFunction::Omega1 => (2.0 - difficulty).clamp(0.0, 1.0) * 0.5 + 0.5,
        WeightFunction::Omega2 => (2.0 - difficulty).clamp(0.0, 1.0),
        WeightFunction::Omega3 => 1.0 - 0.25 * difficulty,
        WeightFunction::Omega4 => 1.0 - 0.125 * difficulty * difficulty,
    }
}

/// Group-relative advantages `(R_k - mean) / (std + eps)` with population
/// standard deviation. A zero-variance group yields exactly zero advantages.
pub fn group_advantages(final_rewards: &[f64], eps: f64) -> Vec<f64> {
    debug_assert!(final_rewards.len() >= 2, "group statistics need at least 2 rollouts");
    let n = final_rewards.len() as f64;
    let max = final_rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = final_rewards.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == min {
        return vec![0.0; final_rewards.len()];
    }
    let mean = final_rewards.iter().sum::<f64>() / n;
    let variance = final_rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();
    final_rewards.iter().map(|r| (r - mean) / (std + eps)).collect()
}

/// One sample's rollout group with all intermediate reward statistics.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DgrpoGroup {
    pub sample_id: String,
    pub task: TaskKind,
    pub components: Vec<RewardComponents>,
    pub scaled_rewards: Vec<f64>,
    pub difficulty: f64,
    pub weights: Vec<f64>,
    pub final_rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl Validate for DgrpoGroup {
    fn validate(&self) -> Result<(), String> {
        let g = self.scaled_rewards.len();
        if g < 2 {
            return Err("field `scaled_rewards` must contain at least 2 rollouts".into());
        }
        for (name, len) in [
            ("components", self.components.len()),
            ("weights", self.weights.len()),
            ("final_rewards", self.final_rewards.len()),
            ("advantages", self.advantages.len()),
        ] {
            if len != g {
                return Err(format!("field `{name}` must have length {g}"));
            }
        }
        Ok(())
    }
}

/// Run the full difficulty-aware reward calculation for one sample's group.
///
/// All `G` rollouts share one weight, a function of the group-mean scaled
/// reward only.
pub fn compute_group(
    sample_id: &str,
    task: TaskKind,
    components: &[RewardComponents],
    params: Option<&TaskDifficultyParams>,
    f: WeightFunction,
    eps: f64,
) -> Result<DgrpoGroup, DgrpoError> {
    if components.len() < 2 {
        return Err(DgrpoError::GroupTooSmall(components.len()));
    }
    let scaled_rewards: Vec<f64> = components
        .iter()
        .map(|c| scaled_reward(c, task, params))
        .collect::<Result<_, _>>()?;
    let difficulty = scaled_rewards.iter().sum::<f64>() / scaled_rewards.len() as f64;
    let weight = difficulty_weight(difficulty, f);
    let final_rewards: Vec<f64> = scaled_rewards.iter().map(|r| r * weight).collect();
    let advantages = group_advantages(&final_rewards, eps);
    Ok(DgrpoGroup {
        sample_id: sample_id.to_string(),
        task,
        components: components.to_vec(),
        scaled_rewards,
        difficulty,
        weights: vec![weight; components.len()],
        final_rewards,
        advantages,
    })
}

/// k3 KL estimator `r - ln r - 1` with `r = exp(logp_ref - logp_theta)`.
/// Non-negative, zero exactly when the log-probabilities agree.
pub fn kl_k3(logp_theta: f64, logp_ref: f64) -> f64 {
    let log_ratio = logp_ref - logp_theta;
    (log_ratio.exp() - log_ratio - 1.0).max(0.0)
}

/// Scalar objective estimate: mean over groups of
/// `(1/G) * sum_k (ratio_k * A_k - beta * kl_k)`.
///
/// `ratios` and `kls` are flattened across groups in group order, one entry
/// per rollout. A diagnostic value, not a gradient.
pub fn objective_estimate(
    groups: &[DgrpoGroup],
    ratios: &[f64],
    kls: &[f64],
    cfg: &KlConfig,
) -> Result<f64, DgrpoError> {
    let expected: usize = groups.iter().map(|g| g.advantages.len()).sum();
    for got in [ratios.len(), kls.len()] {
        if got != expected {
            return Err(DgrpoError::LengthMismatch { expected, got });
        }
    }
    if groups.is_empty() {
        return Ok(0.0);
    }
    let mut offset = 0usize;
    let mut total = 0.0;
    for group in groups {
        let g = group.advantages.len();
        let mut per_group = 0.0;
        for (k, advantage) in group.advantages.iter().enumerate() {
            per_group += ratios[offset + k] * advantage - cfg.beta_kl * kls[offset + k];
        }
        total += per_group / g as f64;
        offset += g;
    }
    Ok(total / groups.len() as f64)
}

/// Lookup table of per-(task, source) difficulty params.
///
/// Grounding and grounded-VQA rows are keyed by data source; all other
/// tasks never consult the table. Unknown sources are an error rather than
/// a silent default.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AlphaBetaRow {
    pub task: TransformTask,
    pub source: String,
    pub alpha: f64,
    pub beta: f64,
}

impl Validate for AlphaBetaRow {
    fn validate(&self) -> Result<(), String> {
        TaskDifficultyParams::new(self.alpha, self.beta)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
}

/// The two task families whose IoU gets rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformTask {
    TemporalGrounding,
    GroundedVqa,
}

impl TransformTask {
    fn of(task: TaskKind) -> Option<Self> {
        match task {
            TaskKind::TemporalGrounding => Some(TransformTask::TemporalGrounding),
            TaskKind::GroundedVqaMcq | TaskKind::GroundedVqaOpen => {
                Some(TransformTask::GroundedVqa)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaBetaTable {
    rows: BTreeMap<(TransformTask, String), TaskDifficultyParams>,
}

impl Default for AlphaBetaTable {
    /// The stock per-dataset parameter sets.
    fn default() -> Self {
        let rows = [
            (TransformTask::TemporalGrounding, "Charades-STA", 0.2, 0.8),
            (TransformTask::TemporalGrounding, "ActivityNet-MR", 0.2, 0.8),
            (TransformTask::TemporalGrounding, "VidChapters-7M", 0.0, 0.5),
            (TransformTask::GroundedVqa, "ReXTime", 0.2, 0.8),
            (TransformTask::GroundedVqa, "NExT-GQA", 0.2, 0.8),
        ];
        Self {
            rows: rows
                .into_iter()
                .map(|(task, source, alpha, beta)| {
                    ((task, source.to_string()), TaskDifficultyParams { alpha, beta })
                })
                .collect(),
        }
    }
}

impl AlphaBetaTable {
    pub fn from_rows(rows: Vec<AlphaBetaRow>) -> Result<Self, DgrpoError> {
        let mut map = BTreeMap::new();
        for row in rows {
            let params = TaskDifficultyParams::new(row.alpha, row.beta)?;
            map.insert((row.task, row.source), params);
        }
        Ok(Self { rows: map })
    }

    pub fn rows(&self) -> Vec<AlphaBetaRow> {
        self.rows
            .iter()
            .map(|((task, source), p)| AlphaBetaRow {
                task: *task,
                source: source.clone(),
                alpha: p.alpha,
                beta: p.beta,
            })
            .collect()
    }

    /// Params for a (task, source) pair: `None` for tasks that are never
    /// transformed, an error for transform tasks with no configured row.
    pub fn lookup(
        &self,
        task: TaskKind,
        source: &str,
    ) -> Result<Option<TaskDifficultyParams>, DgrpoError> {
        let Some(family) = TransformTask::of(task) else {
            return Ok(None);
        };
        self.rows
            .get(&(family, source.to_string()))
            .copied()
            .map(Some)
            .ok_or_else(|| DgrpoError::UnknownSource {
                task: task.as_str(),
                dataset: source.to_string(),
            })
    }
}
