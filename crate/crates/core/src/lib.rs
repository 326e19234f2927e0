//! Tool-augmented multi-round rollouts for video reasoning, with the full
//! rule-based reward stack, difficulty-aware group-relative reward shaping,
//! and the rollout-filtering data-curation pipeline.
//!
//! The crate is organized around the lifecycle of a rollout:
//!
//! 1. [`protocol`] defines the tag grammar for model emissions, parses them
//!    into thinking steps / tool calls / answers, and drives the multi-round
//!    episode state machine against a pluggable [`policy::Policy`].
//! 2. [`toolbox`] implements the video-clipping tool's frame-sampling
//!    arithmetic and budgets, plus schema-level dispatch for the caption and
//!    QA tools with pluggable content backends.
//! 3. [`rewards`] scores a finished trajectory: task accuracy (IoU, exact
//!    match, Rouge, word error rate, relative L1), strict format reward, and
//!    the tool-use bonus.
//! 4. [`dgrpo`] rescales grounding rewards per task, estimates per-sample
//!    difficulty from the rollout group, applies the difficulty weight, and
//!    produces group-relative advantages.
//! 5. [`pipeline`] curates training data: k-rollout difficulty filtering,
//!    tool-parameter suggestions with bounded noise, and chain-of-thought
//!    post-processing rules.
//! 6. [`metrics`] aggregates evaluation metrics (mIoU, recall at IoU
//!    thresholds, accuracy) over prediction/ground-truth pairs.
//!
//! No neural network is involved anywhere: policies are pluggable (scripted
//! replay, seeded stochastic mock, or an external process speaking
//! newline-delimited JSON), so every algorithm is verifiable at desk scale.

pub mod dgrpo;
pub mod jsonl;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod protocol;
pub mod rewards;
pub mod seed;
pub mod toolbox;

pub use pipeline::Sample;
pub use protocol::{EpisodeConfig, Message, ParseError, ParsedOutput, ToolCall, Trajectory};
pub use rewards::{GroundTruth, Prediction, RewardComponents, TaskKind};
pub use toolbox::{SamplingBudget, ToolResult, VideoClip, VideoMeta};
