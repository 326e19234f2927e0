//! Message grammar, emission parsing, and the multi-round episode state
//! machine.

mod episode;
mod parser;

pub use episode::{run_episode, system_prompt, Toolbox};
pub use parser::{
    parse_model_output, validate_format, ParseError, ParseErrorKind, ParsedOutput, ToolCall,
};

use serde::{Deserialize, Serialize};

use crate::jsonl::Validate;
use crate::toolbox::{ToolResult, VideoClip};

/// Who produced a message in the episode context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// One turn of episode context. Attachments carry frame sequences: the
/// initial video on the user message, clip results on tool messages.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Message {
    pub role: Role,
    pub text: String,
    pub attachments: Vec<VideoClip>,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into(), attachments: Vec::new() }
    }

    pub fn user(text: impl Into<String>, attachments: Vec<VideoClip>) -> Self {
        Self { role: Role::User, text: text.into(), attachments }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into(), attachments: Vec::new() }
    }

    pub fn tool(text: impl Into<String>, attachments: Vec<VideoClip>) -> Self {
        Self { role: Role::Tool, text: text.into(), attachments }
    }
}

/// Episode limits and mode switches.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EpisodeConfig {
    /// Maximum number of dispatched tool rounds.
    pub max_num_turns: usize,
    /// Maximum emission length in characters (a tokenizer-free proxy).
    pub max_response_length: usize,
    /// Whether a think block is mandatory in every round.
    pub thinking_mode: bool,
    /// Whether the toolbox is offered at all.
    pub tools_enabled: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { max_num_turns: 2, max_response_length: 1024, thinking_mode: true, tools_enabled: true }
    }
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Answered,
    ParseError,
    TurnLimit,
    LengthLimit,
}

/// One parsed round and, for dispatched tool calls, its result. A tool call
/// that was parsed but never dispatched (turn budget exhausted) has
/// `tool_result: None`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Round {
    pub output: ParsedOutput,
    pub tool_result: Option<ToolResult>,
}

/// One complete multi-round rollout: every raw emission, the parsed rounds,
/// and how it ended.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Trajectory {
    pub sample_id: String,
    pub rounds: Vec<Round>,
    pub final_answer: Option<String>,
    pub terminal_reason: TerminalReason,
    pub raw_texts: Vec<String>,
    /// One entry per raw emission; `None` when the policy reported no
    /// sequence log-probability.
    pub logprob_sums: Vec<Option<f64>>,
}

impl Trajectory {
    /// Number of dispatched tool rounds that came back ok.
    pub fn successful_tool_rounds(&self) -> usize {
        self.rounds
            .iter()
            .filter(|r| r.tool_result.as_ref().is_some_and(|t| t.ok))
            .count()
    }
}

impl Validate for Trajectory {
    fn validate(&self) -> Result<(), String> {
        let answered = self.terminal_reason == TerminalReason::Answered;
        if answered != self.final_answer.is_some() {
            return Err(
                "field `final_answer` must be present exactly when terminal_reason is answered"
                    .into(),
            );
        }
        if self.logprob_sums.len() != self.raw_texts.len() {
            return Err("field `logprob_sums` must have one entry per raw text".into());
        }
        for round in &self.rounds {
            if round.tool_result.is_some() && round.output.tool_call.is_none() {
                return Err("field `rounds`: tool_result without a parsed tool call".into());
            }
        }
        Ok(())
    }
}

/// Serialize a trajectory as a single-line JSON record with stable field
/// order. `render_trajectory` and [`load_trajectory`] are mutually inverse
/// on canonical records.
pub fn render_trajectory(traj: &Trajectory) -> String {
    serde_json::to_string(traj).expect("trajectory serializes")
}

/// Parse a single JSONL trajectory record.
pub fn load_trajectory(line: &str) -> Result<Trajectory, serde_json::Error> {
    serde_json::from_str(line)
}
