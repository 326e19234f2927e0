//! The multi-round episode state machine.
//!
//! An episode owns its context for its whole lifetime: system prompt, user
//! question with the initial video, then alternating assistant emissions and
//! tool results. The loop is bounded in every direction — tool rounds by
//! `max_num_turns`, parse failures by a single retry, and emission size by
//! `max_response_length` — so any policy, however adversarial, produces a
//! finite trajectory.

use crate::pipeline::Sample;
use crate::policy::{Policy, PolicyError};
use crate::toolbox::{self, BackendRegistry, SamplingBudget};

use super::{
    parse_model_output, EpisodeConfig, Message, Round, TerminalReason, Trajectory,
};

const SYSTEM_PROMPT_TOOLS: &str = include_str!("../../assets/system_prompt_tools.txt");
const SYSTEM_PROMPT_NO_TOOLS: &str = include_str!("../../assets/system_prompt_no_tools.txt");

/// The fixed system prompt template, versioned as a text asset so episodes
/// are reproducible byte-for-byte.
pub fn system_prompt(tools_enabled: bool) -> &'static str {
    if tools_enabled {
        SYSTEM_PROMPT_TOOLS
    } else {
        SYSTEM_PROMPT_NO_TOOLS
    }
}

/// Sampling budget plus content backends, shared by all episodes. Safe for
/// concurrent dispatch.
pub struct Toolbox {
    pub budget: SamplingBudget,
    pub backends: BackendRegistry,
}

impl Default for Toolbox {
    fn default() -> Self {
        Self { budget: SamplingBudget::default(), backends: BackendRegistry::default() }
    }
}

impl Toolbox {
    pub fn dispatch(
        &self,
        call: &super::ToolCall,
        video: &crate::toolbox::VideoMeta,
    ) -> crate::toolbox::ToolResult {
        toolbox::dispatch(call, video, &self.budget, &self.backends)
    }
}

fn initial_context(sample: &Sample, toolbox: &Toolbox, cfg: &EpisodeConfig) -> Vec<Message> {
    let initial_clip =
        toolbox::clip(&sample.video, 0.0, sample.video.duration, &toolbox.budget).clip;
    vec![
        Message::system(system_prompt(cfg.tools_enabled)),
        Message::user(sample.question.clone(), initial_clip.into_iter().collect()),
    ]
}

/// Drive one episode of `policy` on `sample` and return the finished
/// trajectory.
///
/// Model-behavior failures (unparseable emissions, over-long emissions,
/// exhausted turn budget) never error — they are recorded in
/// `terminal_reason`. The only error path is the policy transport itself.
///
/// A parse error is fed back once as a tool-role JSON error dictionary; a
/// second parse failure ends the episode. A dispatched tool call consumes
/// one turn whether or not the tool succeeds, and once `max_num_turns`
/// turns are spent (or tools are disabled) any further tool call ends the
/// episode with `turn_limit`.
pub fn run_episode(
    policy: &mut dyn Policy,
    sample: &Sample,
    toolbox: &Toolbox,
    cfg: &EpisodeConfig,
) -> Result<Trajectory, PolicyError> {
    let mut context = initial_context(sample, toolbox, cfg);
    let mut rounds: Vec<Round> = Vec::new();
    let mut raw_texts: Vec<String> = Vec::new();
    let mut logprob_sums: Vec<Option<f64>> = Vec::new();
    let mut final_answer: Option<String> = None;
    let mut parse_failures = 0usize;
    let mut tool_rounds = 0usize;

    let terminal_reason = loop {
        let output = policy.respond(&context, cfg.max_response_length)?;
        raw_texts.push(output.text.clone());
        logprob_sums.push(output.logprob_sum);
        if output.text.chars().count() > cfg.max_response_length {
            break TerminalReason::LengthLimit;
        }
        context.push(Message::assistant(output.text.clone()));
        match parse_model_output(&output.text, cfg.thinking_mode) {
            Err(err) => {
                parse_failures += 1;
                if parse_failures >= 2 {
                    break TerminalReason::ParseError;
                }
                context.push(Message::tool(err.wire_json(), Vec::new()));
            }
            Ok(parsed) => {
                if let Some(answer) = parsed.answer.clone() {
                    rounds.push(Round { output: parsed, tool_result: None });
                    final_answer = Some(answer);
                    break TerminalReason::Answered;
                }
                let call = parsed.tool_call.clone().expect("terminal is tool call");
                if !cfg.tools_enabled || tool_rounds >= cfg.max_num_turns {
                    rounds.push(Round { output: parsed, tool_result: None });
                    break TerminalReason::TurnLimit;
                }
                let result = toolbox.dispatch(&call, &sample.video);
                tool_rounds += 1;
                let attachments = result.clip.clone().into_iter().collect();
                context.push(Message::tool(result.wire_json(), attachments));
                rounds.push(Round { output: parsed, tool_result: Some(result) });
            }
        }
    };

    Ok(Trajectory {
        sample_id: sample.sample_id.clone(),
        rounds,
        final_answer,
        terminal_reason,
        raw_texts,
        logprob_sums,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ScriptedPolicy;
    use crate::rewards::{GroundTruth, TaskKind, TimeRange};
    use crate::toolbox::VideoMeta;

    fn sample() -> Sample {
        Sample {
            sample_id: "s0".into(),
            task: TaskKind::TemporalGrounding,
            source: "Charades-STA".into(),
            video: VideoMeta { video_id: "v0".into(), duration: 100.0, native_fps: 30.0 },
            question: "When does the person talk on the phone?".into(),
            ground_truth: GroundTruth {
                time_range: Some(TimeRange { start: 10.0, end: 20.0 }),
                answer_text: None,
                answer_number: None,
            },
        }
    }

    fn clip_emission(start: f64, end: f64) -> String {
        format!(
            "<think>look closer</think><tool_call>{{\"name\":\"video_clip\",\"arguments\":{{\"start\":{start},\"end\":{end}}}}}</tool_call>"
        )
    }

    const ANSWER: &str = "<think>done</think><answer>{\"start\": 10.0, \"end\": 20.0}</answer>";

    #[test]
    fn direct_answer_path() {
        let mut policy = ScriptedPolicy::new(vec![ANSWER.to_string()]);
        let traj =
            run_episode(&mut policy, &sample(), &Toolbox::default(), &EpisodeConfig::default())
                .unwrap();
        assert_eq!(traj.terminal_reason, TerminalReason::Answered);
        assert_eq!(traj.successful_tool_rounds(), 0);
        assert!(traj.final_answer.is_some());
        assert_eq!(traj.raw_texts.len(), 1);
    }

    #[test]
    fn one_tool_round_then_answer() {
        let mut policy =
            ScriptedPolicy::new(vec![clip_emission(10.0, 20.0), ANSWER.to_string()]);
        let traj =
            run_episode(&mut policy, &sample(), &Toolbox::default(), &EpisodeConfig::default())
                .unwrap();
        assert_eq!(traj.terminal_reason, TerminalReason::Answered);
        assert_eq!(traj.successful_tool_rounds(), 1);
        let result = traj.rounds[0].tool_result.as_ref().unwrap();
        assert!(result.ok);
        assert_eq!(result.clip.as_ref().unwrap().frame_timestamps.len(), 20);
    }

    #[test]
    fn turn_limit_after_max_turns() {
        let mut policy = ScriptedPolicy::new(vec![
            clip_emission(0.0, 10.0),
            clip_emission(10.0, 20.0),
            clip_emission(20.0, 30.0),
        ]);
        let traj =
            run_episode(&mut policy, &sample(), &Toolbox::default(), &EpisodeConfig::default())
                .unwrap();
        assert_eq!(traj.terminal_reason, TerminalReason::TurnLimit);
        assert_eq!(traj.successful_tool_rounds(), 2);
        assert!(traj.final_answer.is_none());
        // The third call was parsed but never dispatched.
        assert_eq!(traj.rounds.len(), 3);
        assert!(traj.rounds[2].tool_result.is_none());
    }

    #[test]
    fn tools_disabled_rejects_tool_calls() {
        let cfg = EpisodeConfig { tools_enabled: false, ..EpisodeConfig::default() };
        let mut policy = ScriptedPolicy::new(vec![clip_emission(0.0, 10.0)]);
        let traj = run_episode(&mut policy, &sample(), &Toolbox::default(), &cfg).unwrap();
        assert_eq!(traj.terminal_reason, TerminalReason::TurnLimit);
        assert_eq!(traj.successful_tool_rounds(), 0);
    }

    #[test]
    fn parse_error_fed_back_once_then_terminates() {
        let mut policy = ScriptedPolicy::new(vec!["garbage".into(), "more garbage".into()]);
        let traj =
            run_episode(&mut policy, &sample(), &Toolbox::default(), &EpisodeConfig::default())
                .unwrap();
        assert_eq!(traj.terminal_reason, TerminalReason::ParseError);
        assert_eq!(traj.raw_texts.len(), 2);
        assert!(traj.rounds.is_empty());
    }

    #[test]
    fn parse_error_recoverable_on_retry() {
        let mut policy = ScriptedPolicy::new(vec!["garbage".into(), ANSWER.to_string()]);
        let traj =
            run_episode(&mut policy, &sample(), &Toolbox::default(), &EpisodeConfig::default())
                .unwrap();
        assert_eq!(traj.terminal_reason, TerminalReason::Answered);
        assert_eq!(traj.raw_texts.len(), 2);
    }

    #[test]
    fn length_limit_enforced() {
        let cfg = EpisodeConfig { max_response_length: 16, ..EpisodeConfig::default() };
        let mut policy = ScriptedPolicy::new(vec![ANSWER.to_string()]);
        let traj = run_episode(&mut policy, &sample(), &Toolbox::default(), &cfg).unwrap();
        assert_eq!(traj.terminal_reason, TerminalReason::LengthLimit);
        assert!(traj.final_answer.is_none());
    }

    #[test]
    fn failed_tool_call_feeds_error_back_and_consumes_turn() {
        let mut policy = ScriptedPolicy::new(vec![
            clip_emission(500.0, 600.0), // out of range -> clamped empty -> error
            ANSWER.to_string(),
        ]);
        let traj =
            run_episode(&mut policy, &sample(), &Toolbox::default(), &EpisodeConfig::default())
                .unwrap();
        assert_eq!(traj.terminal_reason, TerminalReason::Answered);
        assert_eq!(traj.successful_tool_rounds(), 0);
        let result = traj.rounds[0].tool_result.as_ref().unwrap();
        assert!(!result.ok);
    }

    #[test]
    fn exhausted_script_ends_in_parse_error() {
        let mut policy = ScriptedPolicy::new(vec![]);
        let traj =
            run_episode(&mut policy, &sample(), &Toolbox::default(), &EpisodeConfig::default())
                .unwrap();
        assert_eq!(traj.terminal_reason, TerminalReason::ParseError);
    }

    #[test]
    fn context_starts_with_system_and_user() {
        let ctx = initial_context(&sample(), &Toolbox::default(), &EpisodeConfig::default());
        assert_eq!(ctx.len(), 2);
        assert_eq!(ctx[0].role, super::super::Role::System);
        assert!(ctx[0].text.contains("<tools>"));
        assert_eq!(ctx[1].role, super::super::Role::User);
        assert_eq!(ctx[1].attachments.len(), 1);
        assert_eq!(ctx[1].attachments[0].frame_timestamps.len(), 64);
    }
}
