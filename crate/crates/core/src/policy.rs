//! Pluggable policies: scripted replay, a seeded stochastic mock, and a
//! client for external policies speaking newline-delimited JSON.
//!
//! A policy is a synchronous request/response function from episode context
//! to one emission. Each episode owns exactly one policy instance;
//! [`PolicyProvider`] hands out fresh instances per (sample, rollout) so
//! batch workflows stay deterministic and parallelizable.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::Sample;
use crate::protocol::Message;
use crate::rewards::TaskKind;
use crate::seed;

/// One emission from a policy.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicyOutput {
    pub text: String,
    /// Sequence log-probability under the emitting policy; synthetic for
    /// mock policies, absent for scripted replay.
    pub logprob_sum: Option<f64>,
}

/// Transport-level policy failure. Model-behavior failures never surface
/// here — they are recorded in the trajectory's terminal reason.
#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy transport: {0}")]
    Transport(String),
    #[error("policy io: {0}")]
    Io(#[from] std::io::Error),
}

/// Synchronous request/response policy over an abstract transport.
pub trait Policy {
    fn respond(&mut self, context: &[Message], max_length: usize)
        -> Result<PolicyOutput, PolicyError>;
}

/// Hands out one policy instance per (sample, rollout).
pub trait PolicyProvider: Sync {
    fn make(
        &self,
        sample: &Sample,
        rollout: usize,
        seed: u64,
    ) -> Result<Box<dyn Policy>, PolicyError>;
}

/// Deterministic replay of a fixed list of emissions.
///
/// Once the script is exhausted it returns empty emissions, which the
/// episode loop treats as parse errors, so replayed episodes always
/// terminate.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    emissions: Vec<String>,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new(emissions: Vec<String>) -> Self {
        Self { emissions, cursor: 0 }
    }
}

impl Policy for ScriptedPolicy {
    fn respond(
        &mut self,
        _context: &[Message],
        _max_length: usize,
    ) -> Result<PolicyOutput, PolicyError> {
        let text = self.emissions.get(self.cursor).cloned().unwrap_or_default();
        self.cursor += 1;
        Ok(PolicyOutput { text, logprob_sum: None })
    }
}

/// Provider that replays the same script for every rollout.
pub struct ScriptedProvider {
    pub emissions: Vec<String>,
}

impl PolicyProvider for ScriptedProvider {
    fn make(
        &self,
        _sample: &Sample,
        _rollout: usize,
        _seed: u64,
    ) -> Result<Box<dyn Policy>, PolicyError> {
        Ok(Box::new(ScriptedPolicy::new(self.emissions.clone())))
    }
}

/// Knobs of the stochastic mock policy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MockParams {
    /// Probability of requesting a clip before answering, per opportunity.
    pub p_tool: f64,
    /// The mock's own cap on tool calls, independent of the episode budget.
    pub max_tool_calls: usize,
    /// Standard deviation (seconds) of Gaussian noise on predicted ranges.
    pub sigma: f64,
    /// Probability of answering discrete questions correctly.
    pub p_correct: f64,
}

impl Default for MockParams {
    fn default() -> Self {
        Self { p_tool: 0.5, max_tool_calls: 1, sigma: 5.0, p_correct: 0.5 }
    }
}

/// Seeded stochastic mock built around one sample's ground truth.
///
/// Emits well-formatted rounds: optionally a clip request over a noisy
/// ground-truth window, then an answer whose quality is controlled by
/// `sigma` (grounding) or `p_correct` (discrete answers). Deterministic for
/// a fixed seed.
pub struct MockPolicy {
    sample: Sample,
    params: MockParams,
    rng: ChaCha8Rng,
    tool_calls_made: usize,
}

impl MockPolicy {
    pub fn for_sample(sample: &Sample, params: MockParams, seed: u64) -> Self {
        Self { sample: sample.clone(), params, rng: seed::rng(seed), tool_calls_made: 0 }
    }

    fn noisy_range(&mut self) -> (f64, f64) {
        let duration = self.sample.video.duration;
        let (gt_start, gt_end) = match &self.sample.ground_truth.time_range {
            Some(r) => (r.start, r.end),
            None => (0.0, duration),
        };
        let normal = Normal::new(0.0, self.params.sigma.max(f64::MIN_POSITIVE))
            .expect("sigma is finite and positive");
        let mut start = (gt_start + normal.sample(&mut self.rng)).clamp(0.0, duration);
        let mut end = (gt_end + normal.sample(&mut self.rng)).clamp(0.0, duration);
        if start > end {
            std::mem::swap(&mut start, &mut end);
        }
        if start == end {
            if end < duration {
                end = (end + 0.1).min(duration);
            } else {
                start = (start - 0.1).max(0.0);
            }
        }
        (start, end)
    }

    fn wrong_letter(&mut self, correct: &str) -> String {
        let letters = ["A", "B", "C", "D", "E"];
        let correct = correct.trim().to_ascii_uppercase();
        let pool: Vec<&str> =
            letters.iter().copied().filter(|l| *l != correct.as_str()).collect();
        pool[self.rng.gen_range(0..pool.len())].to_string()
    }

    fn answer_body(&mut self) -> String {
        let correct = self.rng.gen::<f64>() < self.params.p_correct;
        let gt = self.sample.ground_truth.clone();
        match self.sample.task {
            TaskKind::TemporalGrounding => {
                let (s, e) = self.noisy_range();
                format!("{{\"start\": {s}, \"end\": {e}}}")
            }
            TaskKind::GroundedVqaMcq | TaskKind::GroundedVqaOpen => {
                let (s, e) = self.noisy_range();
                let truth = gt.answer_text.unwrap_or_default();
                let answer = if correct {
                    truth
                } else if self.sample.task == TaskKind::GroundedVqaMcq {
                    self.wrong_letter(&truth)
                } else {
                    "something else entirely".to_string()
                };
                format!(
                    "{{\"start\": {s}, \"end\": {e}, \"answer\": {}}}",
                    serde_json::to_string(&answer).expect("string encodes")
                )
            }
            TaskKind::VqaMcq => {
                let truth = gt.answer_text.unwrap_or_else(|| "A".into());
                if correct {
                    truth
                } else {
                    self.wrong_letter(&truth)
                }
            }
            TaskKind::VqaNumber | TaskKind::VqaRegression => {
                let truth = gt.answer_number.unwrap_or(0.0);
                if correct {
                    format!("{truth}")
                } else {
                    format!("{}", truth + truth.abs() + 1.0 + self.rng.gen::<f64>())
                }
            }
            TaskKind::VqaOpen | TaskKind::VqaOcr => {
                let truth = gt.answer_text.unwrap_or_default();
                if correct {
                    truth
                } else {
                    "unrelated words with no overlap".to_string()
                }
            }
        }
    }
}

impl Policy for MockPolicy {
    fn respond(
        &mut self,
        _context: &[Message],
        _max_length: usize,
    ) -> Result<PolicyOutput, PolicyError> {
        let call_tool = self.tool_calls_made < self.params.max_tool_calls
            && self.rng.gen::<f64>() < self.params.p_tool;
        let text = if call_tool {
            self.tool_calls_made += 1;
            let (s, e) = self.noisy_range();
            format!(
                "<think>inspect the relevant span</think><tool_call>{{\"name\": \"video_clip\", \"arguments\": {{\"start\": {s}, \"end\": {e}}}}}</tool_call>"
            )
        } else {
            let body = self.answer_body();
            format!("<think>settle on an answer</think><answer>{body}</answer>")
        };
        let logprob_sum = Some(-(text.chars().count() as f64) * 0.05);
        Ok(PolicyOutput { text, logprob_sum })
    }
}

/// Provider that builds a fresh seeded mock per rollout.
pub struct MockProvider {
    pub params: MockParams,
}

impl PolicyProvider for MockProvider {
    fn make(
        &self,
        sample: &Sample,
        _rollout: usize,
        seed: u64,
    ) -> Result<Box<dyn Policy>, PolicyError> {
        Ok(Box::new(MockPolicy::for_sample(sample, self.params, seed)))
    }
}

/// One request over the external-policy wire protocol.
#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    context: &'a [Message],
    max_length: usize,
}

/// Client half of the external-policy wire protocol: one JSON request per
/// line out, one JSON response per line back.
pub struct WirePolicy<R, W> {
    reader: R,
    writer: W,
}

impl<R: BufRead, W: Write> WirePolicy<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer }
    }
}

impl<R: BufRead, W: Write> Policy for WirePolicy<R, W> {
    fn respond(
        &mut self,
        context: &[Message],
        max_length: usize,
    ) -> Result<PolicyOutput, PolicyError> {
        let request = WireRequest { context, max_length };
        let line = serde_json::to_string(&request)
            .map_err(|e| PolicyError::Transport(format!("encode request: {e}")))?;
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut response = String::new();
        let n = self.reader.read_line(&mut response)?;
        if n == 0 {
            return Err(PolicyError::Transport("policy closed the stream".into()));
        }
        serde_json::from_str(response.trim_end())
            .map_err(|e| PolicyError::Transport(format!("decode response: {e}")))
    }
}

/// Connect to an external policy over TCP.
pub fn connect_endpoint(addr: &str) -> Result<WirePolicy<BufReader<TcpStream>, TcpStream>, PolicyError> {
    let stream = TcpStream::connect(addr)
        .map_err(|e| PolicyError::Transport(format!("connect {addr}: {e}")))?;
    let reader = BufReader::new(
        stream.try_clone().map_err(|e| PolicyError::Transport(format!("clone stream: {e}")))?,
    );
    Ok(WirePolicy::new(reader, stream))
}

/// Provider that opens one TCP connection per episode.
pub struct EndpointProvider {
    pub addr: String,
}

impl PolicyProvider for EndpointProvider {
    fn make(
        &self,
        _sample: &Sample,
        _rollout: usize,
        _seed: u64,
    ) -> Result<Box<dyn Policy>, PolicyError> {
        Ok(Box::new(connect_endpoint(&self.addr)?))
    }
}
