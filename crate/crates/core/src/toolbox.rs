//! The visual toolbox: video clipping with frame-sampling budgets, plus
//! schema-level dispatch for the clip-caption and clip-QA tools.
//!
//! Clips are modeled as timestamp sequences with a per-frame pixel budget —
//! no pixels are ever decoded. Everything downstream (context budgets, token
//! accounting, reward computation) consumes temporal structure only, so the
//! toolbox stays pure and deterministic.
//!
//! Dispatch is total: any tool call, however malformed, yields a
//! [`ToolResult`]. Errors are values carried back to the model as a JSON
//! dictionary, never exceptions.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::jsonl::Validate;
use crate::protocol::ToolCall;

/// Metadata for a registered video. Durations are in seconds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VideoMeta {
    pub video_id: String,
    pub duration: f64,
    pub native_fps: f64,
}

impl Validate for VideoMeta {
    fn validate(&self) -> Result<(), String> {
        if !(self.duration > 0.0) {
            return Err("field `duration` must be positive".into());
        }
        if !(self.native_fps > 0.0) {
            return Err("field `native_fps` must be positive".into());
        }
        Ok(())
    }
}

/// Frame-sampling budget applied when materializing a clip.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SamplingBudget {
    /// Sampling rate in frames per second.
    pub sample_fps: f64,
    /// Hard cap on frames per clip; over-long windows are re-spread.
    pub max_frames: usize,
    /// Per-frame pixel budget.
    pub max_pixels: u64,
}

impl Default for SamplingBudget {
    fn default() -> Self {
        Self {
            sample_fps: 2.0,
            max_frames: 64,
            max_pixels: 224 * 224,
        }
    }
}

/// A duration-bounded frame-timestamp sequence produced by the clipping tool.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VideoClip {
    pub source: String,
    pub start: f64,
    pub end: f64,
    pub frame_timestamps: Vec<f64>,
    pub pixels_per_frame: u64,
}

/// Error kinds the toolbox can hand back to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolErrorKind {
    InvalidRange,
    BadArguments,
    UnknownTool,
    BackendUnavailable,
}

impl ToolErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ToolErrorKind::InvalidRange => "invalid_range",
            ToolErrorKind::BadArguments => "bad_arguments",
            ToolErrorKind::UnknownTool => "unknown_tool",
            ToolErrorKind::BackendUnavailable => "backend_unavailable",
        }
    }
}

/// A tool failure: kind plus a human-readable detail string.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ToolError {
    pub kind: ToolErrorKind,
    pub detail: String,
}

/// Outcome of one tool dispatch. Exactly one of `clip`/`payload` is present
/// when `ok`, and `error` is present exactly when not.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ToolResult {
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<VideoClip>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ToolError>,
}

impl ToolResult {
    pub fn clip(clip: VideoClip) -> Self {
        Self { ok: true, clip: Some(clip), payload: None, error: None }
    }

    pub fn payload(payload: String) -> Self {
        Self { ok: true, clip: None, payload: Some(payload), error: None }
    }

    pub fn error(kind: ToolErrorKind, detail: impl Into<String>) -> Self {
        Self {
            ok: false,
            clip: None,
            payload: None,
            error: Some(ToolError { kind, detail: detail.into() }),
        }
    }

    /// The JSON string fed back to the model as the tool-role message.
    ///
    /// Errors use exactly the `{"error": kind, "detail": text}` dictionary
    /// shape; successful clips report their window and frame count (the
    /// frames themselves travel as a message attachment).
    pub fn wire_json(&self) -> String {
        match (&self.error, &self.clip, &self.payload) {
            (Some(err), _, _) => format!(
                "{{\"error\":{},\"detail\":{}}}",
                serde_json::to_string(err.kind.as_str()).expect("string encodes"),
                serde_json::to_string(&err.detail).expect("string encodes"),
            ),
            (None, Some(clip), _) => json!({
                "clip": {
                    "source": clip.source,
                    "start": clip.start,
                    "end": clip.end,
                    "num_frames": clip.frame_timestamps.len(),
                }
            })
            .to_string(),
            (None, None, Some(payload)) => payload.clone(),
            (None, None, None) => json!({}).to_string(),
        }
    }
}

/// Uniformly sample frame timestamps from `[start, end)` at
/// `budget.sample_fps`, re-spreading over `[start, end]` when the count
/// would exceed `budget.max_frames`.
///
/// The uncapped grid starts at `start` with spacing `1/sample_fps`; the
/// capped grid spans the window inclusively so coverage stays even.
pub fn sample_frames(start: f64, end: f64, budget: &SamplingBudget) -> Vec<f64> {
    debug_assert!(start < end && start >= 0.0);
    let span = end - start;
    let natural = (span * budget.sample_fps).ceil() as usize;
    let natural = natural.max(1);
    if natural <= budget.max_frames {
        let step = 1.0 / budget.sample_fps;
        return (0..natural).map(|i| start + i as f64 * step).collect();
    }
    let n = budget.max_frames;
    if n == 1 {
        return vec![start];
    }
    let step = span / (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i == n - 1 {
                end
            } else {
                start + i as f64 * step
            }
        })
        .collect()
}

/// Clamp a requested window into `[0, duration]` and materialize the clip.
///
/// Tolerates arbitrary model-supplied arguments: non-finite numbers are
/// `bad_arguments`, and a window that is empty after clamping is
/// `invalid_range`. Never panics.
pub fn clip(video: &VideoMeta, start: f64, end: f64, budget: &SamplingBudget) -> ToolResult {
    if !start.is_finite() || !end.is_finite() {
        return ToolResult::error(
            ToolErrorKind::BadArguments,
            "start and end must be finite numbers",
        );
    }
    let s = start.clamp(0.0, video.duration);
    let e = end.clamp(0.0, video.duration);
    if s >= e {
        return ToolResult::error(
            ToolErrorKind::InvalidRange,
            format!("empty window after clamping to [0, {}]: start {s} >= end {e}", video.duration),
        );
    }
    let frame_timestamps = sample_frames(s, e, budget);
    ToolResult::clip(VideoClip {
        source: video.video_id.clone(),
        start: s,
        end: e,
        frame_timestamps,
        pixels_per_frame: budget.max_pixels,
    })
}

/// Deterministic token-budget accounting for a clip.
///
/// `tokens_per_pixel_block` is the token rate per pixel (e.g. `1/784` for a
/// 28x28 patch merger); the per-frame cost is rounded up.
pub fn token_cost(clip: &VideoClip, tokens_per_pixel_block: f64) -> u64 {
    debug_assert!(tokens_per_pixel_block > 0.0);
    let per_frame = (clip.pixels_per_frame as f64 * tokens_per_pixel_block).ceil() as u64;
    clip.frame_timestamps.len() as u64 * per_frame
}

/// Content backend for the clip-caption tool.
pub trait CaptionBackend: Send + Sync {
    fn caption(&self, video: &VideoMeta, start: f64, end: f64) -> String;
    /// If false, the registry serializes calls to this backend.
    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// Content backend for the clip-QA tool.
pub trait QaBackend: Send + Sync {
    fn answer(&self, video: &VideoMeta, start: f64, end: f64, question: &str) -> String;
    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// Deterministic stub used when no real caption/QA model is plugged in.
struct StubBackend;

impl CaptionBackend for StubBackend {
    fn caption(&self, _video: &VideoMeta, _start: f64, _end: f64) -> String {
        "<stub>".to_string()
    }
}

impl QaBackend for StubBackend {
    fn answer(&self, _video: &VideoMeta, _start: f64, _end: f64, _question: &str) -> String {
        "<stub>".to_string()
    }
}

/// Registered content backends for the caption and QA tools.
///
/// `Default` installs the deterministic stubs; [`BackendRegistry::empty`]
/// registers nothing, in which case caption/QA calls fail with
/// `backend_unavailable`. Backends that are not concurrency-safe are
/// serialized behind a lock.
pub struct BackendRegistry {
    caption: Option<Arc<dyn CaptionBackend>>,
    qa: Option<Arc<dyn QaBackend>>,
    serialize_lock: Mutex<()>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self {
            caption: Some(Arc::new(StubBackend)),
            qa: Some(Arc::new(StubBackend)),
            serialize_lock: Mutex::new(()),
        }
    }
}

impl BackendRegistry {
    /// A registry with no content backends at all.
    pub fn empty() -> Self {
        Self { caption: None, qa: None, serialize_lock: Mutex::new(()) }
    }

    pub fn with_caption(mut self, backend: Arc<dyn CaptionBackend>) -> Self {
        self.caption = Some(backend);
        self
    }

    pub fn with_qa(mut self, backend: Arc<dyn QaBackend>) -> Self {
        self.qa = Some(backend);
        self
    }

    fn caption_payload(&self, video: &VideoMeta, start: f64, end: f64) -> Option<String> {
        let backend = self.caption.as_ref()?;
        let caption = if backend.concurrency_safe() {
            backend.caption(video, start, end)
        } else {
            let _guard = self.serialize_lock.lock().expect("backend lock poisoned");
            backend.caption(video, start, end)
        };
        Some(json!({ "caption": caption }).to_string())
    }

    fn qa_payload(&self, video: &VideoMeta, start: f64, end: f64, question: &str) -> Option<String> {
        let backend = self.qa.as_ref()?;
        let answer = if backend.concurrency_safe() {
            backend.answer(video, start, end, question)
        } else {
            let _guard = self.serialize_lock.lock().expect("backend lock poisoned");
            backend.answer(video, start, end, question)
        };
        Some(json!({ "answer": answer }).to_string())
    }
}

/// Names of the registered tools, as they appear in tool calls.
pub const TOOL_NAMES: [&str; 3] = ["video_clip", "clip_caption", "clip_qa"];

/// JSON schema text for the toolbox, embedded into the system prompt.
pub const TOOL_SCHEMAS_JSON: &str = include_str!("../assets/tool_schemas.json");

fn numeric_arg(args: &serde_json::Map<String, Value>, name: &str) -> Result<f64, ToolResult> {
    let value = args.get(name).ok_or_else(|| {
        ToolResult::error(ToolErrorKind::BadArguments, format!("missing argument `{name}`"))
    })?;
    let parsed = match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    match parsed {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(ToolResult::error(
            ToolErrorKind::BadArguments,
            format!("argument `{name}` must be a finite number"),
        )),
    }
}

fn string_arg(args: &serde_json::Map<String, Value>, name: &str) -> Result<String, ToolResult> {
    match args.get(name) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ToolResult::error(
            ToolErrorKind::BadArguments,
            format!("argument `{name}` must be a string"),
        )),
        None => Err(ToolResult::error(
            ToolErrorKind::BadArguments,
            format!("missing argument `{name}`"),
        )),
    }
}

fn clamped_window(video: &VideoMeta, start: f64, end: f64) -> Result<(f64, f64), ToolResult> {
    let s = start.clamp(0.0, video.duration);
    let e = end.clamp(0.0, video.duration);
    if s >= e {
        return Err(ToolResult::error(
            ToolErrorKind::InvalidRange,
            format!("empty window after clamping to [0, {}]: start {s} >= end {e}", video.duration),
        ));
    }
    Ok((s, e))
}

/// Route a parsed tool call to its implementation.
///
/// Total over arbitrary calls: unknown names, missing or non-numeric
/// arguments and empty windows all come back as error results for the model
/// to read, matching how a live toolbox feeds failures back into the
/// episode.
pub fn dispatch(
    call: &ToolCall,
    video: &VideoMeta,
    budget: &SamplingBudget,
    backends: &BackendRegistry,
) -> ToolResult {
    match call.name.as_str() {
        "video_clip" => {
            let start = match numeric_arg(&call.arguments, "start") {
                Ok(x) => x,
                Err(e) => return e,
            };
            let end = match numeric_arg(&call.arguments, "end") {
                Ok(x) => x,
                Err(e) => return e,
            };
            clip(video, start, end, budget)
        }
        "clip_caption" => {
            let start = match numeric_arg(&call.arguments, "start") {
                Ok(x) => x,
                Err(e) => return e,
            };
            let end = match numeric_arg(&call.arguments, "end") {
                Ok(x) => x,
                Err(e) => return e,
            };
            let (s, e) = match clamped_window(video, start, end) {
                Ok(w) => w,
                Err(err) => return err,
            };
            match backends.caption_payload(video, s, e) {
                Some(payload) => ToolResult::payload(payload),
                None => ToolResult::error(
                    ToolErrorKind::BackendUnavailable,
                    "no caption backend registered",
                ),
            }
        }
        "clip_qa" => {
            let start = match numeric_arg(&call.arguments, "start") {
                Ok(x) => x,
                Err(e) => return e,
            };
            let end = match numeric_arg(&call.arguments, "end") {
                Ok(x) => x,
                Err(e) => return e,
            };
            let question = match string_arg(&call.arguments, "question") {
                Ok(q) => q,
                Err(e) => return e,
            };
            let (s, e) = match clamped_window(video, start, end) {
                Ok(w) => w,
                Err(err) => return err,
            };
            match backends.qa_payload(video, s, e, &question) {
                Some(payload) => ToolResult::payload(payload),
                None => ToolResult::error(
                    ToolErrorKind::BackendUnavailable,
                    "no QA backend registered",
                ),
            }
        }
        other => ToolResult::error(ToolErrorKind::UnknownTool, format!("unknown tool `{other}`")),
    }
}
