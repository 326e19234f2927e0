//! Tag grammar for model emissions.
//!
//! A round emission is a sequence of top-level tag blocks with nothing but
//! whitespace between them. Accepted blocks are `<think>…</think>`,
//! `<tool_call>…</tool_call>` and `<answer>…</answer>`; tags are exact
//! lowercase ASCII and block contents may not contain any tag token (so
//! nesting is rejected outright). A well-formed round is zero or more think
//! blocks followed by exactly one terminal block — a tool call or an answer.
//! In thinking mode at least one think block is mandatory.
//!
//! Parsing is deliberately a little more permissive than the whole-rollout
//! format check: an episode keeps running as long as a thinking step and a
//! terminal can be extracted, while [`validate_format`] only accepts the
//! strict alternating shape used by the format reward.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One tool invocation request extracted from a `<tool_call>` block.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ToolCall {
    pub name: String,
    pub arguments: serde_json::Map<String, Value>,
}

/// Structured view of one round emission.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParsedOutput {
    pub think_segments: Vec<String>,
    pub tool_call: Option<ToolCall>,
    pub answer: Option<String>,
}

/// Why an emission failed to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    UnbalancedTags,
    BadTagOrder,
    MalformedJson,
    NoTerminal,
    DuplicateAnswer,
}

impl ParseErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParseErrorKind::UnbalancedTags => "unbalanced_tags",
            ParseErrorKind::BadTagOrder => "bad_tag_order",
            ParseErrorKind::MalformedJson => "malformed_json",
            ParseErrorKind::NoTerminal => "no_terminal",
            ParseErrorKind::DuplicateAnswer => "duplicate_answer",
        }
    }
}

/// A parse failure, fed back to the model as a JSON error dictionary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub detail: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, detail: impl Into<String>) -> Self {
        Self { kind, detail: detail.into() }
    }

    /// `{"error": kind, "detail": text}` dictionary string.
    pub fn wire_json(&self) -> String {
        format!(
            "{{\"error\":{},\"detail\":{}}}",
            serde_json::to_string(self.kind.as_str()).expect("string encodes"),
            serde_json::to_string(&self.detail).expect("string encodes"),
        )
    }
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind.as_str(), self.detail)
    }
}

const TAG_TOKENS: [&str; 6] =
    ["<think>", "</think>", "<tool_call>", "</tool_call>", "<answer>", "</answer>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Think,
    ToolCall,
    Answer,
}

#[derive(Debug)]
struct Block<'a> {
    kind: BlockKind,
    content: &'a str,
}

fn contains_tag_token(text: &str) -> bool {
    TAG_TOKENS.iter().any(|tag| text.contains(tag))
}

/// Split an emission into top-level blocks, enforcing balance and the
/// nothing-outside-tags rule.
fn tokenize(text: &str) -> Result<Vec<Block<'_>>, ParseError> {
    const OPENERS: [(&str, &str, BlockKind); 3] = [
        ("<think>", "</think>", BlockKind::Think),
        ("<tool_call>", "</tool_call>", BlockKind::ToolCall),
        ("<answer>", "</answer>", BlockKind::Answer),
    ];
    let mut blocks = Vec::new();
    let mut rest = text;
    loop {
        rest = rest.trim_start();
        if rest.is_empty() {
            return Ok(blocks);
        }
        for (_, close, _) in OPENERS {
            if rest.starts_with(close) {
                return Err(ParseError::new(
                    ParseErrorKind::UnbalancedTags,
                    format!("closing tag {close} without a matching opener"),
                ));
            }
        }
        let Some((open, close, kind)) =
            OPENERS.into_iter().find(|(open, _, _)| rest.starts_with(open))
        else {
            return Err(ParseError::new(
                ParseErrorKind::BadTagOrder,
                "text outside of think/tool_call/answer tags",
            ));
        };
        let body_start = open.len();
        let Some(rel_close) = rest[body_start..].find(close) else {
            return Err(ParseError::new(
                ParseErrorKind::UnbalancedTags,
                format!("{open} is never closed"),
            ));
        };
        let content = &rest[body_start..body_start + rel_close];
        if contains_tag_token(content) {
            return Err(ParseError::new(
                ParseErrorKind::UnbalancedTags,
                format!("tag token nested inside {open} block"),
            ));
        }
        blocks.push(Block { kind, content });
        rest = &rest[body_start + rel_close + close.len()..];
    }
}

fn parse_tool_call_body(body: &str) -> Result<ToolCall, ParseError> {
    let value: Value = serde_json::from_str(body).map_err(|e| {
        ParseError::new(ParseErrorKind::MalformedJson, format!("tool call body: {e}"))
    })?;
    let Value::Object(mut obj) = value else {
        return Err(ParseError::new(
            ParseErrorKind::MalformedJson,
            "tool call body must be a JSON object",
        ));
    };
    let name = match obj.get("name") {
        Some(Value::String(s)) => s.clone(),
        _ => {
            return Err(ParseError::new(
                ParseErrorKind::MalformedJson,
                "tool call requires a string field `name`",
            ))
        }
    };
    let arguments = match obj.remove("arguments") {
        Some(Value::Object(map)) => map,
        _ => {
            return Err(ParseError::new(
                ParseErrorKind::MalformedJson,
                "tool call requires an object field `arguments`",
            ))
        }
    };
    Ok(ToolCall { name, arguments })
}

/// Parse one round emission into thinking segments plus a terminal tool call
/// or answer.
///
/// Total and deterministic over arbitrary input; never panics.
pub fn parse_model_output(text: &str, thinking_mode: bool) -> Result<ParsedOutput, ParseError> {
    let blocks = tokenize(text)?;
    let terminal_idx = blocks
        .iter()
        .position(|b| b.kind != BlockKind::Think)
        .ok_or_else(|| ParseError::new(ParseErrorKind::NoTerminal, "no tool_call or answer tag"))?;
    if let Some(extra) = blocks.get(terminal_idx + 1) {
        if blocks[terminal_idx].kind == BlockKind::Answer && extra.kind == BlockKind::Answer {
            return Err(ParseError::new(
                ParseErrorKind::DuplicateAnswer,
                "more than one answer block",
            ));
        }
        return Err(ParseError::new(
            ParseErrorKind::BadTagOrder,
            "content after the terminal block",
        ));
    }
    if thinking_mode && terminal_idx == 0 {
        return Err(ParseError::new(
            ParseErrorKind::BadTagOrder,
            "thinking mode requires a think block before the terminal tag",
        ));
    }
    let think_segments: Vec<String> =
        blocks[..terminal_idx].iter().map(|b| b.content.to_string()).collect();
    let terminal = &blocks[terminal_idx];
    match terminal.kind {
        BlockKind::ToolCall => {
            let call = parse_tool_call_body(terminal.content)?;
            Ok(ParsedOutput { think_segments, tool_call: Some(call), answer: None })
        }
        BlockKind::Answer => Ok(ParsedOutput {
            think_segments,
            tool_call: None,
            answer: Some(terminal.content.to_string()),
        }),
        BlockKind::Think => unreachable!("terminal index points at a non-think block"),
    }
}

/// Whole-rollout format check backing the strict format reward.
///
/// The concatenation of all per-round emissions must match exactly
/// `<think>…</think><answer>…</answer>`, optionally with
/// `<tool_call>…</tool_call><think>…</think>` pairs inserted before the
/// answer. Every tool-call body must be a JSON object with `name` and
/// `arguments`; with tools disabled the tool-call shape is not accepted at
/// all. Each emission must also parse on its own, so a tag split across
/// round boundaries (or a hallucinated multi-round emission) never earns
/// format credit.
pub fn validate_format(raw_texts: &[String], tools_enabled: bool) -> bool {
    if raw_texts.is_empty() {
        return false;
    }
    if raw_texts.iter().any(|t| parse_model_output(t, true).is_err()) {
        return false;
    }
    let concatenated = raw_texts.concat();
    let Ok(blocks) = tokenize(&concatenated) else {
        return false;
    };
    // Expected: Think (ToolCall Think)* Answer
    let mut iter = blocks.iter().peekable();
    if iter.next().map(|b| b.kind) != Some(BlockKind::Think) {
        return false;
    }
    loop {
        match iter.next() {
            Some(block) if block.kind == BlockKind::ToolCall => {
                if !tools_enabled || parse_tool_call_body(block.content).is_err() {
                    return false;
                }
                if iter.next().map(|b| b.kind) != Some(BlockKind::Think) {
                    return false;
                }
            }
            Some(block) if block.kind == BlockKind::Answer => return iter.next().is_none(),
            _ => return false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn parses_tool_call_round() {
        let out = parse_model_output(
            "<think>find clip</think><tool_call>{\"name\":\"video_clip\",\"arguments\":{\"start\":10,\"end\":20}}</tool_call>",
            true,
        )
        .unwrap();
        assert_eq!(out.think_segments, vec!["find clip"]);
        let call = out.tool_call.unwrap();
        assert_eq!(call.name, "video_clip");
        assert_eq!(call.arguments.get("start"), Some(&serde_json::json!(10)));
        assert!(out.answer.is_none());
    }

    #[test]
    fn parses_answer_round() {
        let out = parse_model_output("<think>done</think><answer>B</answer>", true).unwrap();
        assert_eq!(out.think_segments, vec!["done"]);
        assert_eq!(out.answer.as_deref(), Some("B"));
        assert!(out.tool_call.is_none());
    }

    #[test]
    fn missing_think_in_thinking_mode() {
        let err = parse_model_output("<answer>B</answer>", true).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::BadTagOrder);
    }

    #[test]
    fn answer_without_think_ok_when_not_thinking() {
        let out = parse_model_output("<answer>B</answer>", false).unwrap();
        assert!(out.think_segments.is_empty());
        assert_eq!(out.answer.as_deref(), Some("B"));
    }

    #[test]
    fn malformed_tool_json() {
        let err = parse_model_output("<think>x</think><tool_call>{bad json</tool_call>", true)
            .unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::MalformedJson);
    }

    #[test]
    fn tool_call_requires_name_and_arguments() {
        for body in [
            "{\"arguments\":{}}",
            "{\"name\":3,\"arguments\":{}}",
            "{\"name\":\"x\"}",
            "{\"name\":\"x\",\"arguments\":[]}",
            "[1,2]",
        ] {
            let text = format!("<think>t</think><tool_call>{body}</tool_call>");
            let err = parse_model_output(&text, true).unwrap_err();
            assert_eq!(err.kind, ParseErrorKind::MalformedJson, "body: {body}");
        }
    }

    #[test]
    fn whitespace_between_tags_is_ignored() {
        let out =
            parse_model_output("  <think>a</think>\n\n  <answer> B </answer>\t", true).unwrap();
        assert_eq!(out.answer.as_deref(), Some(" B "));
    }

    #[test]
    fn text_outside_tags_rejected() {
        for text in [
            "x<think>a</think><answer>b</answer>",
            "<think>a</think>noise<answer>b</answer>",
            "<think>a</think><answer>b</answer> trailing",
        ] {
            let err = parse_model_output(text, true).unwrap_err();
            assert_eq!(err.kind, ParseErrorKind::BadTagOrder, "text: {text}");
        }
    }

    #[test]
    fn unbalanced_tags_detected() {
        for text in [
            "<think>a",
            "</think>",
            "<think>a</think><answer>b",
            "<think>a<think>b</think></think><answer>c</answer>",
            "<answer>a<tool_call>b</answer>",
        ] {
            let err = parse_model_output(text, true).unwrap_err();
            assert_eq!(err.kind, ParseErrorKind::UnbalancedTags, "text: {text}");
        }
    }

    #[test]
    fn no_terminal_detected() {
        for text in ["", "   ", "<think>a</think>", "<think>a</think><think>b</think>"] {
            let err = parse_model_output(text, true).unwrap_err();
            assert_eq!(err.kind, ParseErrorKind::NoTerminal, "text: {text:?}");
        }
    }

    #[test]
    fn duplicate_answer_detected() {
        let err = parse_model_output(
            "<think>a</think><answer>b</answer><answer>c</answer>",
            true,
        )
        .unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DuplicateAnswer);
    }

    #[test]
    fn block_after_terminal_is_bad_order() {
        for text in [
            "<think>a</think><answer>b</answer><think>c</think>",
            "<think>a</think><tool_call>{\"name\":\"x\",\"arguments\":{}}</tool_call><answer>b</answer>",
        ] {
            let err = parse_model_output(text, true).unwrap_err();
            assert_eq!(err.kind, ParseErrorKind::BadTagOrder, "text: {text}");
        }
    }

    #[test]
    fn multiple_think_segments_collected() {
        let out =
            parse_model_output("<think>a</think><think>b</think><answer>c</answer>", true).unwrap();
        assert_eq!(out.think_segments, vec!["a", "b"]);
    }

    #[test]
    fn parse_is_deterministic() {
        let text = "<think>a</think><answer>b</answer>";
        assert_eq!(parse_model_output(text, true), parse_model_output(text, true));
    }

    #[test]
    fn wire_json_shape() {
        let err = parse_model_output("", true).unwrap_err();
        let json = err.wire_json();
        assert!(json.starts_with("{\"error\":\"no_terminal\""), "json: {json}");
        let val: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(val.get("detail").is_some());
    }

    #[test]
    fn validate_format_accepts_both_shapes() {
        assert!(validate_format(&s(&["<think>a</think><answer>b</answer>"]), true));
        assert!(validate_format(
            &s(&[
                "<think>a</think><tool_call>{\"name\":\"video_clip\",\"arguments\":{}}</tool_call>",
                "<think>b</think><answer>c</answer>",
            ]),
            true,
        ));
        // Two tool rounds.
        assert!(validate_format(
            &s(&[
                "<think>a</think><tool_call>{\"name\":\"video_clip\",\"arguments\":{}}</tool_call>",
                "<think>b</think><tool_call>{\"name\":\"video_clip\",\"arguments\":{}}</tool_call>",
                "<think>c</think><answer>d</answer>",
            ]),
            true,
        ));
    }

    #[test]
    fn validate_format_rejections() {
        // Missing think between tool_call and answer.
        assert!(!validate_format(
            &s(&[
                "<think>a</think><tool_call>{\"name\":\"x\",\"arguments\":{}}</tool_call>",
                "<answer>c</answer>",
            ]),
            true,
        ));
        // Stray text.
        assert!(!validate_format(&s(&["oops<think>a</think><answer>b</answer>"]), true));
        // Tool call with tools disabled.
        assert!(!validate_format(
            &s(&[
                "<think>a</think><tool_call>{\"name\":\"x\",\"arguments\":{}}</tool_call>",
                "<think>b</think><answer>c</answer>",
            ]),
            false,
        ));
        // Invalid tool-call JSON.
        assert!(!validate_format(
            &s(&[
                "<think>a</think><tool_call>nope</tool_call>",
                "<think>b</think><answer>c</answer>",
            ]),
            true,
        ));
        // Double think.
        assert!(!validate_format(
            &s(&["<think>a</think><think>b</think><answer>c</answer>"]),
            true,
        ));
        // Empty.
        assert!(!validate_format(&[], true));
        // Tag split across emission boundaries: concatenation looks fine,
        // but the emissions themselves are unparseable.
        assert!(!validate_format(&s(&["<think>a</th", "ink><answer>b</answer>"]), true));
        // A single emission carrying the whole multi-round shape means the
        // tool result was hallucinated.
        assert!(!validate_format(
            &s(&[
                "<think>a</think><tool_call>{\"name\":\"x\",\"arguments\":{}}</tool_call><think>b</think><answer>c</answer>",
            ]),
            true,
        ));
    }

    #[test]
    fn validate_format_implies_per_round_parse() {
        let rounds = s(&[
            "<think>a</think><tool_call>{\"name\":\"video_clip\",\"arguments\":{\"start\":1,\"end\":2}}</tool_call>",
            "<think>b</think><answer>c</answer>",
        ]);
        assert!(validate_format(&rounds, true));
        for r in &rounds {
            assert!(parse_model_output(r, true).is_ok());
        }
    }
}
