//! Parsing raw completions: JSON extraction, freeform final-answer lines and
//! anchored regex matching.

use std::cell::RefCell;
use std::collections::HashMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::json::JsonValue;
use super::schema::Violation;

/// Recorded in every run record so alternate extraction strategies can be
/// compared later.
pub const EXTRACTION_RULE_VERSION: &str = "json=fenced>balanced>whole;final-line=v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    NoJsonFound,
    MalformedJson,
    RegexMismatch,
    /// Freeform completion with no extractable final answer.
    NoAnswerFound,
}

/// Which extraction rule produced the parsed value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionRule {
    Fenced,
    Balanced,
    Whole,
    FinalLine,
    Regex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    #[default]
    Lenient,
    /// Only the whole completion (trimmed) is parsed.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub status: ParseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<JsonValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<ExtractionRule>,
    #[serde(default)]
    pub violations: Vec<Violation>,
}

impl ParseOutcome {
    pub fn failed(status: ParseStatus) -> ParseOutcome {
        ParseOutcome {
            status,
            value: None,
            matched_text: None,
            rule: None,
            violations: Vec::new(),
        }
    }

    fn parsed(value: JsonValue, text: &str, rule: ExtractionRule) -> ParseOutcome {
        ParseOutcome {
            status: ParseStatus::Ok,
            value: Some(value),
            matched_text: Some(text.to_string()),
            rule: Some(rule),
            violations: Vec::new(),
        }
    }

    pub fn matched(text: String, rule: ExtractionRule) -> ParseOutcome {
        ParseOutcome {
            status: ParseStatus::Ok,
            value: None,
            matched_text: Some(text),
            rule: Some(rule),
            violations: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ParseStatus::Ok
    }
}

/// Lenient JSON extraction: a ```json fenced block, then the first balanced
/// top-level `{...}`, then the whole text. The first candidate that parses
/// wins.
pub fn extract_json(text: &str) -> ParseOutcome {
    extract_json_with(text, Strictness::Lenient)
}

pub fn extract_json_with(text: &str, strictness: Strictness) -> ParseOutcome {
    if strictness == Strictness::Lenient {
        for block in fenced_json_blocks(text) {
            if let Ok(v) = JsonValue::parse(block) {
                return ParseOutcome::parsed(v, block.trim(), ExtractionRule::Fenced);
            }
        }
        if let Some(candidate) = first_balanced_object(text) {
            if let Ok(v) = JsonValue::parse(candidate) {
                return ParseOutcome::parsed(v, candidate, ExtractionRule::Balanced);
            }
        }
    }
    let whole = text.trim();
    if let Ok(v) = JsonValue::parse(whole) {
        return ParseOutcome::parsed(v, whole, ExtractionRule::Whole);
    }
    if text.contains('{') {
        ParseOutcome::failed(ParseStatus::MalformedJson)
    } else {
        ParseOutcome::failed(ParseStatus::NoJsonFound)
    }
}

fn fenced_json_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let Some(line_end) = after.find('\n') else { break };
        let tag = after[..line_end].trim();
        let body = &after[line_end + 1..];
        let Some(close) = body.find("```") else { break };
        if tag.eq_ignore_ascii_case("json") {
            blocks.push(&body[..close]);
        }
        rest = &body[close + 3..];
    }
    blocks
}

/// The first `{` and its matching `}`, with braces inside string literals
/// ignored. `None` when the first object never closes.
pub fn first_balanced_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn marker_end(line: &str, marker: &str) -> Option<usize> {
    let lower = line.to_ascii_lowercase();
    lower.rfind(marker).map(|i| i + marker.len())
}

/// Text after the last "final answer" marker (case-insensitive), or the
/// whole text when there is none.
pub fn final_answer_segment(text: &str) -> &str {
    let lower = text.to_ascii_lowercase();
    match lower.rfind("final answer") {
        Some(i) => text[i + "final answer".len()..].trim_start_matches([':', ' ', '*', '-', '\t']),
        None => text,
    }
}

/// Freeform answer extraction: the last line mentioning "final answer"
/// (case-insensitive) contributes the text after the marker; failing that,
/// the last line containing "answer is"; otherwise the last non-empty line.
pub fn extract_final_answer(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    for marker in ["final answer", "answer is"] {
        if let Some((line, end)) = lines.iter().rev().find_map(|l| marker_end(l, marker).map(|e| (l, e))) {
            let tail = clean_answer(&line[end..]);
            if !tail.is_empty() {
                return Some(tail);
            }
            break;
        }
    }
    lines
        .iter()
        .rev()
        .map(|l| clean_answer(l))
        .find(|l| !l.is_empty())
}

fn clean_answer(raw: &str) -> String {
    let mut s = raw.trim_start_matches([':', '-']).trim();
    for _ in 0..2 {
        s = s.strip_suffix('.').unwrap_or(s);
        s = s.trim_matches(|c| c == '*' || c == '`').trim();
    }
    s.to_string()
}

thread_local! {
    static PATTERN_CACHE: RefCell<HashMap<String, Option<Regex>>> = RefCell::new(HashMap::new());
}

/// Full-match of `pattern` against `text` with trailing whitespace removed.
/// A pattern that does not compile matches nothing.
pub fn validate_regex(text: &str, pattern: &str) -> bool {
    let candidate = text.trim_end();
    PATTERN_CACHE.with(|cache| {
        let mut cache = cache.borrow_mut();
        let re = cache
            .entry(pattern.to_string())
            .or_insert_with(|| Regex::new(&format!("^(?:{pattern})$")).ok());
        re.as_ref().is_some_and(|re| re.is_match(candidate))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_block_wins() {
        let out = extract_json("```json\n{\"answer\":\"9\"}\n```");
        assert_eq!(out.status, ParseStatus::Ok);
        assert_eq!(out.rule, Some(ExtractionRule::Fenced));
        assert_eq!(out.value.unwrap().get("answer").unwrap().as_str(), Some("9"));
    }

    #[test]
    fn balanced_object_inside_prose() {
        let out = extract_json("Sure! {\"answer\": \"9\"} hope that helps");
        assert_eq!(out.status, ParseStatus::Ok);
        assert_eq!(out.rule, Some(ExtractionRule::Balanced));
        assert_eq!(out.matched_text.as_deref(), Some("{\"answer\": \"9\"}"));
    }

    #[test]
    fn braces_inside_strings_are_ignored() {
        let out = extract_json(r#"x {"a":"}{","b":{"c":1}} y"#);
        assert_eq!(out.status, ParseStatus::Ok);
        assert_eq!(out.matched_text.as_deref(), Some(r#"{"a":"}{","b":{"c":1}}"#));
        let out = extract_json(r#"{"a":"\"}"}"#);
        assert_eq!(out.status, ParseStatus::Ok);
    }

    #[test]
    fn unbalanced_is_malformed() {
        assert_eq!(extract_json("{\"answer\": \"9\"").status, ParseStatus::MalformedJson);
        assert_eq!(extract_json("the answer is 9").status, ParseStatus::NoJsonFound);
    }

    #[test]
    fn whole_text_scalar_parses() {
        let out = extract_json(" 9 ");
        assert_eq!(out.rule, Some(ExtractionRule::Whole));
        assert_eq!(out.value, Some(JsonValue::Int(9)));
    }

    #[test]
    fn strict_mode_only_accepts_whole_output() {
        let text = "Sure! {\"answer\": \"9\"}";
        assert_eq!(extract_json_with(text, Strictness::Strict).status, ParseStatus::MalformedJson);
        assert!(extract_json_with("{\"answer\":\"9\"}\n", Strictness::Strict).is_ok());
    }

    #[test]
    fn duplicate_keys_are_malformed() {
        assert_eq!(extract_json(r#"{"answer":"9","answer":"8"}"#).status, ParseStatus::MalformedJson);
    }

    #[test]
    fn final_line_extraction() {
        assert_eq!(extract_final_answer("step 1\nstep 2\nFinal answer: 9").as_deref(), Some("9"));
        assert_eq!(extract_final_answer("FINAL ANSWER: **Eve**.").as_deref(), Some("Eve"));
        assert_eq!(extract_final_answer("Final answer: 9\nThanks!").as_deref(), Some("9"));
        assert_eq!(extract_final_answer("reasoning\n\n  true  \n").as_deref(), Some("true"));
        assert_eq!(extract_final_answer("Final answer:\n42").as_deref(), Some("42"));
        assert_eq!(extract_final_answer("   \n"), None);
        assert_eq!(extract_final_answer("the answer is 9").as_deref(), Some("9"));
        assert_eq!(extract_final_answer("So the answer is Eve.\nDone").as_deref(), Some("Eve"));
    }

    #[test]
    fn final_segment_spans_lines() {
        assert_eq!(final_answer_segment("a\nFinal answer: {\n\"x\":1}"), "{\n\"x\":1}");
        assert_eq!(final_answer_segment("{}"), "{}");
    }

    #[test]
    fn regex_full_match_after_strip() {
        assert!(validate_regex("9", r"^-?\d+$"));
        assert!(!validate_regex("nine", r"^-?\d+$"));
        assert!(validate_regex("true ", "^(true|false)$"));
        assert!(!validate_regex(" true", "^(true|false)$"));
        // unanchored patterns are still full-matched
        assert!(!validate_regex("x9", r"\d"));
        assert!(!validate_regex("9", "("));
    }
}
