//! Scoring a single completion: schema validity, answer and executable
//! correctness, typed-trace correctness and the error taxonomy.

mod calendar;

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::modes::{answer_regex, calendar_schema, OutputMode};
use crate::taskgen::{Family, TaskInstance};
use crate::validate::{
    canonical_serialize, extract_final_answer, extract_json_with, final_answer_segment, normalize,
    normalize_answer, validate_regex, ExtractionRule, JsonValue, ParseOutcome, ParseStatus, Strictness,
    Violation,
};

pub use calendar::{
    calendar_exec_ok, classify_calendar_failure, CalendarDiagnosis, CalendarFailureClass, CalendarField,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    CorrectValid,
    InvalidJson,
    ParseFailureFreeform,
    SchemaValidationError,
    TraceAnswerContradiction,
    WrongAnswerValidSchema,
    /// The backend never produced a completion. Assigned by the harness,
    /// never by `classify`.
    GenerationFailed,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 7] = [
        ErrorClass::CorrectValid,
        ErrorClass::InvalidJson,
        ErrorClass::ParseFailureFreeform,
        ErrorClass::SchemaValidationError,
        ErrorClass::TraceAnswerContradiction,
        ErrorClass::WrongAnswerValidSchema,
        ErrorClass::GenerationFailed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::CorrectValid => "correct_valid",
            ErrorClass::InvalidJson => "invalid_json",
            ErrorClass::ParseFailureFreeform => "parse_failure_freeform",
            ErrorClass::SchemaValidationError => "schema_validation_error",
            ErrorClass::TraceAnswerContradiction => "trace_answer_contradiction",
            ErrorClass::WrongAnswerValidSchema => "wrong_answer_valid_schema",
            ErrorClass::GenerationFailed => "generation_failed",
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub schema_valid: bool,
    pub answer_correct: bool,
    pub exec_correct: bool,
    pub trace_correct: Option<bool>,
    pub error_class: ErrorClass,
}

/// Flags feeding `classify`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckFlags {
    pub parse_status: Option<ParseStatus>,
    pub schema_valid: bool,
    pub answer_correct: bool,
    pub exec_correct: bool,
    pub trace_correct: Option<bool>,
    pub trace_contradiction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CheckOptions {
    pub extraction: Strictness,
    /// Also require every intermediate trace output to match.
    pub strict_trace: bool,
}

/// Everything derived from one completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub parse: ParseOutcome,
    pub check: CheckResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calendar: Option<CalendarDiagnosis>,
    /// Extracted answer text (or concatenated argument values for calls).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

fn violation(keyword: &str, message: String) -> Violation {
    Violation {
        path: String::new(),
        keyword: keyword.to_string(),
        message,
    }
}

/// Parse a completion under a mode's contract. Violations are filled in for
/// anything that parsed but does not conform.
pub fn parse_completion(family: Family, mode: OutputMode, raw: &str, strictness: Strictness) -> ParseOutcome {
    if mode.expects_json() {
        let mut out = extract_json_with(raw, strictness);
        if let (Some(value), Some(schema)) = (&out.value, mode.target_schema(family)) {
            out.violations = schema.validate(value);
        }
        return out;
    }
    if mode == OutputMode::FinalOnlyRegex {
        let pattern = answer_regex(family);
        if !validate_regex(raw, pattern) {
            return ParseOutcome::failed(ParseStatus::RegexMismatch);
        }
        let mut out = ParseOutcome::matched(raw.trim_end().to_string(), ExtractionRule::Regex);
        if family.is_tool_call() {
            out.value = JsonValue::parse(raw.trim_end()).ok();
        }
        return out;
    }
    // freeform modes
    if family.is_tool_call() {
        let segment = final_answer_segment(raw);
        let mut out = extract_json_with(segment, strictness);
        match &out.value {
            Some(value) => {
                out.rule = Some(ExtractionRule::FinalLine);
                out.violations = calendar_schema().validate(value);
                out
            }
            None => ParseOutcome::failed(ParseStatus::NoAnswerFound),
        }
    } else {
        match extract_final_answer(raw) {
            Some(answer) => {
                let conforms = validate_regex(&normalize_answer(&answer, family), answer_regex(family));
                let mut out = ParseOutcome::matched(answer, ExtractionRule::FinalLine);
                if !conforms {
                    out.violations.push(violation(
                        "pattern",
                        format!("answer does not match {}", answer_regex(family)),
                    ));
                }
                out
            }
            None => ParseOutcome::failed(ParseStatus::NoAnswerFound),
        }
    }
}

pub fn is_schema_valid(parse: &ParseOutcome) -> bool {
    parse.is_ok() && parse.violations.is_empty()
}

static LOOSE_ANSWER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#""answer"\s*:\s*(?:"((?:[^"\\]|\\.)*)"|(-?\d+(?:\.\d+)?|true|false))"#).expect("valid pattern")
});

fn scalar_text(value: &JsonValue) -> Option<String> {
    match value {
        JsonValue::String(s) => Some(s.clone()),
        JsonValue::Int(_) | JsonValue::Real(_) | JsonValue::Bool(_) => Some(value.to_compact_string()),
        _ => None,
    }
}

/// The answer slot for non-call families.
fn answer_text(mode: OutputMode, raw: &str, parse: &ParseOutcome) -> Option<String> {
    if mode.expects_json() {
        if let Some(value) = &parse.value {
            return value.get("answer").and_then(scalar_text);
        }
        // Unparsable object: still look for an answer field so answer
        // accuracy is measured independently of validity.
        let caps = LOOSE_ANSWER.captures(raw)?;
        return caps.get(1).or_else(|| caps.get(2)).map(|m| m.as_str().to_string());
    }
    if parse.is_ok() {
        parse.matched_text.clone()
    } else {
        None
    }
}

/// The call object for tool-call completions.
fn call_object(mode: OutputMode, parse: &ParseOutcome) -> Option<&JsonValue> {
    let value = parse.value.as_ref()?;
    match mode {
        OutputMode::RationaleAnswerSchema | OutputMode::TypedTraceSchema => value.get("answer"),
        _ => Some(value),
    }
}

pub fn check_answer(instance: &TaskInstance, raw: &str, parse: &ParseOutcome, mode: OutputMode) -> bool {
    let family = instance.family;
    if family.is_tool_call() {
        return match (call_object(mode, parse), instance.expected_arguments()) {
            (Some(obj), Some(expected)) => calendar_exec_ok(obj, expected),
            _ => false,
        };
    }
    answer_text(mode, raw, parse).is_some_and(|a| {
        normalize_answer(&a, family) == normalize_answer(&instance.ground_truth.final_answer, family)
    })
}

pub fn check_executable(instance: &TaskInstance, raw: &str, parse: &ParseOutcome, mode: OutputMode) -> bool {
    is_schema_valid(parse) && check_answer(instance, raw, parse, mode)
}

/// Typed-trace check: same step count, same ops in order, and a final step
/// output equal to the final answer. `strict` also compares every output.
pub fn check_trace(instance: &TaskInstance, trace: &[(String, String)], strict: bool) -> bool {
    let truth = &instance.ground_truth.trace;
    if trace.len() != truth.len() || trace.iter().zip(truth).any(|((op, _), t)| op != &t.op) {
        return false;
    }
    let Some((_, last)) = trace.last() else {
        return false;
    };
    if !outputs_agree(instance.family, last, &instance.ground_truth.final_answer) {
        return false;
    }
    !strict || trace.iter().zip(truth).all(|((_, out), t)| normalize(out) == normalize(&t.output))
}

/// Compare a step output with an answer; call objects compare canonically.
fn outputs_agree(family: Family, output: &str, answer: &str) -> bool {
    if family.is_tool_call() {
        if let (Ok(a), Ok(b)) = (JsonValue::parse(output), JsonValue::parse(answer)) {
            return normalize(&canonical_serialize(&a)) == normalize(&canonical_serialize(&b));
        }
        return normalize(output) == normalize(answer);
    }
    normalize_answer(output, family) == normalize_answer(answer, family)
}

fn typed_trace(value: &JsonValue) -> Vec<(String, String)> {
    value
        .get("steps")
        .and_then(JsonValue::as_array)
        .unwrap_or_default()
        .iter()
        .map(|step| {
            let field = |k| step.get(k).and_then(scalar_text).unwrap_or_default();
            (field("op"), field("output"))
        })
        .collect()
}

/// Taxonomy precedence: invalid JSON, freeform parse failure, schema
/// violation, trace/answer contradiction, wrong answer, correct.
pub fn classify(flags: &CheckFlags, mode: OutputMode) -> ErrorClass {
    let parsed = flags.parse_status == Some(ParseStatus::Ok);
    if mode.expects_json() && !parsed {
        ErrorClass::InvalidJson
    } else if mode.is_freeform() && !parsed {
        ErrorClass::ParseFailureFreeform
    } else if !flags.schema_valid {
        ErrorClass::SchemaValidationError
    } else if flags.trace_contradiction {
        ErrorClass::TraceAnswerContradiction
    } else if !(flags.answer_correct && flags.exec_correct && flags.trace_correct != Some(false)) {
        ErrorClass::WrongAnswerValidSchema
    } else {
        ErrorClass::CorrectValid
    }
}

/// Parse and fully score one completion.
pub fn evaluate(instance: &TaskInstance, mode: OutputMode, raw: &str, options: CheckOptions) -> Evaluation {
    let family = instance.family;
    let parse = parse_completion(family, mode, raw, options.extraction);
    let schema_valid = is_schema_valid(&parse);
    let answer_correct = check_answer(instance, raw, &parse, mode);
    let exec_correct = schema_valid && answer_correct;

    let mut trace_correct = None;
    let mut trace_contradiction = false;
    if mode == OutputMode::TypedTraceSchema {
        if let Some(value) = &parse.value {
            let trace = typed_trace(value);
            trace_correct = Some(check_trace(instance, &trace, options.strict_trace));
            let stated = if family.is_tool_call() {
                value.get("answer").map(canonical_serialize)
            } else {
                value.get("answer").and_then(scalar_text)
            };
            if let (Some((_, last)), Some(stated)) = (trace.last(), stated) {
                trace_contradiction = !outputs_agree(family, last, &stated);
            }
        }
    }

    let flags = CheckFlags {
        parse_status: Some(parse.status),
        schema_valid,
        answer_correct,
        exec_correct,
        trace_correct,
        trace_contradiction,
    };
    let error_class = classify(&flags, mode);

    let object = if family.is_tool_call() { call_object(mode, &parse) } else { None };
    let calendar = match (object, instance.expected_arguments()) {
        (Some(obj), Some(expected)) if schema_valid => Some(classify_calendar_failure(obj, expected)),
        _ => None,
    };
    let payload = if family.is_tool_call() {
        object.and_then(arguments_payload)
    } else {
        answer_text(mode, raw, &parse)
    };

    Evaluation {
        parse,
        check: CheckResult {
            schema_valid,
            answer_correct,
            exec_correct,
            trace_correct,
            error_class,
        },
        calendar,
        payload,
    }
}

/// Concatenated semantic argument values of a call object.
fn arguments_payload(call: &JsonValue) -> Option<String> {
    let args = call.get("arguments")?.as_object()?;
    let parts: Vec<String> = CalendarField::ALL
        .iter()
        .filter_map(|f| args.get(f.key()).map(|v| scalar_text(v).unwrap_or_else(|| v.to_compact_string())))
        .collect();
    Some(parts.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{generate_instance, RngSeed};

    fn arith_nine() -> TaskInstance {
        // find an instance whose answer is a known value
        let mut inst = generate_instance(Family::ArithmeticTwoStep, 0, RngSeed(1)).unwrap();
        inst.ground_truth.final_answer = "9".into();
        inst.ground_truth.trace.last_mut().unwrap().output = "9".into();
        inst
    }

    fn eval(inst: &TaskInstance, mode: OutputMode, raw: &str) -> Evaluation {
        evaluate(inst, mode, raw, CheckOptions::default())
    }

    #[test]
    fn answer_examples() {
        let i = arith_nine();
        assert!(eval(&i, OutputMode::PromptJson, r#"{"answer":"9"}"#).check.answer_correct);
        assert!(eval(&i, OutputMode::Freeform, "work\nFinal answer: 9").check.answer_correct);
        assert!(!eval(&i, OutputMode::PromptJson, r#"{"answer":"10"}"#).check.answer_correct);
    }

    #[test]
    fn prompt_json_can_be_right_but_invalid() {
        let i = arith_nine();
        let e = eval(&i, OutputMode::PromptJson, r#"{"answer": 9, "note": "easy"}"#);
        assert!(e.check.answer_correct);
        assert!(!e.check.schema_valid);
        assert!(!e.check.exec_correct);
        assert_eq!(e.check.error_class, ErrorClass::SchemaValidationError);
        let e = eval(&i, OutputMode::PromptJson, r#"{"answer": "9""#);
        assert!(e.check.answer_correct);
        assert_eq!(e.check.error_class, ErrorClass::InvalidJson);
    }

    #[test]
    fn classes() {
        let i = arith_nine();
        assert_eq!(eval(&i, OutputMode::AnswerOnlySchema, r#"{"answer":"9"}"#).check.error_class, ErrorClass::CorrectValid);
        assert_eq!(eval(&i, OutputMode::AnswerOnlySchema, r#"{"answer":"8"}"#).check.error_class, ErrorClass::WrongAnswerValidSchema);
        assert_eq!(eval(&i, OutputMode::Freeform, "  ").check.error_class, ErrorClass::ParseFailureFreeform);
        assert_eq!(eval(&i, OutputMode::Freeform, "Final answer: nine").check.error_class, ErrorClass::SchemaValidationError);
        assert_eq!(eval(&i, OutputMode::FinalOnlyRegex, "9").check.error_class, ErrorClass::CorrectValid);
        assert_eq!(eval(&i, OutputMode::FinalOnlyRegex, "nine").check.error_class, ErrorClass::SchemaValidationError);
    }

    #[test]
    fn trace_checks() {
        let i = arith_nine();
        let truth: Vec<(String, String)> =
            i.ground_truth.trace.iter().map(|s| (s.op.clone(), s.output.clone())).collect();
        assert!(check_trace(&i, &truth, false));
        assert!(check_trace(&i, &truth, true));
        assert!(!check_trace(&i, &truth[1..], false));
        let mut wrong_final = truth.clone();
        wrong_final.last_mut().unwrap().1 = "8".into();
        assert!(!check_trace(&i, &wrong_final, false));
        let mut wrong_mid = truth.clone();
        wrong_mid[0].1 = "1000".into();
        assert!(check_trace(&i, &wrong_mid, false));
        assert!(!check_trace(&i, &wrong_mid, true));
    }

    #[test]
    fn contradiction_is_detected() {
        let i = arith_nine();
        let steps: Vec<String> = i
            .ground_truth
            .trace
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let out = if k + 1 == i.ground_truth.trace.len() { "8" } else { s.output.as_str() };
                format!(r#"{{"op":"{}","output":"{}"}}"#, s.op, out)
            })
            .collect();
        let raw = format!(r#"{{"steps":[{}],"answer":"9"}}"#, steps.join(","));
        let e = eval(&i, OutputMode::TypedTraceSchema, &raw);
        assert!(e.check.schema_valid);
        assert_eq!(e.check.trace_correct, Some(false));
        assert_eq!(e.check.error_class, ErrorClass::TraceAnswerContradiction);
    }

    #[test]
    fn calendar_wrong_duration_is_wrong_valid() {
        let i = generate_instance(Family::ToolCallArgument, 0, RngSeed(1)).unwrap();
        let mut target = i.ground_truth.exec_target.clone().unwrap();
        if let JsonValue::Object(m) = &mut target {
            if let Some(JsonValue::Object(args)) = m.get_mut("arguments") {
                let d = args["duration_minutes"].clone();
                let wrong = if d == JsonValue::Int(180) { 15 } else { 180 };
                args.insert("duration_minutes".into(), JsonValue::Int(wrong));
            }
        }
        let e = eval(&i, OutputMode::AnswerOnlySchema, &canonical_serialize(&target));
        assert!(e.check.schema_valid);
        assert!(!e.check.exec_correct);
        assert_eq!(e.check.error_class, ErrorClass::WrongAnswerValidSchema);
        assert_eq!(e.calendar.unwrap().class, CalendarFailureClass::WrongDuration);
        let truncated = &i.ground_truth.final_answer[..i.ground_truth.final_answer.len() - 1];
        assert_eq!(eval(&i, OutputMode::AnswerOnlySchema, truncated).check.error_class, ErrorClass::InvalidJson);
    }

    #[test]
    fn payload_extraction() {
        let i = arith_nine();
        assert_eq!(eval(&i, OutputMode::PromptJson, r#"{"answer":"9"}"#).payload.as_deref(), Some("9"));
    }
}
