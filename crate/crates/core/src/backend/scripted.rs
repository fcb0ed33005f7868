//! Scripted generation doubles: an oracle that always answers perfectly in
//! the requested format, and a corruptor that injects known faults.

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::modes::{OutputMode, Stage};
use crate::taskgen::{lexicon, Family, RngSeed, StreamRng, TaskInstance};
use crate::validate::{canonical_serialize, JsonValue};

fn default_targets() -> Vec<String> {
    vec!["duration_minutes".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultProfile {
    #[serde(default)]
    pub p_invalid_json: f64,
    #[serde(default)]
    pub p_wrong_field: f64,
    #[serde(default = "default_targets")]
    pub wrong_field_targets: Vec<String>,
    #[serde(default)]
    pub seed: RngSeed,
}

impl Default for FaultProfile {
    fn default() -> Self {
        FaultProfile {
            p_invalid_json: 0.0,
            p_wrong_field: 0.0,
            wrong_field_targets: default_targets(),
            seed: RngSeed::default(),
        }
    }
}

const ARGUMENT_FIELDS: [&str; 6] = ["title", "date", "start_time", "duration_minutes", "attendee", "topic"];

impl FaultProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_invalid_json", self.p_invalid_json), ("p_wrong_field", self.p_wrong_field)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.wrong_field_targets.is_empty() {
            return Err(Error::Config("wrong_field_targets must not be empty".into()));
        }
        if let Some(bad) = self.wrong_field_targets.iter().find(|t| !ARGUMENT_FIELDS.contains(&t.as_str())) {
            return Err(Error::Config(format!("unknown wrong-field target {bad:?}")));
        }
        Ok(())
    }
}

/// What a scripted completion says: the answer, the call object for tool
/// calls, and the reasoning trace leading to it.
struct Script {
    answer: String,
    object: Option<JsonValue>,
    trace: Vec<(String, String)>,
}

impl Script {
    fn truth(instance: &TaskInstance) -> Script {
        let gt = &instance.ground_truth;
        Script {
            answer: gt.final_answer.clone(),
            object: gt.exec_target.clone(),
            trace: gt.trace.iter().map(|s| (s.op.clone(), s.output.clone())).collect(),
        }
    }

    /// Replace the answer (and the final trace output, so the trace stays
    /// consistent with it).
    fn with_answer(mut self, answer: String, object: Option<JsonValue>) -> Script {
        if let Some((_, last)) = self.trace.last_mut() {
            *last = answer.clone();
        }
        self.answer = answer;
        self.object = object;
        self
    }

    fn answer_value(&self) -> JsonValue {
        match &self.object {
            Some(obj) => obj.clone(),
            None => JsonValue::String(self.answer.clone()),
        }
    }

    fn answer_line(&self) -> String {
        match &self.object {
            Some(obj) => canonical_serialize(obj),
            None => self.answer.clone(),
        }
    }

    fn steps_text(&self) -> Vec<String> {
        self.trace
            .iter()
            .enumerate()
            .map(|(i, (op, out))| format!("Step {}: {op} -> {out}", i + 1))
            .collect()
    }
}

fn object(entries: Vec<(&str, JsonValue)>) -> JsonValue {
    JsonValue::Object(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

fn render(mode: OutputMode, stage: Stage, script: &Script) -> String {
    let brief = || {
        let last = script.trace.len().saturating_sub(2);
        let ops: Vec<&str> = script.trace[last..].iter().map(|(op, _)| op.as_str()).collect();
        format!("Apply {} in order.\nFinal answer: {}", ops.join(" then "), script.answer_line())
    };
    match (mode, stage) {
        (OutputMode::DelayedConstraint, Stage::Stage2) => canonical_answer(script),
        (OutputMode::DelayedConstraint, _) | (OutputMode::FreeformBriefReasoning, _) => brief(),
        (OutputMode::Freeform, _) => {
            let mut lines = vec!["Let's work through it step by step.".to_string()];
            lines.extend(script.steps_text());
            lines.push(format!("Final answer: {}", script.answer_line()));
            lines.join("\n")
        }
        (OutputMode::FreeformDirect, _) | (OutputMode::FinalOnlyRegex, _) => script.answer_line(),
        (OutputMode::PromptJson, _) | (OutputMode::AnswerOnlySchema, _) => canonical_answer(script),
        (OutputMode::RationaleAnswerSchema, _) => {
            let rationale = script
                .trace
                .iter()
                .map(|(op, out)| format!("{op} gives {out}"))
                .collect::<Vec<_>>()
                .join("; ");
            object(vec![("rationale", rationale.into()), ("answer", script.answer_value())]).to_compact_string()
        }
        (OutputMode::TypedTraceSchema, _) => {
            let steps = script
                .trace
                .iter()
                .map(|(op, out)| object(vec![("op", op.as_str().into()), ("output", out.as_str().into())]))
                .collect();
            object(vec![("steps", JsonValue::Array(steps)), ("answer", script.answer_value())]).to_compact_string()
        }
    }
}

fn canonical_answer(script: &Script) -> String {
    match &script.object {
        Some(obj) => canonical_serialize(obj),
        None => canonical_serialize(&object(vec![("answer", script.answer.as_str().into())])),
    }
}

/// A perfectly formatted, correct completion for the mode's first (or only)
/// generation call.
pub fn oracle_generate(instance: &TaskInstance, mode: OutputMode) -> String {
    oracle_generate_stage(instance, mode, Stage::Single)
}

pub fn oracle_generate_stage(instance: &TaskInstance, mode: OutputMode, stage: Stage) -> String {
    render(mode, stage, &Script::truth(instance))
}

fn instance_stream(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

/// The oracle completion with faults injected at the profile's rates.
pub fn corrupt_generate(instance: &TaskInstance, mode: OutputMode, fault: &FaultProfile) -> String {
    corrupt_generate_stage(instance, mode, Stage::Single, fault)
}

pub fn corrupt_generate_stage(instance: &TaskInstance, mode: OutputMode, stage: Stage, fault: &FaultProfile) -> String {
    let domain = format!("corrupt/{}/{:?}", mode.name(), stage);
    let mut rng = StreamRng::new(fault.seed, &domain, instance_stream(&instance.id));
    let invalid = rng.chance(fault.p_invalid_json);
    let wrong = rng.chance(fault.p_wrong_field);
    let script = Script::truth(instance);
    if invalid {
        return truncate(mode, stage, &render(mode, stage, &script));
    }
    if wrong {
        let script = wrong_script(instance, script, fault, &mut rng);
        return render(mode, stage, &script);
    }
    render(mode, stage, &script)
}

/// A malformed variant: JSON loses its closing brace and is cut short,
/// reasoning text loses its final line, bare answers come back empty.
fn truncate(mode: OutputMode, stage: Stage, text: &str) -> String {
    let t = text.trim_end();
    if t.starts_with('{') {
        let body = t.strip_suffix('}').unwrap_or(t);
        let keep = body.char_indices().nth(body.chars().count() * 2 / 3).map_or(body.len(), |(i, _)| i);
        return body[..keep].to_string();
    }
    let multi_line = mode.is_freeform() || (mode == OutputMode::DelayedConstraint && stage != Stage::Stage2);
    if multi_line && t.contains('\n') {
        let head = &t[..t.rfind('\n').expect("has newline")];
        let last_start = head.rfind('\n').map_or(0, |i| i + 1);
        let cut = last_start + (head.len() - last_start) / 2;
        let cut = (cut..=head.len()).find(|&i| head.is_char_boundary(i)).unwrap_or(head.len());
        return head[..cut].to_string();
    }
    String::new()
}

fn wrong_script(instance: &TaskInstance, script: Script, fault: &FaultProfile, rng: &mut StreamRng) -> Script {
    match &script.object {
        Some(target) => {
            let field = rng.pick(&fault.wrong_field_targets).clone();
            let wrong = wrong_call(target, &field, rng);
            let line = canonical_serialize(&wrong);
            script.with_answer(line, Some(wrong))
        }
        None => {
            let answer = wrong_answer(instance, &script.answer, rng);
            script.with_answer(answer, None)
        }
    }
}

fn others<'a, T: PartialEq + ?Sized>(pool: &[&'a T], current: &T) -> Vec<&'a T> {
    pool.iter().copied().filter(|v| *v != current).collect()
}

fn wrong_call(target: &JsonValue, field: &str, rng: &mut StreamRng) -> JsonValue {
    let mut call = target.clone();
    let JsonValue::Object(map) = &mut call else { return call };
    let Some(JsonValue::Object(args)) = map.get_mut("arguments") else { return call };
    let current = args.get(field).cloned().unwrap_or(JsonValue::Null);
    let replacement: JsonValue = match field {
        "duration_minutes" => {
            let pool: Vec<i64> = [15, 30, 45, 60, 90, 180].into_iter().filter(|d| JsonValue::Int(*d) != current).collect();
            JsonValue::Int(*rng.pick(&pool))
        }
        "topic" => {
            let pool = others(&lexicon::TOPICS, current.as_str().unwrap_or(""));
            (*rng.pick(&pool)).into()
        }
        "attendee" => {
            let lowered: Vec<String> = lexicon::ATTENDEES.iter().map(|a| a.to_lowercase()).collect();
            let refs: Vec<&str> = lowered.iter().map(String::as_str).collect();
            let pool = others(&refs, current.as_str().unwrap_or(""));
            (*rng.pick(&pool)).into()
        }
        "date" => {
            let shifted = current
                .as_str()
                .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
                .map(|d| d + Duration::days(rng.range(1, 6)))
                .unwrap_or_else(|| NaiveDate::from_ymd_opt(2025, 1, 1).expect("valid date"));
            shifted.format("%Y-%m-%d").to_string().into()
        }
        "start_time" => {
            let (h, m) = current
                .as_str()
                .and_then(|s| s.split_once(':'))
                .and_then(|(h, m)| Some((h.parse::<i64>().ok()?, m.parse::<i64>().ok()?)))
                .unwrap_or((9, 0));
            let h = (h + rng.range(1, 3)) % 24;
            format!("{h:02}:{m:02}").into()
        }
        _ => format!("{} (rescheduled)", current.as_str().unwrap_or("meeting")).into(),
    };
    args.insert(field.to_string(), replacement);
    call
}

fn wrong_answer(instance: &TaskInstance, answer: &str, rng: &mut StreamRng) -> String {
    match instance.family {
        Family::ArithmeticTwoStep => {
            let v: i64 = answer.parse().unwrap_or(0);
            let delta = if rng.coin() { 1 } else { -1 } * rng.range(1, 3);
            (v + delta).to_string()
        }
        Family::SymbolicString => {
            let mut chars: Vec<char> = answer.chars().collect();
            if let Some(last) = chars.last_mut() {
                let shift = rng.range(1, 25) as u8;
                *last = (b'a' + ((*last as u8 - b'a' + shift) % 26)) as char;
            }
            chars.into_iter().collect()
        }
        Family::ObjectTracking => {
            let names: Vec<String> = ["p1", "p2", "p3"]
                .iter()
                .filter_map(|k| instance.slots.get(*k).and_then(JsonValue::as_str))
                .map(str::to_lowercase)
                .filter(|n| n != answer)
                .collect();
            if names.is_empty() {
                format!("{answer}x")
            } else {
                rng.pick(&names).clone()
            }
        }
        Family::BooleanLogic => (answer != "true").to_string(),
        Family::ToolCallArgument => answer.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validate::JsonMap;
    use crate::checkers::{evaluate, CheckOptions, ErrorClass};
    use crate::taskgen::{generate_instance, generate_suite};
    use crate::modes::package_answer;
    use crate::validate::extract_json;

    fn call_arguments(call: &JsonValue) -> Option<&JsonMap> {
        call.get("arguments").and_then(JsonValue::as_object)
    }

    /// Delayed completions are scored after packaging.
    fn scored(inst: &TaskInstance, mode: OutputMode, raw: String) -> String {
        if mode == OutputMode::DelayedConstraint {
            package_answer(&raw, inst).unwrap_or_default()
        } else {
            raw
        }
    }

    #[test]
    fn oracle_examples() {
        let mut inst = generate_instance(Family::ArithmeticTwoStep, 0, RngSeed(1)).unwrap();
        inst.ground_truth.final_answer = "9".into();
        assert_eq!(oracle_generate(&inst, OutputMode::PromptJson), r#"{"answer":"9"}"#);

        let tool = generate_instance(Family::ToolCallArgument, 0, RngSeed(1)).unwrap();
        assert_eq!(
            oracle_generate(&tool, OutputMode::AnswerOnlySchema),
            canonical_serialize(tool.ground_truth.exec_target.as_ref().unwrap())
        );

        let boolean = generate_suite(Family::BooleanLogic, 20, RngSeed(1))
            .unwrap()
            .into_iter()
            .find(|i| i.ground_truth.final_answer == "true")
            .unwrap();
        let text = oracle_generate(&boolean, OutputMode::Freeform);
        assert!(text.lines().count() > 2);
        assert!(text.ends_with("Final answer: true"));
    }

    #[test]
    fn oracle_is_always_correct_valid() {
        for family in Family::ALL {
            for inst in generate_suite(family, 25, RngSeed(6)).unwrap() {
                for mode in OutputMode::ALL {
                    let raw = scored(&inst, mode, oracle_generate(&inst, mode));
                    let e = evaluate(&inst, mode, &raw, CheckOptions { strict_trace: true, ..Default::default() });
                    assert_eq!(e.check.error_class, ErrorClass::CorrectValid, "{family} {mode}: {raw}");
                }
            }
        }
    }

    #[test]
    fn forced_branches() {
        let tool = generate_instance(Family::ToolCallArgument, 3, RngSeed(2)).unwrap();
        let invalid = FaultProfile { p_invalid_json: 1.0, ..Default::default() };
        for mode in [OutputMode::PromptJson, OutputMode::AnswerOnlySchema, OutputMode::TypedTraceSchema] {
            assert!(!extract_json(&corrupt_generate(&tool, mode, &invalid)).is_ok());
        }
        let wrong = FaultProfile { p_wrong_field: 1.0, ..Default::default() };
        let e = evaluate(&tool, OutputMode::AnswerOnlySchema, &corrupt_generate(&tool, OutputMode::AnswerOnlySchema, &wrong), CheckOptions::default());
        assert!(e.check.schema_valid);
        assert!(!e.check.exec_correct);
        let clean = FaultProfile::default();
        assert_eq!(corrupt_generate(&tool, OutputMode::PromptJson, &clean), oracle_generate(&tool, OutputMode::PromptJson));
    }

    #[test]
    fn wrong_answers_stay_in_domain_and_wrong() {
        let fault = FaultProfile { p_wrong_field: 1.0, ..Default::default() };
        for family in Family::ALL {
            for inst in generate_suite(family, 40, RngSeed(13)).unwrap() {
                for mode in OutputMode::ALL {
                    let raw = scored(&inst, mode, corrupt_generate(&inst, mode, &fault));
                    let e = evaluate(&inst, mode, &raw, CheckOptions::default());
                    assert!(e.check.schema_valid, "{family} {mode}: {raw}");
                    assert!(!e.check.answer_correct, "{family} {mode}: {raw}");
                    assert_eq!(e.check.error_class, ErrorClass::WrongAnswerValidSchema, "{family} {mode}: {raw}");
                }
            }
        }
    }

    #[test]
    fn wrong_call_targets_each_field() {
        let tool = generate_instance(Family::ToolCallArgument, 0, RngSeed(4)).unwrap();
        let target = tool.ground_truth.exec_target.clone().unwrap();
        for field in ["date", "start_time", "duration_minutes", "attendee", "topic"] {
            let mut rng = StreamRng::new(RngSeed(1), "t", 0);
            let wrong = wrong_call(&target, field, &mut rng);
            let (a, b) = (call_arguments(&wrong).unwrap(), call_arguments(&target).unwrap());
            for k in ARGUMENT_FIELDS {
                assert_eq!(a[k] == b[k], k != field, "{field}/{k}");
            }
        }
    }

    #[test]
    fn profile_validation() {
        assert!(FaultProfile { p_invalid_json: 1.5, ..Default::default() }.validate().is_err());
        assert!(FaultProfile { wrong_field_targets: vec!["colour".into()], ..Default::default() }.validate().is_err());
        assert!(FaultProfile::default().validate().is_ok());
    }

    #[test]
    fn corruption_is_deterministic() {
        let fault = FaultProfile { p_invalid_json: 0.3, p_wrong_field: 0.3, ..Default::default() };
        for inst in generate_suite(Family::ObjectTracking, 30, RngSeed(3)).unwrap() {
            assert_eq!(
                corrupt_generate(&inst, OutputMode::PromptJson, &fault),
                corrupt_generate(&inst, OutputMode::PromptJson, &fault)
            );
        }
    }
}
