//! Second stage of delayed packaging: project a free first-stage completion
//! into the target JSON object, either deterministically or by asking the
//! model again under the hard schema.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{answer_schema, stage2_prompt, PromptBundle};
use crate::taskgen::TaskInstance;
use crate::validate::{
    canonical_serialize, extract_final_answer, extract_json, extract_json_with, final_answer_segment, JsonMap, JsonValue,
    Strictness, Violation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayedVariant {
    /// Re-serialize the first-stage answer without a second model call.
    #[default]
    Deterministic,
    /// Send a second, schema-constrained request containing the first stage.
    Model,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PackagingFailure {
    #[error("no answer could be extracted from the first stage")]
    NoAnswer,
    #[error("packaged object violates the target schema ({} violations)", violations.len())]
    SchemaViolation {
        violations: Vec<Violation>,
        /// Canonical text of the rejected object.
        object: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage2Plan {
    /// Deterministic result: canonical JSON text, or the failure marker.
    Packaged(Result<String, PackagingFailure>),
    /// A second model call is required.
    Prompt(PromptBundle),
}

pub fn build_delayed_stage2(stage1_raw: &str, instance: &TaskInstance, variant: DelayedVariant) -> Stage2Plan {
    match variant {
        DelayedVariant::Deterministic => Stage2Plan::Packaged(package_answer(stage1_raw, instance)),
        DelayedVariant::Model => Stage2Plan::Prompt(stage2_prompt(stage1_raw, instance)),
    }
}

/// Extract the answer (or call object) from first-stage text, check it
/// against the family's answer schema and serialize it canonically.
pub fn package_answer(stage1_raw: &str, instance: &TaskInstance) -> Result<String, PackagingFailure> {
    let family = instance.family;
    let candidate = if family.is_tool_call() {
        extract_call(stage1_raw)
    } else {
        extract_answer(stage1_raw).map(|a| {
            let mut map = JsonMap::new();
            map.insert("answer".to_string(), JsonValue::String(a));
            JsonValue::Object(map)
        })
    };
    let candidate = candidate.ok_or(PackagingFailure::NoAnswer)?;
    let violations = answer_schema(family).validate(&candidate);
    if violations.is_empty() {
        Ok(canonical_serialize(&candidate))
    } else {
        Err(PackagingFailure::SchemaViolation {
            violations,
            object: canonical_serialize(&candidate),
        })
    }
}

/// Re-serialize the JSON object of a prompt-json completion: the object is
/// taken as extracted (same rules the completion was scored with) and
/// checked against the answer schema unchanged.
pub fn package_object(source_raw: &str, instance: &TaskInstance, strictness: Strictness) -> Result<String, PackagingFailure> {
    let object = extract_json_with(source_raw, strictness).value.ok_or(PackagingFailure::NoAnswer)?;
    let violations = answer_schema(instance.family).validate(&object);
    if violations.is_empty() {
        Ok(canonical_serialize(&object))
    } else {
        Err(PackagingFailure::SchemaViolation {
            violations,
            object: canonical_serialize(&object),
        })
    }
}

fn extract_answer(text: &str) -> Option<String> {
    let parsed = extract_json(text);
    if let Some(answer) = parsed.value.as_ref().and_then(|v| v.get("answer")) {
        return match answer {
            JsonValue::String(s) => Some(s.clone()),
            JsonValue::Int(_) | JsonValue::Real(_) | JsonValue::Bool(_) => Some(answer.to_string()),
            _ => None,
        };
    }
    extract_final_answer(text).filter(|a| !a.is_empty())
}

/// The call object: from the final-answer segment if present, else anywhere
/// in the text. A wrapper of the form `{"answer": {...call...}}` is unwrapped.
fn extract_call(text: &str) -> Option<JsonValue> {
    let value = [final_answer_segment(text), text]
        .into_iter()
        .find_map(|t| extract_json(t).value.filter(|v| v.as_object().is_some()))?;
    match value.get("answer") {
        Some(inner @ JsonValue::Object(_)) if value.get("tool").is_none() => Some(inner.clone()),
        _ => Some(value),
    }
}
