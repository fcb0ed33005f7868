//! Constraint artifacts per family: answer regexes and the shipped schema
//! documents. Documents keep their authored property order, which is the
//! order constrained decoders emit fields in.

use serde_json::json;

use crate::taskgen::Family;
use crate::validate::{JsonValue, SchemaDoc};

/// The calendar tool-call schema, exactly as the benchmark specifies it.
pub const CALENDAR_SCHEMA_TEXT: &str = r#"{
  "type": "object",
  "additionalProperties": false,
  "required": ["tool", "arguments"],
  "properties": {
    "tool": {"const": "create_calendar_event"},
    "arguments": {
      "type": "object",
      "additionalProperties": false,
      "required": [
        "title", "date", "start_time", "duration_minutes",
        "attendee", "topic"
      ],
      "properties": {
        "title": {"type": "string"},
        "date": {
          "type": "string",
          "pattern": "^\\d{4}-\\d{2}-\\d{2}$"
        },
        "start_time": {
          "type": "string",
          "pattern": "^\\d{2}:\\d{2}$"
        },
        "duration_minutes": {
          "type": "integer",
          "minimum": 1
        },
        "attendee": {"type": "string"},
        "topic": {"type": "string"}
      }
    }
  }
}"#;

const CALENDAR_OBJECT_REGEX: &str = concat!(
    r#"^\{"arguments":\{"attendee":"[^"]*","date":"\d{4}-\d{2}-\d{2}","#,
    r#""duration_minutes":[1-9]\d*,"start_time":"\d{2}:\d{2}","title":"[^"]*","topic":"[^"]*"\},"#,
    r#""tool":"create_calendar_event"\}$"#
);

/// Fully anchored pattern accepting every answer the family can generate.
pub fn answer_regex(family: Family) -> &'static str {
    match family {
        Family::ArithmeticTwoStep => r"^-?\d+$",
        Family::SymbolicString => "^[a-z]+$",
        Family::ObjectTracking => "^[A-Za-z]+$",
        Family::BooleanLogic => "^(true|false)$",
        Family::ToolCallArgument => CALENDAR_OBJECT_REGEX,
    }
}

pub fn calendar_schema() -> SchemaDoc {
    SchemaDoc::parse(CALENDAR_SCHEMA_TEXT).expect("calendar schema is well-formed")
}

/// Schema node for the answer payload: a string, or the calendar call
/// object for tool calls.
fn answer_node(family: Family) -> JsonValue {
    if family.is_tool_call() {
        calendar_schema().document().clone()
    } else {
        json!({"type": "string"}).into()
    }
}

fn build(value: serde_json::Value) -> SchemaDoc {
    SchemaDoc::new(value.into()).expect("shipped schemas are well-formed")
}

/// `{"answer": string}` with no other keys. Tool calls use the calendar
/// schema itself.
pub fn answer_schema(family: Family) -> SchemaDoc {
    if family.is_tool_call() {
        return calendar_schema();
    }
    build(json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["answer"],
        "properties": {"answer": {"type": "string"}}
    }))
}

pub fn rationale_answer_schema(family: Family) -> SchemaDoc {
    let mut doc = json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["rationale", "answer"],
        "properties": {
            "rationale": {"type": "string"},
            "answer": null
        }
    });
    doc["properties"]["answer"] = serde_json::to_value(answer_node(family)).expect("serializable");
    build(doc)
}

pub fn typed_trace_schema(family: Family) -> SchemaDoc {
    let mut doc = json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["steps", "answer"],
        "properties": {
            "steps": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["op", "output"],
                    "properties": {
                        "op": {"enum": family.op_vocabulary()},
                        "output": {"type": "string"}
                    }
                }
            },
            "answer": null
        }
    });
    doc["properties"]["answer"] = serde_json::to_value(answer_node(family)).expect("serializable");
    build(doc)
}
