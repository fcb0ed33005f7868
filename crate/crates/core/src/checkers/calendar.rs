//! The calendar executable checker and the field-level failure taxonomy.
//!
//! Field comparisons follow the reference checker's dynamic semantics:
//! `str(x).strip().lower()` for string fields and `int(x)` for the
//! duration, so e.g. `"30"` and `30.0` both count as thirty minutes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::taskgen::CALENDAR_TOOL;
use crate::validate::{JsonMap, JsonValue};

/// The semantically scored arguments. `title` is required by the schema but
/// never scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalendarField {
    Date,
    StartTime,
    DurationMinutes,
    Attendee,
    Topic,
}

impl CalendarField {
    pub const ALL: [CalendarField; 5] = [
        CalendarField::Date,
        CalendarField::StartTime,
        CalendarField::DurationMinutes,
        CalendarField::Attendee,
        CalendarField::Topic,
    ];

    pub fn key(self) -> &'static str {
        match self {
            CalendarField::Date => "date",
            CalendarField::StartTime => "start_time",
            CalendarField::DurationMinutes => "duration_minutes",
            CalendarField::Attendee => "attendee",
            CalendarField::Topic => "topic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalendarFailureClass {
    Correct,
    WrongDuration,
    WrongTopic,
    WrongDate,
    WrongTime,
    WrongAttendee,
    MultiField,
    /// Not a call to the calendar tool (or no argument object at all).
    WrongTool,
}

impl CalendarFailureClass {
    pub const ALL: [CalendarFailureClass; 8] = [
        CalendarFailureClass::Correct,
        CalendarFailureClass::WrongDuration,
        CalendarFailureClass::WrongTopic,
        CalendarFailureClass::WrongDate,
        CalendarFailureClass::WrongTime,
        CalendarFailureClass::WrongAttendee,
        CalendarFailureClass::MultiField,
        CalendarFailureClass::WrongTool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CalendarFailureClass::Correct => "correct",
            CalendarFailureClass::WrongDuration => "wrong_duration",
            CalendarFailureClass::WrongTopic => "wrong_topic",
            CalendarFailureClass::WrongDate => "wrong_date",
            CalendarFailureClass::WrongTime => "wrong_time",
            CalendarFailureClass::WrongAttendee => "wrong_attendee",
            CalendarFailureClass::MultiField => "multi_field",
            CalendarFailureClass::WrongTool => "wrong_tool",
        }
    }

    /// Column heading used in reports.
    pub fn label(self) -> &'static str {
        match self {
            CalendarFailureClass::Correct => "Correct",
            CalendarFailureClass::WrongDuration => "Wrong duration",
            CalendarFailureClass::WrongTopic => "Wrong topic",
            CalendarFailureClass::WrongDate => "Wrong date",
            CalendarFailureClass::WrongTime => "Wrong time",
            CalendarFailureClass::WrongAttendee => "Wrong attendee",
            CalendarFailureClass::MultiField => "Multi-field",
            CalendarFailureClass::WrongTool => "Wrong tool",
        }
    }

    fn single(field: CalendarField) -> CalendarFailureClass {
        match field {
            CalendarField::Date => CalendarFailureClass::WrongDate,
            CalendarField::StartTime => CalendarFailureClass::WrongTime,
            CalendarField::DurationMinutes => CalendarFailureClass::WrongDuration,
            CalendarField::Attendee => CalendarFailureClass::WrongAttendee,
            CalendarField::Topic => CalendarFailureClass::WrongTopic,
        }
    }
}

impl fmt::Display for CalendarFailureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Primary class plus every wrong field (the field-occurrence view).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarDiagnosis {
    pub class: CalendarFailureClass,
    pub wrong_fields: Vec<CalendarField>,
}

/// `str(x)` for JSON-decoded values.
fn py_str(value: &JsonValue) -> String {
    match value {
        JsonValue::String(s) => s.clone(),
        JsonValue::Null => "None".to_string(),
        JsonValue::Bool(true) => "True".to_string(),
        JsonValue::Bool(false) => "False".to_string(),
        other => other.to_compact_string(),
    }
}

fn py_normalize(value: &JsonValue) -> String {
    py_str(value).trim().to_lowercase()
}

/// `int(x)`; `None` where the reference checker would raise.
fn py_int(value: &JsonValue) -> Option<i64> {
    match value {
        JsonValue::Int(i) => Some(*i),
        JsonValue::Bool(b) => Some(i64::from(*b)),
        JsonValue::Real(r) if r.is_finite() && r.trunc().abs() < 9.2e18 => Some(r.trunc() as i64),
        JsonValue::String(s) => parse_py_int(s.trim()),
        _ => None,
    }
}

fn parse_py_int(s: &str) -> Option<i64> {
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    let well_formed = !digits.is_empty()
        && !digits.starts_with('_')
        && !digits.ends_with('_')
        && !digits.contains("__")
        && digits.chars().all(|c| c.is_ascii_digit() || c == '_');
    if !well_formed {
        return None;
    }
    let cleaned: String = s.chars().filter(|&c| c != '_').collect();
    cleaned.parse().ok()
}

fn field_ok(args: &JsonMap, expected: &JsonMap, field: CalendarField) -> bool {
    let key = field.key();
    let (Some(got), Some(want)) = (args.get(key), expected.get(key)) else {
        return false;
    };
    match field {
        CalendarField::DurationMinutes => match (py_int(got), want) {
            (Some(g), JsonValue::Int(w)) => g == *w,
            _ => false,
        },
        _ => want.as_str().is_some_and(|w| py_normalize(got) == w),
    }
}

/// Executable check for a calendar call against the expected arguments.
pub fn calendar_exec_ok(obj: &JsonValue, expected: &JsonMap) -> bool {
    if obj.get("tool").and_then(JsonValue::as_str) != Some(CALENDAR_TOOL) {
        return false;
    }
    let Some(args) = obj.get("arguments").and_then(JsonValue::as_object) else {
        return false;
    };
    CalendarField::ALL.into_iter().all(|f| field_ok(args, expected, f))
}

/// Primary failure class: the tool gate first, then one class per wrong
/// field, multi-field when several are wrong. `Correct` exactly when
/// [`calendar_exec_ok`] accepts.
pub fn classify_calendar_failure(value: &JsonValue, expected: &JsonMap) -> CalendarDiagnosis {
    let empty = JsonMap::new();
    let args = value.get("arguments").and_then(JsonValue::as_object);
    let wrong_fields: Vec<CalendarField> = CalendarField::ALL
        .into_iter()
        .filter(|&f| !field_ok(args.unwrap_or(&empty), expected, f))
        .collect();
    let tool_ok = value.get("tool").and_then(JsonValue::as_str) == Some(CALENDAR_TOOL);
    let class = match wrong_fields.as_slice() {
        _ if !tool_ok || args.is_none() => CalendarFailureClass::WrongTool,
        [] => CalendarFailureClass::Correct,
        [one] => CalendarFailureClass::single(*one),
        _ => CalendarFailureClass::MultiField,
    };
    CalendarDiagnosis { class, wrong_fields }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expected() -> JsonMap {
        match JsonValue::parse(
            r#"{"attendee":"leo","date":"2025-03-14","duration_minutes":30,"start_time":"14:30","title":"budget review with leo","topic":"budget review"}"#,
        )
        .unwrap()
        {
            JsonValue::Object(m) => m,
            _ => unreachable!(),
        }
    }

    fn call(edit: impl FnOnce(&mut JsonMap)) -> JsonValue {
        let mut args = expected();
        edit(&mut args);
        let mut obj = JsonMap::new();
        obj.insert("tool".into(), CALENDAR_TOOL.into());
        obj.insert("arguments".into(), JsonValue::Object(args));
        JsonValue::Object(obj)
    }

    #[test]
    fn case_variants_pass() {
        let obj = call(|a| {
            a.insert("attendee".into(), "LEO".into());
            a.insert("topic".into(), "  Budget Review ".into());
        });
        assert!(calendar_exec_ok(&obj, &expected()));
    }

    #[test]
    fn duration_semantics_follow_int() {
        for (v, ok) in [
            (JsonValue::Int(30), true),
            (JsonValue::Real(30.0), true),
            (JsonValue::Real(30.9), true),
            (JsonValue::from("30"), true),
            (JsonValue::from(" 30 "), true),
            (JsonValue::from("3_0"), true),
            (JsonValue::from("30.0"), false),
            (JsonValue::from("thirty"), false),
            (JsonValue::Int(180), false),
            (JsonValue::Null, false),
        ] {
            let obj = call(|a| {
                a.insert("duration_minutes".into(), v.clone());
            });
            assert_eq!(calendar_exec_ok(&obj, &expected()), ok, "{v}");
        }
    }

    #[test]
    fn tool_name_gate() {
        let mut obj = call(|_| {});
        if let JsonValue::Object(m) = &mut obj {
            m.insert("tool".into(), "create_event".into());
        }
        assert!(!calendar_exec_ok(&obj, &expected()));
        assert_eq!(classify_calendar_failure(&obj, &expected()).class, CalendarFailureClass::WrongTool);
    }

    #[test]
    fn title_is_not_scored() {
        let obj = call(|a| {
            a.insert("title".into(), "anything".into());
        });
        assert!(calendar_exec_ok(&obj, &expected()));
    }

    #[test]
    fn taxonomy() {
        let d = classify_calendar_failure(&call(|a| {
            a.insert("duration_minutes".into(), JsonValue::Int(180));
        }), &expected());
        assert_eq!(d.class, CalendarFailureClass::WrongDuration);
        let d = classify_calendar_failure(&call(|a| {
            a.insert("duration_minutes".into(), JsonValue::Int(180));
            a.insert("topic".into(), "other".into());
        }), &expected());
        assert_eq!(d.class, CalendarFailureClass::MultiField);
        assert_eq!(d.wrong_fields, [CalendarField::DurationMinutes, CalendarField::Topic]);
        assert_eq!(classify_calendar_failure(&call(|_| {}), &expected()).class, CalendarFailureClass::Correct);
    }
}
