//! Deterministic generation of the five task families, each instance
//! carrying an exact final answer, a typed trace and (for tool calls) the
//! canonical executable target.

mod calendar;
pub mod lexicon;
mod rng;

use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

pub use calendar::{
    display_time, relative_date_vocabulary, resolve_display_time, resolve_relative_date,
    weekday_name,
};
pub use rng::{RngSeed, StreamRng};

use crate::error::{Error, Result};
use crate::validate::{canonical_serialize, normalize, JsonMap, JsonValue};

pub const CALENDAR_TOOL: &str = "create_calendar_event";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ArithmeticTwoStep,
    SymbolicString,
    ObjectTracking,
    BooleanLogic,
    ToolCallArgument,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::ArithmeticTwoStep,
        Family::SymbolicString,
        Family::ObjectTracking,
        Family::BooleanLogic,
        Family::ToolCallArgument,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::ArithmeticTwoStep => "arithmetic_two_step",
            Family::SymbolicString => "symbolic_string",
            Family::ObjectTracking => "object_tracking",
            Family::BooleanLogic => "boolean_logic",
            Family::ToolCallArgument => "tool_call_argument",
        }
    }

    /// Trace operation names a valid trace for this family may use.
    pub fn op_vocabulary(self) -> &'static [&'static str] {
        match self {
            Family::ArithmeticTwoStep => &["initial_total", "add_red", "remove_blue", "final_total"],
            Family::SymbolicString => &["last_letter", "concatenate"],
            Family::ObjectTracking => &["initial_state", "swap", "holder_of_key"],
            Family::BooleanLogic => &["not", "and", "or"],
            Family::ToolCallArgument => {
                &["select_tool", "resolve_date", "resolve_time", "build_arguments"]
            }
        }
    }

    pub fn is_tool_call(self) -> bool {
        self == Family::ToolCallArgument
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task family {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub op: String,
    pub inputs: Vec<String>,
    pub output: String,
}

impl TraceStep {
    fn new(op: &str, inputs: Vec<String>, output: impl Into<String>) -> TraceStep {
        TraceStep {
            op: op.to_string(),
            inputs,
            output: output.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "answer")]
    pub final_answer: String,
    pub trace: Vec<TraceStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec_target: Option<JsonValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub family: Family,
    pub problem_text: String,
    pub slots: JsonMap,
    pub ground_truth: GroundTruth,
}

impl TaskInstance {
    /// The calendar target's `arguments` object, if this is a tool call.
    pub fn expected_arguments(&self) -> Option<&JsonMap> {
        self.ground_truth
            .exec_target
            .as_ref()
            .and_then(|t| t.get("arguments"))
            .and_then(JsonValue::as_object)
    }
}

pub fn instance_id(family: Family, index: usize, seed: RngSeed) -> String {
    format!("{}-{index:05}-{}", family.name(), seed.digest())
}

/// `count` instances of `family`; a pure function of its arguments.
pub fn generate_suite(family: Family, count: usize, seed: RngSeed) -> Result<Vec<TaskInstance>> {
    if count == 0 {
        return Err(Error::Config("suite count must be at least 1".into()));
    }
    (0..count).map(|i| generate_instance(family, i, seed)).collect()
}

pub fn generate_instance(family: Family, index: usize, seed: RngSeed) -> Result<TaskInstance> {
    let mut rng = StreamRng::new(seed, family.name(), index as u64);
    let slots = draw_slots(family, &mut rng);
    let problem_text = render_problem(family, &slots)?;
    let ground_truth = solve(family, &slots)?;
    Ok(TaskInstance {
        id: instance_id(family, index, seed),
        family,
        problem_text,
        slots,
        ground_truth,
    })
}

fn draw_slots(family: Family, rng: &mut StreamRng) -> JsonMap {
    let mut slots = JsonMap::new();
    let mut put = |k: &str, v: JsonValue| {
        slots.insert(k.to_string(), v);
    };
    match family {
        Family::ArithmeticTwoStep => {
            let r = rng.range(2, 20);
            let b = rng.range(2, 20);
            let a = rng.range(1, 9);
            let m = rng.range(1, 9.min(b - 1));
            put("r", r.into());
            put("b", b.into());
            put("a", a.into());
            put("m", m.into());
        }
        Family::SymbolicString => {
            let k = rng.range(3, 6) as usize;
            let words = rng
                .distinct(lexicon::WORDS.len(), k)
                .into_iter()
                .map(|i| JsonValue::from(lexicon::WORDS[i]))
                .collect();
            put("words", JsonValue::Array(words));
        }
        Family::ObjectTracking => {
            let people = rng.distinct(lexicon::NAMES.len(), 3);
            let items = rng.distinct(lexicon::OTHER_ITEMS.len(), 2);
            put("p1", lexicon::NAMES[people[0]].into());
            put("p2", lexicon::NAMES[people[1]].into());
            put("p3", lexicon::NAMES[people[2]].into());
            put("i2", lexicon::OTHER_ITEMS[items[0]].into());
            put("i3", lexicon::OTHER_ITEMS[items[1]].into());
        }
        Family::BooleanLogic => {
            put("A", rng.coin().into());
            put("B", rng.coin().into());
        }
        Family::ToolCallArgument => {
            let epoch = NaiveDate::from_ymd_opt(2025, 1, 1).expect("valid date");
            let today = epoch + Duration::days(rng.below(730) as i64);
            let phrases = relative_date_vocabulary();
            let phrase = rng.pick(&phrases).clone();
            let start = 8 * 60 + 15 * rng.below(41) as u32;
            put("today", today.format("%Y-%m-%d").to_string().into());
            put("relative_date", phrase.into());
            put("display_time", display_time(start).into());
            put("duration_minutes", (*rng.pick(&lexicon::DURATIONS)).into());
            put("attendee", (*rng.pick(&lexicon::ATTENDEES)).into());
            put("topic", (*rng.pick(&lexicon::TOPICS)).into());
        }
    }
    slots
}

fn slot<'a>(slots: &'a JsonMap, key: &str) -> Result<&'a JsonValue> {
    slots
        .get(key)
        .ok_or_else(|| Error::Config(format!("missing slot {key:?}")))
}

fn slot_int(slots: &JsonMap, key: &str) -> Result<i64> {
    match slot(slots, key)? {
        JsonValue::Int(i) => Ok(*i),
        other => Err(Error::Config(format!("slot {key:?} must be an integer, found {other}"))),
    }
}

fn slot_str<'a>(slots: &'a JsonMap, key: &str) -> Result<&'a str> {
    slot(slots, key)?
        .as_str()
        .ok_or_else(|| Error::Config(format!("slot {key:?} must be a string")))
}

fn slot_bool(slots: &JsonMap, key: &str) -> Result<bool> {
    match slot(slots, key)? {
        JsonValue::Bool(b) => Ok(*b),
        other => Err(Error::Config(format!("slot {key:?} must be a boolean, found {other}"))),
    }
}

fn slot_words(slots: &JsonMap) -> Result<Vec<&str>> {
    slot(slots, "words")?
        .as_array()
        .and_then(|a| a.iter().map(JsonValue::as_str).collect::<Option<Vec<_>>>())
        .filter(|w| !w.is_empty() && w.iter().all(|s| !s.is_empty()))
        .ok_or_else(|| Error::Config("slot \"words\" must be a non-empty list of words".into()))
}

fn render_problem(family: Family, slots: &JsonMap) -> Result<String> {
    Ok(match family {
        Family::ArithmeticTwoStep => format!(
            "A box has {} red balls and {} blue balls. Sam adds {} red balls and removes {} blue balls. How many balls are left?",
            slot_int(slots, "r")?,
            slot_int(slots, "b")?,
            slot_int(slots, "a")?,
            slot_int(slots, "m")?,
        ),
        Family::SymbolicString => format!(
            "Take the last letter of each word: {}. Concatenate them.",
            slot_words(slots)?.join(", ")
        ),
        Family::ObjectTracking => {
            let (p1, p2, p3) = (slot_str(slots, "p1")?, slot_str(slots, "p2")?, slot_str(slots, "p3")?);
            format!(
                "{p1} has the key. {p2} has the {}. {p3} has the {}. {p1} and {p2} swap items. {p2} and {p3} swap items. Who has the key?",
                slot_str(slots, "i2")?,
                slot_str(slots, "i3")?,
            )
        }
        Family::BooleanLogic => format!(
            "A is {}. B is {}. C = A AND NOT B. D = C OR B. What is D?",
            slot_bool(slots, "A")?,
            slot_bool(slots, "B")?,
        ),
        Family::ToolCallArgument => {
            let today = parse_date(slot_str(slots, "today")?)?;
            format!(
                "Assume today is {} ({}). User request: Schedule a {} minute meeting with {} {} at {} about {}. \
                 Available tools: {CALENDAR_TOOL}(title, date, start_time, duration_minutes, attendee, topic). \
                 Return the selected tool and arguments. Do not access a real calendar.",
                today.format("%Y-%m-%d"),
                weekday_name(today),
                slot_int(slots, "duration_minutes")?,
                slot_str(slots, "attendee")?,
                slot_str(slots, "relative_date")?,
                slot_str(slots, "display_time")?,
                slot_str(slots, "topic")?,
            )
        }
    })
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| Error::Config(format!("slot date {s:?} is not YYYY-MM-DD")))
}

/// Computes the ground truth from the slots with the family's built-in
/// solver.
pub fn solve(family: Family, slots: &JsonMap) -> Result<GroundTruth> {
    let mut trace = Vec::new();
    let mut exec_target = None;
    match family {
        Family::ArithmeticTwoStep => {
            let (r, b, a, m) = (
                slot_int(slots, "r")?,
                slot_int(slots, "b")?,
                slot_int(slots, "a")?,
                slot_int(slots, "m")?,
            );
            let initial = r + b;
            let added = initial + a;
            let left = added - m;
            trace.push(TraceStep::new("initial_total", vec![r.to_string(), b.to_string()], initial.to_string()));
            trace.push(TraceStep::new("add_red", vec![initial.to_string(), a.to_string()], added.to_string()));
            trace.push(TraceStep::new("remove_blue", vec![added.to_string(), m.to_string()], left.to_string()));
            trace.push(TraceStep::new("final_total", vec![left.to_string()], left.to_string()));
        }
        Family::SymbolicString => {
            let mut letters = Vec::new();
            for word in slot_words(slots)? {
                let last = word.chars().last().expect("non-empty word").to_lowercase().to_string();
                trace.push(TraceStep::new("last_letter", vec![word.to_string()], last.clone()));
                letters.push(last);
            }
            let joined = letters.concat();
            trace.push(TraceStep::new("concatenate", letters, joined));
        }
        Family::ObjectTracking => {
            let people: Vec<String> = ["p1", "p2", "p3"]
                .iter()
                .map(|k| slot_str(slots, k).map(normalize))
                .collect::<Result<_>>()?;
            let mut held = vec![
                lexicon::KEY_ITEM.to_string(),
                normalize(slot_str(slots, "i2")?),
                normalize(slot_str(slots, "i3")?),
            ];
            let state = |held: &[String]| {
                people
                    .iter()
                    .zip(held)
                    .map(|(p, i)| format!("{p}={i}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            trace.push(TraceStep::new("initial_state", vec![state(&held)], state(&held)));
            for (x, y) in [(0, 1), (1, 2)] {
                held.swap(x, y);
                trace.push(TraceStep::new("swap", vec![people[x].clone(), people[y].clone()], state(&held)));
            }
            let holder = held
                .iter()
                .position(|i| i == lexicon::KEY_ITEM)
                .map(|i| people[i].clone())
                .expect("key is always held");
            trace.push(TraceStep::new("holder_of_key", vec![state(&held)], holder));
        }
        Family::BooleanLogic => {
            let (a, b) = (slot_bool(slots, "A")?, slot_bool(slots, "B")?);
            let not_b = !b;
            let c = a && not_b;
            let d = c || b;
            trace.push(TraceStep::new("not", vec![b.to_string()], not_b.to_string()));
            trace.push(TraceStep::new("and", vec![a.to_string(), not_b.to_string()], c.to_string()));
            trace.push(TraceStep::new("or", vec![c.to_string(), b.to_string()], d.to_string()));
        }
        Family::ToolCallArgument => {
            let today = parse_date(slot_str(slots, "today")?)?;
            let phrase = slot_str(slots, "relative_date")?;
            let shown_time = slot_str(slots, "display_time")?;
            let duration = slot_int(slots, "duration_minutes")?;
            let attendee = normalize(slot_str(slots, "attendee")?);
            let topic = normalize(slot_str(slots, "topic")?);

            let date = resolve_relative_date(today, phrase)?.format("%Y-%m-%d").to_string();
            let start_time = resolve_display_time(shown_time)?;
            let title = format!("{topic} with {attendee}");

            let mut args = JsonMap::new();
            args.insert("attendee".into(), attendee.clone().into());
            args.insert("date".into(), date.clone().into());
            args.insert("duration_minutes".into(), duration.into());
            args.insert("start_time".into(), start_time.clone().into());
            args.insert("title".into(), title.into());
            args.insert("topic".into(), topic.into());
            let mut target = JsonMap::new();
            target.insert("arguments".into(), JsonValue::Object(args));
            target.insert("tool".into(), CALENDAR_TOOL.into());
            let target = JsonValue::Object(target);
            let canonical = canonical_serialize(&target);

            trace.push(TraceStep::new("select_tool", vec!["schedule meeting".into()], CALENDAR_TOOL));
            trace.push(TraceStep::new(
                "resolve_date",
                vec![today.format("%Y-%m-%d").to_string(), phrase.to_string()],
                date,
            ));
            trace.push(TraceStep::new("resolve_time", vec![shown_time.to_string()], start_time));
            trace.push(TraceStep::new("build_arguments", vec![duration.to_string(), attendee], canonical));
            exec_target = Some(target);
        }
    }
    let final_answer = normalize(&trace.last().expect("every family emits steps").output);
    Ok(GroundTruth {
        final_answer,
        trace,
        exec_target,
    })
}
