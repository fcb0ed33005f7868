//! Output interfaces: the nine modes, their prompt text and the constraint
//! artifact each one attaches.

mod packaging;
mod schemas;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::taskgen::{Family, TaskInstance};
use crate::validate::SchemaDoc;

pub use packaging::{build_delayed_stage2, package_answer, package_object, DelayedVariant, PackagingFailure, Stage2Plan};
pub use schemas::{
    answer_regex, answer_schema, calendar_schema, rationale_answer_schema, typed_trace_schema,
    CALENDAR_SCHEMA_TEXT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    Freeform,
    FreeformDirect,
    FreeformBriefReasoning,
    PromptJson,
    FinalOnlyRegex,
    AnswerOnlySchema,
    RationaleAnswerSchema,
    TypedTraceSchema,
    DelayedConstraint,
}

impl OutputMode {
    pub const ALL: [OutputMode; 9] = [
        OutputMode::Freeform,
        OutputMode::FreeformDirect,
        OutputMode::FreeformBriefReasoning,
        OutputMode::PromptJson,
        OutputMode::FinalOnlyRegex,
        OutputMode::AnswerOnlySchema,
        OutputMode::RationaleAnswerSchema,
        OutputMode::TypedTraceSchema,
        OutputMode::DelayedConstraint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutputMode::Freeform => "freeform",
            OutputMode::FreeformDirect => "freeform_direct",
            OutputMode::FreeformBriefReasoning => "freeform_brief_reasoning",
            OutputMode::PromptJson => "prompt_json",
            OutputMode::FinalOnlyRegex => "final_only_regex",
            OutputMode::AnswerOnlySchema => "answer_only_schema",
            OutputMode::RationaleAnswerSchema => "rationale_answer_schema",
            OutputMode::TypedTraceSchema => "typed_trace_schema",
            OutputMode::DelayedConstraint => "delayed_constraint",
        }
    }

    pub fn interface(self) -> &'static str {
        match self {
            OutputMode::Freeform => "Verbose step-by-step response",
            OutputMode::FreeformDirect => "Answer-only final line",
            OutputMode::FreeformBriefReasoning => "Short scratchpad, final answer last",
            OutputMode::PromptJson => "JSON requested only by prompt",
            OutputMode::FinalOnlyRegex => "Regex-constrained final answer",
            OutputMode::AnswerOnlySchema => "Minimal answer JSON schema",
            OutputMode::RationaleAnswerSchema => "JSON schema with rationale and answer",
            OutputMode::TypedTraceSchema => "Typed JSON trace with final answer",
            OutputMode::DelayedConstraint => "Reason first, package answer second",
        }
    }

    /// Constraint attached to the (first) generation call.
    pub fn constraint_kind(self) -> ConstraintKind {
        match self {
            OutputMode::FinalOnlyRegex => ConstraintKind::Regex,
            OutputMode::AnswerOnlySchema | OutputMode::RationaleAnswerSchema | OutputMode::TypedTraceSchema => {
                ConstraintKind::Schema
            }
            _ => ConstraintKind::None,
        }
    }

    pub fn stages(self) -> u8 {
        if self == OutputMode::DelayedConstraint {
            2
        } else {
            1
        }
    }

    /// Modes whose completion is expected to be a JSON document.
    pub fn expects_json(self) -> bool {
        matches!(
            self,
            OutputMode::PromptJson
                | OutputMode::AnswerOnlySchema
                | OutputMode::RationaleAnswerSchema
                | OutputMode::TypedTraceSchema
                | OutputMode::DelayedConstraint
        )
    }

    /// Freeform-style completions scored by final-line extraction.
    pub fn is_freeform(self) -> bool {
        matches!(
            self,
            OutputMode::Freeform | OutputMode::FreeformDirect | OutputMode::FreeformBriefReasoning
        )
    }

    /// Schema the completion is scored against (requested or enforced).
    pub fn target_schema(self, family: Family) -> Option<SchemaDoc> {
        match self {
            OutputMode::PromptJson | OutputMode::AnswerOnlySchema | OutputMode::DelayedConstraint => {
                Some(answer_schema(family))
            }
            OutputMode::RationaleAnswerSchema => Some(rationale_answer_schema(family)),
            OutputMode::TypedTraceSchema => Some(typed_trace_schema(family)),
            _ => None,
        }
    }
}

impl fmt::Display for OutputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OutputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OutputMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown output mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModeDescriptor {
    pub name: &'static str,
    pub interface: &'static str,
    pub constraint_kind: ConstraintKind,
    pub stages: u8,
}

/// The nine modes in their canonical order.
pub fn mode_catalog() -> Vec<ModeDescriptor> {
    OutputMode::ALL
        .into_iter()
        .map(|m| ModeDescriptor {
            name: m.name(),
            interface: m.interface(),
            constraint_kind: m.constraint_kind(),
            stages: m.stages(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    None,
    Regex,
    Schema,
}

impl ConstraintKind {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::None => "none",
            ConstraintKind::Regex => "regex",
            ConstraintKind::Schema => "schema",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub kind: ConstraintKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<SchemaDoc>,
}

impl Constraint {
    pub fn none() -> Constraint {
        Constraint {
            kind: ConstraintKind::None,
            pattern: None,
            schema: None,
        }
    }

    pub fn regex(pattern: &str) -> Result<Constraint> {
        Regex::new(pattern).map_err(|e| Error::Config(format!("constraint pattern does not compile: {e}")))?;
        Ok(Constraint {
            kind: ConstraintKind::Regex,
            pattern: Some(pattern.to_string()),
            schema: None,
        })
    }

    pub fn schema(doc: SchemaDoc) -> Constraint {
        Constraint {
            kind: ConstraintKind::Schema,
            pattern: None,
            schema: Some(doc),
        }
    }

    /// Hex SHA-256 of the constraint artifact (pattern text or canonical
    /// schema); `None` for unconstrained bundles.
    pub fn digest(&self) -> Option<String> {
        match self.kind {
            ConstraintKind::None => None,
            ConstraintKind::Regex => self.pattern.as_ref().map(|p| hex::encode(Sha256::digest(p.as_bytes()))),
            ConstraintKind::Schema => self.schema.as_ref().map(SchemaDoc::digest),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Single,
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub instance_id: String,
    pub mode: OutputMode,
    pub stage: Stage,
    pub user_text: String,
    pub constraint: Constraint,
}

/// What `build_prompt` produces: one bundle, or for delayed packaging the
/// unconstrained first stage plus the constraint the second stage targets.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptPlan {
    Single(PromptBundle),
    Delayed { stage1: PromptBundle, target: Constraint },
}

impl PromptPlan {
    /// The bundle sent on the first generation call.
    pub fn first(&self) -> &PromptBundle {
        match self {
            PromptPlan::Single(b) => b,
            PromptPlan::Delayed { stage1, .. } => stage1,
        }
    }

    pub fn into_first(self) -> PromptBundle {
        match self {
            PromptPlan::Single(b) => b,
            PromptPlan::Delayed { stage1, .. } => stage1,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Templates {
    version: String,
    answer_hints: BTreeMap<Family, String>,
    answer_instructions: BTreeMap<OutputMode, String>,
    calendar_header: String,
    calendar_footer: String,
    calendar_format: String,
    tool_instructions: BTreeMap<OutputMode, String>,
    calendar_wrapped_modes: Vec<OutputMode>,
    package_instruction: String,
    package_instruction_tool: String,
}

const TEMPLATES_JSON: &str = include_str!("templates.json");

static TEMPLATES: LazyLock<Templates> =
    LazyLock::new(|| serde_json::from_str(TEMPLATES_JSON).expect("bundled prompt templates parse"));

/// Version tag of the bundled instruction templates.
pub fn template_version() -> &'static str {
    &TEMPLATES.version
}

/// Hex SHA-256 of the bundled template resource.
pub fn template_digest() -> String {
    hex::encode(Sha256::digest(TEMPLATES_JSON.as_bytes()))
}

fn instruction(family: Family, mode: OutputMode) -> String {
    let t = &*TEMPLATES;
    let ops = family.op_vocabulary().join(", ");
    if family.is_tool_call() {
        t.tool_instructions[&mode]
            .replace("{format}", &t.calendar_format)
            .replace("{ops}", &ops)
    } else {
        t.answer_instructions[&mode]
            .replace("{hint}", &t.answer_hints[&family])
            .replace("{ops}", &ops)
    }
}

/// Wrap `problem_text` with a mode's instruction. The problem text itself is
/// only ever prefixed or suffixed.
fn compose(family: Family, mode: OutputMode, problem_text: &str, tail: &str) -> String {
    let t = &*TEMPLATES;
    if family.is_tool_call() && t.calendar_wrapped_modes.contains(&mode) {
        format!(
            "{}\n{}\n{}\n{}",
            t.calendar_header, problem_text, t.calendar_footer, tail
        )
    } else {
        format!("{problem_text}\n\n{tail}")
    }
}

fn stage_constraint(family: Family, mode: OutputMode) -> Constraint {
    match mode.constraint_kind() {
        ConstraintKind::None => Constraint::none(),
        ConstraintKind::Regex => Constraint::regex(answer_regex(family)).expect("family regexes compile"),
        ConstraintKind::Schema => Constraint::schema(mode.target_schema(family).expect("schema modes have a target")),
    }
}

pub fn build_prompt(instance: &TaskInstance, mode: OutputMode) -> PromptPlan {
    let family = instance.family;
    let user_text = compose(family, mode, &instance.problem_text, &instruction(family, mode));
    let constraint = stage_constraint(family, mode);
    if mode == OutputMode::DelayedConstraint {
        PromptPlan::Delayed {
            stage1: PromptBundle {
                instance_id: instance.id.clone(),
                mode,
                stage: Stage::Stage1,
                user_text,
                constraint,
            },
            target: Constraint::schema(answer_schema(family)),
        }
    } else {
        PromptPlan::Single(PromptBundle {
            instance_id: instance.id.clone(),
            mode,
            stage: Stage::Single,
            user_text,
            constraint,
        })
    }
}

/// Second-stage prompt for model-based packaging.
pub(crate) fn stage2_prompt(stage1_raw: &str, instance: &TaskInstance) -> PromptBundle {
    let t = &*TEMPLATES;
    let family = instance.family;
    let tail = if family.is_tool_call() {
        t.package_instruction_tool
            .replace("{format}", &t.calendar_format)
            .replace("{stage1}", stage1_raw)
    } else {
        t.package_instruction.replace("{stage1}", stage1_raw)
    };
    let user_text = if family.is_tool_call() {
        format!(
            "{}\n{}\n{}\n{}",
            t.calendar_header, instance.problem_text, t.calendar_footer, tail
        )
    } else {
        format!("{}\n\n{}", instance.problem_text, tail)
    };
    PromptBundle {
        instance_id: instance.id.clone(),
        mode: OutputMode::DelayedConstraint,
        stage: Stage::Stage2,
        user_text,
        constraint: Constraint::schema(answer_schema(family)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{generate_instance, generate_suite, RngSeed};

    #[test]
    fn catalog_shape() {
        let catalog = mode_catalog();
        assert_eq!(catalog.len(), 9);
        let pj = catalog.iter().find(|d| d.name == "prompt_json").unwrap();
        assert_eq!(pj.interface, "JSON requested only by prompt");
        let delayed = catalog.iter().find(|d| d.name == "delayed_constraint").unwrap();
        assert_eq!(delayed.stages, 2);
        assert_eq!(delayed.interface, "Reason first, package answer second");
        assert!(catalog.iter().filter(|d| d.name != "delayed_constraint").all(|d| d.stages == 1));
    }

    #[test]
    fn names_round_trip() {
        for m in OutputMode::ALL {
            assert_eq!(m.name().parse::<OutputMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("json".parse::<OutputMode>().is_err());
    }

    #[test]
    fn templates_cover_every_mode_and_family() {
        for family in Family::ALL {
            for mode in OutputMode::ALL {
                let text = instruction(family, mode);
                assert!(!text.contains('{') || text.contains('"'), "{family}/{mode}: {text}");
                assert!(!text.contains("{hint}") && !text.contains("{ops}") && !text.contains("{format}"));
            }
        }
    }

    #[test]
    fn freeform_direct_asks_for_answer_only() {
        let inst = generate_instance(Family::ArithmeticTwoStep, 0, RngSeed(1)).unwrap();
        let plan = build_prompt(&inst, OutputMode::FreeformDirect);
        let b = plan.first();
        assert_eq!(b.constraint.kind, ConstraintKind::None);
        assert_eq!(b.stage, Stage::Single);
        assert!(b.user_text.contains("only the final answer"));
    }

    #[test]
    fn boolean_regex_bundle() {
        let inst = generate_instance(Family::BooleanLogic, 0, RngSeed(1)).unwrap();
        let b = build_prompt(&inst, OutputMode::FinalOnlyRegex).into_first();
        assert_eq!(b.constraint.kind, ConstraintKind::Regex);
        assert_eq!(b.constraint.pattern.as_deref(), Some("^(true|false)$"));
    }

    #[test]
    fn calendar_schema_mode_uses_reference_template_and_schema() {
        let inst = generate_instance(Family::ToolCallArgument, 0, RngSeed(1)).unwrap();
        let b = build_prompt(&inst, OutputMode::AnswerOnlySchema).into_first();
        assert!(b.user_text.starts_with("You are a calendar assistant. Return only JSON.\n"));
        assert!(b.user_text.contains("Use tool name \"create_calendar_event\"."));
        let schema = b.constraint.schema.unwrap();
        assert_eq!(schema.canonical(), calendar_schema().canonical());
    }

    #[test]
    fn constraint_kinds_per_mode() {
        let inst = generate_instance(Family::SymbolicString, 2, RngSeed(9)).unwrap();
        for mode in OutputMode::ALL {
            let plan = build_prompt(&inst, mode);
            let b = plan.first();
            assert_eq!(b.constraint.kind, mode.constraint_kind());
            match b.constraint.kind {
                ConstraintKind::None => assert!(b.constraint.pattern.is_none() && b.constraint.schema.is_none()),
                ConstraintKind::Regex => assert!(b.constraint.pattern.is_some()),
                ConstraintKind::Schema => assert!(b.constraint.schema.is_some()),
            }
            match plan {
                PromptPlan::Delayed { stage1, target } => {
                    assert_eq!(mode, OutputMode::DelayedConstraint);
                    assert_eq!(stage1.stage, Stage::Stage1);
                    assert_eq!(stage1.constraint.kind, ConstraintKind::None);
                    assert_eq!(target.kind, ConstraintKind::Schema);
                }
                PromptPlan::Single(b) => assert_ne!(mode, OutputMode::DelayedConstraint, "{}", b.mode),
            }
        }
    }

    #[test]
    fn problem_text_is_kept_verbatim() {
        for family in Family::ALL {
            for inst in generate_suite(family, 20, RngSeed(4)).unwrap() {
                for mode in OutputMode::ALL {
                    let text = build_prompt(&inst, mode).into_first().user_text;
                    let at = text.find(&inst.problem_text).expect("problem text present");
                    let prefix = &text[..at];
                    assert!(prefix.is_empty() || prefix.ends_with('\n'));
                    assert_eq!(text.matches(&inst.problem_text).count(), 1);
                }
            }
        }
    }

    #[test]
    fn regex_constraint_rejects_bad_pattern() {
        assert!(Constraint::regex("(").is_err());
        assert!(Constraint::none().digest().is_none());
        assert_eq!(Constraint::regex("^a$").unwrap().digest().unwrap().len(), 64);
    }
}
