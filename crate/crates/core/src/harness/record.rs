//! The JSONL record format, its reader/writer, and the canonical-diff view
//! used to compare runs.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use chrono::{DateTime, SecondsFormat, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::backend::GenerationResult;
use crate::checkers::{evaluate, CalendarFailureClass, CalendarField, CheckOptions, ErrorClass, Evaluation};
use crate::error::{Error, Result};
use crate::metrics::{structural_overhead, Indicator};
use crate::modes::{Constraint, ConstraintKind, OutputMode, PromptBundle, Stage};
use crate::taskgen::{Family, TaskInstance};
use crate::validate::{canonical_serialize, ExtractionRule, JsonValue, ParseStatus, Strictness, Violation};

/// Bumped whenever extraction or scoring rules change meaning.
pub const EXTRACTION_VERSION: &str = "extract-v1";

/// Fields that legitimately differ between otherwise identical runs.
pub const VOLATILE_FIELDS: [&str; 4] = ["latency_ms", "packaging_ms", "started_at", "finished_at"];

pub const PACKAGING_NOTE: &str = "+ pkg.";

/// The constraint a prompt was sent with: kind, artifact digest and the
/// full pattern or schema document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordConstraint {
    pub kind: ConstraintKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<serde_json::Value>,
}

impl From<&Constraint> for RecordConstraint {
    fn from(c: &Constraint) -> Self {
        RecordConstraint {
            kind: c.kind,
            digest: c.digest(),
            pattern: c.pattern.clone(),
            schema: c
                .schema
                .as_ref()
                .map(|s| serde_json::to_value(s.document()).expect("JSON values serialize")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub model_id: String,
    pub backend_label: String,
    pub family: Family,
    pub mode: OutputMode,
    pub stage: Stage,
    /// Digest of the run configuration that produced the record.
    pub run_digest: String,
    pub prompt: String,
    pub constraint: RecordConstraint,
    pub raw_text: String,
    pub parse_status: Option<ParseStatus>,
    pub extraction_rule: Option<ExtractionRule>,
    #[serde(default)]
    pub violations: Vec<Violation>,
    pub schema_valid: bool,
    pub answer_correct: bool,
    pub exec_correct: bool,
    pub trace_correct: Option<bool>,
    pub error_class: ErrorClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calendar_failure_class: Option<CalendarFailureClass>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wrong_fields: Vec<CalendarField>,
    pub latency_ms: f64,
    /// Set on packaged records: packaging time is not part of `latency_ms`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packaging_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packaging_error: Option<String>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub structural_overhead: Option<f64>,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_error: Option<String>,
    /// First-stage completion behind a packaged record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_raw_text: Option<String>,
    /// Mode of the records a derived record was packaged from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_mode: Option<OutputMode>,
    pub extraction: Strictness,
    pub extraction_version: String,
    pub started_at: String,
    pub finished_at: String,
}

pub(crate) fn timestamp(t: SystemTime) -> String {
    DateTime::<Utc>::from(t).to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Everything about a record except what the completion says.
pub(crate) struct RecordContext<'a> {
    pub instance: &'a TaskInstance,
    pub model_id: &'a str,
    pub run_digest: &'a str,
    pub mode: OutputMode,
    pub bundle: &'a PromptBundle,
    pub options: CheckOptions,
    pub started_at: SystemTime,
}

impl RunRecord {
    /// Score a generation and assemble its record. `score_as` is the mode
    /// whose contract the text is checked against (normally `ctx.mode`).
    pub(crate) fn build(ctx: &RecordContext<'_>, generation: &GenerationResult, score_as: OutputMode) -> RunRecord {
        let mut record = RunRecord {
            instance_id: ctx.instance.id.clone(),
            model_id: ctx.model_id.to_string(),
            backend_label: generation.backend_label.clone(),
            family: ctx.instance.family,
            mode: ctx.mode,
            stage: generation.stage,
            run_digest: ctx.run_digest.to_string(),
            prompt: ctx.bundle.user_text.clone(),
            constraint: RecordConstraint::from(&ctx.bundle.constraint),
            raw_text: generation.raw_text.clone(),
            parse_status: None,
            extraction_rule: None,
            violations: Vec::new(),
            schema_valid: false,
            answer_correct: false,
            exec_correct: false,
            trace_correct: None,
            error_class: ErrorClass::GenerationFailed,
            calendar_failure_class: None,
            wrong_fields: Vec::new(),
            latency_ms: generation.latency_ms,
            latency_note: None,
            packaging_ms: None,
            packaging_error: None,
            prompt_tokens: generation.prompt_tokens,
            completion_tokens: generation.completion_tokens,
            structural_overhead: None,
            attempts: generation.attempts,
            generation_error: generation.error.clone(),
            stage1_raw_text: None,
            source_mode: None,
            extraction: ctx.options.extraction,
            extraction_version: EXTRACTION_VERSION.to_string(),
            started_at: timestamp(ctx.started_at),
            finished_at: timestamp(SystemTime::now()),
        };
        if !generation.failed() {
            let eval = evaluate(ctx.instance, score_as, &generation.raw_text, ctx.options);
            record.apply(&eval);
        }
        record
    }

    pub(crate) fn apply(&mut self, eval: &Evaluation) {
        self.parse_status = Some(eval.parse.status);
        self.extraction_rule = eval.parse.rule;
        self.violations = eval.parse.violations.clone();
        self.schema_valid = eval.check.schema_valid;
        self.answer_correct = eval.check.answer_correct;
        self.exec_correct = eval.check.exec_correct;
        self.trace_correct = eval.check.trace_correct;
        self.error_class = eval.check.error_class;
        self.calendar_failure_class = eval.calendar.as_ref().map(|c| c.class);
        self.wrong_fields = eval.calendar.as_ref().map(|c| c.wrong_fields.clone()).unwrap_or_default();
        self.structural_overhead = structural_overhead(&self.raw_text, eval.payload.as_deref());
    }

    /// Records that feed aggregates (first stages of two-stage runs do not).
    pub fn is_final(&self) -> bool {
        self.stage != Stage::Stage1
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            backend_label: self.backend_label.clone(),
            model_id: self.model_id.clone(),
            mode: self.mode,
            instance_id: self.instance_id.clone(),
            stage: self.stage,
        }
    }

    pub fn indicator(&self) -> Indicator {
        Indicator {
            instance_id: self.instance_id.clone(),
            schema_valid: self.schema_valid,
            answer_correct: self.answer_correct,
            exec_correct: self.exec_correct,
            trace_correct: self.trace_correct,
            error_class: self.error_class,
            calendar_class: self.calendar_failure_class,
            wrong_fields: self.wrong_fields.clone(),
            latency_ms: Some(self.latency_ms),
            completion_tokens: self.completion_tokens,
            structural_overhead: self.structural_overhead,
        }
    }
}

/// Identity of a record: one per (backend, model, mode, instance, stage).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub backend_label: String,
    pub model_id: String,
    pub mode: OutputMode,
    pub instance_id: String,
    pub stage: Stage,
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read the records already in `path` for resuming. A torn last line (the
/// process died mid-write) is cut off; damage anywhere else is an error.
pub(crate) fn recover_records(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    if complete.len() != text.len() {
        warn!("{}: dropping incomplete final line", path.display());
        fs::write(path, complete).map_err(|e| Error::io(path, e))?;
    }
    let mut out = Vec::new();
    for (i, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Append-only writer; each batch is flushed before the next is generated
/// so an interrupted run loses at most the batch in flight.
pub(crate) struct RecordWriter {
    path: PathBuf,
    file: File,
    seen: BTreeSet<RecordKey>,
}

impl RecordWriter {
    pub(crate) fn open(path: &Path, existing: &[RunRecord]) -> Result<RecordWriter> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RecordWriter {
            path: path.to_path_buf(),
            file,
            seen: existing.iter().map(RunRecord::key).collect(),
        })
    }

    pub(crate) fn contains(&self, key: &RecordKey) -> bool {
        self.seen.contains(key)
    }

    pub(crate) fn append(&mut self, records: &[RunRecord]) -> Result<()> {
        let mut text = String::new();
        for r in records {
            if !self.seen.insert(r.key()) {
                return Err(Error::Internal(format!("duplicate record {:?}", r.key())));
            }
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        self.file
            .write_all(text.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// One line in canonical form: volatile fields removed, keys sorted, no
/// whitespace.
pub fn canonical_line(line: &str) -> Result<String> {
    let mut value: serde_json::Value = serde_json::from_str(line)?;
    if let Some(map) = value.as_object_mut() {
        for field in VOLATILE_FIELDS {
            map.remove(field);
        }
    }
    Ok(canonical_serialize(&JsonValue::from(value)))
}

/// Canonical form of a whole JSONL document.
pub fn canonical_jsonl(text: &str) -> Result<String> {
    let mut out = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        out.push_str(&canonical_line(line)?);
        out.push('\n');
    }
    Ok(out)
}

/// Line numbers (1-based) where two JSONL documents differ after
/// canonicalization; a length mismatch reports the surplus lines.
pub fn canonical_diff(a: &str, b: &str) -> Result<Vec<usize>> {
    let ca = canonical_jsonl(a)?;
    let cb = canonical_jsonl(b)?;
    let (la, lb): (Vec<&str>, Vec<&str>) = (ca.lines().collect(), cb.lines().collect());
    Ok((0..la.len().max(lb.len()))
        .filter(|&i| la.get(i) != lb.get(i))
        .map(|i| i + 1)
        .collect())
}
