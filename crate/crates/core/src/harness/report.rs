//! Markdown rendering of a score summary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::checkers::{CalendarFailureClass, CalendarField};
use crate::error::{Error, Result};
use crate::metrics::{format_delta, format_pct, format_pct_f64, BootstrapCI, Metric, ModeAggregate, PairedComparison, Rate};
use crate::taskgen::Family;

use super::score::ScoreSummary;
use super::PACKAGING_NOTE;

const LATENCY_CAVEAT: &str = "Latency is wall-clock time from request send to the last response byte, \
measured per backend. It is comparable across modes served by the same backend on the same hardware, \
not across serving stacks. Delayed-packaging latency is the first-stage generation time; packaging \
time is recorded separately per record and not added (\"+ pkg.\"). Scripted backends make no request \
and report 0.";

fn ci(ci: Option<&BootstrapCI>) -> String {
    ci.map(|c| format!(" [{}, {}]", format_pct_f64(c.low), format_pct_f64(c.high)))
        .unwrap_or_default()
}

/// A loss interval from a signed delta interval: negated and clipped at 0.
fn loss_ci(ci: Option<&BootstrapCI>) -> String {
    ci.map(|c| {
        format!(
            " [{}, {}]",
            format_pct_f64((-c.high).max(0.0)),
            format_pct_f64((-c.low).max(0.0))
        )
    })
    .unwrap_or_default()
}

fn signed_ci(ci: Option<&BootstrapCI>) -> String {
    let signed = |x: f64| {
        let s = format_pct_f64(x);
        if s.starts_with('-') {
            s
        } else {
            format!("+{s}")
        }
    };
    ci.map(|c| format!(" [{}, {}]", signed(c.low), signed(c.high)))
        .unwrap_or_default()
}

fn is_tool_suite(suite: &str) -> bool {
    suite == Family::ToolCallArgument.name()
}

/// One-phrase interpretation of a comparison, in the loss-positive sign
/// convention.
pub(crate) fn reading(c: &PairedComparison) -> String {
    let zero = Rate::from_integer(0);
    if c.is_gain() {
        return "Constraint is an accuracy gain".to_string();
    }
    if c.tax == zero {
        return "No measurable tax".to_string();
    }
    let validity = c.delta(Metric::SchemaValidity).delta;
    let wrong_valid = c.delta(Metric::WrongValidRate).delta;
    if validity <= zero && wrong_valid > zero {
        return if is_tool_suite(&c.suite) {
            "Valid object, wrong arguments".to_string()
        } else {
            "Valid output, wrong answer".to_string()
        };
    }
    if validity > zero {
        "Validity up, accuracy down".to_string()
    } else {
        "Constraint tax".to_string()
    }
}

fn latency(a: &ModeAggregate, packaged: bool) -> String {
    match a.mean_latency_ms {
        Some(ms) => {
            let base = format!("{:.2}s", ms / 1000.0);
            if packaged {
                format!("{base} {PACKAGING_NOTE}")
            } else {
                base
            }
        }
        None => "n/a".to_string(),
    }
}

fn dashboard(out: &mut String, s: &ScoreSummary) {
    let packaged: BTreeSet<_> = s.packaged.iter().collect();
    out.push_str("## Dashboard\n\n");
    out.push_str("| Model | Backend | Suite | Mode | n | Schema valid | Answer acc. | Exec. acc. | Wrong-valid schema | Latency | Output tokens |\n");
    out.push_str("|---|---|---|---|---:|---:|---:|---:|---:|---:|---:|\n");
    for a in &s.aggregates {
        let iv = |m| a.intervals.get(&m);
        let tokens = a.mean_completion_tokens.map(|t| format!("{t:.1}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            out,
            "| {} | {} | {} | `{}` | {} | {}%{} | {}%{} | {}%{} | {}%{} | {} | {} |",
            a.key.model_id,
            a.key.backend,
            a.key.suite,
            a.key.mode,
            a.n,
            format_pct(a.schema_validity()),
            ci(iv(Metric::SchemaValidity)),
            format_pct(a.answer_accuracy()),
            ci(iv(Metric::AnswerAccuracy)),
            format_pct(a.exec_accuracy()),
            ci(iv(Metric::ExecAccuracy)),
            format_pct(a.wrong_valid_rate()),
            ci(iv(Metric::WrongValidRate)),
            latency(a, packaged.contains(&a.key)),
            tokens,
        );
    }
    out.push('\n');
}

fn tax_table(out: &mut String, s: &ScoreSummary) {
    if s.comparisons.is_empty() {
        return;
    }
    out.push_str("## Constraint tax\n\n");
    out.push_str("Positive tax is accuracy lost by the constrained mode relative to its baseline on the same instances; \
a constrained mode that does better is reported as an accuracy gain and its tax is 0.\n\n");
    out.push_str("| Model | Backend | Task suite | Baseline → constrained | Answer tax (pts) | Exec. tax (pts) | Validity delta (pts) | Wrong-valid delta (pts) | Reading |\n");
    out.push_str("|---|---|---|---|---:|---:|---:|---:|---|\n");
    for c in &s.comparisons {
        let answer = if is_tool_suite(&c.suite) {
            "not applicable".to_string()
        } else {
            format!("{}{}", format_pct(c.answer_tax), loss_ci(c.delta(Metric::AnswerAccuracy).ci.as_ref()))
        };
        let validity = c.delta(Metric::SchemaValidity);
        let wrong = c.delta(Metric::WrongValidRate);
        let _ = writeln!(
            out,
            "| {} | {} | {} | `{}` → `{}` | {} | {}{} | {}{} | {}{} | {} |",
            c.model_id,
            c.backend,
            c.suite,
            c.baseline,
            c.constrained,
            answer,
            format_pct(c.exec_tax),
            loss_ci(c.delta(Metric::ExecAccuracy).ci.as_ref()),
            format_delta(validity.delta),
            signed_ci(validity.ci.as_ref()),
            format_delta(wrong.delta),
            signed_ci(wrong.ci.as_ref()),
            reading(c),
        );
    }
    out.push('\n');

    out.push_str("### Paired deltas\n\n");
    out.push_str("| Model | Backend | Suite | Constrained − baseline | n | Answer acc. (pts) | Schema valid (pts) | Exec. acc. (pts) | Wrong-valid (pts) |\n");
    out.push_str("|---|---|---|---|---:|---:|---:|---:|---:|\n");
    for c in &s.comparisons {
        let d = |m| {
            let d = c.delta(m);
            format!("{}{}", format_delta(d.delta), signed_ci(d.ci.as_ref()))
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | `{}` − `{}` | {} | {} | {} | {} | {} |",
            c.model_id,
            c.backend,
            c.suite,
            c.constrained,
            c.baseline,
            c.n,
            d(Metric::AnswerAccuracy),
            d(Metric::SchemaValidity),
            d(Metric::ExecAccuracy),
            d(Metric::WrongValidRate),
        );
    }
    out.push('\n');
}

fn calendar_table(out: &mut String, s: &ScoreSummary) {
    let rows: Vec<&ModeAggregate> = s.aggregates.iter().filter(|a| is_tool_suite(&a.key.suite)).collect();
    if rows.is_empty() {
        return;
    }
    let always = [
        CalendarFailureClass::Correct,
        CalendarFailureClass::WrongDuration,
        CalendarFailureClass::WrongTopic,
        CalendarFailureClass::MultiField,
    ];
    let extra: Vec<CalendarFailureClass> = CalendarFailureClass::ALL
        .into_iter()
        .filter(|c| !always.contains(c))
        .filter(|c| rows.iter().any(|a| a.calendar_counts.get(c).copied().unwrap_or(0) > 0))
        .collect();
    // calendar classes cover schema-valid objects; the rest are listed so
    // each row still sums to n
    let show_invalid = rows.iter().any(|a| a.n > a.calendar_counts.values().sum::<u64>());
    let mut columns: Vec<CalendarFailureClass> = always[..3].to_vec();
    columns.extend(extra);
    columns.push(CalendarFailureClass::MultiField);

    out.push_str("## Calendar failure taxonomy\n\n");
    out.push_str("Primary class per record; multi-field failures are counted once.\n\n");
    out.push_str("| Model | Backend | Mode |");
    for c in &columns {
        let _ = write!(out, " {} |", c.label());
    }
    if show_invalid {
        out.push_str(" Not schema-valid |");
    }
    out.push_str(" n |\n|---|---|---|");
    for _ in 0..columns.len() + usize::from(show_invalid) + 1 {
        out.push_str("---:|");
    }
    out.push('\n');
    for a in &rows {
        let _ = write!(out, "| {} | {} | `{}` |", a.key.model_id, a.key.backend, a.key.mode);
        for c in &columns {
            let _ = write!(out, " {} |", a.calendar_counts.get(c).copied().unwrap_or(0));
        }
        if show_invalid {
            let _ = write!(out, " {} |", a.n - a.calendar_counts.values().sum::<u64>());
        }
        let _ = writeln!(out, " {} |", a.n);
    }
    out.push('\n');

    out.push_str("Field-occurrence counts (a record with several wrong fields counts once per field):\n\n");
    out.push_str("| Model | Backend | Mode |");
    for f in CalendarField::ALL {
        let _ = write!(out, " {} |", f.key());
    }
    out.push_str("\n|---|---|---|");
    for _ in CalendarField::ALL {
        out.push_str("---:|");
    }
    out.push('\n');
    for a in &rows {
        let _ = write!(out, "| {} | {} | `{}` |", a.key.model_id, a.key.backend, a.key.mode);
        for f in CalendarField::ALL {
            let _ = write!(out, " {} |", a.field_counts.get(&f).copied().unwrap_or(0));
        }
        out.push('\n');
    }
    out.push('\n');
}

fn replication_table(out: &mut String, s: &ScoreSummary) {
    let mut groups: BTreeMap<(&str, &str, String), Vec<&ModeAggregate>> = BTreeMap::new();
    for a in &s.aggregates {
        groups
            .entry((a.key.model_id.as_str(), a.key.suite.as_str(), a.key.mode.to_string()))
            .or_default()
            .push(a);
    }
    groups.retain(|_, v| v.len() > 1);
    if groups.is_empty() {
        return;
    }
    let backends: BTreeSet<&str> = groups.values().flatten().map(|a| a.key.backend.as_str()).collect();
    out.push_str("## Backend replication\n\n");
    out.push_str("| Model | Suite | Mode |");
    for b in &backends {
        let _ = write!(out, " {b} acc. |");
    }
    out.push_str(" Note |\n|---|---|---|");
    for _ in &backends {
        out.push_str("---:|");
    }
    out.push_str("---|\n");
    for ((model, suite, mode), rows) in &groups {
        let _ = write!(out, "| {model} | {suite} | `{mode}` |");
        let mut shown = BTreeSet::new();
        for b in &backends {
            match rows.iter().find(|a| a.key.backend == *b) {
                Some(a) => {
                    let acc = format_pct(a.answer_accuracy());
                    let _ = write!(out, " {acc}% |");
                    shown.insert(acc);
                }
                None => out.push_str(" — |"),
            }
        }
        let note = if shown.len() == 1 { "Replicates" } else { "Backend-sensitive" };
        let _ = writeln!(out, " {note} |");
    }
    out.push('\n');
}

/// The full report. Contains no timestamps, so identical summaries render
/// to identical bytes.
pub fn render_report(summary: &ScoreSummary) -> String {
    let mut out = String::from("# Constraint tax report\n\n");
    let _ = writeln!(
        out,
        "{} final records scored; {} taxonomy labels.\n",
        summary.records_scored, summary.class_total
    );
    dashboard(&mut out, summary);
    tax_table(&mut out, summary);
    calendar_table(&mut out, summary);
    replication_table(&mut out, summary);
    if !summary.warnings.is_empty() {
        out.push_str("## Warnings\n\n");
        for w in &summary.warnings {
            let _ = writeln!(out, "- {w}");
        }
        out.push('\n');
    }
    out.push_str("## Notes\n\n");
    out.push_str(LATENCY_CAVEAT);
    out.push('\n');
    out
}

/// Render `summary.json` to `report.md`.
pub fn report(summary_path: &Path, out: &Path) -> Result<String> {
    let text = fs::read_to_string(summary_path).map_err(|e| Error::io(summary_path, e))?;
    let summary: ScoreSummary = serde_json::from_str(&text)?;
    let md = render_report(&summary);
    fs::write(out, &md).map_err(|e| Error::io(out, e))?;
    Ok(md)
}
