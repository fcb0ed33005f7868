//! Per-mode aggregates, constraint tax and paired comparisons.
//!
//! Rates are exact rationals over the scored record count; they are only
//! rounded (to 0.1 percentage point) for display.

mod bootstrap;
mod export;

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::checkers::{CalendarFailureClass, CalendarField, ErrorClass};
use crate::error::{Error, Result};
use crate::modes::OutputMode;

pub use bootstrap::{paired_delta_cis, quantile, rate_ci, BootstrapCI, BootstrapConfig};
pub use export::{aggregates_csv, comparisons_csv};

pub type Rate = Ratio<i64>;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// The per-record facts aggregation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indicator {
    pub instance_id: String,
    pub schema_valid: bool,
    pub answer_correct: bool,
    pub exec_correct: bool,
    #[serde(default)]
    pub trace_correct: Option<bool>,
    pub error_class: ErrorClass,
    #[serde(default)]
    pub calendar_class: Option<CalendarFailureClass>,
    #[serde(default)]
    pub wrong_fields: Vec<CalendarField>,
    #[serde(default)]
    pub latency_ms: Option<f64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
    #[serde(default)]
    pub structural_overhead: Option<f64>,
}

impl Indicator {
    /// A record with the given flags; the class follows from them.
    pub fn from_flags(instance_id: impl Into<String>, schema_valid: bool, answer_correct: bool, exec_correct: bool) -> Indicator {
        let error_class = match (schema_valid, exec_correct && answer_correct) {
            (false, _) => ErrorClass::SchemaValidationError,
            (true, true) => ErrorClass::CorrectValid,
            (true, false) => ErrorClass::WrongAnswerValidSchema,
        };
        Indicator {
            instance_id: instance_id.into(),
            schema_valid,
            answer_correct,
            exec_correct,
            trace_correct: None,
            error_class,
            calendar_class: None,
            wrong_fields: Vec::new(),
            latency_ms: None,
            completion_tokens: None,
            structural_overhead: None,
        }
    }

    pub fn is_scored(&self) -> bool {
        self.error_class != ErrorClass::GenerationFailed
    }

    /// Schema-valid but failing the task-relevant check.
    pub fn wrong_valid(&self) -> bool {
        self.error_class == ErrorClass::WrongAnswerValidSchema
    }

    pub fn metric(&self, metric: Metric) -> bool {
        match metric {
            Metric::SchemaValidity => self.schema_valid,
            Metric::AnswerAccuracy => self.answer_correct,
            Metric::ExecAccuracy => self.exec_correct,
            Metric::WrongValidRate => self.wrong_valid(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SchemaValidity,
    AnswerAccuracy,
    ExecAccuracy,
    WrongValidRate,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::AnswerAccuracy,
        Metric::SchemaValidity,
        Metric::ExecAccuracy,
        Metric::WrongValidRate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::SchemaValidity => "schema_validity",
            Metric::AnswerAccuracy => "answer_accuracy",
            Metric::ExecAccuracy => "exec_accuracy",
            Metric::WrongValidRate => "wrong_valid_rate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccMetric {
    #[default]
    Answer,
    Exec,
}

impl AccMetric {
    pub fn metric(self) -> Metric {
        match self {
            AccMetric::Answer => Metric::AnswerAccuracy,
            AccMetric::Exec => Metric::ExecAccuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AggregateKey {
    pub model_id: String,
    /// Backend label; distinguishes replications of one model.
    #[serde(default)]
    pub backend: String,
    pub suite: String,
    pub mode: OutputMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    #[serde(flatten)]
    pub key: AggregateKey,
    /// Scored records (generation failures excluded).
    pub n: u64,
    pub generation_failed: u64,
    pub schema_valid: u64,
    pub answer_correct: u64,
    pub exec_correct: u64,
    pub trace_checked: u64,
    pub trace_correct: u64,
    pub class_counts: BTreeMap<ErrorClass, u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub calendar_counts: BTreeMap<CalendarFailureClass, u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub field_counts: BTreeMap<CalendarField, u64>,
    pub mean_latency_ms: Option<f64>,
    pub mean_completion_tokens: Option<f64>,
    pub mean_structural_overhead: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub intervals: BTreeMap<Metric, BootstrapCI>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0u64), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

impl ModeAggregate {
    fn rate(&self, count: u64) -> Rate {
        Rate::new(count as i64, self.n as i64)
    }

    pub fn class_count(&self, class: ErrorClass) -> u64 {
        self.class_counts.get(&class).copied().unwrap_or(0)
    }

    pub fn schema_validity(&self) -> Rate {
        self.rate(self.schema_valid)
    }

    pub fn answer_accuracy(&self) -> Rate {
        self.rate(self.answer_correct)
    }

    pub fn exec_accuracy(&self) -> Rate {
        self.rate(self.exec_correct)
    }

    pub fn trace_accuracy(&self) -> Option<Rate> {
        (self.trace_checked > 0).then(|| Rate::new(self.trace_correct as i64, self.trace_checked as i64))
    }

    pub fn wrong_valid_rate(&self) -> Rate {
        self.rate(self.class_count(ErrorClass::WrongAnswerValidSchema))
    }

    pub fn correct_valid_rate(&self) -> Rate {
        self.rate(self.class_count(ErrorClass::CorrectValid))
    }

    pub fn trace_contradiction_rate(&self) -> Rate {
        self.rate(self.class_count(ErrorClass::TraceAnswerContradiction))
    }

    pub fn metric(&self, metric: Metric) -> Rate {
        match metric {
            Metric::SchemaValidity => self.schema_validity(),
            Metric::AnswerAccuracy => self.answer_accuracy(),
            Metric::ExecAccuracy => self.exec_accuracy(),
            Metric::WrongValidRate => self.wrong_valid_rate(),
        }
    }
}

/// Aggregate the records of one (model, suite, mode) cell. Generation
/// failures are counted separately and excluded from every denominator.
pub fn aggregate(key: AggregateKey, records: &[Indicator]) -> Result<ModeAggregate> {
    let scored: Vec<&Indicator> = records.iter().filter(|r| r.is_scored()).collect();
    if scored.is_empty() {
        return Err(Error::Empty(format!(
            "no scored records for {}/{}/{}",
            key.model_id, key.suite, key.mode
        )));
    }
    let count = |f: &dyn Fn(&Indicator) -> bool| scored.iter().filter(|r| f(r)).count() as u64;
    let mut class_counts = BTreeMap::new();
    let mut calendar_counts = BTreeMap::new();
    let mut field_counts = BTreeMap::new();
    for r in &scored {
        *class_counts.entry(r.error_class).or_insert(0) += 1;
        if let Some(c) = r.calendar_class {
            *calendar_counts.entry(c).or_insert(0) += 1;
        }
        for f in &r.wrong_fields {
            *field_counts.entry(*f).or_insert(0) += 1;
        }
    }
    Ok(ModeAggregate {
        key,
        n: scored.len() as u64,
        generation_failed: (records.len() - scored.len()) as u64,
        schema_valid: count(&|r| r.schema_valid),
        answer_correct: count(&|r| r.answer_correct),
        exec_correct: count(&|r| r.exec_correct),
        trace_checked: count(&|r| r.trace_correct.is_some()),
        trace_correct: count(&|r| r.trace_correct == Some(true)),
        class_counts,
        calendar_counts,
        field_counts,
        mean_latency_ms: mean(scored.iter().filter_map(|r| r.latency_ms)),
        mean_completion_tokens: mean(scored.iter().filter_map(|r| r.completion_tokens.map(|t| t as f64))),
        mean_structural_overhead: mean(scored.iter().filter_map(|r| r.structural_overhead)),
        intervals: BTreeMap::new(),
    })
}

/// `aggregate` plus a bootstrap interval for each headline rate.
pub fn aggregate_with_intervals(key: AggregateKey, records: &[Indicator], cfg: &BootstrapConfig) -> Result<ModeAggregate> {
    let mut agg = aggregate(key, records)?;
    let scored: Vec<&Indicator> = records.iter().filter(|r| r.is_scored()).collect();
    for metric in Metric::ALL {
        let xs: Vec<bool> = scored.iter().map(|r| r.metric(metric)).collect();
        if let Some(ci) = rate_ci(&xs, cfg) {
            agg.intervals.insert(metric, ci);
        }
    }
    Ok(agg)
}

/// Clipped accuracy loss: `max(0, acc_b − acc_c)`.
pub fn constraint_tax(acc_b: f64, acc_c: f64) -> f64 {
    (acc_b - acc_c).max(0.0)
}

/// Tax relative to the baseline: `tax / max(ε, acc_b)`.
pub fn normalized_tax(acc_b: f64, acc_c: f64, epsilon: f64) -> f64 {
    constraint_tax(acc_b, acc_c) / epsilon.max(acc_b)
}

pub fn constraint_tax_exact(acc_b: Rate, acc_c: Rate) -> Rate {
    (acc_b - acc_c).max(Rate::from_integer(0))
}

pub fn rate_to_f64(r: Rate) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Percentage points rounded half away from zero to one decimal,
/// e.g. `Rate::new(591, 3000)` → `"19.7"`.
pub fn format_pct(r: Rate) -> String {
    tenths(r * Rate::from_integer(1000))
}

/// A signed delta in points with an explicit sign: `"+38.5"`, `"-8.7"`.
pub fn format_delta(r: Rate) -> String {
    let s = format_pct(r);
    if s.starts_with('-') {
        s
    } else {
        format!("+{s}")
    }
}

/// `format_pct` for floating-point fractions.
pub fn format_pct_f64(x: f64) -> String {
    let scaled = (x * 1000.0 * 1e6).round() / 1e6;
    let t = scaled.round() as i64;
    render_tenths(t)
}

fn tenths(scaled: Rate) -> String {
    render_tenths(scaled.round().to_integer())
}

fn render_tenths(t: i64) -> String {
    let sign = if t < 0 { "-" } else { "" };
    format!("{sign}{}.{}", t.abs() / 10, t.abs() % 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub metric: Metric,
    pub baseline: Rate,
    pub constrained: Rate,
    /// constrained − baseline
    pub delta: Rate,
    pub ci: Option<BootstrapCI>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub model_id: String,
    #[serde(default)]
    pub backend: String,
    pub suite: String,
    pub baseline: OutputMode,
    pub constrained: OutputMode,
    pub acc_metric: AccMetric,
    pub n: u64,
    /// Instances dropped because either side failed to generate.
    pub dropped: u64,
    pub tax: Rate,
    pub tax_norm: f64,
    pub epsilon: f64,
    pub answer_tax: Rate,
    pub exec_tax: Rate,
    pub deltas: Vec<PairedDelta>,
}

impl PairedComparison {
    pub fn delta(&self, metric: Metric) -> &PairedDelta {
        self.deltas.iter().find(|d| d.metric == metric).expect("all metrics present")
    }

    /// The signed accuracy change on the tax metric is a gain.
    pub fn is_gain(&self) -> bool {
        self.delta(self.acc_metric.metric()).delta > Rate::from_integer(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingOptions {
    pub acc_metric: AccMetric,
    pub epsilon: f64,
}

impl Default for PairingOptions {
    fn default() -> Self {
        PairingOptions {
            acc_metric: AccMetric::Answer,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

fn missing_ids<'a>(from: &BTreeSet<&'a str>, other: &BTreeSet<&'a str>) -> Vec<&'a str> {
    from.difference(other).copied().collect()
}

fn preview(ids: &[&str]) -> String {
    let shown: Vec<&str> = ids.iter().take(10).copied().collect();
    let more = ids.len().saturating_sub(shown.len());
    if more > 0 {
        format!("{} (+{more} more)", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

/// Paired comparison of a constrained mode against a baseline on the same
/// instances. Deltas are constrained − baseline; tax is the clipped loss.
pub fn paired_comparison(
    baseline: (&AggregateKey, &[Indicator]),
    constrained: (&AggregateKey, &[Indicator]),
    options: PairingOptions,
    bootstrap: &BootstrapConfig,
) -> Result<PairedComparison> {
    let (key_b, records_b) = baseline;
    let (key_c, records_c) = constrained;
    let by_id = |rs: &'_ [Indicator]| -> Result<BTreeMap<String, Indicator>> {
        let mut map = BTreeMap::new();
        for r in rs {
            if map.insert(r.instance_id.clone(), r.clone()).is_some() {
                return Err(Error::Pairing(format!("duplicate instance id {}", r.instance_id)));
            }
        }
        Ok(map)
    };
    let map_b = by_id(records_b)?;
    let map_c = by_id(records_c)?;
    let ids_b: BTreeSet<&str> = map_b.keys().map(String::as_str).collect();
    let ids_c: BTreeSet<&str> = map_c.keys().map(String::as_str).collect();
    if ids_b != ids_c {
        let only_b = missing_ids(&ids_b, &ids_c);
        let only_c = missing_ids(&ids_c, &ids_b);
        return Err(Error::Pairing(format!(
            "{} vs {}: missing from {}: [{}]; missing from {}: [{}]",
            key_b.mode,
            key_c.mode,
            key_c.mode,
            preview(&only_b),
            key_b.mode,
            preview(&only_c)
        )));
    }

    let mut pairs: Vec<[(bool, bool); 4]> = Vec::with_capacity(map_b.len());
    let mut dropped = 0u64;
    for (id, b) in &map_b {
        let c = &map_c[id];
        if !(b.is_scored() && c.is_scored()) {
            dropped += 1;
            continue;
        }
        pairs.push(Metric::ALL.map(|m| (b.metric(m), c.metric(m))));
    }
    if pairs.is_empty() {
        return Err(Error::Empty(format!("no scored pairs for {} vs {}", key_b.mode, key_c.mode)));
    }
    let n = pairs.len() as i64;
    let cis = paired_delta_cis(&pairs, bootstrap);
    let deltas: Vec<PairedDelta> = Metric::ALL
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let hits_b = pairs.iter().filter(|p| p[k].0).count() as i64;
            let hits_c = pairs.iter().filter(|p| p[k].1).count() as i64;
            let (b, c) = (Rate::new(hits_b, n), Rate::new(hits_c, n));
            PairedDelta {
                metric,
                baseline: b,
                constrained: c,
                delta: c - b,
                ci: cis.map(|cis| cis[k]),
            }
        })
        .collect();
    let tax_of = |m: Metric| {
        let d = deltas.iter().find(|d| d.metric == m).expect("metric present");
        (constraint_tax_exact(d.baseline, d.constrained), d.baseline, d.constrained)
    };
    let (answer_tax, _, _) = tax_of(Metric::AnswerAccuracy);
    let (exec_tax, _, _) = tax_of(Metric::ExecAccuracy);
    let (tax, acc_b, acc_c) = tax_of(options.acc_metric.metric());
    Ok(PairedComparison {
        model_id: key_c.model_id.clone(),
        backend: key_c.backend.clone(),
        suite: key_c.suite.clone(),
        baseline: key_b.mode,
        constrained: key_c.mode,
        acc_metric: options.acc_metric,
        n: pairs.len() as u64,
        dropped,
        tax,
        tax_norm: normalized_tax(rate_to_f64(acc_b), rate_to_f64(acc_c), options.epsilon),
        epsilon: options.epsilon,
        answer_tax,
        exec_tax,
        deltas,
    })
}

/// Share of the completion that is structure rather than answer payload:
/// `1 − payload chars / completion chars`. Absent for empty completions or
/// when nothing could be extracted.
pub fn structural_overhead(raw_text: &str, payload: Option<&str>) -> Option<f64> {
    let total = raw_text.chars().count();
    let payload = payload?.chars().count();
    if total == 0 {
        return None;
    }
    Some((1.0 - payload as f64 / total as f64).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(mode: OutputMode) -> AggregateKey {
        AggregateKey {
            model_id: "m".into(),
            backend: "b".into(),
            suite: "s".into(),
            mode,
        }
    }

    #[test]
    fn table_style_aggregate() {
        let records: Vec<Indicator> = (0..200)
            .map(|i| Indicator::from_flags(format!("i{i:03}"), true, i < 96, i < 96))
            .collect();
        let agg = aggregate(key(OutputMode::AnswerOnlySchema), &records).unwrap();
        assert_eq!(format_pct(agg.schema_validity()), "100.0");
        assert_eq!(format_pct(agg.exec_accuracy()), "48.0");
        assert_eq!(format_pct(agg.wrong_valid_rate()), "52.0");
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(aggregate(key(OutputMode::Freeform), &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn tax_examples() {
        assert!((constraint_tax(0.197, 0.110) - 0.087).abs() < 1e-12);
        assert_eq!(constraint_tax(0.3, 0.3), 0.0);
        assert_eq!(constraint_tax(0.127, 0.187), 0.0);
        assert!((normalized_tax(0.197, 0.110, 1e-6) - 0.087 / 0.197).abs() < 1e-12);
        assert!(normalized_tax(0.0, 0.0, 1e-6).is_finite());
        assert_eq!(normalized_tax(0.4, 0.4, 1e-6), 0.0);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(format_pct(Rate::new(1, 2000)), "0.1");
        assert_eq!(format_pct(Rate::new(-1, 2000)), "-0.1");
        assert_eq!(format_pct(Rate::new(591, 3000)), "19.7");
        assert_eq!(format_delta(Rate::new(0, 1)), "+0.0");
        assert_eq!(format_delta(Rate::new(-26, 3000)), "-0.9");
        assert_eq!(format_pct_f64(0.0875), "8.8");
        assert_eq!(format_pct_f64(-0.435), "-43.5");
    }

    #[test]
    fn overhead_examples() {
        let o = structural_overhead(r#"{"answer":"9"}"#, Some("9")).unwrap();
        assert!((o - 13.0 / 14.0).abs() < 1e-12);
        assert_eq!(structural_overhead("9", Some("9")), Some(0.0));
        assert_eq!(structural_overhead("", Some("")), None);
        assert_eq!(structural_overhead("x", None), None);
    }

    #[test]
    fn pairing_mismatch_lists_ids() {
        let b = vec![Indicator::from_flags("a", true, true, true), Indicator::from_flags("b", true, true, true)];
        let c = vec![Indicator::from_flags("a", true, true, true)];
        let err = paired_comparison(
            (&key(OutputMode::PromptJson), &b),
            (&key(OutputMode::AnswerOnlySchema), &c),
            PairingOptions::default(),
            &BootstrapConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("[b]"), "{err}");
    }

    #[test]
    fn identical_sets_have_zero_deltas() {
        let rs: Vec<Indicator> = (0..40).map(|i| Indicator::from_flags(format!("{i}"), i % 2 == 0, i % 3 == 0, i % 6 == 0)).collect();
        let cmp = paired_comparison(
            (&key(OutputMode::PromptJson), &rs),
            (&key(OutputMode::AnswerOnlySchema), &rs),
            PairingOptions::default(),
            &BootstrapConfig::default(),
        )
        .unwrap();
        for d in &cmp.deltas {
            assert_eq!(d.delta, Rate::from_integer(0));
            let ci = d.ci.unwrap();
            assert_eq!((ci.low, ci.high), (0.0, 0.0));
        }
        assert_eq!(cmp.tax, Rate::from_integer(0));
    }

    #[test]
    fn generation_failures_are_excluded() {
        let mut rs: Vec<Indicator> = (0..4).map(|i| Indicator::from_flags(format!("{i}"), true, true, true)).collect();
        rs[0].error_class = ErrorClass::GenerationFailed;
        let agg = aggregate(key(OutputMode::Freeform), &rs).unwrap();
        assert_eq!((agg.n, agg.generation_failed), (3, 1));
    }
}
