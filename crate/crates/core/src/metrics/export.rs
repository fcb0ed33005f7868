//! CSV export. Every number is formatted with a fixed number of decimals so
//! the files are byte-stable across runs.

use crate::checkers::ErrorClass;
use crate::error::Result;

use super::{format_delta, format_pct, format_pct_f64, BootstrapCI, Metric, ModeAggregate, PairedComparison};

fn opt(x: Option<f64>, decimals: usize) -> String {
    x.map(|v| format!("{v:.decimals$}")).unwrap_or_default()
}

fn ci_cols(ci: Option<&BootstrapCI>) -> [String; 2] {
    match ci {
        Some(ci) => [format_pct_f64(ci.low), format_pct_f64(ci.high)],
        None => [String::new(), String::new()],
    }
}

pub fn aggregates_csv(rows: &[ModeAggregate]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "model_id", "backend", "suite", "mode", "n", "generation_failed", "schema_validity_pct", "answer_accuracy_pct",
        "exec_accuracy_pct", "trace_accuracy_pct", "wrong_valid_pct", "correct_valid_pct", "trace_contradiction_pct",
    ];
    let ci_names: Vec<String> = Metric::ALL
        .iter()
        .flat_map(|m| [format!("{}_ci_low", m.name()), format!("{}_ci_high", m.name())])
        .collect();
    header.extend(ci_names.iter().map(String::as_str));
    let class_names: Vec<String> = ErrorClass::ALL.iter().map(|c| format!("n_{}", c.name())).collect();
    header.extend(class_names.iter().map(String::as_str));
    header.extend(["mean_latency_ms", "mean_completion_tokens", "mean_structural_overhead"]);
    w.write_record(&header)?;
    for a in rows {
        let mut rec = vec![
            a.key.model_id.clone(),
            a.key.backend.clone(),
            a.key.suite.clone(),
            a.key.mode.name().to_string(),
            a.n.to_string(),
            a.generation_failed.to_string(),
            format_pct(a.schema_validity()),
            format_pct(a.answer_accuracy()),
            format_pct(a.exec_accuracy()),
            a.trace_accuracy().map(format_pct).unwrap_or_default(),
            format_pct(a.wrong_valid_rate()),
            format_pct(a.correct_valid_rate()),
            format_pct(a.trace_contradiction_rate()),
        ];
        for m in Metric::ALL {
            rec.extend(ci_cols(a.intervals.get(&m)));
        }
        for c in ErrorClass::ALL {
            rec.push(a.class_count(c).to_string());
        }
        rec.push(opt(a.mean_latency_ms, 1));
        rec.push(opt(a.mean_completion_tokens, 1));
        rec.push(opt(a.mean_structural_overhead, 4));
        w.write_record(&rec)?;
    }
    finish(w)
}

pub fn comparisons_csv(rows: &[PairedComparison]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "model_id", "backend", "suite", "baseline", "constrained", "n", "dropped", "acc_metric", "tax_pts", "tax_norm", "epsilon",
        "answer_tax_pts", "exec_tax_pts", "reading",
    ]
    .map(String::from)
    .to_vec();
    for m in Metric::ALL {
        header.push(format!("{}_baseline_pct", m.name()));
        header.push(format!("{}_constrained_pct", m.name()));
        header.push(format!("{}_delta_pts", m.name()));
        header.push(format!("{}_delta_ci_low", m.name()));
        header.push(format!("{}_delta_ci_high", m.name()));
    }
    w.write_record(&header)?;
    for c in rows {
        let mut rec = vec![
            c.model_id.clone(),
            c.backend.clone(),
            c.suite.clone(),
            c.baseline.name().to_string(),
            c.constrained.name().to_string(),
            c.n.to_string(),
            c.dropped.to_string(),
            format!("{:?}", c.acc_metric).to_lowercase(),
            format_pct(c.tax),
            format!("{:.4}", c.tax_norm),
            format!("{:e}", c.epsilon),
            format_pct(c.answer_tax),
            format_pct(c.exec_tax),
            if c.is_gain() { "accuracy gain" } else { "tax" }.to_string(),
        ];
        for m in Metric::ALL {
            let d = c.delta(m);
            rec.push(format_pct(d.baseline));
            rec.push(format_pct(d.constrained));
            rec.push(format_delta(d.delta));
            rec.extend(ci_cols(d.ci.as_ref()));
        }
        w.write_record(&rec)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| crate::Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| crate::Error::Internal(e.to_string()))
}
