//! Record files → per-mode aggregates and paired comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_with_intervals, aggregates_csv, comparisons_csv, paired_comparison, AggregateKey, BootstrapConfig,
    Indicator, ModeAggregate, PairedComparison, PairingOptions,
};
use crate::modes::OutputMode;

use super::record::{read_records, RunRecord};
use super::{ComparisonSpec, PACKAGING_NOTE};

/// Suite name for all families of a model/backend pooled together.
pub const POOLED_SUITE: &str = "all";

pub const AGGREGATES_FILE: &str = "aggregates.csv";
pub const COMPARISONS_FILE: &str = "comparisons.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreOptions {
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub pairing: PairingOptions,
    /// Empty: [`default_comparisons`].
    #[serde(default)]
    pub comparisons: Vec<ComparisonSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub aggregates: Vec<ModeAggregate>,
    pub comparisons: Vec<PairedComparison>,
    /// Aggregates whose latency excludes packaging time.
    #[serde(default)]
    pub packaged: Vec<AggregateKey>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Final-stage records read.
    pub records_in: u64,
    /// Records entering per-suite aggregates (generation failures included).
    pub records_scored: u64,
    /// Sum of taxonomy classes over per-suite aggregates.
    pub class_total: u64,
}

/// Every mode against the prompt-only JSON baseline, or against freeform
/// when prompt-only JSON was not run.
pub fn default_comparisons(modes: &BTreeSet<OutputMode>) -> Vec<ComparisonSpec> {
    let Some(baseline) = [OutputMode::PromptJson, OutputMode::Freeform]
        .into_iter()
        .find(|m| modes.contains(m))
    else {
        return Vec::new();
    };
    modes
        .iter()
        .filter(|&&m| m != baseline)
        .map(|&constrained| ComparisonSpec { baseline, constrained })
        .collect()
}

type Group = BTreeMap<AggregateKey, Vec<Indicator>>;

/// Aggregate and compare in-memory records. Deterministic for a given
/// bootstrap seed; input order does not matter.
pub fn score_records(records: &[RunRecord], options: &ScoreOptions) -> Result<ScoreSummary> {
    let mut warnings = Vec::new();
    let finals: Vec<&RunRecord> = records.iter().filter(|r| r.is_final()).collect();
    let digests: BTreeSet<&str> = finals.iter().map(|r| r.run_digest.as_str()).collect();
    if digests.len() > 1 {
        warnings.push(format!(
            "records come from {} different run configurations; results mix their settings",
            digests.len()
        ));
    }
    let mut keys = BTreeSet::new();
    for r in &finals {
        if !keys.insert(r.key()) {
            return Err(Error::Pairing(format!(
                "duplicate record for {} / {} / {} / {}",
                r.backend_label, r.model_id, r.mode, r.instance_id
            )));
        }
    }

    let mut per_suite: Group = BTreeMap::new();
    let mut pooled: Group = BTreeMap::new();
    let mut packaged = BTreeSet::new();
    let mut families: BTreeMap<(String, String, OutputMode), BTreeSet<&str>> = BTreeMap::new();
    for r in &finals {
        let key = AggregateKey {
            model_id: r.model_id.clone(),
            backend: r.backend_label.clone(),
            suite: r.family.name().to_string(),
            mode: r.mode,
        };
        let pooled_key = AggregateKey {
            suite: POOLED_SUITE.to_string(),
            ..key.clone()
        };
        if r.latency_note.as_deref() == Some(PACKAGING_NOTE) {
            packaged.insert(key.clone());
            packaged.insert(pooled_key.clone());
        }
        families
            .entry((r.model_id.clone(), r.backend_label.clone(), r.mode))
            .or_default()
            .insert(r.family.name());
        per_suite.entry(key).or_default().push(r.indicator());
        pooled.entry(pooled_key).or_default().push(r.indicator());
    }
    // pooling only adds information when several families were run
    pooled.retain(|k, _| families[&(k.model_id.clone(), k.backend.clone(), k.mode)].len() > 1);

    let mut aggregates = Vec::new();
    let mut class_total = 0;
    let mut records_scored = 0;
    for (group, is_suite) in [(&per_suite, true), (&pooled, false)] {
        for (key, indicators) in group {
            match aggregate_with_intervals(key.clone(), indicators, &options.bootstrap) {
                Ok(a) => {
                    if is_suite {
                        records_scored += a.n + a.generation_failed;
                        class_total += a.class_counts.values().sum::<u64>();
                    }
                    if a.generation_failed > 0 {
                        warnings.push(format!(
                            "{} / {} / {} / {}: {} generation failures excluded from denominators",
                            key.model_id, key.backend, key.suite, key.mode, a.generation_failed
                        ));
                    }
                    aggregates.push(a);
                }
                Err(Error::Empty(_)) => {
                    if is_suite {
                        records_scored += indicators.len() as u64;
                        class_total += indicators.len() as u64;
                    }
                    warnings.push(format!(
                        "{} / {} / {} / {}: no scored records; row omitted",
                        key.model_id, key.backend, key.suite, key.mode
                    ));
                }
                Err(e) => return Err(e),
            }
        }
    }

    let mut comparisons = Vec::new();
    let mut suites: BTreeMap<(String, String, String), BTreeSet<OutputMode>> = BTreeMap::new();
    for key in per_suite.keys().chain(pooled.keys()) {
        suites
            .entry((key.model_id.clone(), key.backend.clone(), key.suite.clone()))
            .or_default()
            .insert(key.mode);
    }
    for ((model_id, backend, suite), modes) in &suites {
        let specs = if options.comparisons.is_empty() {
            default_comparisons(modes)
        } else {
            options.comparisons.clone()
        };
        for spec in specs {
            if !(modes.contains(&spec.baseline) && modes.contains(&spec.constrained)) {
                continue;
            }
            let key = |mode| AggregateKey {
                model_id: model_id.clone(),
                backend: backend.clone(),
                suite: suite.clone(),
                mode,
            };
            let (kb, kc) = (key(spec.baseline), key(spec.constrained));
            let group = if suite == POOLED_SUITE { &pooled } else { &per_suite };
            match paired_comparison((&kb, &group[&kb]), (&kc, &group[&kc]), options.pairing, &options.bootstrap) {
                Ok(c) => comparisons.push(c),
                Err(e @ (Error::Pairing(_) | Error::Empty(_))) => {
                    warnings.push(format!("{model_id} / {backend} / {suite}: comparison skipped: {e}"))
                }
                Err(e) => return Err(e),
            }
        }
    }

    for w in &warnings {
        warn!("{w}");
    }
    Ok(ScoreSummary {
        aggregates,
        comparisons,
        packaged: packaged.into_iter().collect(),
        warnings,
        records_in: finals.len() as u64,
        records_scored,
        class_total,
    })
}

/// Score record files and write `aggregates.csv`, `comparisons.csv` and
/// `summary.json` into `out_dir`.
pub fn score(paths: &[PathBuf], options: &ScoreOptions, out_dir: &Path) -> Result<ScoreSummary> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_records(p)?);
    }
    let summary = score_records(&records, options)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: String| {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write(AGGREGATES_FILE, aggregates_csv(&summary.aggregates)?)?;
    write(COMPARISONS_FILE, comparisons_csv(&summary.comparisons)?)?;
    write(SUMMARY_FILE, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
