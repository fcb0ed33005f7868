//! Delayed packaging derived from existing first-stage records: no model
//! call, only extraction, schema validation and canonical re-serialization.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime};

use crate::checkers::CheckOptions;
use crate::error::{Error, Result};
use crate::modes::{answer_schema, package_answer, package_object, Constraint, OutputMode, PromptBundle, Stage};
use crate::taskgen::TaskInstance;

use super::record::{read_records, write_records, RecordContext, RunRecord};
use super::{packaged_record, read_tasks};

fn derivable(mode: OutputMode) -> bool {
    mode == OutputMode::PromptJson || mode.is_freeform()
}

/// One delayed-constraint record per source record, same ids, same order.
/// Sources must be prompt-json or freeform single-stage records.
pub fn derive_delayed(records: &[RunRecord], instances: &[TaskInstance]) -> Result<Vec<RunRecord>> {
    if let Some(bad) = records.iter().find(|r| !derivable(r.mode) || r.stage != Stage::Single) {
        return Err(Error::Config(format!(
            "derive-delayed takes prompt_json or freeform records; {} is a `{}` {:?} record",
            bad.instance_id, bad.mode, bad.stage
        )));
    }
    let by_id: BTreeMap<&str, &TaskInstance> = instances.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut out = Vec::with_capacity(records.len());
    for source in records {
        let instance = by_id
            .get(source.instance_id.as_str())
            .ok_or_else(|| Error::Config(format!("no task instance for record {}", source.instance_id)))?;
        let bundle = PromptBundle {
            instance_id: source.instance_id.clone(),
            mode: OutputMode::DelayedConstraint,
            stage: Stage::Stage2,
            user_text: source.prompt.clone(),
            constraint: Constraint::schema(answer_schema(instance.family)),
        };
        let ctx = RecordContext {
            instance,
            model_id: &source.model_id,
            run_digest: &source.run_digest,
            mode: OutputMode::DelayedConstraint,
            bundle: &bundle,
            options: CheckOptions {
                extraction: source.extraction,
                strict_trace: false,
            },
            started_at: SystemTime::now(),
        };
        let mut derived = if source.generation_error.is_some() {
            let mut failed = source.clone();
            failed.mode = OutputMode::DelayedConstraint;
            failed.stage = Stage::Stage2;
            failed
        } else {
            let clock = Instant::now();
            let packaged = if source.mode == OutputMode::PromptJson {
                package_object(&source.raw_text, instance, source.extraction)
            } else {
                package_answer(&source.raw_text, instance)
            };
            packaged_record(&ctx, source, packaged, clock.elapsed().as_secs_f64() * 1000.0)
        };
        derived.source_mode = Some(source.mode);
        derived.constraint = (&bundle.constraint).into();
        out.push(derived);
    }
    Ok(out)
}

/// File form of [`derive_delayed`]; returns the number of records written.
pub fn derive_delayed_file(records: &Path, tasks: &Path, out: &Path) -> Result<usize> {
    let source = read_records(records)?;
    let instances = read_tasks(tasks)?;
    let derived = derive_delayed(&source, &instances)?;
    write_records(out, &derived)?;
    Ok(derived.len())
}
