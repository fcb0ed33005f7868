//! Runs suites × modes × backends into JSONL records, derives the
//! delayed-packaging control, and scores and reports record files.
//!
//! A run directory holds `tasks.jsonl`, `records.jsonl` and
//! `manifest.json`; scoring adds `aggregates.csv`, `comparisons.csv` and
//! `summary.json`, and reporting renders `report.md`.

mod derive;
mod record;
mod report;
mod score;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{generate_batch, BackendConfig, GenerationResult, Job};
use crate::checkers::CheckOptions;
use crate::error::{Error, Result};
use crate::metrics::{BootstrapConfig, PairingOptions};
use crate::modes::{
    build_delayed_stage2, build_prompt, template_digest, template_version, ConstraintKind, DelayedVariant,
    OutputMode, PackagingFailure, PromptBundle, PromptPlan, Stage, Stage2Plan,
};
use crate::taskgen::{generate_suite, Family, RngSeed, TaskInstance};
use crate::validate::Strictness;

pub use derive::{derive_delayed, derive_delayed_file};
pub use record::{
    canonical_diff, canonical_jsonl, canonical_line, read_records, write_records, RecordConstraint, RecordKey,
    RunRecord, EXTRACTION_VERSION, PACKAGING_NOTE, VOLATILE_FIELDS,
};
pub use report::{render_report, report};
pub use score::{default_comparisons, score, score_records, ScoreOptions, ScoreSummary};

use record::{recover_records, RecordContext, RecordWriter};

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Jobs generated and flushed together; bounds the work lost to a kill.
const BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub families: Vec<Family>,
    /// Instances per family.
    pub count: usize,
    #[serde(default)]
    pub seed: RngSeed,
}

impl SuiteSpec {
    pub fn instances(&self) -> Result<Vec<TaskInstance>> {
        let mut out = Vec::new();
        for &family in &self.families {
            out.extend(generate_suite(family, self.count, self.seed)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonSpec {
    pub baseline: OutputMode,
    pub constrained: OutputMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub suite: SuiteSpec,
    pub modes: Vec<OutputMode>,
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub pairing: PairingOptions,
    /// Pairings to score; empty means every mode against the prompt-only
    /// baseline.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<ComparisonSpec>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub extraction: Strictness,
    #[serde(default)]
    pub strict_trace: bool,
    #[serde(default)]
    pub delayed_variant: DelayedVariant,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unique<T: Ord + Copy + std::fmt::Debug>(what: &str, items: &[T]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(*item) {
            return Err(Error::Config(format!("{what} listed twice: {item:?}")));
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// Everything except the output directory, which may be moved freely.
    pub fn digest(&self) -> String {
        let mut clean = self.clone();
        clean.output_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&clean).expect("config serializes").as_bytes())
    }

    pub fn check_options(&self) -> CheckOptions {
        CheckOptions {
            extraction: self.extraction,
            strict_trace: self.strict_trace,
        }
    }

    pub fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            bootstrap: self.bootstrap,
            pairing: self.pairing,
            comparisons: self.comparisons.clone(),
        }
    }

    /// Static checks; the output directory is checked by `run`.
    pub fn validate(&self) -> Result<()> {
        if self.suite.families.is_empty() {
            return Err(Error::Config("suite.families is empty".into()));
        }
        unique("family", &self.suite.families)?;
        if self.suite.count == 0 {
            return Err(Error::Config("suite.count must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("modes is empty".into()));
        }
        unique("mode", &self.modes)?;
        if self.backends.is_empty() {
            return Err(Error::Config("backends is empty".into()));
        }
        let mut labels = BTreeSet::new();
        let mut kinds: BTreeSet<ConstraintKind> = self.modes.iter().map(|m| m.constraint_kind()).collect();
        if self.modes.contains(&OutputMode::DelayedConstraint) && self.delayed_variant == DelayedVariant::Model {
            kinds.insert(ConstraintKind::Schema);
        }
        for b in &self.backends {
            if !labels.insert(b.label.as_str()) {
                return Err(Error::Config(format!("backend label `{}` used twice", b.label)));
            }
            b.validate()?;
            b.check_transport(kinds.iter().copied())?;
        }
        for c in &self.comparisons {
            for m in [c.baseline, c.constrained] {
                if !self.modes.contains(&m) {
                    return Err(Error::Config(format!("comparison references mode `{m}` that is not run")));
                }
            }
            if c.baseline == c.constrained {
                return Err(Error::Config(format!("comparison of `{}` with itself", c.baseline)));
            }
        }
        if !(self.pairing.epsilon > 0.0) {
            return Err(Error::Config("pairing.epsilon must be positive".into()));
        }
        if self.bootstrap.resamples == 0 || !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) {
            return Err(Error::Config("bootstrap needs resamples > 0 and 0 < level < 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub config: RunConfig,
    pub suite_seed: RngSeed,
    pub bootstrap_seed: u64,
    pub crate_version: String,
    pub template_version: String,
    pub template_digest: String,
    pub extraction_version: String,
    pub created_at: String,
}

impl Manifest {
    fn new(config: &RunConfig) -> Manifest {
        Manifest {
            config_digest: config.digest(),
            config: config.clone(),
            suite_seed: config.suite.seed,
            bootstrap_seed: config.bootstrap.seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            template_version: template_version().to_string(),
            template_digest: template_digest(),
            extraction_version: EXTRACTION_VERSION.to_string(),
            created_at: record::timestamp(SystemTime::now()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Keep existing records and generate only the missing ones.
    pub resume: bool,
    /// Stop after this many new records (simulates an interrupted run).
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records_path: PathBuf,
    pub tasks_path: PathBuf,
    pub manifest_path: PathBuf,
    pub written: usize,
    pub skipped: usize,
    pub generation_failed: usize,
}

pub fn write_tasks(path: &Path, instances: &[TaskInstance]) -> Result<()> {
    let mut text = String::new();
    for i in instances {
        text.push_str(&serde_json::to_string(i)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_tasks(path: &Path) -> Result<Vec<TaskInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn check_manifest(path: &Path, config: &RunConfig, resume: bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let previous: Manifest = serde_json::from_str(&text)?;
    if resume && previous.config_digest != config.digest() {
        return Err(Error::Config(format!(
            "{} was produced by a different configuration (digest {}); refusing to mix records",
            path.display(),
            previous.config_digest
        )));
    }
    Ok(())
}

/// Execute a run. Records already present are kept when resuming; every
/// missing (backend, mode, instance) gets exactly one final record.
pub fn run(config: &RunConfig, options: RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let dir = &config.output_dir;
    ensure_writable(dir)?;
    let records_path = dir.join(RECORDS_FILE);
    let manifest_path = dir.join(MANIFEST_FILE);
    let tasks_path = dir.join(TASKS_FILE);

    let existing = if options.resume {
        recover_records(&records_path)?
    } else {
        if fs::metadata(&records_path).is_ok_and(|m| m.len() > 0) {
            return Err(Error::Config(format!(
                "{} already has records; resume the run or choose another output directory",
                records_path.display()
            )));
        }
        fs::write(&records_path, "").map_err(|e| Error::io(&records_path, e))?;
        Vec::new()
    };
    check_manifest(&manifest_path, config, options.resume)?;
    let manifest = Manifest::new(config);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::io(&manifest_path, e))?;

    let instances = config.suite.instances()?;
    write_tasks(&tasks_path, &instances)?;

    let mut runner = Runner {
        config,
        digest: manifest.config_digest.clone(),
        writer: RecordWriter::open(&records_path, &existing)?,
        stage1: existing
            .iter()
            .filter(|r| r.stage == Stage::Stage1)
            .map(|r| (r.key(), r.clone()))
            .collect(),
        budget: options.limit,
        written: 0,
        failed: 0,
    };
    let mut skipped = 0;
    for backend in &config.backends {
        for &mode in &config.modes {
            let todo: Vec<&TaskInstance> = instances
                .iter()
                .filter(|i| {
                    let done = runner.writer.contains(&runner.final_key(backend, mode, i));
                    skipped += usize::from(done);
                    !done
                })
                .collect();
            for chunk in todo.chunks(BATCH) {
                if runner.exhausted() {
                    break;
                }
                runner.run_chunk(backend, mode, chunk)?;
            }
        }
    }
    info!(
        "{}: {} new records, {} already present, {} generation failures",
        records_path.display(),
        runner.written,
        skipped,
        runner.failed
    );
    Ok(RunOutcome {
        records_path,
        tasks_path,
        manifest_path,
        written: runner.written,
        skipped,
        generation_failed: runner.failed,
    })
}

struct Runner<'a> {
    config: &'a RunConfig,
    digest: String,
    writer: RecordWriter,
    stage1: BTreeMap<RecordKey, RunRecord>,
    budget: Option<usize>,
    written: usize,
    failed: usize,
}

impl Runner<'_> {
    fn exhausted(&self) -> bool {
        self.budget.is_some_and(|b| self.written >= b)
    }

    fn final_stage(mode: OutputMode) -> Stage {
        if mode == OutputMode::DelayedConstraint {
            Stage::Stage2
        } else {
            Stage::Single
        }
    }

    fn key(backend: &BackendConfig, mode: OutputMode, instance: &TaskInstance, stage: Stage) -> RecordKey {
        RecordKey {
            backend_label: backend.label.clone(),
            model_id: backend.model_id.clone(),
            mode,
            instance_id: instance.id.clone(),
            stage,
        }
    }

    fn final_key(&self, backend: &BackendConfig, mode: OutputMode, instance: &TaskInstance) -> RecordKey {
        Self::key(backend, mode, instance, Self::final_stage(mode))
    }

    fn context<'c>(
        &'c self,
        backend: &'c BackendConfig,
        mode: OutputMode,
        instance: &'c TaskInstance,
        bundle: &'c PromptBundle,
        started_at: SystemTime,
    ) -> RecordContext<'c> {
        RecordContext {
            instance,
            model_id: &backend.model_id,
            run_digest: &self.digest,
            mode,
            bundle,
            options: self.config.check_options(),
            started_at,
        }
    }

    fn emit(&mut self, mut records: Vec<RunRecord>) -> Result<()> {
        if let Some(b) = self.budget {
            let finals = records.iter().filter(|r| r.is_final()).count();
            let room = b.saturating_sub(self.written);
            if finals > room {
                // cut just before the first final record over budget; a
                // dangling first stage is reused on resume
                let mut seen = 0;
                let cut = records
                    .iter()
                    .position(|r| {
                        seen += usize::from(r.is_final());
                        seen > room
                    })
                    .unwrap_or(records.len());
                records.truncate(cut);
            }
        }
        self.written += records.iter().filter(|r| r.is_final()).count();
        self.failed += records
            .iter()
            .filter(|r| r.is_final() && r.generation_error.is_some())
            .count();
        self.writer.append(&records)
    }

    fn run_chunk(&mut self, backend: &BackendConfig, mode: OutputMode, chunk: &[&TaskInstance]) -> Result<()> {
        let plans: Vec<PromptPlan> = chunk.iter().map(|i| build_prompt(i, mode)).collect();
        if mode != OutputMode::DelayedConstraint {
            let started = SystemTime::now();
            let jobs: Vec<Job> = chunk
                .iter()
                .zip(&plans)
                .map(|(i, p)| Job {
                    bundle: p.first(),
                    instance: i,
                })
                .collect();
            let results = generate_batch(backend, &jobs)?;
            let records = jobs
                .iter()
                .zip(&results)
                .map(|(job, g)| RunRecord::build(&self.context(backend, mode, job.instance, job.bundle, started), g, mode))
                .collect();
            return self.emit(records);
        }
        self.run_delayed_chunk(backend, chunk, &plans)
    }

    /// First stages (reused when a resumed run already has them), then
    /// packaging or a second constrained request.
    fn run_delayed_chunk(&mut self, backend: &BackendConfig, chunk: &[&TaskInstance], plans: &[PromptPlan]) -> Result<()> {
        let mode = OutputMode::DelayedConstraint;
        let started = SystemTime::now();
        let model_variant = self.config.delayed_variant == DelayedVariant::Model;
        let mut stage1: Vec<Option<RunRecord>> = chunk
            .iter()
            .map(|i| self.stage1.get(&Self::key(backend, mode, i, Stage::Stage1)).cloned())
            .collect();
        let missing: Vec<usize> = (0..chunk.len()).filter(|&k| stage1[k].is_none()).collect();
        let jobs: Vec<Job> = missing
            .iter()
            .map(|&k| Job {
                bundle: plans[k].first(),
                instance: chunk[k],
            })
            .collect();
        let results = generate_batch(backend, &jobs)?;
        let mut fresh_stage1 = Vec::new();
        for (&k, g) in missing.iter().zip(&results) {
            let ctx = self.context(backend, mode, chunk[k], plans[k].first(), started);
            // first stages are scored under the brief-reasoning contract
            let record = RunRecord::build(&ctx, g, OutputMode::FreeformBriefReasoning);
            if model_variant {
                fresh_stage1.push(record.clone());
            }
            stage1[k] = Some(record);
        }
        let stage1: Vec<RunRecord> = stage1.into_iter().map(|r| r.expect("every first stage present")).collect();

        let mut finals: Vec<Option<RunRecord>> = vec![None; chunk.len()];
        let mut second_bundles: Vec<(usize, PromptBundle)> = Vec::new();
        for (k, first) in stage1.iter().enumerate() {
            let instance = chunk[k];
            if first.generation_error.is_some() {
                let failed = GenerationResult {
                    instance_id: instance.id.clone(),
                    stage: Stage::Stage2,
                    raw_text: String::new(),
                    latency_ms: first.latency_ms,
                    prompt_tokens: None,
                    completion_tokens: None,
                    backend_label: backend.label.clone(),
                    // the model variant writes its first stage separately;
                    // otherwise this record is the only trace of the attempts
                    attempts: if model_variant { 0 } else { first.attempts },
                    error: first.generation_error.clone(),
                };
                let ctx = self.context(backend, mode, instance, plans[k].first(), started);
                finals[k] = Some(RunRecord::build(&ctx, &failed, mode));
                continue;
            }
            let clock = Instant::now();
            match build_delayed_stage2(&first.raw_text, instance, self.config.delayed_variant) {
                Stage2Plan::Packaged(packaged) => {
                    let packaging_ms = clock.elapsed().as_secs_f64() * 1000.0;
                    let PromptPlan::Delayed { stage1: bundle, target } = &plans[k] else {
                        return Err(Error::Internal("delayed mode without a delayed plan".into()));
                    };
                    let mut bundle = bundle.clone();
                    bundle.constraint = target.clone();
                    let record = packaged_record(
                        &self.context(backend, mode, instance, &bundle, started),
                        first,
                        packaged,
                        packaging_ms,
                    );
                    finals[k] = Some(record);
                }
                Stage2Plan::Prompt(bundle) => second_bundles.push((k, bundle)),
            }
        }
        if !second_bundles.is_empty() {
            let jobs: Vec<Job> = second_bundles
                .iter()
                .map(|(k, b)| Job {
                    bundle: b,
                    instance: chunk[*k],
                })
                .collect();
            let results = generate_batch(backend, &jobs)?;
            for ((k, bundle), g) in second_bundles.iter().zip(&results) {
                let ctx = self.context(backend, mode, chunk[*k], bundle, started);
                let mut record = RunRecord::build(&ctx, g, mode);
                record.stage1_raw_text = Some(stage1[*k].raw_text.clone());
                finals[*k] = Some(record);
            }
        }
        let mut out = Vec::new();
        for (k, f) in finals.into_iter().enumerate() {
            if let Some(first) = fresh_stage1.iter().find(|r| r.instance_id == chunk[k].id) {
                out.push(first.clone());
            }
            out.push(f.expect("every instance has a final record"));
        }
        for r in &fresh_stage1 {
            self.stage1.insert(r.key(), r.clone());
        }
        self.emit(out)
    }
}

/// The second-stage record of deterministic packaging: the packaged text is
/// scored as the completion, latency is the first stage's.
pub(crate) fn packaged_record(
    ctx: &RecordContext<'_>,
    first: &RunRecord,
    packaged: std::result::Result<String, PackagingFailure>,
    packaging_ms: f64,
) -> RunRecord {
    let (text, error) = match packaged {
        Ok(text) => (text, None),
        Err(e) => {
            let text = match &e {
                PackagingFailure::SchemaViolation { object, .. } => object.clone(),
                PackagingFailure::NoAnswer => String::new(),
            };
            (text, Some(e.to_string()))
        }
    };
    let generation = GenerationResult {
        instance_id: first.instance_id.clone(),
        stage: Stage::Stage2,
        raw_text: text,
        latency_ms: first.latency_ms,
        prompt_tokens: first.prompt_tokens,
        completion_tokens: first.completion_tokens,
        backend_label: first.backend_label.clone(),
        attempts: first.attempts,
        error: None,
    };
    let mut record = RunRecord::build(ctx, &generation, OutputMode::DelayedConstraint);
    record.latency_note = Some(PACKAGING_NOTE.to_string());
    record.packaging_ms = Some(packaging_ms);
    record.packaging_error = error;
    record.stage1_raw_text = Some(first.raw_text.clone());
    record
}
