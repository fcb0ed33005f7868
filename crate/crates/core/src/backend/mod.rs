//! Generation backends: an OpenAI-compatible chat-completions client and two
//! scripted local doubles (oracle and corruptor).

mod endpoint;
mod scripted;
pub mod stub;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::{ConstraintKind, OutputMode, PromptBundle, Stage};
use crate::taskgen::TaskInstance;

pub use endpoint::{build_request_body, health_check, preset_rules};
pub use scripted::{corrupt_generate, corrupt_generate_stage, oracle_generate, oracle_generate_stage, FaultProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Endpoint,
    Oracle,
    Corruptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Token budget for the verbose freeform mode.
    pub freeform_max_tokens: u32,
    pub request_seed: Option<i64>,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 0.0,
            max_tokens: 512,
            freeform_max_tokens: 1024,
            request_seed: None,
        }
    }
}

impl Sampling {
    pub fn max_tokens_for(&self, mode: OutputMode) -> u32 {
        if mode == OutputMode::Freeform {
            self.freeform_max_tokens
        } else {
            self.max_tokens
        }
    }
}

/// Where a constraint artifact goes in the request body: the artifact is
/// written at `path` (dotted), and every `fixed` entry is written verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportRule {
    pub path: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fixed: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportPreset {
    /// `response_format` JSON schema; no regex support.
    Openai,
    /// `guided_json` / `guided_regex` extension fields.
    Vllm,
    /// `response_format` JSON schema plus top-level `regex`.
    Sglang,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransportSpec {
    Preset(TransportPreset),
    Rules(BTreeMap<ConstraintKind, TransportRule>),
}

impl TransportSpec {
    pub fn rules(&self) -> BTreeMap<ConstraintKind, TransportRule> {
        match self {
            TransportSpec::Preset(p) => preset_rules(*p),
            TransportSpec::Rules(r) => r.clone(),
        }
    }
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_in_flight() -> usize {
    4
}

fn default_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_api_key_env() -> String {
    "CTAX_API_KEY".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Distinguishes backends serving the same model in records/reports.
    pub label: String,
    pub kind: BackendKind,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_transport: Option<TransportSpec>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    /// Environment variable holding the bearer token, if any.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Fault injection for the corruptor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultProfile>,
}

impl BackendConfig {
    pub fn scripted(label: &str, kind: BackendKind) -> BackendConfig {
        BackendConfig {
            label: label.to_string(),
            kind,
            model_id: label.to_string(),
            base_url: None,
            sampling: Sampling::default(),
            constraint_transport: None,
            timeout_ms: default_timeout_ms(),
            max_in_flight: 1,
            max_retries: default_retries(),
            retry_backoff_ms: default_backoff_ms(),
            api_key_env: default_api_key_env(),
            fault: None,
        }
    }

    pub fn endpoint(label: &str, model_id: &str, base_url: &str, transport: TransportSpec) -> BackendConfig {
        BackendConfig {
            kind: BackendKind::Endpoint,
            model_id: model_id.to_string(),
            base_url: Some(base_url.to_string()),
            constraint_transport: Some(transport),
            max_in_flight: default_max_in_flight(),
            ..BackendConfig::scripted(label, BackendKind::Endpoint)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty() {
            return Err(Error::Config("backend label must not be empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config(format!("{}: max_in_flight must be positive", self.label)));
        }
        if !(self.sampling.temperature >= 0.0) {
            return Err(Error::Config(format!("{}: temperature must be >= 0", self.label)));
        }
        if self.sampling.max_tokens == 0 || self.sampling.freeform_max_tokens == 0 {
            return Err(Error::Config(format!("{}: max_tokens must be positive", self.label)));
        }
        match self.kind {
            BackendKind::Endpoint => {
                if self.base_url.as_deref().is_none_or(str::is_empty) {
                    return Err(Error::Config(format!("{}: endpoint backends need base_url", self.label)));
                }
                if self.constraint_transport.is_none() {
                    return Err(Error::Config(format!(
                        "{}: endpoint backends need constraint_transport",
                        self.label
                    )));
                }
            }
            BackendKind::Corruptor => self.fault.clone().unwrap_or_default().validate()?,
            BackendKind::Oracle => {}
        }
        Ok(())
    }

    /// Fail before dispatch if a constraint kind has nowhere to go.
    pub fn check_transport(&self, kinds: impl IntoIterator<Item = ConstraintKind>) -> Result<()> {
        if self.kind != BackendKind::Endpoint {
            return Ok(());
        }
        let rules = self.constraint_transport.as_ref().map(TransportSpec::rules).unwrap_or_default();
        for kind in kinds {
            if kind != ConstraintKind::None && !rules.contains_key(&kind) {
                return Err(Error::Config(format!(
                    "{}: no transport mapping for {} constraints",
                    self.label,
                    kind.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub instance_id: String,
    pub stage: Stage,
    /// The completion exactly as returned.
    pub raw_text: String,
    pub latency_ms: f64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub backend_label: String,
    pub attempts: u32,
    /// Set when every attempt failed; `raw_text` is then empty.
    pub error: Option<String>,
}

impl GenerationResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// One bundle to generate, with the instance it was built from (scripted
/// backends answer from its ground truth).
#[derive(Debug, Clone, Copy)]
pub struct Job<'a> {
    pub bundle: &'a PromptBundle,
    pub instance: &'a TaskInstance,
}

fn scripted_result(config: &BackendConfig, job: Job<'_>) -> GenerationResult {
    let Job { bundle, instance } = job;
    let raw_text = match config.kind {
        BackendKind::Corruptor => {
            let fault = config.fault.clone().unwrap_or_default();
            corrupt_generate_stage(instance, bundle.mode, bundle.stage, &fault)
        }
        _ => oracle_generate_stage(instance, bundle.mode, bundle.stage),
    };
    GenerationResult {
        instance_id: bundle.instance_id.clone(),
        stage: bundle.stage,
        raw_text,
        // no request is made, so there is nothing to time
        latency_ms: 0.0,
        prompt_tokens: None,
        completion_tokens: None,
        backend_label: config.label.clone(),
        attempts: 1,
        error: None,
    }
}

/// Generate one result per job, in job order. Endpoint requests run on up
/// to `max_in_flight` worker threads; scripted backends run inline.
pub fn generate_batch(config: &BackendConfig, jobs: &[Job<'_>]) -> Result<Vec<GenerationResult>> {
    config.validate()?;
    config.check_transport(jobs.iter().map(|j| j.bundle.constraint.kind))?;
    if config.kind != BackendKind::Endpoint {
        return Ok(jobs.iter().map(|&j| scripted_result(config, j)).collect());
    }
    let client = endpoint::Client::new(config)?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<GenerationResult>>> = Mutex::new(vec![None; jobs.len()]);
    let workers = config.max_in_flight.min(jobs.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let result = client.generate(job.bundle);
                slots.lock().expect("result lock")[i] = Some(result);
            });
        }
    });
    let results = slots.into_inner().expect("result lock");
    Ok(results.into_iter().map(|r| r.expect("every job produces a result")).collect())
}

pub fn generate(config: &BackendConfig, bundle: &PromptBundle, instance: &TaskInstance) -> Result<GenerationResult> {
    let mut out = generate_batch(config, &[Job { bundle, instance }])?;
    Ok(out.remove(0))
}
