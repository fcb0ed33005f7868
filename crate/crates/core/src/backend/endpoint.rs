//! OpenAI-compatible chat-completions client.

use std::collections::BTreeMap;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde_json::{json, Map, Value};

use super::{BackendConfig, GenerationResult, TransportPreset, TransportRule};
use crate::error::{Error, Result};
use crate::modes::{ConstraintKind, PromptBundle};

pub fn preset_rules(preset: TransportPreset) -> BTreeMap<ConstraintKind, TransportRule> {
    let response_format = || TransportRule {
        path: "response_format.json_schema.schema".into(),
        fixed: BTreeMap::from([
            ("response_format.type".to_string(), json!("json_schema")),
            ("response_format.json_schema.name".to_string(), json!("output")),
            ("response_format.json_schema.strict".to_string(), json!(true)),
        ]),
    };
    let at = |path: &str| TransportRule {
        path: path.into(),
        fixed: BTreeMap::new(),
    };
    match preset {
        TransportPreset::Openai => BTreeMap::from([(ConstraintKind::Schema, response_format())]),
        TransportPreset::Vllm => BTreeMap::from([
            (ConstraintKind::Schema, at("guided_json")),
            (ConstraintKind::Regex, at("guided_regex")),
        ]),
        TransportPreset::Sglang => BTreeMap::from([
            (ConstraintKind::Schema, response_format()),
            (ConstraintKind::Regex, at("regex")),
        ]),
    }
}

/// Write `value` at a dotted path, creating intermediate objects.
fn set_path(body: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cursor = body;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(Error::Config(format!("empty segment in transport path {path:?}")));
        }
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("transport path {path:?} crosses a non-object")))?;
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// The chat-completions request for a bundle, with its constraint placed per
/// the backend's transport mapping.
pub fn build_request_body(config: &BackendConfig, bundle: &PromptBundle) -> Result<Value> {
    let mut body = json!({
        "model": config.model_id,
        "messages": [{"role": "user", "content": bundle.user_text}],
        "temperature": config.sampling.temperature,
        "max_tokens": config.sampling.max_tokens_for(bundle.mode),
    });
    if let Some(seed) = config.sampling.request_seed {
        body["seed"] = json!(seed);
    }
    let constraint = &bundle.constraint;
    let artifact = match constraint.kind {
        ConstraintKind::None => return Ok(body),
        ConstraintKind::Regex => constraint.pattern.clone().map(Value::String),
        ConstraintKind::Schema => match &constraint.schema {
            Some(doc) => Some(serde_json::to_value(doc.document())?),
            None => None,
        },
    }
    .ok_or_else(|| Error::Internal(format!("{} constraint without its artifact", constraint.kind.name())))?;
    let rules = config.constraint_transport.as_ref().map(|t| t.rules()).unwrap_or_default();
    let rule = rules
        .get(&constraint.kind)
        .ok_or_else(|| Error::Config(format!("no transport mapping for {} constraints", constraint.kind.name())))?;
    for (path, value) in &rule.fixed {
        set_path(&mut body, path, value.clone())?;
    }
    set_path(&mut body, &rule.path, artifact)?;
    Ok(body)
}

fn agent(timeout_ms: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn trim_base(url: &str) -> &str {
    url.trim_end_matches('/')
}

/// `GET <base>/v1/models`; any 2xx counts as healthy.
pub fn health_check(config: &BackendConfig) -> Result<()> {
    let base = config
        .base_url
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{}: no base_url", config.label)))?;
    let url = format!("{}/v1/models", trim_base(base));
    match agent(config.timeout_ms).get(&url).call() {
        Ok(resp) if resp.status().is_success() => Ok(()),
        Ok(resp) => Err(Error::Transport(format!("{url}: HTTP {}", resp.status().as_u16()))),
        Err(e) => Err(Error::Transport(format!("{url}: {e}"))),
    }
}

struct Completion {
    text: String,
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

pub(super) struct Client<'a> {
    config: &'a BackendConfig,
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
}

impl<'a> Client<'a> {
    pub(super) fn new(config: &'a BackendConfig) -> Result<Client<'a>> {
        let base = config
            .base_url
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{}: no base_url", config.label)))?;
        Ok(Client {
            config,
            agent: agent(config.timeout_ms),
            url: format!("{}/v1/chat/completions", trim_base(base)),
            token: std::env::var(&config.api_key_env).ok().filter(|t| !t.is_empty()),
        })
    }

    fn attempt(&self, body: &str) -> Result<Completion> {
        let mut req = self.agent.post(&self.url).header("content-type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| Error::Transport(format!("{}: {e}", self.url)))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(format!("{}: reading body: {e}", self.url)))?;
        if !(200..300).contains(&status) {
            return Err(Error::Transport(format!("{}: HTTP {status}", self.url)));
        }
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Transport(format!("{}: response is not JSON: {e}", self.url)))?;
        let content = parsed
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Transport(format!("{}: response has no choices[0].message.content", self.url)))?;
        let usage = |k: &str| parsed.pointer(&format!("/usage/{k}")).and_then(Value::as_u64);
        Ok(Completion {
            text: content.to_string(),
            prompt_tokens: usage("prompt_tokens"),
            completion_tokens: usage("completion_tokens"),
        })
    }

    /// Retries transport failures only; any well-formed completion is
    /// returned as is, whatever it says.
    pub(super) fn generate(&self, bundle: &PromptBundle) -> GenerationResult {
        let mut result = GenerationResult {
            instance_id: bundle.instance_id.clone(),
            stage: bundle.stage,
            raw_text: String::new(),
            latency_ms: 0.0,
            prompt_tokens: None,
            completion_tokens: None,
            backend_label: self.config.label.clone(),
            attempts: 0,
            error: None,
        };
        let body = match build_request_body(self.config, bundle).and_then(|b| Ok(serde_json::to_string(&b)?)) {
            Ok(b) => b,
            Err(e) => {
                result.error = Some(e.to_string());
                return result;
            }
        };
        let max_attempts = self.config.max_retries + 1;
        for attempt in 1..=max_attempts {
            result.attempts = attempt;
            let started = Instant::now();
            match self.attempt(&body) {
                Ok(c) => {
                    result.latency_ms = started.elapsed().as_secs_f64() * 1000.0;
                    result.raw_text = c.text;
                    result.prompt_tokens = c.prompt_tokens;
                    result.completion_tokens = c.completion_tokens;
                    result.error = None;
                    debug!("{} {:?}: ok after {attempt} attempt(s)", bundle.instance_id, bundle.stage);
                    return result;
                }
                Err(e) => {
                    warn!("{} attempt {attempt}/{max_attempts}: {e}", bundle.instance_id);
                    result.error = Some(e.to_string());
                    if attempt < max_attempts {
                        thread::sleep(Duration::from_millis(self.config.retry_backoff_ms * u64::from(attempt)));
                    }
                }
            }
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::TransportSpec;
    use crate::modes::{build_prompt, OutputMode};
    use crate::taskgen::{generate_instance, Family, RngSeed};
    use crate::validate::{JsonValue, SchemaDoc};

    #[test]
    fn schema_goes_under_response_format() {
        let inst = generate_instance(Family::ToolCallArgument, 0, RngSeed(1)).unwrap();
        let bundle = build_prompt(&inst, OutputMode::AnswerOnlySchema).into_first();
        let cfg = BackendConfig::endpoint("e", "qwen", "http://x/", TransportSpec::Preset(TransportPreset::Openai));
        let body = build_request_body(&cfg, &bundle).unwrap();
        assert_eq!(body["response_format"]["type"], "json_schema");
        let sent = SchemaDoc::new(JsonValue::from(body["response_format"]["json_schema"]["schema"].clone())).unwrap();
        assert_eq!(sent.canonical(), bundle.constraint.schema.unwrap().canonical());
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 512);
        assert!(body.get("seed").is_none());
    }

    #[test]
    fn vllm_regex_field() {
        let inst = generate_instance(Family::BooleanLogic, 0, RngSeed(1)).unwrap();
        let bundle = build_prompt(&inst, OutputMode::FinalOnlyRegex).into_first();
        let mut cfg = BackendConfig::endpoint("e", "m", "http://x", TransportSpec::Preset(TransportPreset::Vllm));
        cfg.sampling.request_seed = Some(7);
        let body = build_request_body(&cfg, &bundle).unwrap();
        assert_eq!(body["guided_regex"], "^(true|false)$");
        assert_eq!(body["seed"], 7);
    }

    #[test]
    fn freeform_gets_larger_budget_and_no_constraint() {
        let inst = generate_instance(Family::BooleanLogic, 0, RngSeed(1)).unwrap();
        let bundle = build_prompt(&inst, OutputMode::Freeform).into_first();
        let cfg = BackendConfig::endpoint("e", "m", "http://x", TransportSpec::Preset(TransportPreset::Vllm));
        let body = build_request_body(&cfg, &bundle).unwrap();
        assert_eq!(body["max_tokens"], 1024);
        assert_eq!(body.as_object().unwrap().len(), 4);
    }

    #[test]
    fn dotted_paths() {
        let mut v = json!({"a": 1});
        set_path(&mut v, "x.y.z", json!(2)).unwrap();
        assert_eq!(v, json!({"a": 1, "x": {"y": {"z": 2}}}));
        assert!(set_path(&mut v, "a.b", json!(3)).is_err());
        assert!(set_path(&mut v, "x..z", json!(3)).is_err());
    }
}
