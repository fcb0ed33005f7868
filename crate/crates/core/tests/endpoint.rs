use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};

use constraint_tax::backend::stub::{chat_completion_body, StubExchange, StubFixture, StubResponse, StubServer};
use constraint_tax::backend::{
    generate, generate_batch, health_check, BackendConfig, Job, TransportPreset, TransportSpec,
};
use constraint_tax::checkers::ErrorClass;
use constraint_tax::harness::{read_records, run, RunConfig, RunOptions, SuiteSpec};
use constraint_tax::modes::{answer_regex, answer_schema, build_prompt, DelayedVariant, OutputMode, PromptBundle};
use constraint_tax::taskgen::{generate_instance, generate_suite, Family, RngSeed, TaskInstance};

fn instance(family: Family) -> TaskInstance {
    generate_instance(family, 0, RngSeed(1)).unwrap()
}

fn bundle(inst: &TaskInstance, mode: OutputMode) -> PromptBundle {
    build_prompt(inst, mode).first().clone()
}

fn endpoint(server: &StubServer, preset: TransportPreset) -> BackendConfig {
    let mut cfg = BackendConfig::endpoint("stub", "tiny-model", &server.url(), TransportSpec::Preset(preset));
    cfg.retry_backoff_ms = 1;
    cfg.timeout_ms = 5_000;
    cfg
}

#[test]
fn schema_request_matches_the_openai_wire_format() {
    let server = StubServer::start(|_| StubResponse {
        status: 200,
        body: chat_completion_body(r#"{"answer":"7"}"#, Some((41, 6))),
        delay_ms: 0,
    })
    .unwrap();
    let inst = instance(Family::ArithmeticTwoStep);
    let b = bundle(&inst, OutputMode::AnswerOnlySchema);
    let result = generate(&endpoint(&server, TransportPreset::Openai), &b, &inst).unwrap();
    assert!(!result.failed(), "{:?}", result.error);
    assert_eq!(result.raw_text, r#"{"answer":"7"}"#);
    assert_eq!((result.prompt_tokens, result.completion_tokens), (Some(41), Some(6)));
    assert_eq!(result.attempts, 1);

    let requests = server.requests();
    assert_eq!(requests.len(), 1);
    let req = &requests[0];
    assert_eq!((req.method.as_str(), req.path.as_str()), ("POST", "/v1/chat/completions"));
    assert_eq!(req.header("content-type"), Some("application/json"));
    let schema: Value = serde_json::to_value(answer_schema(Family::ArithmeticTwoStep).document()).unwrap();
    let golden = json!({
        "model": "tiny-model",
        "messages": [{"role": "user", "content": b.user_text}],
        "temperature": 0.0,
        "max_tokens": 512,
        "response_format": {
            "type": "json_schema",
            "json_schema": {"name": "output", "strict": true, "schema": schema}
        }
    });
    assert_eq!(req.json().unwrap(), golden);
}

#[test]
fn regex_and_unconstrained_requests_per_preset() {
    let server = StubServer::start(|_| StubResponse::completion("7")).unwrap();
    let inst = instance(Family::ArithmeticTwoStep);
    let pattern = answer_regex(Family::ArithmeticTwoStep);

    generate(&endpoint(&server, TransportPreset::Vllm), &bundle(&inst, OutputMode::FinalOnlyRegex), &inst).unwrap();
    generate(&endpoint(&server, TransportPreset::Sglang), &bundle(&inst, OutputMode::FinalOnlyRegex), &inst).unwrap();
    generate(&endpoint(&server, TransportPreset::Vllm), &bundle(&inst, OutputMode::Freeform), &inst).unwrap();
    let bodies: Vec<Value> = server.requests().iter().map(|r| r.json().unwrap()).collect();
    assert_eq!(bodies[0]["guided_regex"], json!(pattern));
    assert_eq!(bodies[1]["regex"], json!(pattern));
    assert!(bodies[1].get("guided_regex").is_none());
    let keys: Vec<&str> = bodies[2].as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["model", "messages", "temperature", "max_tokens"]);
    assert_eq!(bodies[2]["max_tokens"], json!(1024));
}

#[test]
fn openai_preset_refuses_regex_constraints() {
    let server = StubServer::start(|_| StubResponse::completion("7")).unwrap();
    let inst = instance(Family::ArithmeticTwoStep);
    let b = bundle(&inst, OutputMode::FinalOnlyRegex);
    assert!(generate(&endpoint(&server, TransportPreset::Openai), &b, &inst).is_err());
    assert!(server.requests().is_empty());
}

#[test]
fn bearer_token_comes_from_the_named_variable() {
    let server = StubServer::start(|_| StubResponse::completion("7")).unwrap();
    let inst = instance(Family::BooleanLogic);
    let mut cfg = endpoint(&server, TransportPreset::Vllm);
    cfg.api_key_env = "CTAX_TEST_TOKEN_ENDPOINT".into();
    std::env::set_var("CTAX_TEST_TOKEN_ENDPOINT", "s3cret");
    generate(&cfg, &bundle(&inst, OutputMode::Freeform), &inst).unwrap();
    assert_eq!(server.requests()[0].header("authorization"), Some("Bearer s3cret"));
}

#[test]
fn concurrency_is_capped_and_order_kept() {
    let server = StubServer::start(|req| {
        let body = req.json().unwrap();
        let text = body["messages"][0]["content"].as_str().unwrap().to_string();
        StubResponse {
            delay_ms: 60,
            ..StubResponse::completion(&text[..12])
        }
    })
    .unwrap();
    let instances = generate_suite(Family::SymbolicString, 12, RngSeed(3)).unwrap();
    let bundles: Vec<PromptBundle> = instances.iter().map(|i| bundle(i, OutputMode::Freeform)).collect();
    let jobs: Vec<Job> = bundles.iter().zip(&instances).map(|(bundle, instance)| Job { bundle, instance }).collect();
    let mut cfg = endpoint(&server, TransportPreset::Vllm);
    cfg.max_in_flight = 3;
    let results = generate_batch(&cfg, &jobs).unwrap();
    assert_eq!(server.requests().len(), 12);
    let peak = server.peak_in_flight();
    assert!((2..=3).contains(&peak), "peak {peak}");
    for (r, b) in results.iter().zip(&bundles) {
        assert_eq!(r.instance_id, b.instance_id);
        assert_eq!(r.raw_text, b.user_text[..12]);
        assert!(r.latency_ms >= 50.0);
    }
}

#[test]
fn transient_failures_are_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = Arc::clone(&calls);
    let server = StubServer::start(move |_| {
        if seen.fetch_add(1, Ordering::SeqCst) < 2 {
            StubResponse {
                status: 503,
                body: json!({"error": "warming up"}),
                delay_ms: 0,
            }
        } else {
            StubResponse::completion("true")
        }
    })
    .unwrap();
    let inst = instance(Family::BooleanLogic);
    let b = bundle(&inst, OutputMode::FreeformDirect);
    let mut cfg = endpoint(&server, TransportPreset::Vllm);
    cfg.max_retries = 2;
    let r = generate(&cfg, &b, &inst).unwrap();
    assert!(!r.failed());
    assert_eq!((r.attempts, r.raw_text.as_str()), (3, "true"));

    calls.store(0, Ordering::SeqCst);
    cfg.max_retries = 1;
    let r = generate(&cfg, &b, &inst).unwrap();
    assert!(r.failed());
    assert_eq!(r.attempts, 2);
    assert!(r.error.unwrap().contains("503"));
}

#[test]
fn malformed_responses_fail_generation() {
    let server = StubServer::start(|_| StubResponse {
        status: 200,
        body: json!({"choices": []}),
        delay_ms: 0,
    })
    .unwrap();
    let inst = instance(Family::BooleanLogic);
    let mut cfg = endpoint(&server, TransportPreset::Vllm);
    cfg.max_retries = 0;
    let r = generate(&cfg, &bundle(&inst, OutputMode::Freeform), &inst).unwrap();
    assert!(r.failed());
    assert!(r.error.unwrap().contains("choices"));
}

#[test]
fn fixture_server_and_health_check() {
    let fixture = StubFixture {
        exchanges: vec![StubExchange {
            path: Some("/v1/chat/completions".into()),
            request: Some(json!({"model": "tiny-model"})),
            response: StubResponse::completion("Final answer: 12"),
        }],
    };
    let server = StubServer::from_fixture(fixture).unwrap();
    let cfg = endpoint(&server, TransportPreset::Vllm);
    health_check(&cfg).unwrap();
    let inst = instance(Family::ArithmeticTwoStep);
    let r = generate(&cfg, &bundle(&inst, OutputMode::Freeform), &inst).unwrap();
    assert_eq!(r.raw_text, "Final answer: 12");

    let mut other = cfg.clone();
    other.model_id = "other".into();
    other.max_retries = 0;
    assert!(generate(&other, &bundle(&inst, OutputMode::Freeform), &inst).unwrap().failed());
}

#[test]
fn unreachable_endpoint_yields_generation_failed_records() {
    let dir = tempfile::tempdir().unwrap();
    // bind then drop to get a port nothing listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut backend = BackendConfig::endpoint("down", "m", &format!("http://127.0.0.1:{port}"), TransportSpec::Preset(TransportPreset::Vllm));
    backend.max_retries = 1;
    backend.retry_backoff_ms = 1;
    backend.timeout_ms = 2_000;
    assert!(health_check(&backend).is_err());
    let cfg = RunConfig {
        suite: SuiteSpec {
            families: vec![Family::BooleanLogic],
            count: 3,
            seed: RngSeed(1),
        },
        modes: vec![OutputMode::Freeform, OutputMode::DelayedConstraint],
        backends: vec![backend],
        bootstrap: Default::default(),
        pairing: Default::default(),
        comparisons: Vec::new(),
        output_dir: dir.path().to_path_buf(),
        extraction: Default::default(),
        strict_trace: true,
        delayed_variant: DelayedVariant::Deterministic,
    };
    let out = run(&cfg, RunOptions::default()).unwrap();
    assert_eq!(out.generation_failed, 6);
    let records = read_records(&out.records_path).unwrap();
    assert_eq!(records.len(), 6);
    assert!(records
        .iter()
        .all(|r| r.error_class == ErrorClass::GenerationFailed && r.attempts == 2 && r.generation_error.is_some()));
}

#[test]
fn endpoint_run_records_usage_and_latency() {
    let server = StubServer::start(|_| StubResponse {
        status: 200,
        body: chat_completion_body(r#"{"answer":"true"}"#, Some((30, 5))),
        delay_ms: 5,
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        suite: SuiteSpec {
            families: vec![Family::BooleanLogic],
            count: 8,
            seed: RngSeed(1),
        },
        modes: vec![OutputMode::PromptJson, OutputMode::AnswerOnlySchema],
        backends: vec![endpoint(&server, TransportPreset::Sglang)],
        bootstrap: Default::default(),
        pairing: Default::default(),
        comparisons: Vec::new(),
        output_dir: dir.path().to_path_buf(),
        extraction: Default::default(),
        strict_trace: true,
        delayed_variant: DelayedVariant::Deterministic,
    };
    let out = run(&cfg, RunOptions::default()).unwrap();
    let records = read_records(&out.records_path).unwrap();
    assert_eq!(records.len(), 16);
    assert_eq!(server.requests().len(), 16);
    for r in &records {
        assert_eq!((r.prompt_tokens, r.completion_tokens), (Some(30), Some(5)));
        assert!(r.latency_ms > 0.0);
        assert!(r.schema_valid);
        assert_eq!(r.exec_correct, r.answer_correct);
    }
}
