use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use harmony_core::harmonizer::{
    harmonize_dataset, Agent, AgentError, FailurePolicy, HarmonizeError, HarmonizeOptions, PageOutcome, RuleSet,
};
use harmony_core::taxonomy::TaxonomyMapping;
use harmony_core::{Annotation, BBox, LayoutDataset, PageRecord};
use harmony_vlm::mock::{MockResponse, MockServer};
use harmony_vlm::{AgentConfig, VlmAgent};

const GOOD: &str =
    r#"{"groups":[{"ids":[1,2],"target_category":"paragraph"},{"ids":[3],"target_category":"paragraph"}]}"#;
const DROPS_3: &str = r#"{"groups":[{"ids":[1,2],"target_category":"paragraph"}]}"#;

fn page(dir: &Path, image_id: u64) -> PageRecord {
    let mut p = PageRecord::new(image_id, format!("p{image_id}.png"), 200.0, 200.0);
    p.annotations
        .push(Annotation::new(1, BBox::new(10.0, 10.0, 190.0, 20.0), "paragraph"));
    p.annotations
        .push(Annotation::new(2, BBox::new(10.0, 22.0, 190.0, 32.0), "paragraph"));
    p.annotations
        .push(Annotation::new(3, BBox::new(10.0, 120.0, 190.0, 130.0), "paragraph"));
    let path = dir.join(&p.file_name);
    std::fs::write(&path, b"\x89PNG\r\n\x1a\n").unwrap();
    p.image_path = Some(path);
    p
}

fn setup() -> (RuleSet, TaxonomyMapping) {
    let rules = RuleSet::builtin();
    let mapping = TaxonomyMapping::identity("target", rules.target_taxonomy());
    (rules, mapping)
}

fn agent(server: &MockServer, max_retries: u32) -> VlmAgent {
    VlmAgent::new(AgentConfig {
        endpoint: server.url(),
        max_retries,
        backoff_base_ms: 0,
        timeout_secs: 10,
        ..AgentConfig::default()
    })
    .unwrap()
}

#[test]
fn happy_path_single_attempt() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::scripted(vec![MockResponse::chat(&format!("```json\n{GOOD}\n```"))]).unwrap();
    let (rules, mapping) = setup();
    let a = agent(&server, 2);
    let plan = a.propose(&page(dir.path(), 1), &mapping, &rules).unwrap();
    assert_eq!(plan.groups.len(), 2);
    assert_eq!(server.request_count(), 1);
    let t = a.transcripts().records();
    assert_eq!(t.len(), 1);
    assert_eq!(t[0].attempt, 1);
    assert_eq!(t[0].validator_outcome, "accepted");
    assert_eq!(t[0].parse_outcome, "ok");

    let body: serde_json::Value = serde_json::from_str(&server.requests()[0]).unwrap();
    assert_eq!(body["model"], "vlm");
    let text = body["messages"][0]["content"][0]["text"].as_str().unwrap();
    assert!(text.contains("id=3 "));
}

#[test]
fn rejected_plan_is_fed_back_and_retried() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::scripted(vec![MockResponse::chat(DROPS_3), MockResponse::chat(GOOD)]).unwrap();
    let (rules, mapping) = setup();
    let a = agent(&server, 2);
    let plan = a.propose(&page(dir.path(), 1), &mapping, &rules).unwrap();
    assert_eq!(plan.groups.len(), 2);
    assert_eq!(server.request_count(), 2);

    let t = a.transcripts().records();
    assert_eq!(t.len(), 2);
    assert!(t[0].validator_outcome.contains('3'), "{}", t[0].validator_outcome);
    assert_eq!(t[1].validator_outcome, "accepted");
    assert!(t[1].prompt.contains(&t[0].validator_outcome));
    assert!(!t[0].prompt.contains("rejected"));

    let second: serde_json::Value = serde_json::from_str(&server.requests()[1]).unwrap();
    let text = second["messages"][0]["content"][0]["text"].as_str().unwrap();
    assert!(text.contains(&t[0].validator_outcome));
}

#[test]
fn unparseable_reply_is_retried() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::scripted(vec![
        MockResponse::chat("I cannot help with that."),
        MockResponse::chat(GOOD),
    ])
    .unwrap();
    let (rules, mapping) = setup();
    let a = agent(&server, 1);
    a.propose(&page(dir.path(), 1), &mapping, &rules).unwrap();
    let t = a.transcripts().records();
    assert!(t[0].parse_outcome.starts_with("parse_error"));
    assert_eq!(t[0].raw_response.as_deref(), Some("I cannot help with that."));
}

#[test]
fn permanent_500_exhausts_retries() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::scripted(vec![MockResponse::status(500, "boom")]).unwrap();
    let (rules, mapping) = setup();
    let a = agent(&server, 2);
    let err = a.propose(&page(dir.path(), 1), &mapping, &rules).unwrap_err();
    assert!(matches!(err, AgentError::Failed { attempts: 3, .. }), "{err}");
    assert_eq!(server.request_count(), 3);
    let t = a.transcripts().records();
    assert_eq!(t.len(), 3);
    assert!(t
        .iter()
        .all(|r| r.status == Some(500) && r.parse_outcome.starts_with("transport_error")));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let (rules, mapping) = setup();
    let a = VlmAgent::new(AgentConfig {
        endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
        max_retries: 1,
        backoff_base_ms: 0,
        ..AgentConfig::default()
    })
    .unwrap();
    let err = a.propose(&page(dir.path(), 1), &mapping, &rules).unwrap_err();
    assert!(matches!(err, AgentError::Failed { attempts: 2, .. }));
    assert!(a.transcripts().records().iter().all(|r| r.status.is_none()));
}

#[test]
fn missing_image_makes_no_request() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::scripted(vec![MockResponse::chat(GOOD)]).unwrap();
    let (rules, mapping) = setup();
    let mut p = page(dir.path(), 1);
    p.image_path = None;
    let err = agent(&server, 2).propose(&p, &mapping, &rules).unwrap_err();
    assert!(matches!(err, AgentError::Grounding(_)));
    assert_eq!(server.request_count(), 0);
}

#[test]
fn job_falls_back_to_identity_page_and_fail_job_errors() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::scripted(vec![MockResponse::status(503, "")]).unwrap();
    let (rules, mapping) = setup();
    let ds = LayoutDataset::new("d", rules.target_taxonomy().clone(), vec![page(dir.path(), 1)]);
    let a = agent(&server, 1);

    let opts = HarmonizeOptions {
        policy: FailurePolicy::IdentityPage,
        workers: 1,
    };
    let (out, report) = harmonize_dataset(&ds, &a, &mapping, &rules, opts).unwrap();
    assert_eq!(report.pages[0].outcome, PageOutcome::Fallback);
    assert_eq!(out.pages[0].annotations.len(), 3);
    for (a, b) in out.pages[0].annotations.iter().zip(&ds.pages[0].annotations) {
        assert_eq!(a.bbox, b.bbox);
        assert_eq!(a.category, b.category);
    }
    assert_eq!(server.request_count(), 2);

    // a self-retrying agent is asked once per page whatever the policy
    let opts = HarmonizeOptions {
        policy: FailurePolicy::RetryThenIdentity(5),
        workers: 1,
    };
    harmonize_dataset(&ds, &a, &mapping, &rules, opts).unwrap();
    assert_eq!(server.request_count(), 4);

    let opts = HarmonizeOptions {
        policy: FailurePolicy::FailJob,
        workers: 1,
    };
    let err = harmonize_dataset(&ds, &a, &mapping, &rules, opts).unwrap_err();
    assert!(matches!(err, HarmonizeError::Agent { image_id: 1, .. }));
}

#[test]
fn concurrency_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::start(|_, _| MockResponse::chat(GOOD).delayed(Duration::from_millis(60))).unwrap();
    let (rules, mapping) = setup();
    let pages: Vec<_> = (1..=12).map(|i| page(dir.path(), i)).collect();
    let ds = LayoutDataset::new("d", rules.target_taxonomy().clone(), pages);
    let a = VlmAgent::new(AgentConfig {
        endpoint: server.url(),
        max_concurrency: 3,
        ..AgentConfig::default()
    })
    .unwrap();
    let sink = Arc::clone(a.transcripts());
    let opts = HarmonizeOptions {
        policy: FailurePolicy::FailJob,
        workers: 8,
    };
    let (out, report) = harmonize_dataset(&ds, &a, &mapping, &rules, opts).unwrap();
    assert_eq!(report.pages_accepted, 12);
    assert_eq!(out.annotation_count(), 24);
    assert!(server.peak_concurrency() <= 3, "{}", server.peak_concurrency());
    assert!(a.peak_in_flight() <= 3);
    assert!(server.peak_concurrency() >= 2, "workers should overlap");
    assert_eq!(sink.records().len(), 12);
}
