//! End-to-end runs of the `harmony` binary over the bundled fixtures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use harmony_vlm::mock::{MockResponse, MockServer};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn harmony(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harmony"))
        .args(args)
        .env_remove("HARMONIZER_WORKERS")
        .env_remove("HARMONIZER_POLICY")
        .env_remove("HARMONIZER_SEED")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn harmonize_fixture(out: &Path, extra: &[&str]) -> Output {
    let input = fixture("harmonize_input.json");
    let images = fixture("images");
    let mapping = fixture("harmonize_mapping.json");
    let mut args = vec![
        "harmonize",
        "--input",
        s(&input),
        "--images",
        s(&images),
        "--mapping",
        s(&mapping),
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    harmony(&args)
}

#[test]
fn harmonize_rule_agent_on_three_page_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("h");
    let o = harmonize_fixture(&out, &["--agent", "rule"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let report = read_json(&out.join("job_report.json"));
    assert_eq!(report["pages_total"], 3);
    assert_eq!(report["pages_empty"], 1);
    assert_eq!(report["annotations_in"], 13);
    assert!(report["annotations_out"].as_u64().unwrap() < 13);

    let coco = read_json(&out.join("harmonized.json"));
    assert_eq!(coco["images"].as_array().unwrap().len(), 3);
    assert_eq!(coco["categories"].as_array().unwrap().len(), 17);
    assert_eq!(
        coco["annotations"].as_array().unwrap().len() as u64,
        report["annotations_out"].as_u64().unwrap()
    );

    let manifest = read_json(&out.join("run_manifest.json"));
    assert_eq!(manifest["command"], "harmonize");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    assert!(manifest["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .all(|i| i["sha256"].is_string()));
    assert!(!out.join("error.json").exists());
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for i in 0..2 {
        let o = harmonize_fixture(&tmp.path().join(format!("h{i}")), &["--workers", "1"]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(
        dir_contents(&tmp.path().join("h0")),
        dir_contents(&tmp.path().join("h1"))
    );

    // the worker count changes the manifest but no data output
    let o = harmonize_fixture(&tmp.path().join("h4"), &["--workers", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let (a, b) = (
        dir_contents(&tmp.path().join("h0")),
        dir_contents(&tmp.path().join("h4")),
    );
    for name in ["harmonized.json", "job_report.json", "load_report.json"] {
        assert_eq!(a[name], b[name], "{name}");
    }

    let emb = fixture("embeddings.jsonl");
    for i in 0..2 {
        let out = tmp.path().join(format!("r{i}"));
        let o = harmony(&[
            "repgeom",
            "--embeddings",
            s(&emb),
            "--k",
            "5",
            "--sample-cap",
            "10",
            "--seed",
            "3",
            "--out",
            s(&out),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(
        dir_contents(&tmp.path().join("r0")),
        dir_contents(&tmp.path().join("r1"))
    );
}

#[test]
fn evaluate_identity_corpus_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let docs = fixture("docs.jsonl");
    let o = harmony(&[
        "evaluate",
        "--pred",
        s(&docs),
        "--ref",
        s(&docs),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&tmp.path().join("metrics.json"));
    let lower = [
        "percent_tokens_added",
        "bbox_max_iou",
        "bbox_mean_iou",
        "bbox_num_overlapping_pairs",
    ];
    let obj = m.as_object().unwrap();
    assert_eq!(obj.len(), 17);
    for (k, v) in obj {
        let want = if lower.contains(&k.as_str()) { 0.0 } else { 1.0 };
        assert_eq!(v.as_f64().unwrap(), want, "{k}");
    }
    let pages = std::fs::read_to_string(tmp.path().join("page_metrics.jsonl")).unwrap();
    assert_eq!(pages.lines().count(), 4);
}

#[test]
fn evaluate_accepts_coco() {
    let tmp = tempfile::tempdir().unwrap();
    let a = fixture("corpus_a.json");
    let o = harmony(&["evaluate", "--pred", s(&a), "--ref", s(&a), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_json(&tmp.path().join("metrics.json"))["detection_f"], 1.0);
}

#[test]
fn repgeom_reports_effective_k_and_scatter_renders() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = fixture("embeddings.jsonl");
    let o = harmony(&[
        "repgeom",
        "--embeddings",
        s(&emb),
        "--k",
        "100",
        "--remap",
        "heron",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&tmp.path().join("geometry_report.json"));
    assert_eq!(report["n_records"], 50);
    assert_eq!(report["params"]["k_requested"], 100);
    assert_eq!(report["params"]["k_effective"], 49);
    let classes: Vec<&String> = report["silhouette"].as_object().unwrap().keys().collect();
    assert_eq!(classes, ["paragraph", "table", "title"]);
    let csv = std::fs::read_to_string(tmp.path().join("scatter.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);

    let svg = tmp.path().join("plot.svg");
    let g = tmp.path().join("geometry_report.json");
    let o = harmony(&["scatter", "--geometry", s(&g), "--out", s(&svg)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&svg).unwrap().matches("<circle").count(), 50);
}

#[test]
fn analyze_writes_report_text_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (fixture("corpus_b.json"), fixture("corpus_a.json"));
    let o = harmony(&["analyze", "--inputs", s(&a), s(&b), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0));
    let report = read_json(&tmp.path().join("discrepancy_report.json"));
    assert_eq!(report["overviews"].as_array().unwrap().len(), 2);
    assert!(std::fs::read_to_string(tmp.path().join("discrepancy_report.txt"))
        .unwrap()
        .contains("paragraph"));
    let csv = std::fs::read_to_string(tmp.path().join("class_stats.csv")).unwrap();
    assert!(csv.starts_with("dataset,category,count,percent"));
}

#[test]
fn usage_errors_exit_1() {
    let o = harmony(&["harmonize", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--frobnicate"));
    assert_eq!(harmony(&["--help"]).status.code(), Some(0));

    let tmp = tempfile::tempdir().unwrap();
    let o = harmonize_fixture(tmp.path(), &["--policy", "sometimes"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(read_json(&tmp.path().join("error.json"))["kind"], "usage");

    let emb = fixture("embeddings.jsonl");
    let o = harmony(&[
        "repgeom",
        "--embeddings",
        s(&emb),
        "--remap",
        "nonesuch",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn data_errors_exit_2_with_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = tmp.path().join("out");
    let o = harmony(&["evaluate", "--pred", s(&bad), "--ref", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = read_json(&out.join("error.json"));
    assert_eq!(err["exit_code"], 2);
    assert_eq!(err["kind"], "data");
    assert!(out.join("run_manifest.json").exists());
    assert_eq!(String::from_utf8_lossy(&o.stderr).trim().lines().count(), 1);

    // an unmapped source category is a data error, not an agent failure
    let o = harmony(&[
        "harmonize",
        "--input",
        s(&fixture("harmonize_input.json")),
        "--out",
        s(&tmp.path().join("unmapped")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn vlm_agent_through_mock_and_fail_job_exit_3() {
    let good = r#"{"groups":[{"ids":[1],"target_category":"title"},{"ids":[2,3,4,5],"target_category":"paragraph"},{"ids":[6,7,8],"target_category":"paragraph"},{"ids":[9],"target_category":"page_footer"}]}"#;
    let server = MockServer::start(move |_, body| {
        if body.contains("id=10 ") {
            MockResponse::chat(
                r#"{"groups":[{"ids":[10],"target_category":"table"},{"ids":[11,12],"target_category":"paragraph"},{"ids":[13],"target_category":"other"}]}"#,
            )
        } else {
            MockResponse::chat(good)
        }
    })
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("vlm");
    let url = server.url();
    let o = harmonize_fixture(&out, &["--agent", "vlm", "--endpoint", &url, "--policy", "fail_job"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(server.request_count(), 2);
    let report = read_json(&out.join("job_report.json"));
    assert_eq!(report["pages_accepted"], 2);
    assert_eq!(report["annotations_out"], 7);
    let transcripts = std::fs::read_to_string(out.join("transcripts.jsonl")).unwrap();
    assert_eq!(transcripts.lines().count(), 2);

    let dead = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let dead_url = format!("http://{dead}/v1/chat/completions");
    let out = tmp.path().join("dead");
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[vlm]\nbackoff_base_ms = 0\nmax_retries = 1\n").unwrap();
    let o = harmonize_fixture(
        &out,
        &[
            "--agent",
            "vlm",
            "--endpoint",
            &dead_url,
            "--policy",
            "fail_job",
            "--config",
            s(&cfg),
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&out.join("error.json"))["kind"], "agent");
    let manifest = read_json(&out.join("run_manifest.json"));
    assert_eq!(manifest["config"]["vlm"]["max_retries"], 1);

    // the same outage under a fallback policy completes with remap-only pages
    let out = tmp.path().join("fallback");
    let o = harmonize_fixture(
        &out,
        &[
            "--agent",
            "vlm",
            "--endpoint",
            &dead_url,
            "--policy",
            "identity_page",
            "--config",
            s(&cfg),
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let report = read_json(&out.join("job_report.json"));
    assert_eq!(report["pages_fallback"], 2);
    assert_eq!(report["annotations_out"], 13);
}

#[test]
fn config_file_and_environment_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "policy = \"identity_page\"\nworkers = 2\n").unwrap();
    let input = fixture("harmonize_input.json");
    let mapping = fixture("harmonize_mapping.json");
    let run = |out: &Path, env_policy: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_harmony"));
        cmd.args([
            "harmonize",
            "--input",
            s(&input),
            "--mapping",
            s(&mapping),
            "--out",
            s(out),
        ]);
        cmd.env_remove("HARMONIZER_WORKERS").env_remove("HARMONIZER_POLICY");
        if let Some(p) = env_policy {
            cmd.env("HARMONIZER_POLICY", p);
        }
        if let Some(p) = flag {
            cmd.args(["--policy", p]);
        }
        cmd.args(["--config", s(&cfg)]);
        assert!(cmd.status().unwrap().success());
        read_json(&out.join("run_manifest.json"))["config"].clone()
    };
    let c = run(&tmp.path().join("a"), Some("fail_job"), None);
    assert_eq!(c["policy"], "identity_page");
    assert_eq!(c["workers"], 2);
    let c = run(&tmp.path().join("b"), Some("fail_job"), Some("retry_1_then_identity"));
    assert_eq!(c["policy"], "retry_1_then_identity");

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_harmony"));
    cmd.args([
        "harmonize",
        "--input",
        s(&input),
        "--mapping",
        s(&mapping),
        "--out",
        s(&tmp.path().join("c")),
    ]);
    cmd.env("HARMONIZER_POLICY", "fail_job")
        .env_remove("HARMONIZER_WORKERS");
    assert!(cmd.status().unwrap().success());
    assert_eq!(
        read_json(&tmp.path().join("c/run_manifest.json"))["config"]["policy"],
        "fail_job"
    );
}
