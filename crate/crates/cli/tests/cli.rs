use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hbtm_cli::artifacts::Manifest;
use hbtm_cli::render::render_posts;
use hbtm_core::io::read_roster;
use hbtm_core::simulator::observed;
use hbtm_core::{simulate, Dictionary, ModelParams};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn hbtm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbtm")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn bundled_fixture_regenerates_from_seed_7() {
    let dir = fixtures();
    let params: ModelParams = serde_json::from_str(&fs::read_to_string(dir.join("params.json")).unwrap()).unwrap();
    let vocab = Dictionary::from_lines(&fs::read_to_string(dir.join("vocab.txt")).unwrap()).unwrap();
    let roster = read_roster(&dir.join("nodes.jsonl")).unwrap();
    let sim = simulate(&params, params.background.t_end, 7).unwrap();
    let epoch = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let posts = render_posts(&observed(&sim), &vocab, &roster, epoch).unwrap();
    let mut text = String::new();
    for post in &posts {
        text.push_str(&serde_json::to_string(post).unwrap());
        text.push('\n');
    }
    assert_eq!(text, fs::read_to_string(dir.join("posts.jsonl")).unwrap());
}

const CORPUS: &str = r##"{"post_id": "1", "timestamp": "2020-03-01T09:00:00Z", "node_id": "GovA", "text": "Stay home, stop the virus #covid19", "attrs": {"party": "D"}}
{"post_id": "2", "timestamp": "2020-03-01T10:30:00Z", "node_id": "GovB", "text": "Virus testing sites open today", "attrs": {"party": "R"}}
{"post_id": "3", "timestamp": "2020-03-01T12:00:00Z", "node_id": "GovA", "text": "Testing capacity doubled, stay home", "attrs": {"party": "D"}}
{"post_id": "4", "timestamp": "2020-03-02T08:00:00Z", "node_id": "GovC", "text": "Road repairs on route 9 this weekend"}
{"post_id": "5", "timestamp": "2020-03-02T09:00:00Z", "node_id": "GovB", "text": "#covid19 relief for small business", "attrs": {"party": "R"}}
{"post_id": "6", "timestamp": "2020-03-02T11:00:00Z", "node_id": "GovC", "text": "Covid19 relief fund, small business grants"}
{"post_id": "7", "timestamp": "2020-03-03T08:00:00Z", "node_id": "GovA", "text": "Happy birthday to our state parks"}
{"post_id": "8", "timestamp": "2020-03-03T09:30:00Z", "node_id": "GovC", "text": "Virus cases rising, stay home"}
"##;

#[test]
fn staged_commands_chain_together() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = d.join("posts.jsonl");
    fs::write(&input, CORPUS).unwrap();

    let ok = |out: Output| {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(hbtm(&["corpus", "ingest", "--input", p(&input), "--epoch", "2020-03-01", "--out", p(&d.join("tok.jsonl"))]));
    let msg = ok(hbtm(&[
        "corpus", "expand", "--input", p(&d.join("tok.jsonl")), "--seeds", "covid19,virus", "--ratio", "1.2",
        "--min-count", "2", "--out", p(&d.join("kept.jsonl")), "--keywords", p(&d.join("keywords.txt")),
    ]));
    assert!(msg.contains("kept"), "{msg}");
    let keywords = fs::read_to_string(d.join("keywords.txt")).unwrap();
    assert!(keywords.lines().any(|k| k == "covid19") && keywords.lines().any(|k| k == "virus"));
    // the two off-topic posts never match
    let kept = fs::read_to_string(d.join("kept.jsonl")).unwrap();
    assert!(!kept.contains("birthday") && !kept.contains("route"));

    ok(hbtm(&[
        "corpus", "marks", "--input", p(&d.join("kept.jsonl")), "--dict-size", "6", "--out", p(&d.join("events.jsonl")),
        "--dict-out", p(&d.join("dict.txt")), "--nodes-out", p(&d.join("nodes.jsonl")),
    ]));
    assert_eq!(fs::read_to_string(d.join("dict.txt")).unwrap().lines().count(), 6);
    let cfg = d.join("fit.json");
    fs::write(&cfg, r#"{"tau_max_days": 3.0, "max_iter": 50, "tying": "global"}"#).unwrap();
    ok(hbtm(&[
        "--config", p(&cfg), "fit", "--events", p(&d.join("events.jsonl")), "--dict", p(&d.join("dict.txt")),
        "--nodes", p(&d.join("nodes.jsonl")), "--out", p(&d.join("params.json")),
        "--branching", p(&d.join("branching.jsonl")), "--trace", p(&d.join("trace.json")),
    ]));
    ok(hbtm(&[
        "topics", "--branching", p(&d.join("branching.jsonl")), "--events", p(&d.join("events.jsonl")),
        "--dict", p(&d.join("dict.txt")), "--nodes", p(&d.join("nodes.jsonl")), "--mode", "map", "--min-size", "1",
        "--out", p(&d.join("clusters.json")), "--timeline", p(&d.join("timeline.csv")),
    ]));
    let timeline = fs::read_to_string(d.join("timeline.csv")).unwrap();
    assert!(timeline.starts_with("midpoint_t,size,words,dominant_node,dominant_attr\n"));
    let out = hbtm(&[
        "network", "--branching", p(&d.join("branching.jsonl")), "--events", p(&d.join("events.jsonl")),
        "--nodes", p(&d.join("nodes.jsonl")), "--params", p(&d.join("params.json")), "--threshold", "0.01",
        "--out", p(&d.join("net.json")), "--dot", p(&d.join("net.dot")), "--rankings", p(&d.join("rank.csv")),
        "--activity", p(&d.join("activity.csv")),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Granger"));
    ok(out);
    assert!(fs::read_to_string(d.join("net.dot")).unwrap().contains("digraph"));
    assert!(fs::read_to_string(d.join("rank.csv")).unwrap().starts_with("ranking,rank,node,in_degree,out_degree"));
    let coh = ok(hbtm(&[
        "coherence", "--clusters", p(&d.join("clusters.json")), "--events", p(&d.join("events.jsonl")),
        "--dict", p(&d.join("dict.txt")),
    ]));
    let report: serde_json::Value = serde_json::from_str(&coh).unwrap();
    assert_eq!(report["eps"], 1.0);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // unknown config key: configuration error naming the key
    let cfg = d.join("bad.json");
    fs::write(&cfg, r#"{"input": "x.jsonl", "dict_sise": 10}"#).unwrap();
    let out = hbtm(&["--config", p(&cfg), "pipeline"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dict_sise"));

    // unreadable data
    let out = hbtm(&["corpus", "ingest", "--input", p(&d.join("missing.jsonl")), "--epoch", "2020-01-01", "--out", p(&d.join("o"))]);
    assert_eq!(out.status.code(), Some(3));

    // supercritical parameters are a numerical refusal
    let params: serde_json::Value = {
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(fixtures().join("params.json")).unwrap()).unwrap();
        for row in v["theta"].as_array_mut().unwrap() {
            for x in row.as_array_mut().unwrap() {
                *x = serde_json::json!(0.5);
            }
        }
        v
    };
    let pf = d.join("hot.json");
    fs::write(&pf, params.to_string()).unwrap();
    let out = hbtm(&["simulate", "--params", p(&pf), "--out", p(&d.join("sim.jsonl"))]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn failed_pipeline_leaves_only_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pipeline.json");
    let input = fixtures().join("posts.jsonl");
    // a window starting after the first post makes the fit stage fail
    fs::write(
        &cfg,
        format!(r#"{{"input": {:?}, "epoch": "2020-01-01", "fit": {{"t_start": 30.0}}}}"#, p(&input)),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = hbtm(&["--config", p(&cfg), "pipeline", "--out-dir", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage fit"));
    assert!(out_dir.join("events.jsonl.partial").exists());
    assert!(!out_dir.join("events.jsonl").exists());
    assert!(!out_dir.join("manifest.json").exists());
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("pipeline.json");
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = hbtm(&["--threads", "2", "--config", p(&cfg), "pipeline", "--out-dir", p(&out_dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let m = Manifest::read(&out_dir).unwrap();
        for entry in &m.artifacts {
            let bytes = fs::read(out_dir.join(&entry.path)).unwrap();
            assert_eq!(hbtm_cli::artifacts::sha256_hex(&bytes), entry.sha256, "{}", entry.path);
        }
        manifests.push(m);
    }
    assert_eq!(manifests[0], manifests[1]);
}
