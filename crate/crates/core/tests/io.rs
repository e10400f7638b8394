mod common;

use std::io::BufReader;

use common::*;
use hbtm_core::corpus::NodeInfo;
use hbtm_core::io::{read_events, read_roster, write_events, write_roster};
use hbtm_core::{e_step, BranchingMatrix, ModelParams, NodeRoster};

#[test]
fn artifacts_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(17);
    let events = random_events(&mut r, 30, 3, 7, 9.0, Some(0.1));
    let params = random_params(&mut r, 3, 7, 0.0, 9.0, 1.0);

    let path = dir.path().join("events.jsonl");
    write_events(&path, &events).unwrap();
    assert_eq!(read_events(&path).unwrap(), events);

    let path = dir.path().join("params.json");
    std::fs::write(&path, serde_json::to_string_pretty(&params).unwrap()).unwrap();
    let back: ModelParams = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, params);

    let q = e_step(&params, &events, Some(2.0)).unwrap();
    let path = dir.path().join("branching.jsonl");
    q.write_jsonl(std::fs::File::create(&path).unwrap()).unwrap();
    let back = BranchingMatrix::read_jsonl(BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back, q);

    let roster = NodeRoster::new(vec![
        NodeInfo {
            node_id: "a".into(),
            attrs: [("party".to_string(), "D".to_string())].into_iter().collect(),
        },
        NodeInfo {
            node_id: "b".into(),
            attrs: Default::default(),
        },
    ])
    .unwrap();
    let path = dir.path().join("nodes.jsonl");
    write_roster(&path, &roster).unwrap();
    let back = read_roster(&path).unwrap();
    assert_eq!(back.nodes(), roster.nodes());
}
