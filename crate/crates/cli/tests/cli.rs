use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_omnivln"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn omnivln")
}

fn ok_json(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json diagnostic on stderr");
    serde_json::from_str(line).unwrap()
}

/// gen + build + partition for D9 seed 7 inside `dir`.
fn pipeline(dir: &Path) -> Value {
    ok_json(dir, &["gen", "--dataset", "D9", "--seed", "7", "--out", "."]);
    ok_json(dir, &["build", "--scene", "D9-s7.scene.json", "--out", "g.json"]);
    ok_json(dir, &["partition", "--graph", "g.json", "--curve", "curve.tsv"])
}

#[test]
fn gen_build_partition_finds_four_rooms() {
    let t = TempDir::new().unwrap();
    let p = pipeline(t.path());
    assert_eq!(p["rooms"], 4);
    assert_eq!(p["k"], 4);
    assert_eq!(p["room_adjacency"].as_array().unwrap().len(), 4);
    let curve = std::fs::read_to_string(t.path().join("curve.tsv")).unwrap();
    assert!(curve.lines().count() > 2);
}

#[test]
fn gen_all_writes_nine_scenes() {
    let t = TempDir::new().unwrap();
    let v = ok_json(t.path(), &["gen", "--dataset", "all", "--seed", "3", "--out", "scenes"]);
    assert_eq!(v["scenes"].as_array().unwrap().len(), 9);
    assert!(t.path().join("scenes/D5-s3.scene.json").exists());
}

#[test]
fn serialize_d9_reduces_tokens() {
    let t = TempDir::new().unwrap();
    pipeline(t.path());
    let v = ok_json(t.path(), &["serialize", "--graph", "g.json", "--scene", "D9-s7.scene.json", "--out", "views"]);
    let r = v["reduction"].as_f64().unwrap();
    assert!(r >= 0.60, "reduction {r}");
    assert!(v["tiered"]["tokens"].as_u64().unwrap() < v["flat"]["tokens"].as_u64().unwrap());
    assert!(t.path().join("views/tiered.txt").exists());
}

#[test]
fn reg_hierarchical_keeps_candidates_in_room() {
    let t = TempDir::new().unwrap();
    pipeline(t.path());
    let v = ok_json(t.path(), &["reg", "--graph", "g.json", "--backend", "scripted"]);
    assert_eq!(v["hierarchical"]["cross_room_pairs"], 0);
    assert_eq!(v["hierarchical"]["vi_accuracy"], 1.0);
}

#[test]
fn single_episode_writes_report_and_transcript() {
    let t = TempDir::new().unwrap();
    pipeline(t.path());
    let v = ok_json(t.path(), &["run", "--scene", "D9-s7.scene.json", "--graph", "g.json", "--out", "ep"]);
    assert_eq!(v["success"], true);
    let transcript = std::fs::read_to_string(t.path().join("ep/transcript.jsonl")).unwrap();
    assert!(transcript.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    assert!(t.path().join("ep/episode.json").exists());
}

#[test]
fn scripted_suite_succeeds_everywhere_and_report_renders() {
    let t = TempDir::new().unwrap();
    let v = ok_json(t.path(), &["run", "--suite", "--seeds", "0,1", "--out", "suite"]);
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 18);
    assert!(cells.iter().all(|c| c["success_rate"] == 1.0));
    ok_json(t.path(), &["report", "--input", "suite/suite.json", "--out", "rep"]);
    let table = std::fs::read_to_string(t.path().join("rep/table.csv")).unwrap();
    assert!(table.starts_with("metric,D1,"));
    assert_eq!(table.lines().count(), 6);
}

#[test]
fn reruns_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [a.path(), b.path()] {
        pipeline(d);
        ok_json(d, &["run", "--suite", "--datasets", "D3,D7", "--seeds", "4", "--threads", "2", "--out", "s"]);
    }
    for f in ["g.json", "s/suite.json", "s/suite.csv", "s/transcripts.jsonl"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn unknown_config_key_exits_2() {
    let t = TempDir::new().unwrap();
    std::fs::write(t.path().join("c.toml"), "[view]\nfocal_radiu = 2.0\n").unwrap();
    let out = run(t.path(), &["--config", "c.toml", "gen", "--out", "."]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config");
}

#[test]
fn bad_flag_exits_2_with_json() {
    let t = TempDir::new().unwrap();
    let out = run(t.path(), &["serialize", "--graph", "g.json", "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(t.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["code"], 2);
}

#[test]
fn malformed_input_exits_3() {
    let t = TempDir::new().unwrap();
    std::fs::write(t.path().join("bad.json"), "{ not json").unwrap();
    let out = run(t.path(), &["build", "--scene", "bad.json", "--out", "g.json"]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(t.path(), &["partition", "--graph", "missing.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn contract_violations_exit_5() {
    let t = TempDir::new().unwrap();
    pipeline(t.path());
    let out = run(t.path(), &["partition", "--graph", "g.json"]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(stderr_json(&out)["error"], "contract");
    ok_json(t.path(), &["build", "--scene", "D9-s7.scene.json", "--out", "raw.json"]);
    let out = run(t.path(), &["serialize", "--graph", "raw.json"]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn unreachable_backend_exits_4() {
    let t = TempDir::new().unwrap();
    pipeline(t.path());
    std::fs::write(
        t.path().join("http.toml"),
        "[backend]\nname = \"http\"\n[backend.endpoint]\nurl = \"http://127.0.0.1:9/v1/chat/completions\"\nmodel = \"none\"\n",
    )
    .unwrap();
    let out = run(t.path(), &["--config", "http.toml", "run", "--scene", "D9-s7.scene.json", "--graph", "g.json", "--out", "ep"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["error"], "backend");
}

#[test]
fn help_lists_default_thresholds() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for key in [
        "view.focal_radius = 3",
        "view.h_cam = 1",
        "view.focal_capacity = 5",
        "build.epsilon = 0.05",
        "build.verify.tau = 0.5",
        "build.verify.short_range = 1",
        "voxel_size = 0.1",
        "build.sample_spacing = 0.5",
        "build.group_radius = 1.5",
        "build.relation_radius = 2",
        "episode.max_steps = 10",
        "episode.success_radius = 1",
        "episode.replan_budget = 3",
        "approach standoff = 0.8",
        "Exit codes",
    ] {
        assert!(text.contains(key), "--help lacks {key:?}");
    }
}
