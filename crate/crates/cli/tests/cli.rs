use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use sfb_core::db::Database;

fn sfb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfb"))
        .args(args)
        .env_remove("SCENARIO_DB_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sfb(args);
    assert!(
        out.status.success(),
        "sfb {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, seeds: &str) -> std::path::PathBuf {
    let db = dir.join("pg");
    ok(&["pg-gen", "--seeds", seeds, "--out", s(&db), "--workers", "2"]);
    db
}

#[test]
fn generated_database_passes_the_check_and_reports_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let db = generate(tmp.path(), "0..5");
    assert_eq!(Database::open(&db).unwrap().len(), 6);

    let checked = tmp.path().join("checked");
    ok(&["check", s(&db), "--out", s(&checked)]);
    assert_eq!(Database::open(&checked).unwrap().len(), 6);

    let out = ok(&["stats", s(&db), "--json"]);
    let table: Value = serde_json::from_slice(&out.stdout).unwrap();
    for column in ["track_length", "vehicles", "pedestrians", "intersection_ratio", "construction_ratio"] {
        assert!(table.get(column).is_some(), "missing {column}: {table}");
    }
    assert_eq!(table["scenarios"], 6);
    assert_eq!(table["pedestrians"]["mean"].as_f64(), Some(0.0));
    for ratio in ["intersection_ratio", "construction_ratio"] {
        let r = table[ratio].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&r), "{ratio} = {r}");
    }
    let text = ok(&["stats", s(&db)]);
    assert!(!text.stdout.is_empty());
}

#[test]
fn replay_writes_one_svg_per_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let db = generate(tmp.path(), "4");
    let opened = Database::open(&db).unwrap();
    let id = opened.ids().next().unwrap().to_string();
    let frames = tmp.path().join("frames");
    ok(&["replay", s(&db), "--id", &id, "--out", s(&frames)]);
    let svgs: Vec<_> = std::fs::read_dir(&frames)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().map_or(false, |x| x == "svg"))
        .collect();
    assert_eq!(svgs.len(), opened.metadata(&id).unwrap().episode_length);
    let first = std::fs::read_to_string(&svgs[0]).unwrap();
    assert!(first.contains("<svg"));
}

#[test]
fn database_commands_compose() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let a = root.join("a");
    let b = root.join("b");
    ok(&["pg-gen", "--seeds", "0..3", "--out", s(&a)]);
    ok(&["pg-gen", "--seeds", "10,11", "--out", s(&b)]);
    let ab = root.join("ab");
    ok(&["merge", s(&a), s(&b), "--out", s(&ab)]);
    assert_eq!(Database::open(&ab).unwrap().len(), 6);

    let far = root.join("far");
    ok(&["filter", s(&ab), "--out", s(&far), "--filter", "ego_moving_distance>0", "--max-altitude-range", "4"]);
    assert!(Database::open(&far).unwrap().len() <= 6);

    let parts = root.join("parts");
    ok(&["split", s(&ab), "--out", s(&parts), "--train", "0.5", "--test", "0.5", "--seed", "3"]);
    let train = Database::open(parts.join("train")).unwrap();
    let test = Database::open(parts.join("test")).unwrap();
    assert_eq!(train.len() + test.len(), 6);

    let few = root.join("few");
    ok(&["sample", s(&ab), "--out", s(&few), "-n", "2", "--seed", "1"]);
    assert_eq!(Database::open(&few).unwrap().len(), 2);

    let metrics = root.join("metrics.json");
    ok(&["sim", s(&few), "--policy", "replay", "--out", s(&metrics)]);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(doc["episodes"].as_array().unwrap().len(), 2);
    assert_eq!(doc["summary"]["episodes"], 2);
}

#[test]
fn stdio_bridge_answers_hello_and_closes_on_bye() {
    let tmp = tempfile::tempdir().unwrap();
    let db = generate(tmp.path(), "1");
    let mut child = Command::new(env!("CARGO_BIN_EXE_sfb"))
        .args(["serve", s(&db), "--endpoint", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"{\"kind\":\"hello\",\"protocol\":\"sfb/1\"}\n{\"kind\":\"reset\"}\n{\"kind\":\"bye\"}\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = out
        .stdout
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).unwrap())
        .collect();
    assert_eq!(lines[0]["kind"], "hello");
    assert_eq!(lines[0]["protocol"], "sfb/1");
    assert_eq!(lines[1]["kind"], "observation");
    assert_eq!(lines[1]["tick"], 0);
}

#[test]
fn exit_codes_distinguish_usage_and_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(sfb(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(sfb(&["pg-gen", "--seeds", "5..1", "--out", s(&tmp.path().join("x"))]).status.code(), Some(2));
    assert_eq!(sfb(&["filter", s(tmp.path()), "--out", s(&tmp.path().join("y")), "--filter", "nonsense"]).status.code(), Some(2));

    let missing = tmp.path().join("missing");
    assert_eq!(sfb(&["stats", s(&missing)]).status.code(), Some(3));

    let busy = tmp.path().join("busy");
    std::fs::create_dir(&busy).unwrap();
    std::fs::write(busy.join("keep"), b"x").unwrap();
    assert_eq!(sfb(&["pg-gen", "--seeds", "0", "--out", s(&busy)]).status.code(), Some(3));
}
