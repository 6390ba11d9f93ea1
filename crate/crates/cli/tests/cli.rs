use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn programs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

fn tarl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tarl"))
        .args(args)
        .env_remove("TARL_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn taint_prints_the_report() {
    let prog = programs().join("traveller.mb");
    let o = tarl(&["taint", p(&prog)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["chain"].as_array().unwrap().len(), 7);
    assert_eq!(v["chain"][6]["text"], "vout.publish(vel)");
}

#[test]
fn taint_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = tarl(&["taint", p(&dir.path().join("missing.mb"))]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());

    let o = tarl(&["taint", p(&programs().join("corpus/quiet.mb"))]);
    assert_eq!(code(&o), 3);

    let bad = dir.path().join("bad.mb");
    fs::write(&bad, "x = (1 +\n").unwrap();
    assert_eq!(code(&tarl(&["taint", p(&bad)])), 2);
}

#[test]
fn learn_with_no_episodes_writes_an_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q.csv");
    let o = tarl(&["learn", p(&programs().join("traveller.mb")), "--episodes", "0", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0")));
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("q.csv.stats.json")).unwrap()).unwrap();
    assert_eq!(stats["episodes"], 0);
    assert!(dir.path().join("q.csv.manifest.json").exists());
}

#[test]
fn learn_reports_non_convergence_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q.csv");
    // One block cannot establish convergence.
    let o = tarl(&[
        "learn",
        p(&programs().join("traveller.mb")),
        "--episodes",
        "50",
        "--require-converged",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 4);
    assert!(out.exists());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let prog = programs().join("traveller.mb");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_tarl"))
        .args(["learn", p(&prog), "--env", "online", "--episodes", "40", "--out", p(&a)])
        .env("TARL_SEED", "17")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let o = tarl(&["learn", p(&prog), "--env", "online", "--episodes", "40", "--seed", "17", "--out", p(&b)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 17);
}

#[test]
fn sweeps_need_a_seed_placeholder() {
    let dir = tempfile::tempdir().unwrap();
    let prog = programs().join("traveller.mb");
    let o = tarl(&["learn", p(&prog), "--seeds", "0..2", "--episodes", "10", "--out", p(&dir.path().join("q.csv"))]);
    assert_eq!(code(&o), 1);
    let o = tarl(&[
        "learn",
        p(&prog),
        "--seeds",
        "0..=1",
        "--episodes",
        "10",
        "--out",
        p(&dir.path().join("q{seed}.csv")),
    ]);
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("q0.csv").exists() && dir.path().join("q1.csv").exists());
}

fn learn_pair(dir: &Path, prog: &Path, episodes: &str) -> (PathBuf, PathBuf) {
    let off = dir.join("off.csv");
    let on = dir.join("on.csv");
    for (env, out) in [("offline", &off), ("online", &on)] {
        let o = tarl(&["learn", p(prog), "--env", env, "--episodes", episodes, "--out", p(out)]);
        assert_eq!(code(&o), 0);
    }
    (off, on)
}

#[test]
fn localize_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let prog = programs().join("traveller.mb");
    let (off, _) = learn_pair(dir.path(), &prog, "20");
    let o = tarl(&["localize", "--offline", p(&off), "--online", p(&off)]);
    assert_eq!(code(&o), 5);

    let other = dir.path().join("other.csv");
    let o = tarl(&["learn", p(&programs().join("corpus/stepper.mb")), "--episodes", "5", "--out", p(&other)]);
    assert_eq!(code(&o), 0);
    assert_eq!(code(&tarl(&["localize", "--offline", p(&off), "--online", p(&other)])), 2);

    let junk = dir.path().join("junk.csv");
    fs::write(&junk, "a,b\n1,2\n").unwrap();
    assert_eq!(code(&tarl(&["localize", "--offline", p(&off), "--online", p(&junk)])), 2);
}

#[test]
fn repair_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let prog = programs().join("traveller.mb");
    let (off, on) = learn_pair(dir.path(), &prog, "400");
    let report = dir.path().join("loc.json");
    let o = tarl(&["localize", "--offline", p(&off), "--online", p(&on), "--program", p(&prog), "--out", p(&report)]);
    assert_eq!(code(&o), 0);

    let patch = dir.path().join("fix.mb");
    let log = dir.path().join("log.csv");
    let o = tarl(&[
        "repair",
        p(&prog),
        "--report",
        p(&report),
        "--search-episodes",
        "0",
        "--out-patch",
        p(&patch),
        "--out-log",
        p(&log),
    ]);
    assert_eq!(code(&o), 7);

    // Point the report at `pos = data.pose.pose.position`, which has no constants.
    let mut r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    r["culprit_line"] = 22.into();
    let no_const = dir.path().join("noconst.json");
    fs::write(&no_const, serde_json::to_string(&r).unwrap()).unwrap();
    let o = tarl(&["repair", p(&prog), "--report", p(&no_const), "--out-patch", p(&patch), "--out-log", p(&log)]);
    assert_eq!(code(&o), 6);
}

#[test]
fn config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let prog = programs().join("traveller.mb");
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[world]\nmud_prob = 1.0\n[rl]\nepisodes = 30\n").unwrap();
    let out = dir.path().join("q.csv");
    let o = tarl(&["learn", p(&prog), "--env", "online", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("q.csv.stats.json")).unwrap()).unwrap();
    assert_eq!(stats["episodes"], 30);
    assert_eq!(stats["success_rate"], 0.0);

    fs::write(&cfg, "[rl]\nunknown = 1\n").unwrap();
    assert_eq!(code(&tarl(&["learn", p(&prog), "--config", p(&cfg), "--out", p(&out)])), 1);
}
