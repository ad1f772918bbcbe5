use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const KEYS: &str = "0123456789abcdef,23456789abcdef01,456789abcdef0123";

fn tbtm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbtm"))
        .current_dir(dir)
        .env("TBTM_KEYS", KEYS)
        .args(args)
        .output()
        .expect("spawn tbtm")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tbtm(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn gen_d1(dir: &Path, n: &str) {
    ok(dir, &["gen", "--dataset", "d1", "--n", n, "--out", "d1.csv"]);
}

#[test]
fn gen_writes_header_and_rows() {
    let tmp = TempDir::new().unwrap();
    gen_d1(tmp.path(), "5");
    let text = fs::read_to_string(tmp.path().join("d1.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# s_max=10");
    assert_eq!(lines[1], "s,o,e,score");
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[2], "honestSR,honestSP,honestService,5");
}

#[test]
fn chain_round_trip_and_tamper() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_d1(d, "25");
    ok(d, &["chain", "build", "--records", "d1.csv", "--ledger", "l.jsonl", "--block-size", "10", "--difficulty", "4"]);
    let report = ok(d, &["chain", "validate", "--ledger", "l.jsonl", "--difficulty", "4"]);
    assert!(report.contains("3 blocks valid"), "{report}");

    let text = fs::read_to_string(d.join("l.jsonl")).unwrap();
    fs::write(d.join("l.jsonl"), text.replacen("\"score\":5", "\"score\":6", 1)).unwrap();
    let out = tbtm(d, &["chain", "validate", "--ledger", "l.jsonl", "--difficulty", "4"]);
    assert_eq!(code(&out), 1);
    let out = tbtm(d, &["run", "--ledger", "l.jsonl", "--difficulty", "4", "--out", "run"]);
    assert_eq!(code(&out), 1, "an invalid ledger must abort the run");
}

#[test]
fn empty_record_file_gives_empty_trajectories() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("empty.csv"), "").unwrap();
    ok(d, &["run", "--records", "empty.csv", "--out", "run"]);
    for role in ["SR", "SP", "Service"] {
        let t = fs::read_to_string(d.join(format!("run/trajectory_{role}.csv"))).unwrap();
        assert_eq!(t.trim(), "n,T,Tprime,lambda,kappa");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_d1(d, "200");
    ok(d, &["run", "--records", "d1.csv", "--no-replay-filter", "--out", "a"]);
    ok(d, &["run", "--records", "d1.csv", "--no-replay-filter", "--out", "b"]);
    for f in ["trajectory_SR.csv", "trajectory_SP.csv", "trajectory_Service.csv", "global.csv", "status.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn replay_filter_drops_repeats_by_default() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_d1(d, "50");
    let filtered = ok(d, &["run", "--records", "d1.csv", "--out", "a"]);
    assert!(filtered.contains("applied 1 replays 49"), "{filtered}");
    let all = ok(d, &["run", "--records", "d1.csv", "--no-replay-filter", "--out", "b"]);
    assert!(all.contains("applied 50 replays 0"), "{all}");
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(code(&tbtm(d, &["run"])), 2);
    assert_eq!(code(&tbtm(d, &["no-such-command"])), 2);
    assert_eq!(code(&tbtm(d, &["gen", "--dataset", "d9"])), 2);
    assert_eq!(code(&tbtm(d, &["predict", "--s", "a"])), 2);
}

#[test]
fn bad_config_is_a_runtime_failure() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.conf"), "alpha = 0.05\nlambda = 3\n").unwrap();
    let out = tbtm(d, &["--config", "bad.conf", "control", "thresholds"]);
    assert_eq!(code(&out), 1);
    fs::write(d.join("good.conf"), "# punishment\nmu = 0.3\nnu = 0.2\n").unwrap();
    let th = ok(d, &["--config", "good.conf", "control", "thresholds"]);
    assert_eq!(th.trim(), "mu=0.3 nu=0.2 epsilon=-0.01 tau=1000");
}

#[test]
fn degenerate_keys_are_refused_unless_allowed() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_d1(d, "3");
    let same = "0123456789abcdef,0123456789abcdef,0123456789abcdef";
    let args = ["--keys", same, "run", "--records", "d1.csv", "--out", "r"];
    assert_eq!(code(&tbtm(d, &args)), 1);
    let mut allowed = args.to_vec();
    allowed.insert(0, "--allow-degenerate-keys");
    ok(d, &allowed);
}

#[test]
fn registry_check_detects_and_repairs_tampered_history() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_d1(d, "40");
    ok(d, &["run", "--records", "d1.csv", "--no-replay-filter", "--out", "run"]);
    let reg = "run/registry/SP";
    let intact = ok(d, &["registry", "check", "--registry", reg, "--id", "honestSP"]);
    assert!(intact.contains("Intact"), "{intact}");

    let path = d.join(reg).join("history.json");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("0.1125", "0.1126", 1)).unwrap();
    let out = tbtm(d, &["registry", "check", "--registry", reg, "--id", "honestSP"]);
    assert_eq!(code(&out), 1, "tamper without a repair source must fail");

    // the replay has to use the options of the original run
    let repaired = ok(
        d,
        &["registry", "check", "--registry", reg, "--id", "honestSP", "--records", "d1.csv", "--role", "SP", "--no-replay-filter"],
    );
    assert!(repaired.contains("Repaired"), "{repaired}");
    let again = ok(d, &["registry", "check", "--registry", reg, "--id", "honestSP"]);
    assert!(again.contains("Intact"), "{again}");
}

#[test]
fn passwd_requires_the_old_secret() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_d1(d, "3");
    ok(d, &["run", "--records", "d1.csv", "--out", "run"]);
    let reg = "run/registry/SR";
    ok(d, &["registry", "passwd", "--registry", reg, "--id", "honestSR", "--old", "sk", "--new", "fresh"]);
    let out = tbtm(d, &["registry", "passwd", "--registry", reg, "--id", "honestSR", "--old", "sk", "--new", "x"]);
    assert_eq!(code(&out), 1);
    ok(d, &["registry", "passwd", "--registry", reg, "--id", "honestSR", "--old", "fresh", "--new", "x"]);
}

#[test]
fn batch_prediction_emits_error_columns() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_d1(d, "1500");
    let out = ok(d, &["predict", "--batch", "d1.csv"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "s,o,e,score,P,omega");
    assert_eq!(lines.len(), 1501);
    let last: Vec<&str> = lines[1500].split(',').collect();
    let p: f64 = last[4].parse().unwrap();
    let omega: f64 = last[5].parse().unwrap();
    assert!((p - 5.0).abs() <= 1.0, "P = {p}");
    assert!((omega - (5.0 - p)).abs() < 1e-12);
}

#[test]
fn recommend_skips_malicious_providers() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let mut csv = String::from("# s_max=10\ns,o,e,score\n");
    for i in 0..60 {
        csv.push_str(&format!("u{},good,svc,{}\n", i % 3, 9 + i % 2));
        csv.push_str(&format!("u{},bad,svc2,0\n", i % 3));
    }
    fs::write(d.join("r.csv"), csv).unwrap();
    fs::write(d.join("strict.conf"), "mu = 0.105\nnu = 0.1\n").unwrap();
    let out = ok(d, &["--config", "strict.conf", "recommend", "--records", "r.csv", "--s", "u0", "-k", "5"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "rank,o,e,P,provider_trust");
    assert!(lines[1].starts_with("1,good,svc,"), "{out}");
    assert!(!out.contains("bad"), "{out}");
}

#[test]
fn partial_analysis_leaves_a_mass_at_t0() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let mut csv = String::from("# s_max=5\ns,o,e,score\n");
    for i in 0..40 {
        csv.push_str(&format!("user{i},tag{},movie{i},4\n", i % 4));
    }
    fs::write(d.join("m.csv"), csv).unwrap();
    let out = ok(d, &["analyze", "--records", "m.csv", "--eval-limit", "10"]);
    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().filter(|r| r[0] == "SR").count(), 40);
    assert_eq!(rows.iter().filter(|r| r[0] == "SP").count(), 4);
    let untouched = rows.iter().filter(|r| r[3] == "0").count();
    assert_eq!(untouched, 60, "30 users and 30 movies never evaluated");
    assert!(rows.iter().filter(|r| r[3] == "0").all(|r| r[2] == "0.1"));
    for r in &rows {
        let t: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&t));
    }
}

#[test]
fn dynamic_thresholds_from_a_saved_registry() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen_d1(d, "100");
    ok(d, &["run", "--records", "d1.csv", "--no-replay-filter", "--out", "run"]);
    let out = ok(d, &["control", "thresholds", "--dynamic", "--registry", "run/registry"]);
    let vals: Vec<f64> = out
        .split_whitespace()
        .take(2)
        .map(|kv| kv.split_once('=').unwrap().1.parse().unwrap())
        .collect();
    assert!(vals[0] > vals[1] && vals[1] > 0.0, "{out}");
}

#[test]
fn g1_experiment_writes_trajectories() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = ok(d, &["experiment", "g1", "--n", "2000", "--gnuplot", "--out", "g"]);
    assert!(out.starts_with("G1 kappa_hat"), "{out}");
    for f in ["G1_SR.csv", "G1_SP.csv", "G1_Service.csv", "G1_prediction.csv", "G1_summary.csv", "G1_SP.gp"] {
        assert!(d.join("g").join(f).exists(), "{f}");
    }
    let sp = fs::read_to_string(d.join("g/G1_SP.csv")).unwrap();
    assert!(sp.starts_with("n,T,Tprime"));
    assert_eq!(sp.lines().count(), 2001);
}

#[test]
fn unknown_experiment_fails() {
    let tmp = TempDir::new().unwrap();
    let out = tbtm(tmp.path(), &["experiment", "G9", "--out", "x"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn sensor_experiment_reports_light_class() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = ok(d, &["experiment", "sensor", "--out", "s"]);
    assert!(out.contains("26 entities, top class Light Class"), "{out}");
    for f in ["sensor_trust.csv", "sensor_prediction.csv", "sensor_usage.csv"] {
        assert!(d.join("s").join(f).exists(), "{f}");
    }
}

#[test]
fn bench_csv_has_one_row_per_count() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["bench", "--counts", "0,500,1000", "--repeats", "1", "--out", "b"]);
    let text = fs::read_to_string(d.join("b/bench.csv")).unwrap();
    let ns: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ns, ["0", "500", "1000"]);
}
