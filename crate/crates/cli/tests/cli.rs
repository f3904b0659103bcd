use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn herds(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_herds"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("HERDS_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap()
}

#[test]
fn pure_death_mean_extinction_time_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = herds(&["herds-sim", "--d", "3", "--lambda", "0", "--reps", "1000", "--horizon", "10"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert_eq!(r["schema_version"], 1);
    let et = &r["result"]["extinction_time"];
    let (m, se) = (et["mean"].as_f64().unwrap(), et["se"].as_f64().unwrap());
    // Exp(1) lifetime: mean 1, SE about 1/sqrt(1000).
    assert!((m - 1.0).abs() <= 3.0 * se && se < 0.05, "{m} ± {se}");
    assert!(r["passed"].as_bool().unwrap());
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.starts_with("seed,replica,lambda,v,d,t,x,"));
    assert_eq!(csv.lines().count(), 1001);
}

#[test]
fn reruns_are_byte_identical_and_replayable() {
    let (a, b, c, e) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    let args = ["herds-sim", "--lambda", "0.4", "--reps", "300", "--horizon", "3", "--samples", "1,2,3", "--seed", "17"];
    assert!(herds(&args, a.path()).status.success());
    assert!(herds(&args, b.path()).status.success());
    for f in ["manifest.json", "results.csv", "report.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let manifest = a.path().join("manifest.json");
    let o = herds(&["replay", manifest.to_str().unwrap()], c.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "results.csv", "report.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(c.path().join(f)).unwrap(), "{f}");
    }
    let mut other = args.to_vec();
    *other.last_mut().unwrap() = "18";
    assert!(herds(&other, e.path()).status.success());
    assert_ne!(fs::read(a.path().join("results.csv")).unwrap(), fs::read(e.path().join("results.csv")).unwrap());
}

#[test]
fn validation_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    for (args, field) in [
        (vec!["contact-sim", "--d", "3", "--n", "5"], "n"),
        (vec!["graph-sim", "--d", "3", "--n", "7"], "n"),
        (vec!["herds-sim", "--d", "2"], "d"),
        (vec!["phi", "--lambda", "-0.1"], "lambda"),
        (vec!["scaling", "--v", "-1"], "v"),
        (vec!["herds-sim", "--reps", "1"], "reps"),
        (vec!["derivative-check", "--k", "10"], "k"),
    ] {
        let o = herds(&args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let e = stderr_json(&o);
        assert_eq!(e["error"], "validation", "{args:?}");
        assert_eq!(e["field"], field, "{args:?}");
    }
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn bad_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    fs::write(&m, r#"{"schema_version": 1, "tool": "x", "version": "0", "master_seed": 1,
        "config": {"subcommand": "herds-sim", "d": 3, "colour": 1}}"#)
        .unwrap();
    let o = herds(&["replay", m.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["field"], "manifest");
}

#[test]
fn check_mode_fails_on_a_false_claim() {
    let dir = tempfile::tempdir().unwrap();
    // phi is 1/e at lambda = 0, so an interval around 1 must miss.
    let args = ["phi", "--lambda", "0", "--grid", "1,2,3,4", "--reps", "20000", "--expect", "1"];
    let o = herds(&args, dir.path());
    assert!(o.status.success());
    let mut strict = args.to_vec();
    strict.push("--check");
    let o = herds(&strict, dir.path());
    assert_eq!(o.status.code(), Some(3));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "check_failed");
    assert_eq!(e["failed"][0], "ci_contains_expected");
    assert_eq!(report(dir.path())["passed"], false);
}

#[test]
fn output_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_herds"))
        .args(["couple", "--reps", "200"])
        .env("HERDS_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("report.json").exists());
}

#[test]
fn switching_chain_forgets_its_loop_heavy_start() {
    let dir = tempfile::tempdir().unwrap();
    let o = herds(&["graph-sim", "--n", "40", "--d", "4", "--horizon", "10", "--reps", "4000"], dir.path());
    assert!(o.status.success());
    let r = report(dir.path());
    // Independent count: 40 vertices, C(4,2) pairs each, partner uniform
    // among 159 other half-edges.
    let exact = 40.0 * 6.0 / 159.0;
    let m = &r["result"]["mean_loops"];
    assert!((m["mean"].as_f64().unwrap() - exact).abs() <= 3.0 * m["se"].as_f64().unwrap());
    assert_eq!(r["result"]["initial_loops"], 80);
}

#[test]
fn every_subcommand_writes_all_three_files() {
    let runs: &[&[&str]] = &[
        &["herds-sim", "--reps", "50", "--horizon", "2", "--birth-tail"],
        &["multitype-sim", "--reps", "500"],
        &["graph-sim", "--n", "20", "--reps", "50"],
        &["contact-sim", "--n", "20", "--reps", "20", "--horizon", "50"],
        &["contact-sim", "--n", "10", "--reps", "500", "--duality", "--a", "0,1", "--b", "5"],
        &["explore-sim", "--n", "20", "--reps", "200"],
        &["couple", "--reps", "200"],
        &["couple", "--mode", "exploration", "--n", "60", "--reps", "50", "--horizon", "0.5", "--grid", "0.5"],
        &["phi", "--reps", "400", "--grid", "1,2", "--submult", "--submult-reps", "200", "--submult-times", "1"],
        &["lambda-bar", "--phi-reps", "400", "--phi-grid", "2,4", "--survival-reps", "100", "--survival-time", "10",
          "--tolerance", "0.1"],
        &["derivative-check", "--direction", "lambda", "--fd-reps", "500", "--formula-reps", "20"],
        &["monotonicity", "--lambdas", "0.2,0.3", "--vs", "1", "--grid", "1,2", "--reps", "400"],
        &["scaling", "--ns", "10,20", "--reps", "20", "--horizon", "100"],
    ];
    for args in runs {
        let dir = tempfile::tempdir().unwrap();
        let o = herds(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        let r = report(dir.path());
        assert_eq!(r["schema_version"], 1);
        assert_eq!(r["subcommand"], args[0]);
        assert!(r["estimates"].as_str().is_some_and(|s| !s.is_empty()));
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert!(csv.lines().count() >= 2, "{args:?}");
        let m: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["config"]["subcommand"], args[0]);
        assert_eq!(m["master_seed"], 1);
    }
}
