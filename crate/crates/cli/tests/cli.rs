use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emot"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/scenarios")
}

fn run(args: &[&str], scenario: &Path, out: &Path) -> Output {
    bin().args(args).arg(scenario).arg("--out").arg(out).output().unwrap()
}

fn fields(line: &str) -> Vec<(String, String)> {
    line.split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn same_line(got: &str, want: &str) -> bool {
    let (g, w) = (fields(got), fields(want));
    g.len() == w.len()
        && g.iter().zip(&w).all(|((gk, gv), (wk, wv))| {
            gk == wk
                && match (gv.parse::<f64>(), wv.parse::<f64>()) {
                    (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => (a - b).abs() <= 1e-8,
                    _ => gv == wv,
                }
        })
}

#[test]
fn golden_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let mut count = 0;
    for entry in fs::read_dir(scenarios()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let stem = path.file_stem().unwrap().to_str().unwrap().to_string();
        let args = fs::read_to_string(path.with_extension("args")).unwrap();
        let args: Vec<&str> = args.split_whitespace().collect();
        let expected = fs::read_to_string(path.with_extension("expected")).unwrap();
        let mut lines = expected.lines();
        let code: i32 = lines.next().unwrap().trim_start_matches("exit=").parse().unwrap();
        let want = lines.next().unwrap_or("");
        let out = run(&args, &path, &dir.path().join(&stem));
        let got = String::from_utf8_lossy(&out.stdout);
        assert_eq!(out.status.code(), Some(code), "{stem}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(same_line(got.trim(), want), "{stem}: got '{}', want '{want}'", got.trim());
        count += 1;
    }
    assert!(count >= 30, "only {count} golden scenarios");
}

#[test]
fn gap_closure_scenarios_meet_their_bounds() {
    for entry in fs::read_dir(scenarios()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap();
        if !(name.starts_with("gap_") && name.ends_with(".expected")) {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        let f = fields(text.lines().nth(1).unwrap());
        let get = |k: &str| f.iter().find(|(key, _)| key == k).unwrap().1.clone();
        let bound = if get("status") == "optimal" { 1e-7 } else { 1e-4 };
        assert!(get("gap").parse::<f64>().unwrap() <= bound, "{name}");
    }
}

#[test]
fn infeasible_scenario_carries_a_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve"], &scenarios().join("infeasible_spot.json"), dir.path());
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["inf"]["status"]["kind"], "infeasible");
    assert!(!report["inf"]["certificate"].is_null());
}

fn strip_times(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("wall_time_ms");
            m.values_mut().for_each(strip_times);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_times),
        _ => {}
    }
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenarios().join("gap_t2_martingale_divergence.json");
    let mut reports = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(k.to_string());
        let out = run(&["solve", "--both", "--seed", "7"], &s, &out_dir);
        assert!(out.status.success());
        let text = fs::read_to_string(out_dir.join("report.json")).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        strip_times(&mut v);
        reports.push(serde_json::to_string(&v).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn hedge_writes_witness_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["hedge"], &scenarios().join("g1_mot.json"), dir.path());
    assert!(out.status.success());
    let calls = fs::read_to_string(dir.path().join("calls.csv")).unwrap();
    assert!(calls.starts_with("t,kind,strike,weight\n"));
    let delta = fs::read_to_string(dir.path().join("delta.csv")).unwrap();
    assert!(delta.starts_with("t,asset,prefix,shares\n"));
}

#[test]
fn converge_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["converge", "--jobs", "3"], &scenarios().join("converge_utility_scaling.json"), dir.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("converge.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,value,certificate_gap,limit_gap,wall_time_ms"));
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 9);
    assert!(values.windows(2).all(|w| w[1] >= w[0] - 2e-10));
    assert!((values[8] - 1.0 / 3.0).abs() <= 5e-3);
}

#[test]
fn catalog_examples_round_trip_through_validate() {
    let out = bin().arg("catalog").output().unwrap();
    assert!(out.status.success());
    let c: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(c["utilities"].as_array().unwrap().len(), 6);
    let dir = tempfile::tempdir().unwrap();
    for p in c["penalties"].as_array().unwrap() {
        let path = dir.path().join(format!("{}.json", p["name"].as_str().unwrap()));
        fs::write(&path, serde_json::to_string_pretty(&p["example"]).unwrap()).unwrap();
        let out = bin().arg("validate").arg(&path).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn usage_and_io_errors() {
    let out = bin().args(["solve"]).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    let out = bin().args(["solve", "/nonexistent/scenario.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"grid\": {\"nodes\": [[[1]], [[0, 1, 2]]]},\n  \"cost\": {\"expr\": \"x1\"},\n  \"extra\": true\n}\n").unwrap();
    let out = bin().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}
