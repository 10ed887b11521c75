use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn monosde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monosde"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn preset_json(name: &str) -> serde_json::Value {
    let out = monosde(&["show", name]);
    assert!(out.status.success(), "{}", stderr(&out));
    serde_json::from_str(&stdout(&out)).unwrap()
}

fn run_preset(name: &str, samples: &str, workers: &str, dir: &Path) -> Output {
    monosde(&[
        "run",
        "--preset",
        name,
        "--samples",
        samples,
        "--workers",
        workers,
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn presets_match_schema() {
    let schema: serde_json::Value = serde_json::from_str(&stdout(&monosde(&["schema"]))).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let names = stdout(&monosde(&["presets"]));
    let names: Vec<&str> = names.lines().collect();
    assert!(names.len() >= 5);
    for name in names {
        let cfg = preset_json(name);
        let errors: Vec<String> = validator.iter_errors(&cfg).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{name}: {errors:?}");
    }
    let mut bad = preset_json("table2");
    bad["samples"] = 0.into();
    assert!(!validator.is_valid(&bad));
}

#[test]
fn zero_samples_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_preset("table2", "0", "1", dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("samples"), "{}", stderr(&out));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn step_bound_violation_cites_bound() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset_json("table4");
    cfg["h_exponents"] = serde_json::json!([0, 1, 2]);
    let path = dir.path().join("bad.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out = monosde(&["run", "--config", path.to_str().unwrap(), "--dry-run"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("bound"), "{err}");
    assert!(err.contains("0.55"), "{err}");
}

#[test]
fn unknown_preset_and_bad_json_fail() {
    let out = monosde(&["run", "--preset", "table9"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("table2"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\"name\": \"x\"").unwrap();
    let out = monosde(&["run", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn dry_run_prints_plan() {
    let out = monosde(&["run", "--preset", "table2", "--dry-run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let plan: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(plan["h_list"].as_array().unwrap().len(), 7);
    assert_eq!(plan["fine_dt"], 0.5f64.powi(12));
    assert_eq!(plan["outputs"].as_array().unwrap().len(), 4);
}

#[test]
fn table2_layout_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = run_preset("table2", "64", "1", a.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run_preset("table2", "64", "2", b.path());
    assert!(out.status.success(), "{}", stderr(&out));
    for scheme in ["pem", "pmil", "ssbm"] {
        let file = format!("table2_{scheme}.csv");
        let text = fs::read_to_string(a.path().join(&file)).unwrap();
        assert_eq!(text, fs::read_to_string(b.path().join(&file)).unwrap(), "{file}");
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "h,error,eoc,projections,ci,seconds");
        assert_eq!(lines.len(), 8);
        for (i, line) in lines[1..].iter().enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 6);
            assert_eq!(cols[2].is_empty(), i == 0, "{line}");
            assert!(cols[1].parse::<f64>().unwrap() > 0.0);
        }
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("table2_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["samples"], 64);
    assert!(meta["rng"].as_str().unwrap().contains("chacha8"));
}

#[test]
fn table3_meta_flags_violated_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset_json("table3");
    cfg["h_exponents"] = serde_json::json!([4, 5]);
    cfg["reference"]["fine_exponent"] = 6.into();
    let path = dir.path().join("t3.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out = monosde(&["run", "--config", path.to_str().unwrap(), "--samples", "8", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("table3_meta.json")).unwrap()).unwrap();
    let notes = meta["notes"].as_array().unwrap();
    assert!(notes.iter().any(|n| n.as_str().unwrap().contains("coercivity")), "{notes:?}");
}

#[test]
fn conditions_and_probes_modes_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset_json("conditions");
    cfg["conditions"]["samples"] = 2000.into();
    let path = dir.path().join("c.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out = monosde(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("conditions_conditions.csv")).unwrap();
    assert!(csv.contains("global_monotonicity") && csv.contains("true"), "{csv}");

    let out = run_preset("probes", "50", "1", dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("probes_ssbm.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("delta,mean,fluct"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn timing_flag_fills_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset_json("table4");
    cfg["h_exponents"] = serde_json::json!([4, 5]);
    cfg["reference"]["fine_exponent"] = 6.into();
    let path = dir.path().join("t4.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out = monosde(&[
        "run", "--config", path.to_str().unwrap(), "--samples", "8", "--timing", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("table4_pmil.csv")).unwrap();
    let last = csv.lines().nth(1).unwrap().rsplit(',').next().unwrap();
    assert!(last.parse::<f64>().unwrap() > 0.0, "{csv}");
}
