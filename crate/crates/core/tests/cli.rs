use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn driftlab(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_driftlab"));
    c.args(args);
    match threads {
        Some(t) => c.env("DRIFTLAB_THREADS", t),
        None => c.env_remove("DRIFTLAB_THREADS"),
    };
    c.output().expect("binary runs")
}

fn out_dir(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn empty_argv_prints_usage() {
    let o = driftlab(&[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn alpha_outside_range_is_a_usage_error() {
    let o = driftlab(&["verify", "--alpha", "0.3", "--lambda", "0.5", "--n", "3"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha = 0.3"));
}

#[test]
fn verify_writes_a_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = out_dir(dir.path());
    let o = driftlab(&["--out-dir", &d, "verify", "hessian", "transport", "--n", "3", "--lambda", "0.5", "--alpha", "0.1"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(doc["config_sha256"].as_str().unwrap().len(), 64);
    let reports = doc["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        for key in ["id", "params", "region", "worst_margin", "resolution", "pass"] {
            assert!(r.get(key).is_some(), "{key}");
        }
    }
}

#[test]
fn toy_model_writes_a_probe_series() {
    let dir = tempfile::tempdir().unwrap();
    let d = out_dir(dir.path());
    let o = driftlab(&["--out-dir", &d, "parabolic", "--model", "ns_toy", "--grid", "12,24,8", "--records", "3", "--out", "runs/toy.csv"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("runs/toy.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# driftlab "));
    assert!(lines[1].starts_with("# config_sha256: "));
    assert_eq!(lines[2], "# seed: 0");
    assert_eq!(lines[4], "t,probe_pos,probe_neg,max_abs,l2,asym_defect,min_pos_sector");
    assert_eq!(lines.len(), 5 + 4);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let d = out_dir(dir.path());
        let o = driftlab(&["--out-dir", &d, "elliptic", "--paths", "300", "--seed", "5", "--probe", "0.5,0.25", "--cones", "0.25"], Some(threads));
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let o = driftlab(&["--out-dir", &d, "parabolic", "--grid", "12,24,8", "--records", "3"], Some(threads));
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["probes.csv", "cones.csv", "parabolic.csv"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let probes = fs::read_to_string(a.path().join("probes.csv")).unwrap();
    assert!(probes.contains("# seed: 5"));
    assert!(probes.contains("\np2,mean,ci_lo,ci_hi,A_fraction\n"));
    let cones = fs::read_to_string(a.path().join("cones.csv")).unwrap();
    assert!(cones.contains("\ny2,p_lid,p_sphere,p_side,p_bottom,ci\n"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"seed": 4, "elliptic": {"paths": 200, "probes": [0.5], "cones": []}}"#).unwrap();
    let d = out_dir(dir.path());
    let c = cfg.to_str().unwrap();
    let o = driftlab(&["--config", c, "--out-dir", &d, "elliptic", "--seed", "6"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("probes.csv")).unwrap();
    assert!(text.contains("# seed: 6"));
    assert!(text.contains("\"paths\":200"));
}

#[test]
fn censored_paths_abort_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"elliptic": {"paths": 50, "probes": [0.5], "cones": [],
            "step": {"dt_max": 1e-4, "frac": 0.05, "max_steps": 3, "noise": 1.0}}}"#,
    )
    .unwrap();
    let d = out_dir(dir.path());
    let o = driftlab(&["--config", cfg.to_str().unwrap(), "--out-dir", &d, "elliptic"], None);
    assert_eq!(o.status.code(), Some(3));
}
