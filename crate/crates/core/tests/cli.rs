mod common;

use common::{msafe, try_msafe};

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(try_msafe(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(try_msafe(&[]).status.code(), Some(1));
    assert_eq!(try_msafe(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = try_msafe(&[
        "run",
        "--signals",
        empty.to_str().unwrap(),
        "--observations",
        empty.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty.csv"));
}

#[test]
fn invalid_configuration_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n": 1, "m": 1}"#).unwrap();
    let data = dir.path().join("data");
    msafe(&["generate", "--out", data.to_str().unwrap()]);
    let args = |extra: &[&str]| {
        let mut v = vec![
            "assemble".to_string(),
            "--signals".into(),
            data.join("signals.csv").to_str().unwrap().into(),
            "--observations".into(),
            data.join("observations.csv").to_str().unwrap().into(),
            "--out".into(),
            dir.path().join("o").to_str().unwrap().into(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run = |extra: &[&str]| {
        let a = args(extra);
        try_msafe(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    // the file is valid; a flag pushes m above n
    assert_eq!(run(&[]).status.code(), Some(0));
    assert_eq!(run(&["--m", "2"]).status.code(), Some(1));
    assert!(dir.path().join("o/block_01.csv").exists());
    assert!(dir.path().join("o/manifest.json").exists());
}

#[test]
fn inspect_basis_reports_counts() {
    let out = msafe(&["inspect-basis", "--n", "2"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["functions"], 16);
    assert!(v["max_cross_level_inner_product"].as_f64().unwrap() < 1e-12);
    let out = msafe(&["inspect-basis", "--kind", "spline", "--q", "7"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["functions"], 7);
}

#[test]
fn estimate_on_given_sensors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    msafe(&["generate", "--out", data.to_str().unwrap()]);
    let out = dir.path().join("o");
    msafe(&[
        "estimate",
        "--signals",
        data.join("signals.csv").to_str().unwrap(),
        "--observations",
        data.join("observations.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--sensors",
        "7,12",
        "--coarsen",
        "8",
    ]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("estimate.json")).unwrap()).unwrap();
    assert_eq!(v["sensors"], serde_json::json!([7, 12]));
    assert_eq!(v["kernels"][0]["coefficients"].as_array().unwrap().len(), 160);
}
