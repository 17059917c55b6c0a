use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sliced-ot"));
    cmd.env_remove("SLICED_OT_WORKERS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json_stdout(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn sw_identical_files_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let x = write(tmp.path(), "x.csv", "0,1\n2,3\n-1,0.5\n");
    let v = json_stdout(&run(&["sw", &x, &x, "--m", "50", "--seed", "1"]));
    assert_eq!(v["value"].as_f64(), Some(0.0));
    assert_eq!(v["meta"]["m"].as_u64(), Some(50));
}

#[test]
fn sw_point_masses_match_slicing_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let x = write(tmp.path(), "x.csv", "0,0,0,0,0\n");
    let y = write(tmp.path(), "y.csv", "0,3,0,0,0\n");
    let v = json_stdout(&run(&["sw", &x, &y, "--p", "2", "--m", "100000", "--seed", "5"]));
    let (est, se) = (v["value_pow"].as_f64().unwrap(), v["std_error"].as_f64().unwrap());
    assert!((est - 1.8).abs() <= 3.0 * se, "{est} ± {se}");
}

#[test]
fn sw_output_is_key_sorted_and_written() {
    let tmp = tempfile::tempdir().unwrap();
    let x = write(tmp.path(), "x.csv", "0,1\n2,3\n");
    let y = write(tmp.path(), "y.csv", "1,1\n2,5\n");
    let out_dir = tmp.path().join("out");
    let out = run(&["sw", &x, &y, "--m", "20", "--seed", "1", "--out", &s(&out_dir)]);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let keys: Vec<usize> = ["\"meta\"", "\"std_error\"", "\"value\"", "\"value_pow\""]
        .iter()
        .map(|k| text.find(k).unwrap())
        .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]), "{text}");
    assert_eq!(std::fs::read_to_string(out_dir.join("report.json")).unwrap(), text);
    assert_eq!(std::fs::read_to_string(out_dir.join("projections.csv")).unwrap().lines().count(), 20);
}

#[test]
fn weighted_inputs_use_last_column() {
    let tmp = tempfile::tempdir().unwrap();
    // Both files describe the same measure: atoms 0 and 2 on the line with masses 3/4 and 1/4.
    let x = write(tmp.path(), "x.csv", "0,3\n2,1\n");
    let y = write(tmp.path(), "y.csv", "0\n0\n0\n2\n");
    let out = bin().args(["sw", &x, &y, "--m", "4", "--seed", "1", "--weighted"]).output().unwrap();
    // y has a single column, so --weighted cannot split it.
    assert_eq!(out.status.code(), Some(2));
    let y = write(tmp.path(), "y2.csv", "0,1\n0,1\n0,1\n2,1\n");
    let v = json_stdout(&run(&["sw", &x, &y, "--m", "4", "--seed", "1", "--weighted"]));
    assert!(v["value"].as_f64().unwrap() < 1e-12);
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let x = write(tmp.path(), "x.csv", "0,1\n2,3\n");
    let y3 = write(tmp.path(), "y.csv", "0,1,2\n");
    let bad = write(tmp.path(), "bad.csv", "0,abc\n");
    let cases: Vec<Vec<&str>> = vec![
        vec!["sw", &x, &y3, "--seed", "1"],
        vec!["sw", &x, &bad, "--seed", "1"],
        vec!["sw", &x, &x],
        vec!["sw", &x, &x, "--seed", "1", "--workers", "0"],
        vec!["msw", &x, &x, "--method", "grid", "--seed", "1", "--p", "0.5"],
        vec!["robust", &x, "--eps", "0.2", "--seed", "1"],
        vec!["experiment", "nope", "--seed", "1", "--out", "unused"],
        vec!["sw", "/nonexistent/file.csv", &x, "--seed", "1"],
    ];
    for args in cases {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn msw_grid_rejects_high_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let x = write(tmp.path(), "x.csv", "0,1,0,0\n2,3,0,1\n");
    let out = run(&["msw", &x, &x, "--method", "grid", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d <= 3"));
}

#[test]
fn msw_point_masses_and_identical_clouds() {
    let tmp = tempfile::tempdir().unwrap();
    let x = write(tmp.path(), "x.csv", "0,0,0\n");
    let y = write(tmp.path(), "y.csv", "1,2,2\n");
    for method in ["subgrad", "lipo", "grid"] {
        let v = json_stdout(&run(&["msw", &x, &y, "--method", method, "--T", "300", "--budget", "300", "--resolution", "200", "--seed", "2"]));
        let value = v["value"].as_f64().unwrap();
        assert!((value - 3.0).abs() < 0.05, "{method}: {value}");
    }
    let z = write(tmp.path(), "z.csv", "0,1\n2,3\n-1,4\n");
    let v = json_stdout(&run(&["msw", &z, &z, "--method", "lipo", "--budget", "20", "--seed", "2"]));
    assert_eq!(v["value"].as_f64(), Some(0.0));
}

#[test]
fn msw_model_two_subgradient_writes_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("msw");
    let v = json_stdout(&run(&[
        "msw", "--model", "2", "--d", "20", "--n", "500", "--method", "subgrad", "--T", "500", "--seed", "3", "--out",
        &s(&out_dir),
    ]));
    let target = 2.0 * 20f64.sqrt();
    let value = v["value"].as_f64().unwrap();
    assert!((0.85 * target..=1.15 * target).contains(&value), "{value}");
    assert_eq!(v["trace_path"].as_str(), Some("trace.csv"));
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 501);
}

#[test]
fn robust_force_allows_zero_eps() {
    let tmp = tempfile::tempdir().unwrap();
    let x = write(tmp.path(), "x.csv", "0,1\n2,3\n-1,0\n4,4\n");
    let out_dir = tmp.path().join("r");
    let v = json_stdout(&run(&["robust", &x, "--eps", "0", "--force", "--seed", "1", "--out", &s(&out_dir)]));
    assert_eq!(v["removed_mass"].as_f64(), Some(0.0));
    let w: Vec<f64> = std::fs::read_to_string(out_dir.join("weights.csv"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(w.len(), 4);
    assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-12));
}

#[test]
fn robust_downweights_outlier_and_reports_against_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rows = String::new();
    for i in 0..40 {
        let t = i as f64 / 40.0;
        rows.push_str(&format!("{},{}\n", (t * 6.3).cos(), (t * 6.3).sin()));
    }
    let reference = write(tmp.path(), "ref.csv", &rows);
    rows.push_str("60,60\n");
    let x = write(tmp.path(), "x.csv", &rows);
    let v = json_stdout(&run(&["robust", &x, "--eps", "0.05", "--seed", "1", "--reference", &reference]));
    let mean: Vec<f64> = v["filtered_mean"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(mean.iter().all(|m| m.abs() < 0.5), "{mean:?}");
    let report = &v["report"];
    assert!(report["mean_gap"].as_f64().unwrap() <= report["msw1_lower"].as_f64().unwrap());
}

#[test]
fn experiment_rates_smoke_and_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cfg.json", r#"{"d_grid":[2],"n_grid":[40,80,160],"m":10,"runs":3}"#);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let manifest = json_stdout(&run(&["experiment", "rates", "--config", &cfg, "--seed", "9", "--out", &s(&a)]));
    assert!(manifest["summary"]["slope_vs_n"]["2"]["slope"].is_number());
    assert_eq!(manifest["input_hash"].as_str().unwrap().len(), 64);
    json_stdout(&bin().args(["experiment", "rates", "--config", &cfg, "--seed", "9", "--out", &s(&b)]).env("SLICED_OT_WORKERS", "2").output().unwrap());
    for name in ["rates_gaussian_2.csv", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let csv = std::fs::read_to_string(a.join("rates_gaussian_2.csv")).unwrap();
    assert!(csv.starts_with("x,mean,band_low,band_high\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn experiment_config_errors_list_every_bad_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cfg.json", r#"{"d_grid":[2],"typo_one":1,"typo_two":2}"#);
    let out = run(&["experiment", "rates", "--config", &cfg, "--seed", "1", "--out", &s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("typo_one") && err.contains("typo_two"), "{err}");
}

#[test]
fn experiment_robust_emits_both_panels() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "cfg.json",
        r#"{"d_grid":[10,20],"runs":2,"n_factor":1.0,"ascent_iterations":20,"ring_atoms":200}"#,
    );
    let out_dir = tmp.path().join("o");
    let manifest = json_stdout(&run(&["experiment", "robust", "--config", &cfg, "--seed", "2", "--out", &s(&out_dir)]));
    for name in ["robust_left-mean-gap_all.csv", "robust_left-msw1_all.csv", "robust_right-w1_all.csv", "robust_right-msw1_all.csv", "robust_right-ratio_all.csv"] {
        assert!(out_dir.join(name).exists(), "{name} missing");
        assert!(manifest["files"][name].is_string());
    }
    assert_eq!(manifest["summary"]["left_gap_dominated"].as_bool(), Some(true));
}
