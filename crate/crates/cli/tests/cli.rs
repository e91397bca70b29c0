use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn qleak(args: &[&str], threads: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qleak"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, file: &str, json: &str) -> PathBuf {
    let p = dir.join(file);
    fs::write(&p, json).unwrap();
    p
}

fn run_ok(experiment: &str, config: &Path, out: &Path, threads: usize) {
    let o = qleak(
        &[experiment, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()],
        threads,
    );
    assert!(
        o.status.success(),
        "{experiment} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn manifest(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.manifest.json"))).unwrap()).unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# qleak "), "schema line");
    lines.skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn exact_rb_keeps_ground_state() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "rb.json",
        r#"{"experiment": "rb", "seed": 5, "noise": {"t1_10": null, "t1_21": null, "tphi1": null, "tphi2": null, "heat_12": 0},
            "sweep": {"lengths": [0, 1, 10, 100], "num_sequences": 12, "mode": "exact-unitary"}}"#,
    );
    let out = tmp.path().join("out");
    run_ok("rb", &cfg, &out, 2);
    let rows = data_rows(&out.join("rb.csv"));
    assert_eq!(rows.len(), 4);
    for r in rows {
        let p0: f64 = r[1].parse().unwrap();
        assert!((p0 - 1.0).abs() < 1e-12, "P0 = {p0}");
    }
    let m = manifest(&out, "rb");
    assert_eq!(m["tool"], "qleak");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["sweep"]["num_sequences"], 12);
    assert!(m["failures"].as_array().unwrap().is_empty());
}

#[test]
fn malformed_config_reports_path_and_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        (r#"{"experiment": "rb", "sweep": {"lengths": [1, "two"]}}"#, "sweep.lengths[1]"),
        (r#"{"experiment": "rb", "sweep": {"lengths": [1], "bogus": 3}}"#, "bogus"),
        (r#"{"experiment": "rb", "noise": {"t1": 3}, "sweep": {"lengths": [1]}}"#, "noise.t1"),
        (r#"{"experiment": "heating", "sweep": {"delays_us": [1]}}"#, "experiment"),
        (r#"{"experiment": "rb", "sweep": {"lengths": [5, 1]}}"#, "sweep.lengths"),
        (r#"{"experiment": "rb", "sweep": {"lengths": [1]}"#, "line"),
    ];
    for (i, (json, needle)) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.json"), json);
        let o = qleak(&["rb", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()], 1);
        assert_eq!(o.status.code(), Some(2), "case {i}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "case {i}: {err}");
    }
}

#[test]
fn manifest_rerun_is_byte_identical_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "alpha.json",
        r#"{"experiment": "leakage-vs-alpha", "seed": 17, "gate": {"duration": 10},
            "sweep": {"alphas": [0.0, 1.0], "lengths": [1, 4, 12, 30], "num_sequences": 4, "dt": 0.05}}"#,
    );
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    run_ok("leakage-vs-alpha", &cfg, &first, 1);
    run_ok("leakage-vs-alpha", &first.join("leakage-vs-alpha.manifest.json"), &second, 4);
    for f in ["leakage-vs-alpha.csv", "leakage-vs-alpha.curves.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    let a = manifest(&first, "leakage-vs-alpha");
    let b = manifest(&second, "leakage-vs-alpha");
    assert_eq!(a["results"], b["results"]);
    assert_eq!(a["config"]["sweep"], b["config"]["sweep"]);
}

#[test]
fn seed_override_changes_samples() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "rb.json",
        r#"{"experiment": "rb", "gate": {"duration": 10}, "sweep": {"lengths": [3, 10], "num_sequences": 3, "dt": 0.05}}"#,
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok("rb", &cfg, &a, 1);
    let o = qleak(
        &["rb", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "99"],
        1,
    );
    assert!(o.status.success());
    assert_eq!(manifest(&b, "rb")["seed"], 99);
    assert_ne!(fs::read(a.join("rb.csv")).unwrap(), fs::read(b.join("rb.csv")).unwrap());
}

#[test]
fn heating_recovers_rate() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "heat.json",
        r#"{"experiment": "heating", "sweep": {"delays_us": [0, 5, 10, 15, 20, 30, 40, 60, 80, 100]}}"#,
    );
    run_ok("heating", &cfg, tmp.path(), 1);
    let m = manifest(tmp.path(), "heating");
    let rate = m["results"]["rate_per_ms"].as_f64().unwrap();
    assert!((rate * 2.2 - 1.0).abs() < 0.05, "rate {rate}");
    assert_eq!(m["config"]["sweep"]["model"]["kind"], "three-rate");
}

#[test]
fn failed_point_is_recorded_and_exit_is_1() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "det.json",
        r#"{"experiment": "detune-sweep",
            "sweep": {"durations": [10], "alphas": [0.0, 1.0], "dt": 0.05,
                      "search": {"min_mhz": -30, "max_mhz": 4, "step_mhz": 2, "tol_mhz": 0.1}}}"#,
    );
    let o = qleak(
        &["detune-sweep", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        1,
    );
    assert_eq!(o.status.code(), Some(1));
    let rows = data_rows(&tmp.path().join("detune-sweep.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][5], "failed");
    assert_eq!(rows[1][5], "ok");
    let m = manifest(tmp.path(), "detune-sweep");
    let failures = m["failures"].as_array().unwrap();
    assert_eq!(failures.len(), 1);
    assert!(failures[0]["point"].as_str().unwrap().contains("alpha=0"));
}

#[test]
fn calibration_overlay_is_resolved_into_manifest() {
    let tmp = TempDir::new().unwrap();
    let cal = r#"{"pi_amplitude": 0.64, "half_pi_amplitude": 0.315, "detuning_mhz": -1.5, "alpha1": 0.5,
                  "alpha2": 0.0, "r_clifford": 0.001, "objective_history": []}"#;
    write_config(tmp.path(), "cal.json", cal);
    let cfg = write_config(
        tmp.path(),
        "rb.json",
        r#"{"experiment": "rb", "calibration_file": "cal.json", "gate": {"duration": 10},
            "sweep": {"lengths": [1, 2], "num_sequences": 2, "dt": 0.05}}"#,
    );
    let out = tmp.path().join("out");
    run_ok("rb", &cfg, &out, 1);
    let m = manifest(&out, "rb");
    let gate = &m["config"]["gate"];
    assert_eq!(gate["pi_amplitude"], 0.64);
    assert_eq!(gate["detuning_mhz"], -1.5);
    assert!(m["config"].get("calibration_file").is_none());
    // the manifest no longer needs the calibration file
    fs::remove_file(tmp.path().join("cal.json")).unwrap();
    let again = tmp.path().join("again");
    run_ok("rb", &out.join("rb.manifest.json"), &again, 1);
    assert_eq!(fs::read(out.join("rb.csv")).unwrap(), fs::read(again.join("rb.csv")).unwrap());
}

#[test]
fn every_subcommand_runs_on_a_small_config() {
    let tmp = TempDir::new().unwrap();
    let quiet = r#""noise": {"t1_10": 22, "t1_21": 18, "heat_12": 0.4545, "tphi1": 8, "tphi2": null}"#;
    let cases = [
        (
            "decay-rates",
            r#"{"experiment": "decay-rates", "gate": {"duration": 10}, NOISE,
                "sweep": {"alphas": [0.5], "lengths": [1, 5, 15, 40], "num_sequences": 3, "dt": 0.05}}"#,
        ),
        (
            "leakage-vs-length",
            r#"{"experiment": "leakage-vs-length", NOISE,
                "sweep": {"durations": [12], "alphas": [1.0], "lengths": [1, 5, 15, 40], "num_sequences": 3,
                          "calibrate_amplitude": false, "dt": 0.05}}"#,
        ),
        (
            "tomography",
            r#"{"experiment": "tomography", "gate": {"duration": 10, "alpha1": 1.0}, NOISE,
                "sweep": {"fractions": [0.0, 0.5, 1.0], "detunings_mhz": [0.0], "dt": 0.05}}"#,
        ),
        (
            "drag2-scan",
            r#"{"experiment": "drag2-scan", "gate": {"duration": 10}, NOISE,
                "sweep": {"alpha1": [0.0, 1.0], "alpha2": [0.0], "length": 10, "num_sequences": 2,
                          "calibrate_amplitude": false, "dt": 0.05}}"#,
        ),
        (
            "calibrate",
            r#"{"experiment": "calibrate", "gate": {"duration": 10, "alpha1": 0.5}, NOISE,
                "sweep": {"tune": {"budget": {"lengths": [1, 3, 6, 10], "num_sequences": 2, "seed": 0},
                                   "nm_max_iters": 2, "dt": 0.05}}}"#,
        ),
    ];
    for (exp, json) in cases {
        let cfg = write_config(tmp.path(), &format!("{exp}.json"), &json.replace("NOISE", quiet));
        let out = tmp.path().join(exp);
        run_ok(exp, &cfg, &out, 1);
        let m = manifest(&out, exp);
        for f in m["outputs"].as_array().unwrap() {
            assert!(out.join(f.as_str().unwrap()).exists(), "{exp}: {f}");
        }
        assert!(!data_rows(&out.join(format!("{exp}.csv"))).is_empty(), "{exp}");
    }
    let tomo = data_rows(&tmp.path().join("tomography/tomography.csv"));
    assert_eq!(tomo.len(), 6);
    assert_eq!(&tomo[0][3..6], ["0", "0", "1"]);
    let cal = tmp.path().join("calibrate/calibrate.calibration.json");
    let parsed: Value = serde_json::from_str(&fs::read_to_string(cal).unwrap()).unwrap();
    assert!(parsed["pi_amplitude"].as_f64().unwrap() > 0.0);
}
