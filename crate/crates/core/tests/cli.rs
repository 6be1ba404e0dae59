use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_policy-forge");

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_cmd(cmd: &str, scenario: &Path, out: &Path) -> Output {
    run(&[
        cmd,
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn write_scenario(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Column `name` as `(run, t, value)` rows; `run` is empty when the CSV has none.
fn column(csv: &str, name: &str) -> Vec<(String, f64, f64)> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == name).unwrap();
    let t_col = header.iter().position(|h| *h == "t").unwrap();
    let run_col = header.iter().position(|h| *h == "run");
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                run_col.map_or(String::new(), |r| f[r].to_string()),
                f[t_col].parse().unwrap(),
                f[col].parse().unwrap(),
            )
        })
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const TOY: &str = r#"{
  "grid": { "t_end": 10, "n_steps": 1000 },
  "valuation": { "growth_rate": 0.0 },
  "policy": { "toy_ss": { "c_in": 1, "c_out": 3 } },
  "perturbations": [ { "shape": "linear", "epsilon": 0.01 } ]
}"#;

#[test]
fn simulate_toy_forecast_and_linear_drift() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let out_status = run_cmd("simulate", &scenarios().join("toy_ss.json"), &out);
    assert_eq!(
        out_status.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out_status.stderr)
    );
    let csv = std::fs::read_to_string(out.join("simulate.csv")).unwrap();
    assert!(csv.starts_with("run,t,q_p,qdot_p,Q,V_running\n"));
    let v = column(&csv, "V_running");
    let last_of = |run: &str| v.iter().rfind(|r| r.0 == run).unwrap().2;
    assert!(last_of("forecast").abs() < 1e-8);
    assert!((last_of("linear@0.01") + 2.0).abs() < 1e-6);
}

#[test]
fn misspelled_key_exits_2_and_names_it() {
    let dir = TempDir::new().unwrap();
    let bad = write_scenario(&dir, "bad.json", &TOY.replace("growth_rate", "growht_rate"));
    for cmd in ["simulate", "check", "extend"] {
        let out = run_cmd(cmd, &bad, &dir.path().join("out"));
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains("growht_rate"));
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_json_and_missing_file_exit_2() {
    let dir = TempDir::new().unwrap();
    let broken = write_scenario(&dir, "broken.json", "{ \"grid\": ");
    assert_eq!(run_cmd("check", &broken, dir.path()).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(
        run_cmd("check", &missing, dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["check", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn check_verdicts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("base");
    assert_eq!(
        run_cmd("check", &scenarios().join("toy_ss.json"), &out)
            .status
            .code(),
        Some(0)
    );
    let report = json(&out.join("check.json"));
    assert_eq!(report["verdict"], "NonRobust");
    assert!((report["el_residual_sup"].as_f64().unwrap() - 4.0).abs() < 1e-6);
    for key in [
        "el_residual_sup",
        "boundary_residual",
        "scaling_exponent",
        "scaling_r2",
        "verdict",
        "per_family",
    ] {
        assert!(report.get(key).is_some(), "{key}");
    }

    let out = dir.path().join("robust");
    assert_eq!(
        run_cmd("check", &scenarios().join("toy_ss_robust.json"), &out)
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        json(&out.join("check.json"))["verdict"],
        "SuperRobustEmpirical"
    );
}

#[test]
fn parameter_free_linear_form_is_a_zero_response() {
    let dir = TempDir::new().unwrap();
    let s = write_scenario(
        &dir,
        "flat.json",
        r#"{"grid":{"t_end":5,"n_steps":200},
            "parameters":[{"name":"x","forecast":{"family":"linear","args":[1,0.2]}}],
            "policy":{"linear_form":{"coeff_const":0.3,"coeff_time":[0.1]}}}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(run_cmd("check", &s, &out).status.code(), Some(0));
    let report = json(&out.join("check.json"));
    assert_ne!(report["verdict"], "NonRobust");
    assert_eq!(report["zero_response"], true);
    assert!(report["scaling_exponent"].is_null());
}

#[test]
fn extend_toy_profiles() {
    let dir = TempDir::new().unwrap();
    for (scenario, a0, tol) in [
        ("toy_ss.json", 40.0, 1e-4),
        ("toy_ss_r05.json", 51.8977, 1e-3),
    ] {
        let out = dir.path().join(scenario);
        let res = run_cmd("extend", &scenarios().join(scenario), &out);
        assert_eq!(
            res.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
        let csv = std::fs::read_to_string(out.join("extend_a.csv")).unwrap();
        let a = column(&csv, "A");
        assert!((a[0].2 - a0).abs() < tol, "{}", a[0].2);
        assert_eq!(a.last().unwrap().2, 0.0);
        assert!(csv.lines().last().unwrap().starts_with("10,0,"));
        let report = json(&out.join("extend.json"));
        assert_eq!(report["verification"]["verdict"], "SuperRobustEmpirical");
        assert_eq!(report["a_end"].as_f64(), Some(0.0));
    }
}

#[test]
fn extend_constant_policy_has_zero_profile() {
    let dir = TempDir::new().unwrap();
    let s = write_scenario(
        &dir,
        "const.json",
        r#"{"grid":{"t_end":4,"n_steps":100},
            "parameters":[{"name":"x","forecast":{"family":"linear","args":[1,0.2]}}],
            "policy":{"linear_form":{"coeff_const":0.7}}}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(run_cmd("extend", &s, &out).status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("extend_a.csv")).unwrap();
    assert!(column(&csv, "A").iter().all(|r| r.2 == 0.0));
    assert!(column(&csv, "C").iter().all(|r| (r.2 + 0.7).abs() < 1e-12));
}

#[test]
fn extend_rejects_multi_parameter_policies() {
    let dir = TempDir::new().unwrap();
    let out = run_cmd(
        "extend",
        &scenarios().join("two_parameter.json"),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extension requires single parameter"));
}

#[test]
fn extend_rejects_derivative_policies() {
    let dir = TempDir::new().unwrap();
    let out = run_cmd(
        "extend",
        &scenarios().join("toy_ss_robust.json"),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn non_finite_policy_exits_3() {
    let dir = TempDir::new().unwrap();
    let s = write_scenario(
        &dir,
        "huge.json",
        r#"{"grid":{"t_end":4,"n_steps":100},
            "parameters":[{"name":"x","forecast":{"family":"constant","args":[1e300]}}],
            "policy":{"linear_form":{"coeff_q":{"x":1e300}}}}"#,
    );
    assert_eq!(
        run_cmd("simulate", &s, &dir.path().join("out"))
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn short_history_is_rejected_at_load() {
    let dir = TempDir::new().unwrap();
    let s = write_scenario(
        &dir,
        "short.json",
        r#"{"grid":{"t_end":4,"n_steps":100,"history_steps":10},
            "parameters":[{"name":"x","kernel":"moving_average","kernel_arg":1.0,
                           "forecast":{"family":"constant","args":[1]}}],
            "policy":{"linear_form":{"coeff_q":{"x":1}}}}"#,
    );
    let out = run_cmd("simulate", &s, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("history"));
}

#[test]
fn toy_ss_defaults() {
    let dir = TempDir::new().unwrap();
    let out = run(&["toy-ss", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("toy_ss.csv")).unwrap();
    assert!(csv.starts_with(
        "t,p_forecast,p_observed,D_PG_leading,D_PG_exact,D_R,V_base_running,V_robust_running\n"
    ));
    let at = |name: &str, t: f64| {
        column(&csv, name)
            .into_iter()
            .find(|r| (r.1 - t).abs() < 1e-12)
            .unwrap()
            .2
    };
    assert!((at("D_PG_leading", 5.0) - 1.26667).abs() < 1e-5);
    assert!((at("D_R", 5.0) - 1.26667).abs() < 1e-5);
    assert!((at("V_base_running", 10.0) + 2.0).abs() < 1e-6);
    assert!(at("V_robust_running", 10.0).abs() < 1e-8);
}

#[test]
fn toy_ss_without_drift_pays_c_in() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "toy-ss",
        "--out",
        dir.path().to_str().unwrap(),
        "--epsilon",
        "0",
        "--c-in",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("toy_ss.csv")).unwrap();
    for name in ["D_PG_leading", "D_PG_exact", "D_R"] {
        assert!(
            column(&csv, name).iter().all(|r| (r.2 - 2.0).abs() < 1e-12),
            "{name}"
        );
    }
}

#[test]
fn toy_ss_flags_override_scenario() {
    let dir = TempDir::new().unwrap();
    let s = scenarios().join("toy_ss_r05.json");
    let out = run(&[
        "toy-ss",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--t-end",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("toy_ss.csv")).unwrap();
    let v = column(&csv, "V_base_running");
    let (_, t, last) = v.last().unwrap();
    assert_eq!(*t, 5.0);
    let exact = -0.04 * ((0.25f64).exp() - 1.0 - 0.25) / 0.0025;
    assert!((last - exact).abs() < 1e-8 * exact.abs());
}

#[test]
fn toy_ss_rejects_bad_flags() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(
        run(&["toy-ss", "--out", d, "--c-out=-1"]).status.code(),
        Some(4)
    );
    assert_eq!(
        run(&["toy-ss", "--out", d, "--rate", "fast"]).status.code(),
        Some(2)
    );
    // p̂ reaches 1 before T
    assert_eq!(
        run(&["toy-ss", "--out", d, "--epsilon", "0.2"])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn outputs_are_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    for cmd in ["simulate", "check", "extend"] {
        for scenario in ["toy_ss.json", "toy_ss_r05.json"] {
            let a = dir.path().join(format!("{cmd}-{scenario}-a"));
            let b = dir.path().join(format!("{cmd}-{scenario}-b"));
            assert_eq!(
                run_cmd(cmd, &scenarios().join(scenario), &a).status.code(),
                Some(0)
            );
            assert_eq!(
                run_cmd(cmd, &scenarios().join(scenario), &b).status.code(),
                Some(0)
            );
            let mut names: Vec<_> = std::fs::read_dir(&a)
                .unwrap()
                .map(|e| e.unwrap().file_name())
                .collect();
            names.sort();
            assert!(!names.is_empty());
            for name in names {
                assert_eq!(
                    std::fs::read(a.join(&name)).unwrap(),
                    std::fs::read(b.join(&name)).unwrap()
                );
            }
        }
    }
}

#[test]
fn every_bundled_scenario_simulates_and_checks() {
    let dir = TempDir::new().unwrap();
    let mut entries: Vec<_> = std::fs::read_dir(scenarios())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    assert!(entries.len() >= 5);
    for path in entries {
        for cmd in ["simulate", "check"] {
            let out = run_cmd(cmd, &path, &dir.path().join("out"));
            assert_eq!(
                out.status.code(),
                Some(0),
                "{cmd} {}: {}",
                path.display(),
                String::from_utf8_lossy(&out.stderr)
            );
        }
    }
}

#[test]
fn floats_use_twelve_significant_digits() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        run(&[
            "toy-ss",
            "--out",
            dir.path().to_str().unwrap(),
            "--rate",
            "0.05"
        ])
        .status
        .code(),
        Some(0)
    );
    let csv = std::fs::read_to_string(dir.path().join("toy_ss.csv")).unwrap();
    for field in csv.lines().skip(1).flat_map(|l| l.split(',')) {
        let digits = field
            .trim_start_matches('-')
            .split('e')
            .next()
            .unwrap()
            .chars()
            .filter(char::is_ascii_digit)
            .collect::<String>();
        assert!(digits.trim_start_matches('0').len() <= 12, "{field}");
    }
}
