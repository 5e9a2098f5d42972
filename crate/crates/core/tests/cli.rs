//! End-to-end tests of the `confspec` binary: outputs, exit codes and
//! determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TORUS: &str = r#"{ "schema": 1, "operator": { "kind": "conformal_laplacian_torus", "resolution": 16 } }"#;

const DIRAC: &str = r#"{
    "schema": 1,
    "operator": { "kind": "dirac_circle", "resolution": 64, "spin": "antiperiodic" },
    "factors": [ { "terms": [ { "kx": 1, "ky": 0, "phase": "cos", "coef": 1.0 } ] } ],
    "eps_grid": [-0.4, 0.0, 0.4],
    "window": { "lo": -3.0, "hi": 3.0 },
    "alpha": 2.5,
    "continuity": { "threshold": 1.0, "index_count": 12 }
}"#;

const SPLIT24: &str = r#"{
    "schema": 1,
    "operator": { "kind": "conformal_laplacian_torus", "resolution": 24 },
    "alpha": 4.5,
    "tolerances": { "gamma": 1e-3 }
}"#;

fn config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn confspec(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_confspec"));
    cmd.args(args).arg("--out").arg(out).env_remove("CONFSPEC_THREADS");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_values(path: &Path) -> Vec<f64> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn spectrum_of_torus_starts_with_known_values() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "torus.json", TORUS);
    let o = confspec(&["spectrum"], Some(&cfg), tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let vals = csv_values(&tmp.path().join("spectrum.csv"));
    let expected = [0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
    for (v, e) in vals.iter().zip(expected) {
        assert!((v - e).abs() < 1e-10, "{v} vs {e}");
    }
    let clusters = json(&tmp.path().join("clusters.json"));
    assert_eq!(clusters["schema"], 1);
    assert_eq!(clusters["kernel_dimension"], 1);
    let mults: Vec<u64> =
        clusters["clusters"].as_array().unwrap().iter().take(5).map(|c| c["multiplicity"].as_u64().unwrap()).collect();
    assert_eq!(mults, [1, 4, 4, 4, 8]);
}

#[test]
fn spectrum_of_dirac_has_doubled_half_integers() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "dirac.json", DIRAC);
    assert_eq!(code(&confspec(&["spectrum"], Some(&cfg), tmp.path())), 0);
    let mut vals = csv_values(&tmp.path().join("spectrum.csv"));
    vals.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    for v in &vals[..4] {
        assert!((v.abs() - 0.5).abs() < 1e-10);
    }
    assert!(vals[4].abs() > 1.0);
}

#[test]
fn csv_values_carry_seventeen_significant_digits() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "torus.json", TORUS);
    confspec(&["spectrum"], Some(&cfg), tmp.path());
    let text = fs::read_to_string(tmp.path().join("spectrum.csv")).unwrap();
    let field = text.lines().nth(2).unwrap().split(',').nth(1).unwrap();
    let mantissa = field.split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17, "{field}");
}

#[test]
fn bad_json_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "bad.json", r#"{ "schema": 1, "operator": "#);
    let o = confspec(&["spectrum"], Some(&cfg), tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("parse error"));
}

#[test]
fn unknown_fields_and_missing_zero_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let a = config(tmp.path(), "a.json", r#"{ "schema": 1, "windw": { "lo": 0, "hi": 1 } }"#);
    assert_eq!(code(&confspec(&["spectrum"], Some(&a), tmp.path())), 2);
    let b = config(tmp.path(), "b.json", r#"{ "schema": 1, "eps_grid": [0.1, 0.2] }"#);
    assert_eq!(code(&confspec(&["track"], Some(&b), tmp.path())), 2);
    let c = config(tmp.path(), "c.json", r#"{ "schema": 1, "operator": { "kind": "dirac_circle", "resolution": 7 } }"#);
    assert_eq!(code(&confspec(&["spectrum"], Some(&c), tmp.path())), 2);
}

#[test]
fn invalid_thread_cap_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_confspec"))
        .args(["spectrum", "--out"])
        .arg(tmp.path())
        .env("CONFSPEC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn track_reports_slopes_for_constant_and_cos2x() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "t.json",
        r#"{ "schema": 1,
             "factors": [ { "terms": [ { "kx": 0, "ky": 0, "phase": "cos", "coef": 1.0 } ] },
                          { "terms": [ { "kx": 2, "ky": 0, "phase": "cos", "coef": 1.0 } ] } ],
             "eps_grid": [-0.1, 0.0, 0.1] }"#,
    );
    let o = confspec(&["track", "--emit-plots"], Some(&cfg), tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // f ≡ 1 rescales λ ↦ e^{-ε}λ: every slope is -λ.
    let constant = json(&tmp.path().join("slopes_0.json"));
    for c in constant["comparisons"].as_array().unwrap() {
        let lambda = c["value"].as_f64().unwrap();
        for key in ["predicted", "measured"] {
            for s in c[key].as_array().unwrap() {
                assert!((s.as_f64().unwrap() + lambda).abs() < 1e-4 * lambda.max(1.0));
            }
        }
    }
    let cos2x = json(&tmp.path().join("slopes_1.json"));
    let one = &cos2x["comparisons"][0];
    assert!((one["value"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    for key in ["predicted", "measured"] {
        let s: Vec<f64> = one[key].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        for (a, b) in s.iter().zip([-0.5, 0.0, 0.0, 0.5]) {
            assert!((a - b).abs() < 1e-4, "{key}: {s:?}");
        }
    }
    assert_eq!(json(&tmp.path().join("growth_1.json"))["pass"], true);
    let svg = fs::read_to_string(tmp.path().join("branches_1.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    assert!(tmp.path().join("branches_1.csv").exists());
}

#[test]
fn track_dirac_matches_the_length_oracle() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "dirac.json", DIRAC);
    assert_eq!(code(&confspec(&["track"], Some(&cfg), tmp.path())), 0);
    let oracle = json(&tmp.path().join("oracle_0.json"));
    let row = oracle["rows"].as_array().unwrap().iter().find(|r| r["eps"] == 0.4).unwrap();
    let lowest = row["lowest_positive"].as_f64().unwrap();
    // 0.5 / I₀(0.2)
    assert!((lowest - 0.4950372379301185).abs() <= 1e-8, "{lowest}");
    assert!(row["max_relative_error"].as_f64().unwrap() < 1e-8);
}

#[test]
fn split_torus_is_deterministic_and_replayable() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "split.json", SPLIT24);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&confspec(&["split"], Some(&cfg), &a)), 0);
    assert_eq!(code(&confspec(&["split"], Some(&cfg), &b)), 0);
    for f in ["plan.json", "final_spectrum.csv", "steps.log"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }
    let plan = json(&a.join("plan.json"));
    assert!(plan["steps"].as_array().unwrap().len() <= 10);
    assert_eq!(plan["complete"], true);
    assert_eq!(plan["final_spectrum"]["window_eigenvalues"].as_array().unwrap().len(), 12);

    let replay = config(
        tmp.path(),
        "replay.json",
        &format!(
            r#"{{ "schema": 1, "operator": {{ "kind": "conformal_laplacian_torus", "resolution": 24 }},
                 "replay_plan": {:?} }}"#,
            a.join("plan.json")
        ),
    );
    let r = tmp.path().join("r");
    let o = confspec(&["split"], Some(&replay), &r);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("reproduces"));
    assert_eq!(fs::read(r.join("final_spectrum.csv")).unwrap(), fs::read(a.join("final_spectrum.csv")).unwrap());
}

#[test]
fn split_step_exhaustion_exits_three_with_partial_plan() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "split.json", SPLIT24);
    let o = confspec(&["split", "--max-steps", "0"], Some(&cfg), tmp.path());
    assert_eq!(code(&o), 3);
    let plan = json(&tmp.path().join("plan.json"));
    assert_eq!(plan["exhausted"], true);
    assert_eq!(plan["final_spectrum"]["degeneracy"], 9);
}

#[test]
fn split_dirac_is_empty_with_rigid_verdicts() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "dirac.json", DIRAC);
    assert_eq!(code(&confspec(&["split"], Some(&cfg), tmp.path())), 0);
    let plan = json(&tmp.path().join("plan.json"));
    assert!(plan["steps"].as_array().unwrap().is_empty());
    assert!(plan["verdicts"].as_array().unwrap().iter().all(|v| v["verdict"] == "rigid"));
    assert!(fs::read_to_string(tmp.path().join("steps.log")).unwrap().contains("rigid"));
}

#[test]
fn rigidity_and_windows_write_reports() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "torus.json", TORUS);
    assert_eq!(code(&confspec(&["rigidity"], Some(&cfg), tmp.path())), 0);
    let r = json(&tmp.path().join("rigidity.json"));
    let first = &r["clusters"][0];
    assert!((first["score"].as_f64().unwrap() - 3f64.sqrt() / 2.0 / std::f64::consts::PI.powi(2)).abs() < 1e-6);
    assert_eq!(first["verdict"], "splittable");

    assert_eq!(code(&confspec(&["windows"], Some(&cfg), tmp.path())), 0);
    let w = json(&tmp.path().join("windows.json"));
    assert_eq!(w["count"], 12);
    assert_eq!(w["factors"][0]["stability"]["pass"], true);
    let sweep = fs::read_to_string(tmp.path().join("window_sweep_0.csv")).unwrap();
    assert!(sweep.starts_with("eps,count,clean"));
}

#[test]
fn verify_passes_with_defaults_and_names_failures() {
    let tmp = TempDir::new().unwrap();
    let ok = confspec(&["verify", "--emit-plots"], None, &tmp.path().join("ok"));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(code(&ok), 0, "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 11);
    assert!(tmp.path().join("ok/verify.json").exists());
    assert!(fs::read_dir(tmp.path().join("ok")).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "svg")));

    let absurd = config(tmp.path(), "absurd.json", r#"{ "schema": 1, "tolerances": { "cluster_tol": 10 } }"#);
    let bad = confspec(&["verify"], Some(&absurd), &tmp.path().join("bad"));
    assert_eq!(code(&bad), 1);
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.contains("[FAIL]  1 exact background spectra"), "{stdout}");
    assert!(stdout.contains("failed: 1 (exact background spectra)"));
}
