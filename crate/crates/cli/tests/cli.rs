//! End-to-end runs of the `isojet` binary on the bundled scenarios.
//!
//! Reports are compared with `scenarios/golden/` field by field, numbers up
//! to a small tolerance. `ISOJET_BLESS=1` rewrites the golden files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario_file(name: &str) -> PathBuf {
    root().join("scenarios").join(name)
}

fn isojet(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isojet"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_report(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 + 1e-6 * a.abs().max(b.abs())
}

fn same(path: &str, a: &Value, b: &Value) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if close(x, y) {
                Ok(())
            } else {
                Err(format!("{path}: {x:e} vs golden {y:e}"))
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => x
            .iter()
            .zip(y)
            .enumerate()
            .try_for_each(|(i, (x, y))| same(&format!("{path}[{i}]"), x, y)),
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => {
            x.iter().try_for_each(|(k, v)| {
                let w = y
                    .get(k)
                    .ok_or_else(|| format!("{path}.{k} missing from golden"))?;
                same(&format!("{path}.{k}"), v, w)
            })
        }
        _ if a == b => Ok(()),
        _ => Err(format!("{path}: {a} vs golden {b}")),
    }
}

/// Runs `command` over every scenario of `file`, checks the exit code and
/// compares each JSON report with its golden copy.
fn golden(command: &str, file: &str, expected_code: i32) {
    let out = tempfile::tempdir().unwrap();
    let cfg = scenario_file(file);
    let o = isojet(&[command, "--config", cfg.to_str().unwrap()], out.path());
    assert_eq!(
        code(&o),
        expected_code,
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    let bless = std::env::var_os("ISOJET_BLESS").is_some();
    let dir = root().join("scenarios/golden");
    let mut seen = 0;
    for entry in std::fs::read_dir(out.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        seen += 1;
        assert!(
            path.with_extension("csv").exists(),
            "no plot data next to {}",
            path.display()
        );
        let got = read_report(&path);
        let want_path = dir.join(path.file_name().unwrap());
        if bless {
            std::fs::write(
                &want_path,
                serde_json::to_string_pretty(&got).unwrap() + "\n",
            )
            .unwrap();
            continue;
        }
        let want = read_report(&want_path);
        if let Err(e) = same("report", &got, &want) {
            panic!("{} differs from golden: {e}", path.display());
        }
    }
    assert!(seen > 0, "no reports written");
}

#[test]
fn invariants_golden() {
    golden("invariants", "invariants.toml", 0);
}

#[test]
fn check_golden() {
    golden("check", "check.toml", 0);
}

#[test]
fn propagate_golden() {
    golden("propagate", "propagate.toml", 0);
}

#[test]
fn track_golden() {
    golden("track", "track.toml", 0);
}

#[test]
fn bergman_golden() {
    golden("bergman", "bergman.toml", 0);
}

#[test]
fn demo_discontinuity_golden_exits_flagged() {
    golden("demo-discontinuity", "demo.toml", 2);
}

#[test]
fn malformed_config_exits_1_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[[scenario]]\nid = \"x\"\nmetric = { id = \"euclidean\", params = [2] \n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = isojet(&["invariants", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "no location in: {err}");
    assert!(!out.exists());

    // well-formed TOML with an unknown key is rejected the same way
    std::fs::write(&cfg, "[[scenario]]\nid = \"x\"\nmetrik = 1\n").unwrap();
    let o = isojet(&["invariants", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("metrik"));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = scenario_file("invariants.toml");
    let cfg = cfg.to_str().unwrap();
    for args in [
        vec!["no-such-command"],
        vec!["invariants"],
        vec!["invariants", "--config", "/nonexistent.toml"],
        vec!["invariants", "--config", cfg, "--scenario", "nope"],
        vec!["check", "--config", cfg],
        vec!["invariants", "--config", cfg, "--tol-scale", "-1"],
        vec!["invariants", "--config", cfg, "--seed", "x"],
    ] {
        let o = isojet(&args, &out);
        assert_eq!(code(&o), 1, "{args:?}");
    }
    assert!(!out.exists());
    assert_eq!(code(&isojet(&["--help"], &out)), 0);
}

#[test]
fn tol_scale_turns_a_pass_into_a_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario_file("check.toml");
    let args = [
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--scenario",
        "poincare-mobius",
    ];
    let o = isojet(&[&args[..], &["--tol-scale", "1e-9"]].concat(), tmp.path());
    assert_eq!(code(&o), 1);
    let r = read_report(&tmp.path().join("poincare-mobius.check.json"));
    assert_eq!(r["status"], "fail");
    assert_eq!(r["tol_scale"], 1e-9);
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_counts() {
    let cfg = scenario_file("bergman.toml");
    let run = |threads: &str, seed: &str| {
        let out = tempfile::tempdir().unwrap();
        let o = Command::new(env!("CARGO_BIN_EXE_isojet"))
            .args([
                "bergman",
                "--config",
                cfg.to_str().unwrap(),
                "--seed",
                seed,
                "--out-dir",
            ])
            .arg(out.path())
            .env("ISOJET_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let mut files: Vec<_> = std::fs::read_dir(out.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p).unwrap();
                if p.extension().unwrap() == "json" {
                    // drop the one wall-clock field
                    serde_json::to_string_pretty(&read_report(p)).unwrap()
                } else {
                    text
                }
            })
            .collect::<Vec<_>>()
    };
    let a = run("1", "7");
    assert_eq!(a, run("1", "7"));
    assert_eq!(a, run("2", "7"));
    assert_ne!(a, run("1", "8"));
}

#[test]
fn rotation_track_csv_has_a_constant_linear_part() {
    let out = tempfile::tempdir().unwrap();
    let cfg = scenario_file("track.toml");
    let o = isojet(
        &[
            "track",
            "--config",
            cfg.to_str().unwrap(),
            "--scenario",
            "rotation-track",
        ],
        out.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.path().join("rotation-track.track.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('q') || h.starts_with('D'))
        .map(|(k, _)| k)
        .collect();
    assert_eq!(cols.len(), 6);
    let rows: Vec<Vec<f64>> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            cols.iter().map(|&k| f[k].parse().unwrap()).collect()
        })
        .collect();
    assert_eq!(rows.len(), 41);
    for r in &rows {
        for (a, b) in r.iter().zip(&rows[0]) {
            assert!((a - b).abs() < 1e-6, "{r:?} vs {:?}", rows[0]);
        }
    }
}
