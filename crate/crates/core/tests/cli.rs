use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wgflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wgflow")).args(args).output().expect("binary runs")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn run_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = wgflow(&["run", "--preset", "table1-evbdf2", "--t_end", "0.05", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let rows = csv_rows(&dir.path().join("trajectory.csv"));
    assert_eq!(rows[0], ["step", "time", "cell", "x", "rho"]);
    assert_eq!(rows.len(), 1 + 2 * 10);
    let steps: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert!(steps[..10].iter().all(|s| *s == "0") && steps[10..].iter().all(|s| *s == "1"));

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 1);
    assert_eq!(summary["complete"], true);
    assert_eq!(summary["config"]["scheme"], "evbdf2");
    let masses = summary["masses"].as_array().unwrap();
    let m0 = masses[0].as_f64().unwrap();
    assert!(masses.iter().all(|m| (m.as_f64().unwrap() - m0).abs() < 1e-12));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(wgflow(&["run", "--preset", "no-such-preset", "--out", out]).status.code(), Some(2));
    assert_eq!(wgflow(&["run", "--preset", "table1-bdf2", "--tau", "-1", "--out", out]).status.code(), Some(2));
    assert_eq!(wgflow(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(wgflow(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "problem = \"fp1d\"\nscheme = \"ljko\"\nnx = 10\ntau = 0.05\nt_end = 0.25\n").unwrap();
    let out = dir.path().join("o");
    let o = wgflow(&["run", "--config", cfg.to_str().unwrap(), "--t_end", "0.1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 2);
    assert_eq!(summary["resolved"]["scheme"], "ljko");
}

#[test]
fn extrapolate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let n = 20;
    let write = |name: &str, c: f64| {
        let x: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        let raw: Vec<f64> = x.iter().map(|x| 0.2 + (-(x - c).powi(2) / 0.02).exp()).collect();
        let mass = raw.iter().sum::<f64>() / n as f64;
        let mut text = String::from("cell,x,rho\n");
        for k in 0..n {
            text.push_str(&format!("{k},{},{}\n", x[k], raw[k] / mass));
        }
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    };
    let (mu, nu) = (write("mu.csv", 0.45), write("nu.csv", 0.5));
    let target = dir.path().join("e.csv");
    let o = wgflow(&[
        "extrapolate",
        mu.to_str().unwrap(),
        nu.to_str().unwrap(),
        "--output",
        target.to_str().unwrap(),
        "--alpha",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&target);
    assert_eq!(rows[0], ["cell", "x", "rho"]);
    assert_eq!(rows.len(), n + 1);
    let mass_of = |rows: &[Vec<String>], col: usize| rows[1..].iter().map(|r| r[col].parse::<f64>().unwrap()).sum::<f64>();
    let before = mass_of(&csv_rows(&mu), 2);
    let after = mass_of(&rows, 2);
    assert!((before - after).abs() < 1e-9 * before, "{before} vs {after}");
    assert!(rows[1..].iter().all(|r| r[2].parse::<f64>().unwrap() >= 0.0));

    // a non-uniform x column needs a mesh file
    fs::write(dir.path().join("bad.csv"), "x,rho\n0.1,1\n0.3,1\n0.4,1\n").unwrap();
    let bad = dir.path().join("bad.csv");
    let o = wgflow(&["extrapolate", bad.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_check_passes() {
    let o = wgflow(&["oracle-check"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l.starts_with("PASS")));
    assert!(!text.lines().any(|l| l.starts_with("FAIL")));
}

#[test]
fn presets_are_listed() {
    let o = wgflow(&["presets"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["table1-evbdf2", "table2-fp2d", "table3-pm", "demo-multiphase"] {
        assert!(text.contains(name), "{name} missing");
    }
}
