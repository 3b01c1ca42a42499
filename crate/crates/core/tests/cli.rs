use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const REFERENCE: &str = "problem = \"example1\"\nmode = \"reference\"\nstart = [1.3, 3.5]\nv0 = [1.0, 0.0]\n";

const SMALL_AGPR: &str = "problem = \"example1\"
mode = \"agpr\"
start = [1.3, 3.5]
t_max = 300
n_paths = 4
max_updates = 2
mle_budget = 30
mle_refit_budget = 10
mle_starts = 1
spsa.iters = 10
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_agpr-gad"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_config(dir: &Path, cfg: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg(cfg)
        .arg("--output-dir")
        .arg(dir)
        .args(extra)
        .output()
        .unwrap()
}

fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs
}

#[test]
fn converged_run_writes_outputs_and_exits_zero() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "a.toml", REFERENCE);
    let out = tmp.path().join("runs");
    let o = run_config(&out, &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dirs = run_dirs(&out);
    assert_eq!(dirs.len(), 1);
    assert!(dirs[0].join("trajectory.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dirs[0].join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
    assert_eq!(report["method"], "GAD");
    let x = report["x_sp"].as_array().unwrap();
    assert!((x[0].as_f64().unwrap() - 1.284).abs() < 0.01);

    // a second run never reuses the first directory
    run_config(&out, &cfg, &[]);
    assert_eq!(run_dirs(&out).len(), 2);
}

#[test]
fn unconverged_run_exits_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "a.toml", &format!("{REFERENCE}t_max = 3\n"));
    let o = run_config(&tmp.path().join("runs"), &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_keys_are_all_listed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "a.toml",
        &format!("{REFERENCE}bogus = 1\nspsa.zzz = 2\n"),
    );
    let o = run_config(&tmp.path().join("runs"), &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bogus") && err.contains("spsa.zzz"), "{err}");
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn missing_config_and_bad_mode_are_errors() {
    let tmp = TempDir::new().unwrap();
    let o = run_config(tmp.path(), &tmp.path().join("nope.toml"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = write(tmp.path(), "a.toml", REFERENCE);
    let o = run_config(tmp.path(), &cfg, &["--mode", "fast"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn flags_override_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "a.toml", &format!("{SMALL_AGPR}seed = 1\n"));
    let out = tmp.path().join("runs");
    let o = run_config(&out, &cfg, &["--seed", "7", "--mode", "reference"]);
    assert!(matches!(o.status.code(), Some(0 | 2)));
    let dir = &run_dirs(&out)[0];
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["mode"], "reference");
    assert!(!dir.join("designs.csv").exists());
}

#[test]
fn surrogate_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "a.toml", SMALL_AGPR);
    let out = tmp.path().join("runs");
    for _ in 0..2 {
        let o = run_config(&out, &cfg, &["--seed", "3"]);
        assert!(matches!(o.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let dirs = run_dirs(&out);
    assert_eq!(dirs.len(), 2);
    for f in ["trajectory.csv", "designs.csv"] {
        let a = fs::read(dirs[0].join(f)).unwrap();
        let b = fs::read(dirs[1].join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs");
    }
    let designs = fs::read_to_string(dirs[0].join("designs.csv")).unwrap();
    assert_eq!(designs.lines().next(), Some("update,p0,p1,y0"));
    assert!(designs.lines().count() > 20);
}

fn report(dir: &Path, name: &str, problem: &str, method: &str, cost: u64) -> PathBuf {
    write(
        dir,
        name,
        &serde_json::json!({
            "problem": problem,
            "method": method,
            "start": [0.46, 0.69],
            "x_sp": [1.284, 3.448],
            "cost": cost,
        })
        .to_string(),
    )
}

fn table(args: &[PathBuf], out: &Path) -> Output {
    bin()
        .arg("table")
        .args(args)
        .arg("--output")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn table_groups_rows_and_reports_skips() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let inputs = vec![
        report(d, "1.json", "example1", "GAD", 305),
        report(d, "2.json", "example2", "aGPR-GAD", 60),
        write(d, "bad.json", "{ not json"),
        report(d, "3.json", "example1", "aGPR-GAD", 110),
        write(d, "partial.json", "{\"problem\": \"example1\"}"),
    ];
    let out = d.join("t.csv");
    let o = table(&inputs, &out);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "problem,start,method,x_sp,cost");
    assert_eq!(lines[1], "example1,\"(0.46, 0.69)\",GAD,\"(1.28, 3.45)\",305");
    assert_eq!(lines[2], "example1,\"(0.46, 0.69)\",aGPR-GAD,\"(1.28, 3.45)\",110");
    assert!(lines[3].starts_with("example2,"));
    assert!(lines[4].starts_with("# skipped") && lines[4].contains("bad.json"));
    assert!(lines[5].starts_with("# skipped") && lines[5].contains("partial.json"));
    assert_eq!(lines.len(), 6);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn empty_table_is_header_only() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("t.csv");
    let o = table(&[], &out);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&out).unwrap(), "problem,start,method,x_sp,cost\n");
}

#[test]
fn oracle_lists_critical_points() {
    let o = bin().args(["oracle", "example2"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,index");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines.iter().filter(|l| l.ends_with(",1")).count(), 1);
    let o = bin().args(["oracle", "nowhere"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}
