use std::path::Path;
use std::process::{Command, Output};

fn kipg(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kipg"));
    cmd.args(args).env_remove("KIPG_OUTPUT_DIR");
    if let Some(d) = out_env {
        cmd.env("KIPG_OUTPUT_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn small_run(dir: &Path) -> Output {
    kipg(
        &[
            "run",
            "--set",
            "steps=30",
            "--set",
            "runs=1",
            "--set",
            "environment.behavior=B",
            "--output-dir",
            dir.to_str().unwrap(),
        ],
        None,
    )
}

#[test]
fn run_writes_files_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = small_run(a.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final cumulative regret"));
    assert!(small_run(b.path()).status.success());
    for name in [
        "baseline_seed0.csv",
        "kipg_seed0.csv",
        "kipgucb_seed0.csv",
        "mean.csv",
        "summary.csv",
    ] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
}

#[test]
fn validate_and_compare_emitted_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_run(dir.path()).status.success());
    let mean = dir.path().join("mean.csv");
    let run = dir.path().join("kipg_seed0.csv");
    let out = kipg(&["validate", mean.to_str().unwrap(), run.to_str().unwrap()], None);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("ok ").count(), 2);

    let out = kipg(&["compare", mean.to_str().unwrap()], None);
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    for alg in ["baseline", "kipg", "kipgucb"] {
        assert!(table.lines().any(|l| l.starts_with(alg)), "{table}");
    }

    let broken = dir.path().join("broken.csv");
    let text = std::fs::read_to_string(&run).unwrap().replacen(",1,", ",7,", 1);
    std::fs::write(&broken, text).unwrap();
    let out = kipg(&["validate", broken.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn output_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = kipg(&["run", "--set", "steps=5", "--set", "runs=1"], Some(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("mean.csv").exists());
}

#[test]
fn config_errors_exit_2() {
    let out = kipg(&["run", "--set", "runs=0", "--dry-run"], None);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("x.toml");
    std::fs::write(&cfg, "steps = \"many\"\n").unwrap();
    let out = kipg(&["run", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_replay_exits_3() {
    let out = kipg(
        &[
            "run",
            "--set",
            "environment={kind=\"replay\", path=\"/nonexistent/data.facts\"}",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn induce_prints_clauses() {
    let out = kipg(&["induce"], None);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text
        .lines()
        .any(|l| l.contains("listened(") && l.contains("listens(A,B)")));
    let out = kipg(&["induce", "--behaviors", "XYZ"], None);
    assert_eq!(out.status.code(), Some(2));
}
