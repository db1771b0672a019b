//! End-to-end runs of the `platoon` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use platoon::scenario::{builtin, ScenarioConfig, TopologyConfig};
use tempfile::TempDir;

fn platoon(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platoon"))
        .current_dir(dir)
        .env_remove("PLATOON_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, cfg: &ScenarioConfig) -> PathBuf {
    let path = dir.join(format!("{}.toml", cfg.name));
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn short(id: &str, horizon: f64) -> ScenarioConfig {
    let mut cfg = builtin(id).unwrap();
    cfg.sim.horizon = Some(horizon);
    cfg
}

#[test]
fn reproduce_reports_expected_ctg_failure() {
    let tmp = TempDir::new().unwrap();
    let o = platoon(tmp.path(), &["--out", "res", "reproduce", "s1_ctg"]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("max speed 30.1 exceeded: PASS (expected failure reproduced)"), "{text}");
    let dir = tmp.path().join("res/s1_ctg");
    for f in ["s1_ctg.toml", "s1_ctg_trajectory.csv", "s1_ctg_slack.csv", "s1_ctg_report.txt"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn reproduce_unknown_id_is_config_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(platoon(tmp.path(), &["reproduce", "s9"]).status.code(), Some(4));
}

#[test]
fn nonlinear_run_passes_without_violation() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &builtin("s1_nl").unwrap());
    let o = platoon(tmp.path(), &["run", cfg.to_str().unwrap()]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("safety: no violation"), "{text}");
    assert!(tmp.path().join("out/s1_nl_trajectory.csv").is_file());
}

#[test]
fn collision_exits_with_safety_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &builtin("s3_ctg").unwrap());
    let o = platoon(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("safety: "));
    assert!(!stdout(&o).contains("safety: no violation"));
}

#[test]
fn ring_length_mismatch_is_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = builtin("ring").unwrap();
    cfg.topology = TopologyConfig::Ring { length: 44.0 };
    let path = write_config(tmp.path(), &cfg);
    let o = platoon(tmp.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn malformed_config_is_config_error() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "name = \"x\"\nn = [").unwrap();
    assert_eq!(platoon(tmp.path(), &["run", path.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn output_directory_precedence() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &short("s2_nl", 5.0));
    let cfg = cfg.to_str().unwrap();
    let run = |flag: Option<&str>, env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_platoon"));
        cmd.current_dir(tmp.path()).env_remove("PLATOON_OUT_DIR");
        if let Some(e) = env {
            cmd.env("PLATOON_OUT_DIR", e);
        }
        if let Some(f) = flag {
            cmd.args(["--out", f]);
        }
        assert_eq!(cmd.args(["run", cfg]).output().unwrap().status.code(), Some(0));
    };
    run(None, Some("from_env"));
    assert!(tmp.path().join("from_env/s2_nl_trajectory.csv").is_file());
    run(Some("from_flag"), Some("from_env_unused"));
    assert!(tmp.path().join("from_flag/s2_nl_trajectory.csv").is_file());
    assert!(!tmp.path().join("from_env_unused").exists());
    run(None, None);
    assert!(tmp.path().join("out/s2_nl_trajectory.csv").is_file());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &short("ring", 20.0));
    let cfg = cfg.to_str().unwrap();
    platoon(tmp.path(), &["--out", "a", "run", cfg]);
    platoon(tmp.path(), &["--out", "b", "run", cfg]);
    for f in ["ring_trajectory.csv", "ring_slack.csv", "ring_report.txt"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn analyze_accepts_written_trajectory() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &short("s2_nl", 30.0));
    let cfg = cfg.to_str().unwrap();
    assert_eq!(platoon(tmp.path(), &["run", cfg]).status.code(), Some(0));
    let o = platoon(tmp.path(), &["analyze", cfg, "out/s2_nl_trajectory.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(tmp.path().join("out/s2_nl_analysis.txt").is_file());
}

#[test]
fn analyze_rejects_malformed_csv() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &short("s2_nl", 5.0));
    fs::write(tmp.path().join("bad.csv"), "t,x\n0,1\n").unwrap();
    let o = platoon(tmp.path(), &["analyze", cfg.to_str().unwrap(), "bad.csv"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn validate_distinguishes_certified_policies() {
    let tmp = TempDir::new().unwrap();
    let ring = write_config(tmp.path(), &builtin("ring").unwrap());
    let o = platoon(tmp.path(), &["validate", ring.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("status: pass"));

    // The open-road policy violates the speed-limit condition.
    let open = write_config(tmp.path(), &builtin("s1_nl").unwrap());
    let o = platoon(tmp.path(), &["validate", open.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("status: fail"));
}

#[test]
fn fd_clips_to_jam_density() {
    let tmp = TempDir::new().unwrap();
    let o = platoon(tmp.path(), &["fd", "--family", "ctg", "--rho-max", "1.0", "--points", "200"]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("note: rho_max clipped"), "{text}");
    let csv = fs::read_to_string(tmp.path().join("out/fd_ctg_T1.4_r31.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
    assert_eq!(fs::read_dir(tmp.path().join("out")).unwrap().count(), 3);
}

#[test]
fn fd_nonlinear_family_writes_four_curves() {
    let tmp = TempDir::new().unwrap();
    let o = platoon(tmp.path(), &["fd", "--family", "nonlinear", "--points", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(fs::read_dir(tmp.path().join("out")).unwrap().count(), 4);
}
