use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const EXP: &str = r#"
[kernel]
d = 1
family = "exp_decay_f"
rate = 1.0

[grid]
d = 1
n_cells = 32
dx = 0.25
dt = 0.01

[solver]
sigma = { family = "linear" }
t_final = 0.2
replicas = 128
seed = 11

[analysis]
run = ["report", "mixing"]
lags = [0, 1, 2]
"#;

fn shelab(dir: &Path, sub: &str, config: &str, extra: &[&str]) -> Output {
    let path = dir.join("config.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_shelab"))
        .arg(sub)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn analyze_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = shelab(dir.path(), "analyze", EXP, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(r["dalang_ok"], true);
    assert_eq!(r["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn gate_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EXP.replace("d = 1\nfamily = \"exp_decay_f\"\nrate = 1.0", "d = 2\nfamily = \"white_noise\"").replace("[grid]\nd = 1", "[grid]\nd = 2");
    let o = shelab(dir.path(), "analyze", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(dir.path().join("out/report.json").exists());
    let o = shelab(dir.path(), "simulate", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = shelab(dir.path(), "simulate", &EXP.replace("seed = 11\n", ""), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    let o = shelab(dir.path(), "simulate", &EXP.replace("rate = 1.0", "rate = 1.0\nrte = 2.0"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("rte"), "{}", stderr(&o));
}

#[test]
fn simulate_is_reproducible_across_threads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = shelab(a.path(), "simulate", EXP, &["--threads", "1"]);
    let ob = shelab(b.path(), "simulate", EXP, &["--threads", "4"]);
    assert!(oa.status.success() && ob.status.success(), "{}", stderr(&oa));
    for name in ["moments.csv", "covariance.csv"] {
        let x = fs::read_to_string(a.path().join("out").join(name)).unwrap();
        let y = fs::read_to_string(b.path().join("out").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
        let second = x.lines().nth(1).unwrap();
        assert!(second.starts_with("# config_sha256="), "{second}");
    }
}

#[test]
fn seed_override_changes_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(shelab(a.path(), "simulate", EXP, &[]).status.success());
    assert!(shelab(b.path(), "simulate", EXP, &["--seed", "12"]).status.success());
    let x = fs::read_to_string(a.path().join("out/moments.csv")).unwrap();
    let y = fs::read_to_string(b.path().join("out/moments.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn report_prints_text() {
    let dir = tempfile::tempdir().unwrap();
    let o = shelab(dir.path(), "report", EXP, &[]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("dalang_ok       true"), "{text}");
}
