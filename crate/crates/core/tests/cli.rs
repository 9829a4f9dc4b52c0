use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lle-tooth"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn default_pipeline_passes_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let first = run(&dir, &["pipeline"]);
    assert_eq!(code(&first), 0, "{}", stdout(&first));
    let text = stdout(&first);
    assert!(text.contains("verdict: pass"));
    assert!(!text.contains("\nFAIL"));
    for f in ["manifest.json", "config.toml", "reports/verdict.json", "tracks/norms.csv", "plots/bloch.svg"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let verdict = std::fs::read(dir.join("reports/verdict.json")).unwrap();
    let again = run(&dir, &["--resume", "pipeline"]);
    assert_eq!(code(&again), 0);
    assert_eq!(std::fs::read(dir.join("reports/verdict.json")).unwrap(), verdict);

    let fit = run(&dir, &["decay-fit", "--run", dir.to_str().unwrap(), "--norm", "hat_w_h1", "--model", "exponential"]);
    assert_eq!(code(&fit), 0);
    let text = stdout(&fit);
    let json = &text[text.find('{').unwrap()..=text.rfind('}').unwrap()];
    let report: serde_json::Value = serde_json::from_str(json).unwrap();
    assert!(report["rate"].as_f64().unwrap() > 0.2);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(tmp.path(), &["no-such-command"])), 2);
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[evolution]\ndt = 0.5\n").unwrap();
    assert_eq!(code(&run(tmp.path(), &["--config", bad.to_str().unwrap(), "pipeline"])), 2);
    let unknown = tmp.path().join("unknown.toml");
    std::fs::write(&unknown, "[wave]\nspeed = 1\n").unwrap();
    assert_eq!(code(&run(tmp.path(), &["--config", unknown.to_str().unwrap(), "solve-wave"])), 2);
}

#[test]
fn zero_forcing_passes_reduced_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("zero.toml");
    std::fs::write(&cfg, "[wave]\nforcing = 0.0\nkind = \"homogeneous\"\n[tooth]\ncells = 4\n[evolution]\nt_end = 5.0\n").unwrap();
    let o = run(&tmp.path().join("run"), &["--config", cfg.to_str().unwrap(), "pipeline"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("zero_state_spectrum"));
}

#[test]
fn unstable_constant_state_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("mi.toml");
    std::fs::write(&cfg, "[wave]\nkind = \"homogeneous\"\n[tooth]\ncells = 4\n[evolution]\nt_end = 5.0\n").unwrap();
    let dir = tmp.path().join("run");
    let o = run(&dir, &["--config", cfg.to_str().unwrap(), "bloch-spectrum"]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stdout(&o).contains("witness"));
    let o = run(&dir, &["--config", cfg.to_str().unwrap(), "pipeline"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
}
