use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn nlpme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlpme"))
        .args(args)
        .output()
        .expect("spawn nlpme")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn cfg(name: &str) -> String {
    configs().join(name).display().to_string()
}

#[test]
fn smoke_run_passes_and_replays() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("smoke");
    let o = nlpme(&[
        "run",
        "--config",
        &cfg("smoke.toml"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("pass  energy_step_inequality"));
    assert!(out.join("MANIFEST").exists() && out.join("steps.csv").exists());

    let c = nlpme(&["check", "--out", out.to_str().unwrap()]);
    assert_eq!(c.status.code(), Some(0), "{}", text(&c));

    // corrupt one energy value: the replay must fail
    let steps = out.join("steps.csv");
    let body = std::fs::read_to_string(&steps).unwrap();
    let mut lines: Vec<String> = body.lines().map(str::to_string).collect();
    let mut cols: Vec<String> = lines[8].split(',').map(str::to_string).collect();
    let e: f64 = cols[2].parse().unwrap();
    cols[2] = format!("{}", e + 1e-3);
    lines[8] = cols.join(",");
    std::fs::write(&steps, lines.join("\n") + "\n").unwrap();
    let c = nlpme(&["check", "--out", out.to_str().unwrap()]);
    assert_eq!(c.status.code(), Some(1), "{}", text(&c));
    assert!(
        text(&c).contains("FAIL  energy_step_inequality"),
        "{}",
        text(&c)
    );
}

#[test]
fn violating_matrix_is_rejected_before_running() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("cds");
    let o = nlpme(&[
        "cds",
        "--config",
        &cfg("cds_violating.toml"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        text(&o).contains("min{A11,A22} > (A12+A21)/2"),
        "{}",
        text(&o)
    );
    assert!(!out.exists());
}

#[test]
fn check_of_an_empty_directory_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let o = nlpme(&["check", "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("integrity"), "{}", text(&o));
}

#[test]
fn reference_writes_profiles() {
    let d = tempfile::tempdir().unwrap();
    let o = nlpme(&[
        "reference",
        "--config",
        &cfg("reference.toml"),
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let listed: Vec<&str> = std::str::from_utf8(&o.stdout).unwrap().lines().collect();
    assert!(!listed.is_empty());
    for f in listed
        .iter()
        .filter(|f| !f.ends_with("reference_times.csv"))
    {
        let body = std::fs::read_to_string(f).unwrap();
        assert!(body.starts_with("x,"), "{f}");
    }
}

#[test]
fn epsilons_override_drives_a_sweep() {
    let d = tempfile::tempdir().unwrap();
    let o = nlpme(&[
        "sweep",
        "--config",
        &cfg("smoke.toml"),
        "--epsilons",
        "0.2,0.15",
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert!(
        o.status.code() == Some(0) || o.status.code() == Some(1),
        "{}",
        text(&o)
    );
    let report = std::fs::read_to_string(d.path().join("sweep_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3, "{report}");
    assert!(d.path().join("eps_0.15/MANIFEST").exists());
    assert!(d.path().join("eps_0.2/MANIFEST").exists());
}

#[test]
fn bad_arguments_are_rejected() {
    let o = nlpme(&["run", "--config", "/nonexistent.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = nlpme(&["frobnicate"]);
    assert!(!o.status.success());
}
