use hdqkd_cli::sweep::{rows_from_csv, SweepReport};
use hdqkd_cli::validate::ValidationReport;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn hdqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdqkd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sweep_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "version = 1\nsweep = [30.0, 4.0]\n");
    let out = dir.path().join("out");
    let o = hdqkd(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = rows_from_csv(&std::fs::read_to_string(out.join("sweep.csv")).unwrap()).unwrap();
    let report =
        SweepReport::from_json(&std::fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(rows, report.rows);
    assert_eq!(rows[0].loss_db, 4.0);
    assert!(rows[0].rate_mbps > 1.0);
    assert_eq!(rows[1].rate_mbps, 0.0);
}

#[test]
fn loss_flag_overrides_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = hdqkd(&["sweep", "--loss", "8,4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let rows = rows_from_csv(&stdout).unwrap();
    assert_eq!(rows.iter().map(|r| r.loss_db).collect::<Vec<_>>(), vec![4.0, 8.0]);
}

#[test]
fn empty_sweep_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "version = 1\nsweep = []\n");
    let o = hdqkd(&["sweep", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report =
        SweepReport::from_json(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap())
            .unwrap();
    assert!(report.rows.is_empty());
}

#[test]
fn config_errors_exit_two_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "version = 1\n[detector]\neta0 = 0.7\nspeed = 3\n");
    let o = hdqkd(&["sweep", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let cfg = write(dir.path(), "bad2.toml", "version = 1\n[detector]\n\neta0 = 1.5\n");
    let o = hdqkd(&["sweep", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let o = hdqkd(&["sweep", "--config", "/nonexistent/run.toml"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn states_dump_and_reject_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let o = hdqkd(&["states", "--dim", "4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = std::fs::read_to_string(dir.path().join("probability_matrix_d4.csv")).unwrap();
    assert_eq!(m.lines().count(), 8);
    let pdf = std::fs::read_to_string(dir.path().join("cascade_pdf_d4.csv")).unwrap();
    assert_eq!(pdf.lines().count(), 1 + 8 * 4 * 7);

    let o = hdqkd(&["states", "--dim", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

const SMALL_VALIDATE: &str = "version = 1
[validate.consistency]
loss_db = [8.0]
frames = 300000
[validate.coverage]
frames = 300000
runs_per_seed = 2
beta = 0.01
";

#[test]
fn validate_pass_fail_and_seed_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "v.toml", SMALL_VALIDATE);
    let out = dir.path().to_str().unwrap();

    let o = hdqkd(&["validate", "--config", &cfg, "--seeds", "1-2", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: ValidationReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("validation.json")).unwrap())
            .unwrap();
    assert!(r.passed);
    assert_eq!(r.seeds, vec![1, 2]);

    let o = hdqkd(&["validate", "--config", &cfg, "--seeds", "1-2", "--out", out, "--biased-s1", "3"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let r: ValidationReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("validation.json")).unwrap())
            .unwrap();
    assert!(!r.passed && !r.coverage.passed);

    let o = hdqkd(&["validate", "--config", &cfg, "--seeds", "", "--out", out]);
    assert_eq!(code(&o), 2);
}

fn link_cfg(dir: &Path) -> String {
    write(dir, "link.toml", "version = 1\n[link]\nframes = 400000\n")
}

#[test]
fn link_demo_loopback_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = link_cfg(dir.path());
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let o = hdqkd(&["link-demo", "--config", &cfg, "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(out).join("link_demo.json")).unwrap())
            .unwrap();
    assert_eq!(report["keys_identical"], true);
    assert!(Path::new(out).join("transcript_alice.hex").exists());

    let o = hdqkd(&["link-demo", "--config", &cfg, "--out", out, "--planted-qber", "0.05"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("aborted"), "{}", stderr(&o));

    let o = hdqkd(&["link-demo", "--config", &cfg, "--out", out, "--wire-version", "9"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));
}

#[test]
fn link_demo_two_processes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = link_cfg(dir.path());
    let bob_out = dir.path().join("bob");
    let alice_out = dir.path().join("alice");
    let mut bob = Command::new(env!("CARGO_BIN_EXE_hdqkd"))
        .args(["link-demo", "--config", &cfg, "--listen", "127.0.0.1:0"])
        .args(["--out", bob_out.to_str().unwrap()])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut reader = BufReader::new(bob.stdout.take().unwrap());
    let mut first = String::new();
    reader.read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on ").expect(&first).to_string();

    let alice = hdqkd(&["link-demo", "--config", &cfg, "--connect", &addr, "--out", alice_out.to_str().unwrap()]);
    assert_eq!(code(&alice), 0, "{}", stderr(&alice));
    let mut rest = String::new();
    reader.read_to_string(&mut rest).unwrap();
    assert!(bob.wait().unwrap().success());

    let a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(alice_out.join("link_demo.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&rest).unwrap();
    assert_eq!(a["alice"]["verified"], true);
    assert_eq!(b["bob"]["verified"], true);
    assert_eq!(a["alice"]["key_symbols"], b["bob"]["key_symbols"]);
    assert_eq!(a["alice"]["disclosed_bits"], b["bob"]["disclosed_bits"]);
    assert_eq!(
        std::fs::read_to_string(alice_out.join("transcript_alice.hex")).unwrap().len(),
        std::fs::read_to_string(bob_out.join("transcript_bob.hex")).unwrap().len()
    );
}
