use std::path::Path;

use dualflow::cli::{main_with_args, RunManifest, EXIT_CHECK, EXIT_CONFIG, EXIT_OK};

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("dualflow").chain(args.iter().copied()))
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        r#"preset = "deconvolution"
noise_levels = [1e-1, 1e-2]
seeds = [0]
fixture = { grid_n = 101 }

[[rules]]
rule = "dp"
tau = 1.1
"#,
    )
    .unwrap();
    path
}

#[test]
fn empty_rule_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "preset = \"deconvolution\"\nrules = []\n").unwrap();
    let out = dir.path().join("out");
    let code = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "preset = \"deconvolution\"\nfoo = 1\n").unwrap();
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap()]), EXIT_CONFIG);
}

#[test]
fn missing_reference_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let code = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--check",
        dir.path().join("absent.csv").to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_CHECK);
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn run_then_table_and_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let code = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let m = RunManifest::load(&out).unwrap();
    assert_eq!(m.cells.len(), 2);
    assert_eq!(m.failed_cells(), 0);
    assert!(out.join("timing.json").exists());
    let text = std::fs::read_to_string(out.join("table.csv")).unwrap();
    assert!(text.starts_with("delta,dp(tau=1.1) t,dp(tau=1.1) RE"), "{text}");
    assert_eq!(text.lines().count(), 3);

    // a reference far from the results fails the check
    let reference = dir.path().join("ref.csv");
    std::fs::write(&reference, "# far off\ndelta,rule,t,re\n0.1,dp(tau=1.1),1e6,1e3\n").unwrap();
    assert_eq!(
        run(&["table", out.to_str().unwrap(), "--check", reference.to_str().unwrap()]),
        EXIT_CHECK
    );
    // and one built from the run itself passes
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    std::fs::write(&reference, format!("delta,rule,t,re\n{},dp(tau=1.1),{},{}\n", row[0], row[1], row[2])).unwrap();
    assert_eq!(
        run(&["table", out.to_str().unwrap(), "--check", reference.to_str().unwrap()]),
        EXIT_OK
    );
}

#[test]
fn table_on_missing_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["table", dir.path().join("nothing").to_str().unwrap()]), EXIT_CONFIG);
}

#[test]
fn verify_suites() {
    assert_eq!(run(&["verify", "--only", "scalar"]), EXIT_OK);
    assert_eq!(run(&["verify", "--only", "no-such-suite"]), EXIT_CONFIG);
}

#[test]
fn bad_arguments_are_config_errors() {
    assert_eq!(run(&["run", "--scheme", "leapfrog"]), EXIT_CONFIG);
    assert_eq!(run(&["frobnicate"]), EXIT_CONFIG);
}
