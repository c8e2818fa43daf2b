use std::process::Command;

#[test]
fn runs_a_spec_and_overrides_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        "app = \"binh\"\nkind = \"accuracy\"\ntransport = \"offline\"\nbudgets = [10]\nseed = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_harness"))
        .args(["--log-level", "warn", "run"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "9"])
        .status()
        .unwrap();
    assert!(status.success());
    let report = std::fs::read_to_string(out.join("metrics_vs_samples.csv")).unwrap();
    let row = report.lines().nth(1).unwrap();
    assert!(row.starts_with("10,"), "{row}");
    assert_eq!(row.split(',').nth(4), Some("9"));
}

#[test]
fn bad_spec_fails() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "app = \"binh\"\nunknown_field = 1\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_harness"))
        .args(["--log-level", "off", "run"])
        .arg(&spec)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert!(!status.success());
}
