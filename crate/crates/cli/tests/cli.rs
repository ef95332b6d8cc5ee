use std::path::Path;
use std::process::Command as Process;

use pipecal_cli::experiments::{bound, inl};
use pipecal_cli::{execute, Command, ExperimentConfig};

const SMALL: &str = r#"
seed = 11
calibration.steps = 3000
calibration.stride = 500
calibration.oracle_pairs = 20000
calibration.mu_sweep = [0.05, 0.4]
inl.grid_points = 40000
twophase.phase1_steps = 2000
twophase.phase2_steps = 3000
twophase.drift_after = 1500
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

fn pipecal(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_pipecal"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn csv_headers_and_float_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    execute(Command::Convergence, &cfg, dir.path()).unwrap();
    execute(Command::Inl, &cfg, dir.path()).unwrap();
    execute(Command::TwoPhase, &cfg, dir.path()).unwrap();

    let conv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let mut lines = conv.lines();
    assert_eq!(lines.next(), Some("mu,k,error_norm"));
    let rows: Vec<_> = lines.collect();
    // Two step sizes, six records each.
    assert_eq!(rows.len(), 12);
    assert!(rows[0].starts_with("5.00000000e-2,500,"), "{}", rows[0]);
    assert!(rows[11].starts_with("4.00000000e-1,3000,"), "{}", rows[11]);

    let inl = std::fs::read_to_string(dir.path().join("inl.csv")).unwrap();
    assert_eq!(
        inl.lines().next(),
        Some("code,inl_true,inl_est,inl_residual")
    );
    let row: Vec<_> = inl.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row.len(), 4);
    for f in &row[1..] {
        let mantissa = f.split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.len(), 10, "{f}");
    }

    let two = std::fs::read_to_string(dir.path().join("twophase.csv")).unwrap();
    assert_eq!(two.lines().next(), Some("phase,k,samples,error_norm"));
    assert!(two.lines().any(|l| l.starts_with("2,")));
}

#[test]
fn same_seed_gives_identical_files() {
    let cfg = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        execute(Command::Convergence, &cfg, dir).unwrap();
        execute(Command::Inl, &cfg, dir).unwrap();
    }
    for name in ["convergence.csv", "inl.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let mut other = cfg.clone();
    other.seed += 1;
    let c = tempfile::tempdir().unwrap();
    execute(Command::Convergence, &other, c.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("convergence.csv")).unwrap(),
        std::fs::read(c.path().join("convergence.csv")).unwrap()
    );
}

#[test]
fn bound_examples() {
    let r = bound(
        &ExperimentConfig::from_toml(
            "calibration.mode = \"plain\"\ncalibration.oracle_pairs = 20000",
        )
        .unwrap(),
    )
    .unwrap();
    assert!((r.analytic.unwrap() - 2.0 / 3.75).abs() < 1e-12);
    assert!(r.max_regressor_norm_sq <= 3.75 + 1e-12);
    assert!(r.empirical.unwrap() >= r.analytic.unwrap() - 1e-12);

    let r =
        bound(&ExperimentConfig::from_toml("calibration.oracle_pairs = 1000").unwrap()).unwrap();
    assert_eq!(r.analytic, None);
    assert!(r.empirical.is_some());

    let text = "calibration.mode = \"plain\"\ncalibration.q = 1\ncalibration.alpha = 1.0\n\
                calibration.oracle_pairs = 1000";
    let r = bound(&ExperimentConfig::from_toml(text).unwrap()).unwrap();
    assert!((r.analytic.unwrap() - 1.0).abs() < 1e-12);
    // With alpha = 1 both conversions coincide and nothing is excited.
    assert_eq!(r.empirical, None);
}

#[test]
fn oversized_step_is_reported_as_not_converged() {
    let mut cfg = small();
    cfg.calibration.mode = pipecal_cli::config::ModeName::Plain;
    cfg.calibration.mu = 3.0;
    let report = inl(&cfg).unwrap();
    assert!(!report.converged);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let good = write_config(dir.path(), "calibration.oracle_pairs = 1000\n");
    let r = pipecal(&["bound", "--config", &good, "--out", out]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    assert!(String::from_utf8_lossy(&r.stdout).contains("analytic bound"));

    let unknown = write_config(dir.path(), "calibration.bogus = 1\n");
    let r = pipecal(&["bound", "--config", &unknown]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("bogus"));

    let bad = write_config(dir.path(), "calibration.alpha = 0.0\n");
    assert_eq!(pipecal(&["inl", "--config", &bad]).status.code(), Some(1));
    assert_eq!(
        pipecal(&["inl", "--config", "/nonexistent.toml"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(pipecal(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pipecal(&["--help"]).status.code(), Some(0));

    // The output directory cannot be created below a regular file.
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let ok = write_config(dir.path(), SMALL);
    let r = pipecal(&[
        "inl",
        "--config",
        &ok,
        "--out",
        blocker.join("x").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, seed) in [(&a, "11"), (&b, "12")] {
        let r = pipecal(&[
            "convergence",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(r.status.code(), Some(0));
    }
    let direct = tempfile::tempdir().unwrap();
    execute(Command::Convergence, &small(), direct.path()).unwrap();
    let read = |p: &Path| std::fs::read(p.join("convergence.csv")).unwrap();
    assert_eq!(read(&a), read(direct.path()));
    assert_ne!(read(&a), read(&b));
}
