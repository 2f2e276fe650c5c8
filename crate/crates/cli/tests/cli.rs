use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bangbang(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bangbang"))
        .args(args)
        .output()
        .expect("spawn bangbang")
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    let mut all = args.to_vec();
    all.extend(["--out", out.to_str().unwrap()]);
    bangbang(&all)
}

#[test]
fn sweep_passes_and_writes_expected_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["tikhonov", "--grid", "17"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("tikhonov-sweep.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "magnitude,d_Z_or_d_Upsilon,u_dist_L1,y_dist_L2,p_dist_L2,implied_kappa,iters,gap"
    );
    assert_eq!(csv.lines().count(), 8);
    let report = fs::read_to_string(dir.path().join("tikhonov-sweep-report.txt")).unwrap();
    assert!(report.contains("verdict = PASS"));
    assert_eq!(String::from_utf8_lossy(&o.stdout), report);
}

#[test]
fn saturated_sweep_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sat.toml");
    fs::write(
        &cfg,
        "sweep = [10.0, 100.0, 1000.0, 10000.0]\nrho_shape = \"constant\"\n",
    )
    .unwrap();
    let o = run_in(
        dir.path(),
        &[
            "rho-sweep",
            "--grid",
            "17",
            "--config",
            cfg.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("verdict = FAIL"));
}

#[test]
fn errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    let o = run_in(
        dir.path(),
        &["solve", "--config", missing.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));

    let short = dir.path().join("short.toml");
    fs::write(&short, "sweep = [0.1, 0.01]\n").unwrap();
    let o = run_in(
        dir.path(),
        &[
            "tikhonov",
            "--grid",
            "17",
            "--config",
            short.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient"));

    let o = run_in(dir.path(), &["convergence", "--grid", "20"]);
    assert_eq!(o.status.code(), Some(1));

    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "no_such_key = 1\n").unwrap();
    let o = run_in(
        dir.path(),
        &["solve", "--config", unknown.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let o = run_in(dir, &["rho-sweep", "--grid", "17", "--seed", "7"]);
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |d: &Path| fs::read(d.join("rho-sweep.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));

    // a warm reference cache must not change the output
    let o = run_in(a.path(), &["rho-sweep", "--grid", "17", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn seed_changes_random_rho_sweep() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_in(a.path(), &["rho-sweep", "--grid", "17", "--seed", "1"]);
    run_in(b.path(), &["rho-sweep", "--grid", "17", "--seed", "2"]);
    let read = |d: &Path| fs::read(d.join("rho-sweep.csv")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
}

#[test]
fn every_verb_runs_on_a_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    for (verb, file) in [
        ("solve", "solve-snapshot.csv"),
        ("zeta-sweep", "zeta-sweep.csv"),
        ("diagnose", "diagnostics.csv"),
        ("convergence", "convergence.csv"),
    ] {
        let o = run_in(dir.path(), &[verb, "--grid", "17"]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{verb}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(dir.path().join(file).exists(), "{verb}");
    }
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            bangbang_core::harness::ExperimentConfig::load(&path)
                .and_then(|c| c.validate())
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
