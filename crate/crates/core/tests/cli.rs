use std::path::Path;
use std::process::{Command, Output};

fn stowave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stowave")).args(args).output().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

const SMALL: &[&str] = &["--set", "n_modes=16", "--t-final", "0.2", "--dt", "1e-2", "--n-paths", "6"];

fn run_in(dir: &Path, sub: &str, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--outdir", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    stowave(&args)
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let cfg_dir = tempfile::tempdir().unwrap();
    let cfg = cfg_dir.path().join("base.toml");
    std::fs::write(
        &cfg,
        "[domain] dim=1 n_modes=16\n[graph] kind=cubic\n[noise] kind=wiener q0=1 r=2\n\
         [solver] lambda=1e-2 dt=1e-2 t_final=0.5\n[study] n_paths=4 seed=42\n",
    )
    .unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = stowave(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "1",
            "--outdir",
            dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv = read(a.path(), "simulate.csv");
    assert_eq!(csv, read(b.path(), "simulate.csv"));
    assert!(csv.starts_with("t,energy,lyapunov,l2_u,h1_u,l2_v,pairing_running\n"));
    assert_eq!(csv.lines().count(), 52);
    assert!(read(a.path(), "simulate.svg").contains("</svg>"));
}

#[test]
fn selftest_exits_zero() {
    let out = stowave(&["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn energy_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "energy", &["--lambda-grid", "1e-1,1e-2,1e-3"]);
    assert!(out.status.success());
    let csv = read(dir.path(), "energy.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,estimate,std_error,n_paths");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0.1,") && lines[1].ends_with(",6"));
    assert!(dir.path().join("energy.svg").exists());
}

#[test]
fn study_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("pairing", "lambda,eps,estimate,std_error,n_paths", 12),
        ("lambda-conv", "lambda_a,lambda_b,quantity,estimate,std_error,n_paths", 12),
        ("isometry", "quantity,target,estimate,std_error,n_paths", 4),
    ];
    for (sub, header, rows) in cases {
        let out = run_in(dir.path(), sub, &["--lambda-grid", "1e-1,1e-2,1e-3,1e-4", "--eps-grid", "1e-2,1e-3"]);
        assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
        let csv = read(dir.path(), &format!("{sub}.csv"));
        assert_eq!(csv.lines().next(), Some(header));
        assert_eq!(csv.lines().count(), rows + 1, "{sub}");
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, w) in [(&a, "1"), (&b, "3")] {
        assert!(run_in(dir.path(), "lambda-conv", &["--workers", w]).status.success());
    }
    assert_eq!(read(a.path(), "lambda-conv.csv"), read(b.path(), "lambda-conv.csv"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = run_in(dir.path(), "energy", &["--set", "solver.lambada=1"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("solver.lambada"));

    let short_grid = run_in(dir.path(), "lambda-conv", &["--lambda-grid", "1e-1,1e-2"]);
    assert_eq!(short_grid.status.code(), Some(2));

    let ascending = run_in(dir.path(), "energy", &["--lambda-grid", "1e-2,1e-1"]);
    assert_eq!(ascending.status.code(), Some(2));

    let missing = stowave(&["energy", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));

    let blowup = run_in(dir.path(), "simulate", &["--set", "graph=linear:1e6", "--lambda", "1e-9"]);
    assert_eq!(blowup.status.code(), Some(3));
}

#[test]
fn blow_up_rows_are_flagged_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        "energy",
        &["--set", "graph=linear:1e6", "--lambda-grid", "1e-1,1e-9"],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("blow-up"));
    let csv = read(dir.path(), "energy.csv");
    let last = csv.lines().last().unwrap();
    assert!(last.ends_with(",0"), "{csv}");
}
