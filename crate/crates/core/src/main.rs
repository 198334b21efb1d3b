use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stowave::config::{ConfigError, RunConfig};
use stowave::solver::simulate_path;
use stowave::study::{
    energy_study, isometry_study, lambda_convergence_study, pairing_study, path_csv, path_svg, StudyError,
    StudyReport,
};
use stowave::{selftest, SolverError};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "stowave", version, about = "Regularized stochastic wave equation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path and dump per-step functionals.
    Simulate(Common),
    /// Expected sup-energy for each lambda.
    Energy(Common),
    /// Smoothed resolvent pairings for each (lambda, eps).
    Pairing(Common),
    /// Coupled-noise Cauchy gaps between consecutive lambdas.
    LambdaConv(Common),
    /// Isometry, quadratic variation, integration by parts and Duhamel checks.
    Isometry(Common),
    /// Run the built-in invariant suite.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// Sectioned key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set graph.kind=sign`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    outdir: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    t_final: Option<String>,
    #[arg(long)]
    n_paths: Option<String>,
    #[arg(long)]
    path_index: Option<String>,
    /// Comma-separated, strictly decreasing.
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long)]
    eps_grid: Option<String>,
}

enum Failure {
    Config(String),
    Numeric(String),
    Io(String),
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (code, kind, msg) = match self {
            Failure::Config(m) => (EXIT_CONFIG, "config error", m),
            Failure::Numeric(m) => (EXIT_NUMERIC, "numeric abort", m),
            Failure::Io(m) => (EXIT_IO, "i/o error", m),
        };
        eprintln!("stowave: {kind}: {msg}");
        ExitCode::from(code)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Solver(s) => s.into(),
            StudyError::Uncoupled { .. } => Failure::Numeric(e.to_string()),
            StudyError::Pool(_) => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let flags = [
        ("study.seed", &common.seed),
        ("study.outdir", &common.outdir),
        ("study.workers", &common.workers),
        ("solver.lambda", &common.lambda),
        ("solver.dt", &common.dt),
        ("solver.t_final", &common.t_final),
        ("study.n_paths", &common.n_paths),
        ("study.path_index", &common.path_index),
        ("study.lambda_grid", &common.lambda_grid),
        ("study.eps_grid", &common.eps_grid),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn write_outputs(outdir: &Path, name: &str, csv: &str, svg: &str) -> Result<(), Failure> {
    let io = |p: &Path, e: std::io::Error| Failure::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(outdir).map_err(|e| io(outdir, e))?;
    for (ext, body) in [("csv", csv), ("svg", svg)] {
        let path = outdir.join(format!("{name}.{ext}"));
        std::fs::write(&path, body).map_err(|e| io(&path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn emit(cfg: &RunConfig, report: &StudyReport, svg: String) -> Result<(), Failure> {
    write_outputs(&cfg.outdir, &report.name, &report.to_csv(), &svg)?;
    let flagged = report.total_flagged();
    if flagged > 0 {
        eprintln!("stowave: warning: {flagged} path runs aborted by the blow-up guard; see n_paths column");
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Selftest => {
            let outcomes = selftest::run_all();
            let mut failed = 0;
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                failed += usize::from(!o.passed);
            }
            if failed > 0 {
                return Err(Failure::Numeric(format!("{failed} of {} checks failed", outcomes.len())));
            }
            Ok(())
        }
        Command::Simulate(common) => {
            let cfg = load(&common)?;
            let mut solver = cfg.solver_config()?;
            solver.record.functionals = true;
            let result = simulate_path(&solver, cfg.path_index)?;
            write_outputs(&cfg.outdir, "simulate", &path_csv(&result), &path_svg(&result))
        }
        Command::Energy(common) => {
            let cfg = load(&common)?;
            let report = energy_study(&cfg.study_spec()?)?;
            emit(&cfg, &report, report.to_svg("lambda", None, true))
        }
        Command::Pairing(common) => {
            let cfg = load(&common)?;
            let spec = cfg.study_spec()?;
            let report = pairing_study(&spec, &spec.eps_grid)?;
            emit(&cfg, &report, report.to_svg("eps", Some("lambda"), false))
        }
        Command::LambdaConv(common) => {
            let cfg = load(&common)?;
            let report = lambda_convergence_study(&cfg.study_spec()?)?;
            emit(&cfg, &report, report.to_svg("lambda_a", Some("quantity"), true))
        }
        Command::Isometry(common) => {
            let cfg = load(&common)?;
            let report = isometry_study(&cfg.study_spec()?)?;
            emit(&cfg, &report, report.to_svg("quantity", None, false))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
