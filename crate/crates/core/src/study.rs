//! Monte Carlo studies over families of regularized paths.
//!
//! Paths are independent tasks scheduled on a rayon pool; per-path values
//! are collected in path-index order and reduced left to right, so every
//! report is bit-identical for a given seed regardless of worker count.

use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::driver::{ito_isometry_check, DriverError};
use crate::monotone_graph::{GraphError, YosidaScale};
use crate::plot::{line_plot, Series};
use crate::solver::{
    chain_rule_check, duhamel_residual, ibp_residual, simulate_path, PathResult, RecordFlags,
    SolverConfig, SolverError,
};
use crate::stats::MeanEstimate;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study: {0}")]
    Spec(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("noise paths differ across lambda for path {path}")]
    Uncoupled { path: u64 },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub base: SolverConfig,
    /// Strictly decreasing regularization parameters.
    pub lambda_grid: Vec<f64>,
    pub dt_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub n_paths: usize,
    pub outdir: PathBuf,
    /// 0 means one worker per core.
    pub workers: usize,
}

impl StudySpec {
    pub fn validate(&self) -> Result<(), StudyError> {
        if self.lambda_grid.is_empty() {
            return Err(StudyError::Spec("lambda grid is empty".into()));
        }
        for l in &self.lambda_grid {
            YosidaScale::new(*l)?;
        }
        if self.lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(StudyError::Spec("lambda grid must be strictly decreasing".into()));
        }
        if self.dt_grid.is_empty() || self.dt_grid.iter().any(|d| d.is_nan() || *d <= 0.0) {
            return Err(StudyError::Spec("dt grid must be non-empty and positive".into()));
        }
        if self.eps_grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(StudyError::Spec("eps grid entries must be >= 0".into()));
        }
        if self.n_paths == 0 {
            return Err(StudyError::Spec("n_paths must be >= 1".into()));
        }
        self.base.validate()?;
        Ok(())
    }

    fn config_for(&self, lambda: f64, record: RecordFlags) -> Result<SolverConfig, StudyError> {
        let mut cfg = self.base.with_lambda(YosidaScale::new(lambda)?);
        cfg.record = record;
        Ok(cfg)
    }

    /// Runs `f(path)` for every path index and returns results in index order.
    pub fn map_paths<T, F>(&self, n_paths: usize, f: F) -> Result<Vec<T>, StudyError>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        let run = || (0..n_paths as u64).into_par_iter().map(&f).collect::<Vec<T>>();
        if self.workers == 0 {
            Ok(run())
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.workers)
                .build()
                .map_err(|e| StudyError::Pool(e.to_string()))?;
            Ok(pool.install(run))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    /// Values of the report's parameter columns, already formatted.
    pub params: Vec<String>,
    pub estimate: f64,
    pub std_error: f64,
    /// Paths that contributed to the estimate.
    pub n_paths: usize,
    /// Paths aborted by the blow-up guard.
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub name: String,
    pub param_columns: Vec<String>,
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            param_columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, params: Vec<String>, estimate: MeanEstimate, flagged: usize) {
        self.rows.push(StudyRow {
            params,
            estimate: estimate.mean,
            std_error: estimate.std_error,
            n_paths: estimate.n,
            flagged,
        });
    }

    pub fn csv_header(&self) -> String {
        let mut cols = self.param_columns.clone();
        cols.extend(["estimate", "std_error", "n_paths"].map(String::from));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.rows {
            let mut cells = r.params.clone();
            cells.push(r.estimate.to_string());
            cells.push(r.std_error.to_string());
            cells.push(r.n_paths.to_string());
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn total_flagged(&self) -> usize {
        self.rows.iter().map(|r| r.flagged).sum()
    }

    /// Rows whose parameter `column` equals `value`.
    pub fn select<'a>(&'a self, column: &str, value: &'a str) -> impl Iterator<Item = &'a StudyRow> + 'a {
        let idx = self.param_columns.iter().position(|c| c == column);
        self.rows
            .iter()
            .filter(move |r| idx.map(|i| r.params[i] == value).unwrap_or(false))
    }

    /// Line plot: x from `x_column` (log10 if `log_x`), one series per
    /// distinct value of `series_column`.
    pub fn to_svg(&self, x_column: &str, series_column: Option<&str>, log_x: bool) -> String {
        let xi = self.param_columns.iter().position(|c| c == x_column);
        let si = series_column.and_then(|s| self.param_columns.iter().position(|c| c == s));
        let mut series: Vec<Series> = Vec::new();
        for (row_idx, r) in self.rows.iter().enumerate() {
            let x = xi
                .and_then(|i| r.params[i].parse::<f64>().ok())
                .unwrap_or(row_idx as f64);
            let x = if log_x && x > 0.0 { x.log10() } else { x };
            let name = si.map(|i| format!("{}={}", self.param_columns[i], r.params[i])).unwrap_or_else(|| "estimate".into());
            match series.iter_mut().find(|s| s.name == name) {
                Some(s) => s.points.push((x, r.estimate)),
                None => series.push(Series { name, points: vec![(x, r.estimate)] }),
            }
        }
        let x_label = if log_x { format!("log10 {x_column}") } else { x_column.to_string() };
        line_plot(&self.name, &x_label, "estimate", &series)
    }
}

fn fmt(x: f64) -> String {
    x.to_string()
}

/// Splits per-path results into contributing values and a blow-up count.
/// Non-numeric failures are propagated.
fn collect_values(results: Vec<Result<f64, SolverError>>) -> Result<(Vec<f64>, usize), StudyError> {
    let mut values = Vec::with_capacity(results.len());
    let mut flagged = 0;
    for r in results {
        match r {
            Ok(v) => values.push(v),
            Err(e) if e.is_numeric() => flagged += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok((values, flagged))
}

/// `E sup_{t≤T} (|∇u_λ|² + |v_λ|²)` for each `λ`; columns `lambda`.
pub fn energy_study(spec: &StudySpec) -> Result<StudyReport, StudyError> {
    spec.validate()?;
    let mut report = StudyReport::new("energy", &["lambda"]);
    for &lambda in &spec.lambda_grid {
        let cfg = spec.config_for(lambda, RecordFlags::default())?;
        let per_path = spec.map_paths(spec.n_paths, |p| simulate_path(&cfg, p).map(|r| r.sup_energy))?;
        let (values, flagged) = collect_values(per_path)?;
        report.push(vec![fmt(lambda)], MeanEstimate::from_samples(&values), flagged);
    }
    Ok(report)
}

/// Largest over smallest estimate of a report.
pub fn estimate_ratio(report: &StudyReport) -> f64 {
    let est = report.rows.iter().map(|r| r.estimate);
    let max = est.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = est.fold(f64::INFINITY, f64::min);
    max / min
}

/// `E ∫₀ᵀ ⟨J_λ(u_λ^ε), (I - εΔ)^{-1} β_λ(u_λ)⟩ dt` for every `(λ, ε)`;
/// `ε = 0` is always included. Columns `lambda,eps`.
pub fn pairing_study(spec: &StudySpec, eps_grid: &[f64]) -> Result<StudyReport, StudyError> {
    spec.validate()?;
    let mut eps: Vec<f64> = eps_grid.to_vec();
    if !eps.contains(&0.0) {
        eps.push(0.0);
    }
    if eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(StudyError::Spec("eps grid entries must be >= 0".into()));
    }
    let mut report = StudyReport::new("pairing", &["lambda", "eps"]);
    for &lambda in &spec.lambda_grid {
        let mut cfg = spec.config_for(lambda, RecordFlags::default())?;
        cfg.pairing_eps = eps.clone();
        let per_path = spec.map_paths(spec.n_paths, |p| simulate_path(&cfg, p).map(|r| r.pairings))?;
        let mut ok: Vec<Vec<f64>> = Vec::new();
        let mut flagged = 0;
        for r in per_path {
            match r {
                Ok(v) => ok.push(v),
                Err(e) if e.is_numeric() => flagged += 1,
                Err(e) => return Err(e.into()),
            }
        }
        for (i, &e) in eps.iter().enumerate() {
            let values: Vec<f64> = ok.iter().map(|v| v[i]).collect();
            report.push(vec![fmt(lambda), fmt(e)], MeanEstimate::from_samples(&values), flagged);
        }
    }
    Ok(report)
}

/// Coupled differences between two paths run with the same noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledGap {
    /// `sup_n |u_a(t_n) - u_b(t_n)|_{L²}`
    pub sup_u_l2: f64,
    /// `Δt Σ_n ∫_D |β_a(u_a) - β_b(u_b)| dx`
    pub beta_l1: f64,
    /// `Δt Σ_n ‖β_a(u_a) - β_b(u_b)‖_{-2}`
    pub beta_hm2: f64,
    /// `Δt Σ_n ‖β_a(u_a) - β_b(u_b)‖_{-3}`
    pub beta_hm3: f64,
}

pub fn coupled_gap(cfg: &SolverConfig, a: &PathResult, b: &PathResult) -> Result<CoupledGap, StudyError> {
    if a.increment_hash != b.increment_hash {
        return Err(StudyError::Uncoupled { path: a.path_index });
    }
    if a.states.len() != a.n_steps + 1 || b.states.len() != b.n_steps + 1 || a.n_steps != b.n_steps {
        return Err(SolverError::MissingRecord("states").into());
    }
    let grid = &*cfg.grid;
    let vol = grid.cell_volume();
    let mut sup_u: f64 = 0.0;
    for (sa, sb) in a.states.iter().zip(&b.states) {
        let d: f64 = sa.u.coeffs.iter().zip(&sb.u.coeffs).map(|(x, y)| (x - y).powi(2)).sum();
        sup_u = sup_u.max(d.sqrt());
    }
    let (mut l1, mut hm2, mut hm3) = (0.0, 0.0, 0.0);
    let mut diff = vec![0.0; grid.len()];
    for (ba, bb) in a.beta_samples.iter().zip(&b.beta_samples) {
        let mut s = 0.0;
        for ((d, x), y) in diff.iter_mut().zip(ba).zip(bb) {
            *d = x - y;
            s += d.abs();
        }
        l1 += a.dt * vol * s;
        let modes = grid.to_modes(&diff).map_err(SolverError::from)?;
        hm2 += a.dt * grid.norm(&modes, -2.0);
        hm3 += a.dt * grid.norm(&modes, -3.0);
    }
    Ok(CoupledGap {
        sup_u_l2: sup_u,
        beta_l1: l1,
        beta_hm2: hm2,
        beta_hm3: hm3,
    })
}

pub const LAMBDA_QUANTITIES: [&str; 4] = ["sup_u_l2", "beta_l1", "beta_hm2", "beta_hm3"];

/// Coupled-noise Cauchy gaps between consecutive `λ_j, λ_{j+1}`.
/// Columns `lambda_a,lambda_b,quantity` with quantities [`LAMBDA_QUANTITIES`].
pub fn lambda_convergence_study(spec: &StudySpec) -> Result<StudyReport, StudyError> {
    spec.validate()?;
    if spec.lambda_grid.len() < 3 {
        return Err(StudyError::Spec("lambda convergence needs at least 3 lambda values".into()));
    }
    let record = RecordFlags {
        states: true,
        ..Default::default()
    };
    let configs: Vec<SolverConfig> = spec
        .lambda_grid
        .iter()
        .map(|&l| spec.config_for(l, record))
        .collect::<Result<_, _>>()?;
    let n_pairs = configs.len() - 1;
    // Per path: one gap per consecutive pair, or None if a path blew up.
    let per_path = spec.map_paths(spec.n_paths, |p| -> Result<Option<Vec<CoupledGap>>, StudyError> {
        let mut gaps = Vec::with_capacity(n_pairs);
        let mut prev = match simulate_path(&configs[0], p) {
            Ok(r) => r,
            Err(e) if e.is_numeric() => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        for cfg in &configs[1..] {
            let next = match simulate_path(cfg, p) {
                Ok(r) => r,
                Err(e) if e.is_numeric() => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            gaps.push(coupled_gap(cfg, &prev, &next)?);
            prev = next;
        }
        Ok(Some(gaps))
    })?;
    let mut ok = Vec::new();
    let mut flagged = 0;
    for r in per_path {
        match r? {
            Some(g) => ok.push(g),
            None => flagged += 1,
        }
    }
    let mut report = StudyReport::new("lambda-conv", &["lambda_a", "lambda_b", "quantity"]);
    for j in 0..n_pairs {
        let la = fmt(spec.lambda_grid[j]);
        let lb = fmt(spec.lambda_grid[j + 1]);
        for q in LAMBDA_QUANTITIES {
            let values: Vec<f64> = ok
                .iter()
                .map(|g| {
                    let g = g[j];
                    match q {
                        "sup_u_l2" => g.sup_u_l2,
                        "beta_l1" => g.beta_l1,
                        "beta_hm2" => g.beta_hm2,
                        _ => g.beta_hm3,
                    }
                })
                .collect();
            report.push(vec![la.clone(), lb.clone(), q.to_string()], MeanEstimate::from_samples(&values), flagged);
        }
    }
    Ok(report)
}

/// Itô isometry, discrete quadratic variation, integration by parts and
/// Duhamel re-summation checks. Columns `quantity,target`.
pub fn isometry_study(spec: &StudySpec) -> Result<StudyReport, StudyError> {
    spec.validate()?;
    let base = &spec.base;
    let n_steps = base.n_steps()?;
    let iso = ito_isometry_check(&base.driver, base.t_final, n_steps, spec.n_paths, base.master_seed)?;
    let mut report = StudyReport::new("isometry", &["quantity", "target"]);
    let est = |mean, se| MeanEstimate { mean, std_error: se, n: spec.n_paths };
    report.push(vec!["isometry".into(), fmt(iso.rhs)], est(iso.lhs_estimate, iso.std_error), 0);
    report.push(vec!["quadratic_variation".into(), fmt(iso.rhs)], est(iso.qv_estimate, iso.qv_std_error), 0);

    let mut cfg = base.clone();
    cfg.record = RecordFlags {
        states: true,
        increments: true,
        functionals: false,
    };
    let grid = &*cfg.grid;
    let phi = grid.unit(0, 1.0);
    let psi = grid
        .apply_spectral(&grid.to_modes(&vec![1.0; grid.len()]).map_err(SolverError::from)?, |mu| 1.0 / mu)
        .map_err(SolverError::from)?;
    let per_path = spec.map_paths(spec.n_paths, |p| -> Result<(f64, f64), SolverError> {
        let r = simulate_path(&cfg, p)?;
        Ok((ibp_residual(&r, &phi, &psi)?, duhamel_residual(&r, &cfg)?))
    })?;
    let mut ibp = Vec::new();
    let mut duh = Vec::new();
    let mut flagged = 0;
    for r in per_path {
        match r {
            Ok((a, b)) => {
                ibp.push(a);
                duh.push(b);
            }
            Err(e) if e.is_numeric() => flagged += 1,
            Err(e) => return Err(e.into()),
        }
    }
    report.push(vec!["ibp_residual".into(), fmt(0.0)], MeanEstimate::from_samples(&ibp), flagged);
    report.push(vec!["duhamel_residual".into(), fmt(0.0)], MeanEstimate::from_samples(&duh), flagged);
    Ok(report)
}

/// Chain-rule gap `|∫⟨β_λ(u), v⟩dt - (∫j_λ(u_T) - ∫j_λ(u_0))|` for each
/// step in the `Δt` grid, at the base `λ`. Columns `dt`.
pub fn chain_rule_convergence(spec: &StudySpec) -> Result<StudyReport, StudyError> {
    spec.validate()?;
    let mut report = StudyReport::new("chain-rule", &["dt"]);
    for &dt in &spec.dt_grid {
        let mut cfg = spec.base.clone();
        cfg.dt = dt;
        cfg.record = RecordFlags::default();
        let per_path = spec.map_paths(spec.n_paths, |p| {
            simulate_path(&cfg, p)
                .and_then(|r| chain_rule_check(&r, &cfg.grid, &cfg.graph, cfg.lambda))
                .map(|c| c.gap)
        })?;
        let (values, flagged) = collect_values(per_path)?;
        report.push(vec![fmt(dt)], MeanEstimate::from_samples(&values), flagged);
    }
    Ok(report)
}

/// Path dump CSV: `t,energy,lyapunov,l2_u,h1_u,l2_v,pairing_running`.
pub fn path_csv(result: &PathResult) -> String {
    let mut out = String::from(crate::solver::StepSample::CSV_HEADER);
    out.push('\n');
    for s in &result.samples {
        out.push_str(&s.csv_row());
        out.push('\n');
    }
    out
}

pub fn path_svg(result: &PathResult) -> String {
    let pick = |name: &str, f: fn(&crate::solver::StepSample) -> f64| Series {
        name: name.to_string(),
        points: result.samples.iter().map(|s| (s.t, f(s))).collect(),
    };
    line_plot(
        &format!("path {} (lambda = {})", result.path_index, result.lambda),
        "t",
        "value",
        &[pick("energy", |s| s.energy), pick("lyapunov", |s| s.lyapunov)],
    )
}
