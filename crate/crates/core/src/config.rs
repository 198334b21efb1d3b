//! Sectioned `key=value` run configuration.
//!
//! ```text
//! [domain] dim=1 n_modes=64
//! [graph]  kind=cubic
//! [noise]  kind=wiener q0=1 r=2
//! [solver] lambda=1e-2 dt=1e-3 t_final=1
//! [study]  n_paths=200 seed=42
//! ```
//!
//! Pairs may sit on the section line or on their own lines; `#` and `;`
//! start comments; values may be quoted. Keys outside a section are
//! resolved by their unique suffix (`seed` → `study.seed`), plus the
//! aliases `graph` → `graph.kind` and `sigma` → `noise.sigma`.

use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::driver::{DiffusionMap, DriverKind, MartingaleDriver, NuclearCovariance};
use crate::monotone_graph::{MonotoneGraph, YosidaScale};
use crate::solver::{InitialData, RecordFlags, SolverConfig};
use crate::spectral::SpectralGrid;
use crate::study::StudySpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("ambiguous config key `{0}` (use a section)")]
    AmbiguousKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("syntax error on line {line}: `{text}`")]
    Syntax { line: usize, text: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub const KEYS: &[&str] = &[
    "domain.dim",
    "domain.n_modes",
    "graph.kind",
    "noise.kind",
    "noise.q0",
    "noise.r",
    "noise.rate",
    "noise.sigma",
    "solver.lambda",
    "solver.dt",
    "solver.t_final",
    "solver.u0",
    "solver.record",
    "study.n_paths",
    "study.seed",
    "study.path_index",
    "study.lambda_grid",
    "study.dt_grid",
    "study.eps_grid",
    "study.outdir",
    "study.workers",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Wiener,
    Poisson,
}

/// Fully typed run settings with desk-scale defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub n_modes: usize,
    pub graph: MonotoneGraph,
    pub noise: NoiseKind,
    pub q0: f64,
    pub r: f64,
    pub rate: f64,
    pub sigma: DiffusionMap,
    pub lambda: f64,
    pub dt: f64,
    pub t_final: f64,
    pub u0: InitialData,
    pub record: RecordFlags,
    pub n_paths: usize,
    pub seed: u64,
    pub path_index: u64,
    pub lambda_grid: Vec<f64>,
    pub dt_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub outdir: PathBuf,
    /// 0 means one worker per core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            n_modes: 64,
            graph: MonotoneGraph::Cubic,
            noise: NoiseKind::Wiener,
            q0: 1.0,
            r: 2.0,
            rate: 5.0,
            sigma: DiffusionMap::One,
            lambda: 1e-2,
            dt: 1e-3,
            t_final: 1.0,
            u0: InitialData::Smooth { k_max: 8 },
            record: RecordFlags {
                states: false,
                increments: false,
                functionals: true,
            },
            n_paths: 200,
            seed: 42,
            path_index: 0,
            lambda_grid: vec![1e-1, 1e-2, 1e-3, 1e-4],
            dt_grid: vec![4e-3, 2e-3, 1e-3],
            eps_grid: vec![1e-2, 1e-3, 0.0],
            outdir: PathBuf::from("out"),
            workers: 0,
        }
    }
}

/// Resolves a possibly unqualified key to its canonical `section.key` form.
pub fn canonical_key(section: Option<&str>, key: &str) -> Result<String, ConfigError> {
    let key = key.trim();
    if let Some(sec) = section {
        let full = format!("{sec}.{key}");
        return if KEYS.contains(&full.as_str()) {
            Ok(full)
        } else {
            Err(ConfigError::UnknownKey(full))
        };
    }
    if KEYS.contains(&key) {
        return Ok(key.to_string());
    }
    match key {
        "graph" => return Ok("graph.kind".into()),
        "sigma" => return Ok("noise.sigma".into()),
        _ => {}
    }
    let matches: Vec<&&str> = KEYS
        .iter()
        .filter(|k| k.rsplit_once('.').map(|(_, tail)| tail == key).unwrap_or(false))
        .collect();
    match matches.as_slice() {
        [one] => Ok(one.to_string()),
        [] => Err(ConfigError::UnknownKey(key.to_string())),
        _ => Err(ConfigError::AmbiguousKey(key.to_string())),
    }
}

fn strip_quotes(v: &str) -> &str {
    let v = v.trim();
    if v.len() >= 2 && ((v.starts_with('"') && v.ends_with('"')) || (v.starts_with('\'') && v.ends_with('\''))) {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

/// Removes whitespace around `=` so that `k = v` and `k=v` tokenize alike.
fn tighten(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let chars: Vec<char> = s.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            let prev = chars[..i].iter().rev().find(|c| !c.is_whitespace());
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            let glue = |c: Option<&char>| matches!(c, Some('=') | Some(','));
            if glue(prev) || next == Some(&'=') || next == Some(&',') {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Splits config text into `(canonical_key, value)` pairs in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut section: Option<String> = None;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut rest = line;
        if let Some(stripped) = line.strip_prefix('[') {
            let close = stripped.find(']').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                text: raw.to_string(),
            })?;
            let name = stripped[..close].trim();
            if name.is_empty() {
                return Err(ConfigError::Syntax { line: line_no, text: raw.to_string() });
            }
            section = Some(name.to_string());
            rest = &stripped[close + 1..];
        }
        for token in tighten(rest).split_whitespace() {
            let (k, v) = token.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                text: raw.to_string(),
            })?;
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: line_no, text: raw.to_string() });
            }
            pairs.push((canonical_key(section.as_deref(), k)?, strip_quotes(v).to_string()));
        }
    }
    Ok(pairs)
}

fn bad(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| bad(key, value, e))
}

fn parse_grid(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num::<f64>(key, s))
        .collect()
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Sets one key; `key` may be qualified or a unique suffix.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = if key.contains('.') {
            let (sec, k) = key.split_once('.').unwrap();
            canonical_key(Some(sec), k)?
        } else {
            canonical_key(None, key)?
        };
        let v = strip_quotes(value);
        match key.as_str() {
            "domain.dim" => self.dim = parse_num(&key, v)?,
            "domain.n_modes" => self.n_modes = parse_num(&key, v)?,
            "graph.kind" => self.graph = v.parse().map_err(|e| bad(&key, v, e))?,
            "noise.kind" => {
                self.noise = match v {
                    "wiener" => NoiseKind::Wiener,
                    "poisson" => NoiseKind::Poisson,
                    _ => return Err(bad(&key, v, "expected `wiener` or `poisson`")),
                }
            }
            "noise.q0" => self.q0 = parse_num(&key, v)?,
            "noise.r" => self.r = parse_num(&key, v)?,
            "noise.rate" => self.rate = parse_num(&key, v)?,
            "noise.sigma" => self.sigma = v.parse().map_err(|e| bad(&key, v, e))?,
            "solver.lambda" => self.lambda = parse_num(&key, v)?,
            "solver.dt" => self.dt = parse_num(&key, v)?,
            "solver.t_final" => self.t_final = parse_num(&key, v)?,
            "solver.u0" => self.u0 = v.parse().map_err(|e| bad(&key, v, e))?,
            "solver.record" => self.record = v.parse().map_err(|e| bad(&key, v, e))?,
            "study.n_paths" => self.n_paths = parse_num(&key, v)?,
            "study.seed" => self.seed = parse_num(&key, v)?,
            "study.path_index" => self.path_index = parse_num(&key, v)?,
            "study.lambda_grid" => self.lambda_grid = parse_grid(&key, v)?,
            "study.dt_grid" => self.dt_grid = parse_grid(&key, v)?,
            "study.eps_grid" => self.eps_grid = parse_grid(&key, v)?,
            "study.outdir" => self.outdir = PathBuf::from(v),
            "study.workers" => self.workers = parse_num(&key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<SpectralGrid, ConfigError> {
        SpectralGrid::new(self.dim, self.n_modes).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn solver_config(&self) -> Result<SolverConfig, ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let grid = self.grid()?;
        let cov = NuclearCovariance::power_law(&grid, self.q0, self.r).map_err(|e| invalid(&e))?;
        let kind = match self.noise {
            NoiseKind::Wiener => DriverKind::QWiener,
            NoiseKind::Poisson => DriverKind::CompensatedPoisson { rate: self.rate },
        };
        let driver = MartingaleDriver::new(kind, cov).map_err(|e| invalid(&e))?;
        let cfg = SolverConfig {
            grid: Arc::new(grid),
            graph: self.graph,
            lambda: YosidaScale::new(self.lambda).map_err(|e| invalid(&e))?,
            dt: self.dt,
            t_final: self.t_final,
            driver,
            diffusion: self.sigma,
            initial: self.u0.clone(),
            record: self.record,
            pairing_eps: vec![0.0],
            master_seed: self.seed,
        };
        cfg.validate().map_err(|e| invalid(&e))?;
        Ok(cfg)
    }

    pub fn study_spec(&self) -> Result<StudySpec, ConfigError> {
        let spec = StudySpec {
            base: self.solver_config()?,
            lambda_grid: self.lambda_grid.clone(),
            dt_grid: self.dt_grid.clone(),
            eps_grid: self.eps_grid.clone(),
            n_paths: self.n_paths,
            outdir: self.outdir.clone(),
            workers: self.workers,
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }
}
