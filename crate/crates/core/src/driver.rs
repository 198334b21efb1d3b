//! Square-integrable `L²(D)`-valued martingale drivers and the diffusion
//! coefficient `G₀(u)h = σ(u)·h`.
//!
//! Both driver kinds have per-unit-time covariance exactly `Q`, diagonal in
//! the eigenbasis with `q_k = q₀|k|^{-r}`:
//!
//! * `QWiener`: `ΔM_k ~ N(0, q_k Δt)` independently per mode.
//! * `CompensatedPoisson(ν)`: jumps `J = Σ_k sqrt(q_k/ν) ξ_k e_k` at the
//!   times of a rate-`ν` Poisson process, `ξ_k ~ U(-√3, √3)` i.i.d.
//!   The jumps are symmetric, so no compensator drift appears.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::rng::PathStream;
use crate::spectral::{SpectralError, SpectralField, SpectralGrid};
use crate::stats::MeanEstimate;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriverError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Diagonal trace-class covariance `Q` on the retained modes.
#[derive(Debug, Clone, PartialEq)]
pub struct NuclearCovariance {
    variances: Vec<f64>,
}

impl NuclearCovariance {
    /// `q_k = q0 · |k|^{-r}`; requires `q0 ≥ 0` and `r > d`.
    pub fn power_law(grid: &SpectralGrid, q0: f64, r: f64) -> Result<Self, DriverError> {
        if !(q0.is_finite() && q0 >= 0.0) {
            return Err(DriverError::Parameter(format!("q0 must be >= 0, got {q0}")));
        }
        if !(r.is_finite() && r > grid.dim() as f64) {
            return Err(DriverError::Parameter(format!(
                "decay r must exceed the dimension {}, got {r}",
                grid.dim()
            )));
        }
        let variances = grid
            .eigenvalues()
            .iter()
            .map(|&mu| q0 * mu.powf(-0.5 * r))
            .collect();
        Ok(Self { variances })
    }

    pub fn from_variances(grid: &SpectralGrid, variances: Vec<f64>) -> Result<Self, DriverError> {
        grid.check(variances.len())?;
        if let Some(q) = variances.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
            return Err(DriverError::Parameter(format!("variance {q} is not >= 0")));
        }
        Ok(Self { variances })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn trace(&self) -> f64 {
        self.variances.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriverKind {
    QWiener,
    CompensatedPoisson { rate: f64 },
}

impl fmt::Display for DriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::QWiener => write!(f, "wiener"),
            Self::CompensatedPoisson { rate } => write!(f, "poisson(rate={rate})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleDriver {
    kind: DriverKind,
    covariance: NuclearCovariance,
}

impl MartingaleDriver {
    pub fn new(kind: DriverKind, covariance: NuclearCovariance) -> Result<Self, DriverError> {
        if let DriverKind::CompensatedPoisson { rate } = kind {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(DriverError::Parameter(format!("jump rate must be > 0, got {rate}")));
            }
        }
        Ok(Self { kind, covariance })
    }

    pub fn kind(&self) -> DriverKind {
        self.kind
    }

    pub fn covariance(&self) -> &NuclearCovariance {
        &self.covariance
    }

    /// Prepares a sampler for a fixed step `dt`.
    pub fn sampler(&self, dt: f64) -> Result<IncrementSampler, DriverError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(DriverError::Parameter(format!("dt must be > 0, got {dt}")));
        }
        let q = self.covariance.variances();
        let scheme = match self.kind {
            DriverKind::QWiener => Scheme::Gaussian {
                scale: q.iter().map(|qk| (qk * dt).sqrt()).collect(),
            },
            DriverKind::CompensatedPoisson { rate } => Scheme::Jumps {
                count: Poisson::new(rate * dt).map_err(|e| {
                    DriverError::Parameter(format!("jump intensity {}: {e}", rate * dt))
                })?,
                amplitude: q.iter().map(|qk| (qk / rate).sqrt()).collect(),
            },
        };
        Ok(IncrementSampler { scheme })
    }

    /// One increment `ΔM` over a step of length `dt`.
    pub fn sample_increment(
        &self,
        dt: f64,
        stream: &mut PathStream,
    ) -> Result<SpectralField, DriverError> {
        let sampler = self.sampler(dt)?;
        let mut out = SpectralField::zeros(self.covariance.len());
        sampler.sample_into(stream, &mut out.coeffs);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
enum Scheme {
    Gaussian { scale: Vec<f64> },
    Jumps { count: Poisson<f64>, amplitude: Vec<f64> },
}

/// Draws increments for one step size. Modes are filled in lexicographic
/// order; for jumps, the count comes first, then each jump's marks.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    scheme: Scheme,
}

impl IncrementSampler {
    pub fn sample_into(&self, stream: &mut PathStream, out: &mut [f64]) {
        match &self.scheme {
            Scheme::Gaussian { scale } => {
                for (o, s) in out.iter_mut().zip(scale) {
                    let z: f64 = stream.sample(StandardNormal);
                    *o = s * z;
                }
            }
            Scheme::Jumps { count, amplitude } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let jumps = count.sample(stream) as u64;
                for _ in 0..jumps {
                    for (o, a) in out.iter_mut().zip(amplitude) {
                        let xi: f64 = stream.random_range(-SQRT_3..SQRT_3);
                        *o += a * xi;
                    }
                }
            }
        }
    }
}

/// Scalar `σ` of the multiplication operator `G₀(u)h = σ(u)·h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionMap {
    Zero,
    One,
    Clip,
    Sin,
}

impl DiffusionMap {
    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::One => 1.0,
            Self::Clip => x.clamp(-1.0, 1.0),
            Self::Sin => x.sin(),
        }
    }

    /// `sup |σ|`.
    pub fn bound(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            _ => 1.0,
        }
    }

    /// Lipschitz constant of `σ`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::Zero | Self::One => 0.0,
            Self::Clip | Self::Sin => 1.0,
        }
    }

    /// `G₀(u)dM`, with `u` given by its nodal values.
    pub(crate) fn apply_nodal(
        &self,
        grid: &SpectralGrid,
        u_nodes: &[f64],
        dm: &SpectralField,
        scratch: &mut [f64],
        out: &mut [f64],
    ) {
        match self {
            Self::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Self::One => out.copy_from_slice(&dm.coeffs),
            _ => {
                grid.synthesize(&dm.coeffs, scratch);
                for (s, &u) in scratch.iter_mut().zip(u_nodes) {
                    *s *= self.sigma(u);
                }
                grid.analyze(scratch, out);
            }
        }
    }

    /// `G₀(u)dM = to_modes(σ(u(x_i))·dM(x_i))`.
    pub fn apply(
        &self,
        grid: &SpectralGrid,
        u: &SpectralField,
        dm: &SpectralField,
    ) -> Result<SpectralField, DriverError> {
        grid.check(dm.len())?;
        let u_nodes = grid.to_nodes(u)?;
        let mut scratch = vec![0.0; grid.len()];
        let mut out = SpectralField::zeros(grid.len());
        self.apply_nodal(grid, &u_nodes, dm, &mut scratch, &mut out.coeffs);
        Ok(out)
    }

    /// `|G₀(u)|_Q = (Σ_k q_k |σ(u) e_k|²_{L²})^{1/2}` by nodal quadrature.
    pub fn hs_norm_q(
        &self,
        grid: &SpectralGrid,
        u: &SpectralField,
        cov: &NuclearCovariance,
    ) -> Result<f64, DriverError> {
        grid.check(cov.len())?;
        let u_nodes = grid.to_nodes(u)?;
        let sigma_sq: Vec<f64> = u_nodes.iter().map(|&x| self.sigma(x).powi(2)).collect();
        let mut total = 0.0;
        let mut basis = vec![0.0; grid.len()];
        for (idx, &q) in cov.variances().iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            grid.synthesize(&grid.unit(idx, 1.0).coeffs, &mut basis);
            let l2: f64 = basis
                .iter()
                .zip(&sigma_sq)
                .fold(0.0, |acc, (e, s)| acc + s * e * e);
            total += q * grid.cell_volume() * l2;
        }
        Ok(total.sqrt())
    }
}

impl fmt::Display for DiffusionMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Zero => "zero",
            Self::One => "one",
            Self::Clip => "clip",
            Self::Sin => "sin",
        };
        f.write_str(s)
    }
}

impl FromStr for DiffusionMap {
    type Err = DriverError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "zero" => Ok(Self::Zero),
            "one" => Ok(Self::One),
            "clip" => Ok(Self::Clip),
            "sin" => Ok(Self::Sin),
            other => Err(DriverError::Parameter(format!("unknown sigma `{other}`"))),
        }
    }
}

/// Monte Carlo check of `E|M(T)|² = T·tr Q`, plus the discrete quadratic
/// variation `E Σ_n |ΔM_n|²` against the same target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsometryReport {
    pub lhs_estimate: f64,
    pub rhs: f64,
    pub std_error: f64,
    pub qv_estimate: f64,
    pub qv_std_error: f64,
    pub n_paths: usize,
}

pub fn ito_isometry_check(
    driver: &MartingaleDriver,
    t_final: f64,
    n_steps: usize,
    n_paths: usize,
    master_seed: u64,
) -> Result<IsometryReport, DriverError> {
    let rhs = t_final * driver.covariance().trace();
    if t_final == 0.0 {
        return Ok(IsometryReport {
            lhs_estimate: 0.0,
            rhs: 0.0,
            std_error: 0.0,
            qv_estimate: 0.0,
            qv_std_error: 0.0,
            n_paths,
        });
    }
    if n_steps == 0 || n_paths == 0 {
        return Err(DriverError::Parameter("n_steps and n_paths must be >= 1".into()));
    }
    let sampler = driver.sampler(t_final / n_steps as f64)?;
    let len = driver.covariance().len();
    let per_path: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut stream = PathStream::new(master_seed, path);
            let mut total = vec![0.0; len];
            let mut inc = vec![0.0; len];
            let mut qv = 0.0;
            for _ in 0..n_steps {
                sampler.sample_into(&mut stream, &mut inc);
                for (t, d) in total.iter_mut().zip(&inc) {
                    *t += d;
                }
                qv += inc.iter().map(|d| d * d).sum::<f64>();
            }
            (total.iter().map(|m| m * m).sum::<f64>(), qv)
        })
        .collect();
    let lhs: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let qv: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let lhs = MeanEstimate::from_samples(&lhs);
    let qv = MeanEstimate::from_samples(&qv);
    Ok(IsometryReport {
        lhs_estimate: lhs.mean,
        rhs,
        std_error: lhs.std_error,
        qv_estimate: qv.mean,
        qv_std_error: qv.std_error,
        n_paths,
    })
}
