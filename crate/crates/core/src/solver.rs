//! Stochastic trigonometric time stepping of the regularized wave system
//!
//! ```text
//! du = v dt
//! dv = (Δu - β_λ(u)) dt + σ(u-) dM
//! ```
//!
//! Each step injects the forcing at the left endpoint and then applies the
//! exact wave group over `Δt`:
//!
//! ```text
//! U_{n+1} = S(Δt) [U_n + (0, -β_λ(u_n)Δt + σ(u_n)ΔM_n)]
//! ```
//!
//! so the linear part is propagated exactly and the discrete Duhamel
//! formula holds to round-off.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::driver::{DiffusionMap, DriverError, MartingaleDriver};
use crate::monotone_graph::{GraphError, MonotoneGraph, YosidaScale};
use crate::rng::PathStream;
use crate::spectral::{SpectralError, SpectralField, SpectralGrid};

/// Paths whose energy exceeds this are aborted.
pub const BLOWUP_ENERGY: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("energy {energy:e} exceeded the blow-up guard at step {step}")]
    BlowUp { step: usize, energy: f64 },
    #[error("path result lacks recorded {0}")]
    MissingRecord(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Driver(#[from] DriverError),
}

impl SolverError {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Self::NonFinite { .. } | Self::BlowUp { .. } | Self::Graph(GraphError::NoConvergence { .. })
        )
    }
}

/// Displacement and velocity coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub u: SpectralField,
    pub v: SpectralField,
}

impl WaveState {
    pub fn zeros(len: usize) -> Self {
        Self {
            u: SpectralField::zeros(len),
            v: SpectralField::zeros(len),
        }
    }

    /// `|∇u|² + |v|²`.
    pub fn energy(&self, grid: &SpectralGrid) -> f64 {
        grid.grad_seminorm_sq(&self.u) + self.v.dot(&self.v)
    }

    /// `energy + 2∫_D j_λ(u) dx`, invariant under the deterministic flow.
    pub fn lyapunov(
        &self,
        grid: &SpectralGrid,
        graph: &MonotoneGraph,
        lambda: YosidaScale,
    ) -> Result<f64, SolverError> {
        let nodes = grid.to_nodes(&self.u)?;
        let mut total = 0.0;
        for &x in &nodes {
            total += graph.moreau(lambda, x)?;
        }
        Ok(self.energy(grid) + 2.0 * grid.cell_volume() * total)
    }
}

/// Per-mode entries of `S(Δt)` for a fixed step.
#[derive(Debug, Clone)]
pub struct GroupCache {
    dt: f64,
    /// `cos(√μ Δt)`
    pub cos: Vec<f64>,
    /// `sin(√μ Δt)/√μ`
    pub sin_over_freq: Vec<f64>,
    /// `-√μ sin(√μ Δt)`
    pub neg_freq_sin: Vec<f64>,
}

impl GroupCache {
    pub fn new(grid: &SpectralGrid, dt: f64) -> Self {
        let mut cos = Vec::with_capacity(grid.len());
        let mut sin_over_freq = Vec::with_capacity(grid.len());
        let mut neg_freq_sin = Vec::with_capacity(grid.len());
        for &mu in grid.eigenvalues() {
            let w = mu.sqrt();
            let (s, c) = (w * dt).sin_cos();
            cos.push(c);
            sin_over_freq.push(s / w);
            neg_freq_sin.push(-w * s);
        }
        Self {
            dt,
            cos,
            sin_over_freq,
            neg_freq_sin,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `(u, v) ← S(Δt)(u, v)`.
    pub fn rotate(&self, u: &mut [f64], v: &mut [f64]) {
        for k in 0..u.len() {
            let (uk, vk) = (u[k], v[k]);
            u[k] = self.cos[k] * uk + self.sin_over_freq[k] * vk;
            v[k] = self.neg_freq_sin[k] * uk + self.cos[k] * vk;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// `u₀ = Σ_{k ∈ {1..K}^d} |k|^{-2} e_k`, `v₀ = 0`.
    Smooth { k_max: usize },
    /// Independent `a_k ~ N(0, |k|^{-4})`, drawn from the path stream.
    Random { k_max: usize },
    Fields { u: SpectralField, v: SpectralField },
}

impl InitialData {
    pub fn build(&self, grid: &SpectralGrid, stream: &mut PathStream) -> Result<WaveState, SolverError> {
        let in_range = |k: &[usize; 2], k_max: usize| k[0] <= k_max && k[1] <= k_max;
        match self {
            Self::Smooth { k_max } => {
                let mut u = grid.zeros();
                for ((c, k), &mu) in u.coeffs.iter_mut().zip(grid.multi_indices()).zip(grid.eigenvalues()) {
                    if in_range(k, *k_max) {
                        *c = 1.0 / mu;
                    }
                }
                Ok(WaveState { u, v: grid.zeros() })
            }
            Self::Random { k_max } => {
                let mut u = grid.zeros();
                for ((c, k), &mu) in u.coeffs.iter_mut().zip(grid.multi_indices()).zip(grid.eigenvalues()) {
                    if in_range(k, *k_max) {
                        let z: f64 = StandardNormal.sample(stream);
                        *c = z / mu;
                    }
                }
                Ok(WaveState { u, v: grid.zeros() })
            }
            Self::Fields { u, v } => {
                grid.check(u.len())?;
                grid.check(v.len())?;
                Ok(WaveState { u: u.clone(), v: v.clone() })
            }
        }
    }
}

impl fmt::Display for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Smooth { k_max } => write!(f, "smooth:{k_max}"),
            Self::Random { k_max } => write!(f, "random:{k_max}"),
            Self::Fields { .. } => write!(f, "fields"),
        }
    }
}

impl FromStr for InitialData {
    type Err = SolverError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SolverError::Config(format!("bad initial data `{s}` (expected smooth:K or random:K)"));
        let (name, k) = s.trim().split_once(':').ok_or_else(bad)?;
        let k_max: usize = k.trim().parse().map_err(|_| bad())?;
        if k_max == 0 {
            return Err(bad());
        }
        match name.trim() {
            "smooth" => Ok(Self::Smooth { k_max }),
            "random" => Ok(Self::Random { k_max }),
            _ => Err(bad()),
        }
    }
}

/// What a path keeps besides its running totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecordFlags {
    /// States `(u_n, v_n)` and nodal samples `β_λ(u_n)`.
    pub states: bool,
    pub increments: bool,
    /// Per-step functional samples (the path dump rows).
    pub functionals: bool,
}

impl RecordFlags {
    pub fn all() -> Self {
        Self {
            states: true,
            increments: true,
            functionals: true,
        }
    }
}

impl FromStr for RecordFlags {
    type Err = SolverError;

    /// `states|increments|functionals`, any subset, `|` or `,` separated.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut flags = Self::default();
        for part in s.split(['|', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "states" => flags.states = true,
                "increments" => flags.increments = true,
                "functionals" => flags.functionals = true,
                "none" => {}
                other => return Err(SolverError::Config(format!("unknown record flag `{other}`"))),
            }
        }
        Ok(flags)
    }
}

impl fmt::Display for RecordFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.states, "states"),
            (self.increments, "increments"),
            (self.functionals, "functionals"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join("|"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub grid: Arc<SpectralGrid>,
    pub graph: MonotoneGraph,
    pub lambda: YosidaScale,
    pub dt: f64,
    pub t_final: f64,
    pub driver: MartingaleDriver,
    pub diffusion: DiffusionMap,
    pub initial: InitialData,
    pub record: RecordFlags,
    /// Smoothing parameters `ε` of the `(I - εΔ)^{-1}` filtered pairings;
    /// `0` is the unfiltered pairing.
    pub pairing_eps: Vec<f64>,
    pub master_seed: u64,
}

impl SolverConfig {
    /// Number of steps `T/Δt`, which must be an integer to within 1e-9.
    pub fn n_steps(&self) -> Result<usize, SolverError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SolverError::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.dt) {
            return Err(SolverError::Config(format!(
                "t_final must be >= dt, got t_final = {}, dt = {}",
                self.t_final, self.dt
            )));
        }
        let ratio = self.t_final / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * n.max(1.0) {
            return Err(SolverError::Config(format!(
                "t_final / dt = {ratio} is not an integer"
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<usize, SolverError> {
        let n = self.n_steps()?;
        self.grid.check(self.driver.covariance().len())?;
        if let Some(e) = self.pairing_eps.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(SolverError::Config(format!("pairing eps must be >= 0, got {e}")));
        }
        if let InitialData::Fields { u, v } = &self.initial {
            self.grid.check(u.len())?;
            self.grid.check(v.len())?;
        }
        Ok(n)
    }

    pub fn with_lambda(&self, lambda: YosidaScale) -> Self {
        Self { lambda, ..self.clone() }
    }
}

/// One row of the path dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    pub t: f64,
    pub energy: f64,
    pub lyapunov: f64,
    pub l2_u: f64,
    pub h1_u: f64,
    pub l2_v: f64,
    /// `Δt Σ_{m<n} ⟨β_λ(u_m), J_λ u_m⟩`.
    pub pairing_running: f64,
}

impl StepSample {
    pub const CSV_HEADER: &'static str = "t,energy,lyapunov,l2_u,h1_u,l2_v,pairing_running";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.t, self.energy, self.lyapunov, self.l2_u, self.h1_u, self.l2_v, self.pairing_running
        )
    }
}

#[derive(Debug, Clone)]
pub struct PathResult {
    pub path_index: u64,
    pub lambda: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// `t_n = nΔt`, `n = 0..=n_steps`.
    pub times: Vec<f64>,
    /// `n_steps + 1` states when recorded.
    pub states: Vec<WaveState>,
    /// Nodal `β_λ(u_n)`, `n < n_steps`, recorded with the states.
    pub beta_samples: Vec<Vec<f64>>,
    /// `ΔM_n`, `n < n_steps`.
    pub increments: Vec<SpectralField>,
    pub samples: Vec<StepSample>,
    pub initial_state: WaveState,
    pub final_state: WaveState,
    /// `sup_n |∇u_n|² + |v_n|²`.
    pub sup_energy: f64,
    /// `Δt Σ_n ⟨J_λ(u_n^ε), (I - εΔ)^{-1} β_λ(u_n)⟩`, one per entry of `pairing_eps`.
    pub pairings: Vec<f64>,
    /// `Δt Σ_n ⟨β_λ(u_n), v_n⟩`.
    pub chain_lhs: f64,
    /// `∫_D j_λ(u_0)` and `∫_D j_λ(u_N)`.
    pub moreau_initial: f64,
    pub moreau_final: f64,
    /// `min_n ⟨β_λ(u_n), u_n⟩`.
    pub min_beta_pairing: f64,
    /// Hash of the bit patterns of all increments, in order.
    pub increment_hash: u64,
}

/// Scratch buffers for one path.
struct Workspace {
    u_nodes: Vec<f64>,
    res_nodes: Vec<f64>,
    beta_nodes: Vec<f64>,
    beta_modes: Vec<f64>,
    noise_modes: Vec<f64>,
    scratch_a: Vec<f64>,
    scratch_b: Vec<f64>,
    dm: SpectralField,
}

impl Workspace {
    fn new(len: usize) -> Self {
        Self {
            u_nodes: vec![0.0; len],
            res_nodes: vec![0.0; len],
            beta_nodes: vec![0.0; len],
            beta_modes: vec![0.0; len],
            noise_modes: vec![0.0; len],
            scratch_a: vec![0.0; len],
            scratch_b: vec![0.0; len],
            dm: SpectralField::zeros(len),
        }
    }
}

/// Evaluates `J_λ(u)`, `β_λ(u)` and returns `∫ j_λ(u)` at the nodes of `u`.
fn evaluate_nonlinearity(
    grid: &SpectralGrid,
    graph: &MonotoneGraph,
    lambda: YosidaScale,
    u: &SpectralField,
    ws: &mut Workspace,
) -> Result<f64, SolverError> {
    grid.synthesize(&u.coeffs, &mut ws.u_nodes);
    let half_l = 0.5 * lambda.get();
    let mut moreau = 0.0;
    for i in 0..ws.u_nodes.len() {
        let (j, b) = graph.resolvent_and_yosida(lambda, ws.u_nodes[i])?;
        ws.res_nodes[i] = j;
        ws.beta_nodes[i] = b;
        moreau += graph.potential_at(j) + half_l * b * b;
    }
    grid.analyze(&ws.beta_nodes, &mut ws.beta_modes);
    Ok(grid.cell_volume() * moreau)
}

/// Applies the kick `v += -β̂Δt + Ĝ` and the rotation `S(Δt)`.
fn kick_and_rotate(cache: &GroupCache, state: &mut WaveState, beta_modes: &[f64], noise_modes: &[f64]) {
    let dt = cache.dt();
    for ((v, b), g) in state.v.coeffs.iter_mut().zip(beta_modes).zip(noise_modes) {
        *v += -b * dt + g;
    }
    cache.rotate(&mut state.u.coeffs, &mut state.v.coeffs);
}

/// One step `U_{n+1} = S(Δt)[U_n + (0, -β_λ(u_n)Δt + σ(u_n)ΔM_n)]`.
pub fn step(
    grid: &SpectralGrid,
    cache: &GroupCache,
    state: &WaveState,
    graph: &MonotoneGraph,
    lambda: YosidaScale,
    diffusion: DiffusionMap,
    dm: &SpectralField,
) -> Result<WaveState, SolverError> {
    grid.check(state.u.len())?;
    grid.check(state.v.len())?;
    grid.check(dm.len())?;
    let mut ws = Workspace::new(grid.len());
    evaluate_nonlinearity(grid, graph, lambda, &state.u, &mut ws)?;
    diffusion.apply_nodal(grid, &ws.u_nodes, dm, &mut ws.scratch_a, &mut ws.noise_modes);
    let mut next = state.clone();
    kick_and_rotate(cache, &mut next, &ws.beta_modes, &ws.noise_modes);
    if !(next.u.is_finite() && next.v.is_finite()) {
        return Err(SolverError::NonFinite { step: 0 });
    }
    Ok(next)
}

/// Simulates path `path_index` of the configuration.
pub fn simulate_path(config: &SolverConfig, path_index: u64) -> Result<PathResult, SolverError> {
    let n_steps = config.validate()?;
    let grid = &*config.grid;
    let len = grid.len();
    let dt = config.dt;
    let lambda = config.lambda;
    let cache = GroupCache::new(grid, dt);
    let sampler = config.driver.sampler(dt)?;
    let mut stream = PathStream::new(config.master_seed, path_index);
    let mut state = config.initial.build(grid, &mut stream)?;
    let initial_state = state.clone();
    let record = config.record;
    let vol = grid.cell_volume();
    let filters: Vec<Option<Vec<f64>>> = config
        .pairing_eps
        .iter()
        .map(|&eps| (eps > 0.0).then(|| grid.eigenvalues().iter().map(|mu| 1.0 / (1.0 + eps * mu)).collect()))
        .collect();

    let mut ws = Workspace::new(len);
    let mut hasher = DefaultHasher::new();
    let mut result = PathResult {
        path_index,
        lambda: lambda.get(),
        dt,
        n_steps,
        times: (0..=n_steps).map(|n| n as f64 * dt).collect(),
        states: Vec::with_capacity(if record.states { n_steps + 1 } else { 0 }),
        beta_samples: Vec::with_capacity(if record.states { n_steps } else { 0 }),
        increments: Vec::with_capacity(if record.increments { n_steps } else { 0 }),
        samples: Vec::with_capacity(if record.functionals { n_steps + 1 } else { 0 }),
        initial_state: initial_state.clone(),
        final_state: initial_state,
        sup_energy: 0.0,
        pairings: vec![0.0; config.pairing_eps.len()],
        chain_lhs: 0.0,
        moreau_initial: 0.0,
        moreau_final: 0.0,
        min_beta_pairing: f64::INFINITY,
        increment_hash: 0,
    };
    let mut pairing_running = 0.0;

    for n in 0..=n_steps {
        let moreau = evaluate_nonlinearity(grid, &config.graph, lambda, &state.u, &mut ws)?;
        let energy = state.energy(grid);
        if !energy.is_finite() {
            return Err(SolverError::NonFinite { step: n });
        }
        if energy > BLOWUP_ENERGY {
            return Err(SolverError::BlowUp { step: n, energy });
        }
        result.sup_energy = result.sup_energy.max(energy);
        if n == 0 {
            result.moreau_initial = moreau;
        }
        if record.functionals {
            let grad_sq = grid.grad_seminorm_sq(&state.u);
            result.samples.push(StepSample {
                t: result.times[n],
                energy,
                lyapunov: energy + 2.0 * moreau,
                l2_u: state.u.l2_norm(),
                h1_u: grad_sq.sqrt(),
                l2_v: state.v.l2_norm(),
                pairing_running,
            });
        }
        if record.states {
            result.states.push(state.clone());
        }
        if n == n_steps {
            result.moreau_final = moreau;
            break;
        }

        // Running functionals at t_n.
        let beta_u = vol * dot(&ws.beta_nodes, &ws.u_nodes);
        result.min_beta_pairing = result.min_beta_pairing.min(beta_u);
        result.chain_lhs += dt * dot(&ws.beta_modes, &state.v.coeffs);
        for (slot, filter) in result.pairings.iter_mut().zip(&filters) {
            let value = match filter {
                None => vol * dot(&ws.beta_nodes, &ws.res_nodes),
                Some(f) => {
                    // ⟨J_λ(u^ε), (I - εΔ)^{-1} β_λ(u)⟩ in coefficient space.
                    for ((s, fk), uk) in ws.scratch_a.iter_mut().zip(f.iter()).zip(&state.u.coeffs) {
                        *s = fk * uk;
                    }
                    grid.synthesize(&ws.scratch_a, &mut ws.scratch_b);
                    for x in ws.scratch_b.iter_mut() {
                        *x = config.graph.resolvent(lambda, *x)?;
                    }
                    grid.analyze(&ws.scratch_b, &mut ws.scratch_a);
                    (0..len).fold(0.0, |acc, k| acc + ws.scratch_a[k] * f[k] * ws.beta_modes[k])
                }
            };
            *slot += dt * value;
        }
        let unfiltered = vol * dot(&ws.beta_nodes, &ws.res_nodes);
        pairing_running += dt * unfiltered;
        if record.states {
            result.beta_samples.push(ws.beta_nodes.clone());
        }

        sampler.sample_into(&mut stream, &mut ws.dm.coeffs);
        for c in &ws.dm.coeffs {
            hasher.write_u64(c.to_bits());
        }
        config
            .diffusion
            .apply_nodal(grid, &ws.u_nodes, &ws.dm, &mut ws.scratch_a, &mut ws.noise_modes);
        if record.increments {
            result.increments.push(ws.dm.clone());
        }
        kick_and_rotate(&cache, &mut state, &ws.beta_modes, &ws.noise_modes);
        if !(state.u.is_finite() && state.v.is_finite()) {
            return Err(SolverError::NonFinite { step: n + 1 });
        }
    }
    result.increment_hash = hasher.finish();
    result.final_state = state;
    Ok(result)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Per-step Duhamel residuals `|u_n - u_n^{Duhamel}|_{L²}` and the matching
/// velocity residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct DuhamelReport {
    pub u_residuals: Vec<f64>,
    pub v_residuals: Vec<f64>,
}

impl DuhamelReport {
    pub fn max_u(&self) -> f64 {
        self.u_residuals.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_v(&self) -> f64 {
        self.v_residuals.iter().cloned().fold(0.0, f64::max)
    }
}

/// Re-sums the discrete Duhamel formula from the recorded states and
/// increments and compares it with the stepped states.
///
/// With forcing `F_m = -β_λ(u_m)Δt + σ(u_m)ΔM_m` (recomputed here), the
/// stepper satisfies `U_n = S(t_n)U_0 + Σ_{m<n} S(t_n - t_m)(0, F_m)`. The
/// convolution is split with `sin(a - b) = sin a cos b - cos a sin b` into
/// two running accumulators `Σ cos(ωt_m)F_m` and `Σ sin(ωt_m)F_m`.
pub fn duhamel_report(result: &PathResult, config: &SolverConfig) -> Result<DuhamelReport, SolverError> {
    let n_steps = result.n_steps;
    if result.states.len() != n_steps + 1 {
        return Err(SolverError::MissingRecord("states"));
    }
    if result.increments.len() != n_steps {
        return Err(SolverError::MissingRecord("increments"));
    }
    let grid = &*config.grid;
    let len = grid.len();
    let dt = result.dt;
    let lambda = YosidaScale::new(result.lambda)?;
    let freq: Vec<f64> = grid.eigenvalues().iter().map(|mu| mu.sqrt()).collect();
    let u0 = &result.states[0].u.coeffs;
    let v0 = &result.states[0].v.coeffs;
    let mut acc_cos = vec![0.0; len];
    let mut acc_sin = vec![0.0; len];
    let mut u_res = Vec::with_capacity(n_steps + 1);
    let mut v_res = Vec::with_capacity(n_steps + 1);
    for n in 0..=n_steps {
        let t = n as f64 * dt;
        let state = &result.states[n];
        let mut du = 0.0;
        let mut dv = 0.0;
        for k in 0..len {
            let w = freq[k];
            let (s, c) = (w * t).sin_cos();
            let u_pred = c * u0[k] + s / w * v0[k] + (s * acc_cos[k] - c * acc_sin[k]) / w;
            let v_pred = -w * s * u0[k] + c * v0[k] + c * acc_cos[k] + s * acc_sin[k];
            du += (state.u.coeffs[k] - u_pred).powi(2);
            dv += (state.v.coeffs[k] - v_pred).powi(2);
        }
        u_res.push(du.sqrt());
        v_res.push(dv.sqrt());
        if n == n_steps {
            break;
        }
        let beta = grid.nemytskii(&state.u, |x| config.graph.yosida(lambda, x).unwrap_or(f64::NAN))?;
        let noise = config.diffusion.apply(grid, &state.u, &result.increments[n])?;
        for k in 0..len {
            let forcing = -beta.coeffs[k] * dt + noise.coeffs[k];
            let (s, c) = (freq[k] * t).sin_cos();
            acc_cos[k] += c * forcing;
            acc_sin[k] += s * forcing;
        }
    }
    Ok(DuhamelReport {
        u_residuals: u_res,
        v_residuals: v_res,
    })
}

/// `max_n |u_n - u_n^{Duhamel}|_{L²}`.
pub fn duhamel_residual(result: &PathResult, config: &SolverConfig) -> Result<f64, SolverError> {
    Ok(duhamel_report(result, config)?.max_u())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainRule {
    /// `Δt Σ_n ⟨β_λ(u_n), v_n⟩`
    pub lhs: f64,
    /// `∫ j_λ(u_N) - ∫ j_λ(u_0)`
    pub rhs: f64,
    pub gap: f64,
}

/// Both sides of `∫⟨β_λ(u), v⟩dt = ∫_D j_λ(u(T)) - ∫_D j_λ(u_0)`.
///
/// Recomputed from the recorded states by nodal quadrature when they are
/// available, otherwise taken from the running totals.
pub fn chain_rule_check(
    result: &PathResult,
    grid: &SpectralGrid,
    graph: &MonotoneGraph,
    lambda: YosidaScale,
) -> Result<ChainRule, SolverError> {
    let (lhs, rhs) = if result.states.len() == result.n_steps + 1 {
        let vol = grid.cell_volume();
        let moreau_integral = |u: &SpectralField| -> Result<f64, SolverError> {
            let nodes = grid.to_nodes(u)?;
            let mut s = 0.0;
            for x in nodes {
                s += graph.moreau(lambda, x)?;
            }
            Ok(vol * s)
        };
        let mut lhs = 0.0;
        for state in &result.states[..result.n_steps] {
            let u = grid.to_nodes(&state.u)?;
            let v = grid.to_nodes(&state.v)?;
            let mut s = 0.0;
            for (x, y) in u.iter().zip(&v) {
                s += graph.yosida(lambda, *x)? * y;
            }
            lhs += result.dt * vol * s;
        }
        let rhs = moreau_integral(&result.states[result.n_steps].u)? - moreau_integral(&result.states[0].u)?;
        (lhs, rhs)
    } else {
        (result.chain_lhs, result.moreau_final - result.moreau_initial)
    };
    Ok(ChainRule {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// Residual of the discrete integration-by-parts identity for
/// `Z₁ = ⟨u, φ⟩`, `Z₂ = ⟨v, ψ⟩`:
///
/// ```text
/// Z₁Z₂(T) = Z₁Z₂(0) + Σ Z₁(t_n)ΔZ₂ + Σ Z₂(t_n)ΔZ₁ + Σ ΔZ₁ΔZ₂
/// ```
pub fn ibp_residual(result: &PathResult, phi: &SpectralField, psi: &SpectralField) -> Result<f64, SolverError> {
    if result.states.len() != result.n_steps + 1 {
        return Err(SolverError::MissingRecord("states"));
    }
    let z1: Vec<f64> = result.states.iter().map(|s| s.u.dot(phi)).collect();
    let z2: Vec<f64> = result.states.iter().map(|s| s.v.dot(psi)).collect();
    let mut rhs = z1[0] * z2[0];
    for n in 0..result.n_steps {
        let d1 = z1[n + 1] - z1[n];
        let d2 = z2[n + 1] - z2[n];
        rhs += z1[n] * d2 + z2[n] * d1 + d1 * d2;
    }
    let lhs = z1[result.n_steps] * z2[result.n_steps];
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{DriverKind, NuclearCovariance};
    use std::f64::consts::PI;

    fn config(grid: SpectralGrid, graph: MonotoneGraph, lambda: f64, dt: f64, t_final: f64) -> SolverConfig {
        let cov = NuclearCovariance::power_law(&grid, 1.0, 2.0).unwrap();
        let driver = MartingaleDriver::new(DriverKind::QWiener, cov).unwrap();
        SolverConfig {
            grid: Arc::new(grid),
            graph,
            lambda: YosidaScale::new(lambda).unwrap(),
            dt,
            t_final,
            driver,
            diffusion: DiffusionMap::Zero,
            initial: InitialData::Smooth { k_max: 4 },
            record: RecordFlags::all(),
            pairing_eps: vec![0.0],
            master_seed: 42,
        }
    }

    fn single_mode(grid: &SpectralGrid, u: f64, v: f64) -> InitialData {
        InitialData::Fields {
            u: grid.unit(0, u),
            v: grid.unit(0, v),
        }
    }

    #[test]
    fn quarter_period_rotation() {
        let grid = SpectralGrid::new(1, 4).unwrap();
        let cache = GroupCache::new(&grid, PI / 2.0);
        let state = WaveState {
            u: grid.unit(0, 1.0),
            v: grid.zeros(),
        };
        let g = MonotoneGraph::Linear { c: 0.0 };
        let next = step(&grid, &cache, &state, &g, YosidaScale::new(1.0).unwrap(), DiffusionMap::Zero, &grid.zeros()).unwrap();
        assert!(next.u.coeffs[0].abs() < 1e-15);
        assert!((next.v.coeffs[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn full_period_returns() {
        let grid = SpectralGrid::new(1, 4).unwrap();
        let n = 1000;
        let mut cfg = config(grid, MonotoneGraph::Linear { c: 0.0 }, 1.0, 2.0 * PI / n as f64, 2.0 * PI);
        cfg.initial = single_mode(&cfg.grid, 0.7, -0.3);
        let r = simulate_path(&cfg, 0).unwrap();
        let end = &r.final_state;
        assert!((end.u.coeffs[0] - 0.7).abs() < 1e-12);
        assert!((end.v.coeffs[0] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn linear_graph_single_step() {
        // Kick: v* = 0 - 0.5 * 0.1 = -0.05, then rotate by Δt = 0.1 on k = 1.
        let grid = SpectralGrid::new(1, 8).unwrap();
        let cache = GroupCache::new(&grid, 0.1);
        let state = WaveState {
            u: grid.unit(0, 1.0),
            v: grid.zeros(),
        };
        let g = MonotoneGraph::Linear { c: 1.0 };
        let next = step(&grid, &cache, &state, &g, YosidaScale::new(1.0).unwrap(), DiffusionMap::Zero, &grid.zeros()).unwrap();
        let (s, c) = 0.1f64.sin_cos();
        let (u_exp, v_exp) = (c * 1.0 + s * -0.05, -s * 1.0 + c * -0.05);
        assert!((next.u.coeffs[0] - u_exp).abs() < 1e-14);
        assert!((next.v.coeffs[0] - v_exp).abs() < 1e-14);
        assert!(next.u.coeffs[1..].iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn free_flow_conserves_energy() {
        let grid = SpectralGrid::new(1, 32).unwrap();
        let cfg = config(grid, MonotoneGraph::Linear { c: 0.0 }, 1.0, 0.01, 1.0);
        let r = simulate_path(&cfg, 0).unwrap();
        let e0 = r.samples[0].energy;
        for s in &r.samples {
            assert!((s.energy - e0).abs() <= 1e-12 * e0);
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let grid = SpectralGrid::new(1, 16).unwrap();
        let mut cfg = config(grid, MonotoneGraph::Cubic, 0.1, 0.01, 0.5);
        cfg.initial = single_mode(&cfg.grid, 0.0, 0.0);
        let r = simulate_path(&cfg, 0).unwrap();
        for s in &r.states {
            assert!(s.u.coeffs.iter().chain(&s.v.coeffs).all(|&c| c == 0.0));
        }
        let cr = chain_rule_check(&r, &cfg.grid, &cfg.graph, cfg.lambda).unwrap();
        assert_eq!((cr.lhs, cr.rhs, cr.gap), (0.0, 0.0, 0.0));
    }

    #[test]
    fn coupled_paths_share_increments() {
        let grid = SpectralGrid::new(1, 16).unwrap();
        let mut cfg = config(grid, MonotoneGraph::Cubic, 0.1, 0.01, 0.3);
        cfg.diffusion = DiffusionMap::Clip;
        let a = simulate_path(&cfg, 5).unwrap();
        let b = simulate_path(&cfg.with_lambda(YosidaScale::new(0.01).unwrap()), 5).unwrap();
        assert_eq!(a.increment_hash, b.increment_hash);
        for (x, y) in a.increments.iter().zip(&b.increments) {
            let bx: Vec<u64> = x.coeffs.iter().map(|c| c.to_bits()).collect();
            let by: Vec<u64> = y.coeffs.iter().map(|c| c.to_bits()).collect();
            assert_eq!(bx, by);
        }
        assert_ne!(a.final_state, b.final_state);
        let other = simulate_path(&cfg, 6).unwrap();
        assert_ne!(a.increment_hash, other.increment_hash);
    }

    #[test]
    fn duhamel_linear_and_cubic() {
        let grid = SpectralGrid::new(1, 16).unwrap();
        let cfg = config(grid.clone(), MonotoneGraph::Linear { c: 0.0 }, 1.0, 0.01, 1.0);
        let r = simulate_path(&cfg, 0).unwrap();
        assert!(duhamel_residual(&r, &cfg).unwrap() <= 1e-10);

        let mut cfg = config(grid, MonotoneGraph::Cubic, 0.1, 1e-3, 1.0);
        cfg.diffusion = DiffusionMap::Sin;
        let r = simulate_path(&cfg, 0).unwrap();
        let rep = duhamel_report(&r, &cfg).unwrap();
        assert!(rep.max_u() <= 1e-9, "{}", rep.max_u());
        assert!(rep.max_v() <= 1e-9, "{}", rep.max_v());
    }

    #[test]
    fn duhamel_requires_records() {
        let grid = SpectralGrid::new(1, 8).unwrap();
        let mut cfg = config(grid, MonotoneGraph::Cubic, 0.1, 0.01, 0.1);
        cfg.record = RecordFlags { states: true, ..Default::default() };
        let r = simulate_path(&cfg, 0).unwrap();
        assert_eq!(duhamel_residual(&r, &cfg), Err(SolverError::MissingRecord("increments")));
        cfg.record = RecordFlags::default();
        let r = simulate_path(&cfg, 0).unwrap();
        assert_eq!(duhamel_residual(&r, &cfg), Err(SolverError::MissingRecord("states")));
        assert!(r.states.is_empty() && r.samples.is_empty());
    }

    #[test]
    fn chain_rule_routes_agree() {
        let grid = SpectralGrid::new(1, 16).unwrap();
        let mut cfg = config(grid, MonotoneGraph::Cubic, 0.05, 1e-3, 0.5);
        cfg.diffusion = DiffusionMap::One;
        let full = simulate_path(&cfg, 1).unwrap();
        let a = chain_rule_check(&full, &cfg.grid, &cfg.graph, cfg.lambda).unwrap();
        cfg.record = RecordFlags::default();
        let lean = simulate_path(&cfg, 1).unwrap();
        let b = chain_rule_check(&lean, &cfg.grid, &cfg.graph, cfg.lambda).unwrap();
        assert!((a.lhs - b.lhs).abs() < 1e-10);
        assert!((a.rhs - b.rhs).abs() < 1e-10);
    }

    #[test]
    fn linear_chain_rule_against_closed_form() {
        // β_λ(u) = u/(1+λ) on one mode: the gap shrinks at least linearly in Δt.
        let grid = SpectralGrid::new(1, 4).unwrap();
        let gaps: Vec<f64> = [4e-3, 2e-3, 1e-3]
            .iter()
            .map(|&dt| {
                let mut cfg = config(grid.clone(), MonotoneGraph::Linear { c: 1.0 }, 1.0, dt, 1.0);
                cfg.initial = single_mode(&cfg.grid, 1.0, 0.0);
                let r = simulate_path(&cfg, 0).unwrap();
                let cr = chain_rule_check(&r, &cfg.grid, &cfg.graph, cfg.lambda).unwrap();
                // j_λ(x) = x²/(2(1+λ)), so ∫j_λ(u) = |u|²/(2(1+λ)) exactly on one mode.
                let u_end = r.final_state.u.coeffs[0];
                assert!((cr.rhs - (u_end * u_end - 1.0) / 4.0).abs() < 1e-12);
                cr.gap
            })
            .collect();
        let slope = crate::stats::log_log_slope(&[4e-3, 2e-3, 1e-3], &gaps);
        assert!(slope >= 0.9, "gaps {gaps:?} slope {slope}");
    }

    #[test]
    fn sign_and_jump_pairing_nonnegative() {
        let grid = SpectralGrid::new(1, 32).unwrap();
        for graph in [MonotoneGraph::Sign, MonotoneGraph::Jump { a: 1.0 }] {
            let mut cfg = config(grid.clone(), graph, 0.01, 1e-3, 0.5);
            cfg.diffusion = DiffusionMap::Clip;
            cfg.initial = InitialData::Random { k_max: 8 };
            let r = simulate_path(&cfg, 3).unwrap();
            assert!(r.min_beta_pairing >= 0.0, "{graph}");
            assert!(r.pairings[0] >= 0.0);
        }
    }

    #[test]
    fn ibp_identity() {
        let grid = SpectralGrid::new(1, 16).unwrap();
        let mut cfg = config(grid.clone(), MonotoneGraph::Cubic, 0.01, 1e-3, 0.5);
        cfg.diffusion = DiffusionMap::Sin;
        let r = simulate_path(&cfg, 0).unwrap();
        let phi = grid.unit(0, 1.0);
        let psi = grid.apply_spectral(&grid.unit(2, 1.0), |mu| mu).unwrap();
        assert!(ibp_residual(&r, &phi, &psi).unwrap() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let grid = SpectralGrid::new(1, 8).unwrap();
        let cfg = config(grid, MonotoneGraph::Cubic, 0.1, 0.3, 1.0);
        assert!(matches!(cfg.n_steps(), Err(SolverError::Config(_))));
        let mut ok = cfg.clone();
        ok.dt = 0.25;
        assert_eq!(ok.n_steps().unwrap(), 4);
        ok.t_final = 0.1;
        assert!(ok.n_steps().is_err());
        ok.t_final = 1.0;
        ok.pairing_eps = vec![-1.0];
        assert!(ok.validate().is_err());
    }

    #[test]
    fn parse_initial_and_record() {
        assert_eq!("smooth:8".parse::<InitialData>().unwrap(), InitialData::Smooth { k_max: 8 });
        assert_eq!("random:3".parse::<InitialData>().unwrap(), InitialData::Random { k_max: 3 });
        assert!("smooth".parse::<InitialData>().is_err());
        assert!("smooth:0".parse::<InitialData>().is_err());
        let r: RecordFlags = "states|functionals".parse().unwrap();
        assert!(r.states && r.functionals && !r.increments);
        assert_eq!(r.to_string(), "states|functionals");
        assert!("bogus".parse::<RecordFlags>().is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        // Explicit kick of a very stiff Yosida term at a coarse step is unstable.
        let grid = SpectralGrid::new(1, 8).unwrap();
        let mut cfg = config(grid, MonotoneGraph::Linear { c: 1e6 }, 1e-9, 0.1, 100.0);
        cfg.record = RecordFlags::default();
        let err = simulate_path(&cfg, 0).unwrap_err();
        assert!(matches!(err, SolverError::BlowUp { .. }), "{err:?}");
        assert!(err.is_numeric());
    }

    #[test]
    fn energy_examples() {
        let grid = SpectralGrid::new(1, 8).unwrap();
        let s = WaveState { u: grid.unit(0, 1.0), v: grid.zeros() };
        assert_eq!(s.energy(&grid), 1.0);
        assert_eq!(WaveState::zeros(8).energy(&grid), 0.0);
        let lam = YosidaScale::new(1.0).unwrap();
        assert_eq!(WaveState::zeros(8).lyapunov(&grid, &MonotoneGraph::Cubic, lam).unwrap(), 0.0);
    }
}
