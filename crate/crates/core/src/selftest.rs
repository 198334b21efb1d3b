//! Reduced invariant suite run by the `selftest` subcommand.

use std::sync::Arc;

use rand::Rng;

use crate::driver::{DiffusionMap, DriverKind, MartingaleDriver, NuclearCovariance};
use crate::monotone_graph::{MonotoneGraph, YosidaScale};
use crate::rng::PathStream;
use crate::solver::{
    chain_rule_check, duhamel_residual, ibp_residual, simulate_path, InitialData, RecordFlags, SolverConfig,
    WaveState,
};
use crate::spectral::SpectralGrid;
use crate::study::{energy_study, StudySpec};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

type CheckResult = Result<(bool, String), Box<dyn std::error::Error>>;

fn check(name: &'static str, f: impl FnOnce() -> CheckResult) -> CheckOutcome {
    match f() {
        Ok((passed, detail)) => CheckOutcome::new(name, passed, detail),
        Err(e) => CheckOutcome::new(name, false, format!("error: {e}")),
    }
}

const GRAPHS: [MonotoneGraph; 5] = [
    MonotoneGraph::Linear { c: 2.0 },
    MonotoneGraph::Power { p: 2.5 },
    MonotoneGraph::Cubic,
    MonotoneGraph::Sign,
    MonotoneGraph::Jump { a: 1.0 },
];

fn convex_suite() -> CheckResult {
    let mut rng = PathStream::new(1, 0);
    let mut worst = 0.0f64;
    for g in GRAPHS {
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(-10.0..10.0);
            let y: f64 = rng.random_range(-10.0..10.0);
            let l = YosidaScale::new(10f64.powf(rng.random_range(-3.0..1.0)))?;
            let (jx, bx) = g.resolvent_and_yosida(l, x)?;
            let (jy, by) = g.resolvent_and_yosida(l, y)?;
            let d = (x - y).abs();
            worst = worst
                .max((jx - jy).abs() - d)
                .max(-(bx - by) * (x - y))
                .max((bx - by).abs() - 2.0 / l.get() * d)
                .max(g.section(jx).distance(bx) - 1e-10);
            let m = g.moreau(l, x)?;
            if m < -1e-12 || m > g.potential_at(x) + 1e-12 * (1.0 + g.potential_at(x)) {
                return Ok((false, format!("{g}: envelope {m} outside [0, j({x})]")));
            }
        }
    }
    Ok((worst <= 1e-9, format!("worst violation {worst}")))
}

fn spectral_round_trip() -> CheckResult {
    let mut worst = 0.0f64;
    for (dim, n) in [(1, 32), (2, 12)] {
        let grid = SpectralGrid::new(dim, n)?;
        let mut rng = PathStream::new(2, dim as u64);
        let mut f = grid.zeros();
        f.coeffs.iter_mut().for_each(|c| *c = rng.random_range(-1.0..1.0));
        let nodal = grid.to_nodes(&f)?;
        let back = grid.to_modes(&nodal)?;
        let err = f.coeffs.iter().zip(&back.coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let parseval = (grid.integrate_nodal(&nodal.iter().map(|v| v * v).collect::<Vec<_>>()) - f.dot(&f)).abs();
        worst = worst.max(err).max(parseval);
    }
    Ok((worst <= 1e-11, format!("max error {worst}")))
}

fn increment_variance() -> CheckResult {
    let grid = SpectralGrid::new(1, 8)?;
    let cov = NuclearCovariance::power_law(&grid, 1.0, 2.0)?;
    let mut worst = 0.0f64;
    for kind in [DriverKind::QWiener, DriverKind::CompensatedPoisson { rate: 50.0 }] {
        let driver = MartingaleDriver::new(kind, cov.clone())?;
        let sampler = driver.sampler(0.1)?;
        let mut stream = PathStream::new(3, 0);
        let mut buf = vec![0.0; 8];
        let n = 40_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            sampler.sample_into(&mut stream, &mut buf);
            sum_sq += buf[0] * buf[0];
        }
        let target = 0.1 * cov.variances()[0];
        worst = worst.max((sum_sq / n as f64 - target).abs() / target);
    }
    Ok((worst <= 0.05, format!("worst relative error {worst}")))
}

fn base_config(graph: MonotoneGraph, diffusion: DiffusionMap) -> Result<SolverConfig, Box<dyn std::error::Error>> {
    let grid = SpectralGrid::new(1, 16)?;
    let cov = NuclearCovariance::power_law(&grid, 1.0, 2.0)?;
    Ok(SolverConfig {
        grid: Arc::new(grid),
        graph,
        lambda: YosidaScale::new(1e-2)?,
        dt: 1e-2,
        t_final: 1.0,
        driver: MartingaleDriver::new(DriverKind::QWiener, cov)?,
        diffusion,
        initial: InitialData::Smooth { k_max: 4 },
        record: RecordFlags::all(),
        pairing_eps: vec![1e-2, 0.0],
        master_seed: 11,
    })
}

fn linear_energy() -> CheckResult {
    let mut cfg = base_config(MonotoneGraph::Linear { c: 0.0 }, DiffusionMap::Zero)?;
    cfg.t_final = 10.0;
    let r = simulate_path(&cfg, 0)?;
    let e0 = r.initial_state.energy(&cfg.grid);
    let drift = r.states.iter().map(|s: &WaveState| (s.energy(&cfg.grid) - e0).abs() / e0).fold(0.0, f64::max);
    Ok((drift <= 1e-12, format!("max relative drift {drift}")))
}

fn path_identities() -> CheckResult {
    let cfg = base_config(MonotoneGraph::Cubic, DiffusionMap::Sin)?;
    let r = simulate_path(&cfg, 3)?;
    let duh = duhamel_residual(&r, &cfg)?;
    let phi = cfg.grid.unit(0, 1.0);
    let psi = cfg.grid.unit(1, 1.0);
    let ibp = ibp_residual(&r, &phi, &psi)?;
    let ok = duh <= 1e-9 && ibp <= 1e-12;
    Ok((ok, format!("duhamel {duh}, ibp {ibp}")))
}

fn chain_rule_routes() -> CheckResult {
    let cfg = base_config(MonotoneGraph::Cubic, DiffusionMap::Zero)?;
    let r = simulate_path(&cfg, 0)?;
    let nodal = chain_rule_check(&r, &cfg.grid, &cfg.graph, cfg.lambda)?;
    let mut running = r.clone();
    running.states.clear();
    let totals = chain_rule_check(&running, &cfg.grid, &cfg.graph, cfg.lambda)?;
    let diff = (nodal.gap - totals.gap).abs();
    Ok((diff <= 1e-10 && nodal.gap.is_finite(), format!("gap {}, route difference {diff}", nodal.gap)))
}

fn pairing_positivity() -> CheckResult {
    let mut worst = f64::INFINITY;
    for g in [MonotoneGraph::Sign, MonotoneGraph::Jump { a: 1.0 }] {
        let cfg = base_config(g, DiffusionMap::One)?;
        let r = simulate_path(&cfg, 1)?;
        worst = worst.min(r.min_beta_pairing);
        worst = worst.min(r.pairings.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    Ok((worst >= 0.0, format!("smallest pairing {worst}")))
}

fn worker_determinism() -> CheckResult {
    let base = base_config(MonotoneGraph::Cubic, DiffusionMap::Clip)?;
    let mut spec = StudySpec {
        base: base.with_lambda(YosidaScale::new(1e-1)?),
        lambda_grid: vec![1e-1, 1e-2],
        dt_grid: vec![1e-2],
        eps_grid: vec![0.0],
        n_paths: 8,
        outdir: Default::default(),
        workers: 1,
    };
    spec.base.record = RecordFlags::default();
    let a = energy_study(&spec)?.to_csv();
    spec.workers = 4;
    let b = energy_study(&spec)?.to_csv();
    Ok((a == b, format!("{} bytes", a.len())))
}

/// Runs every check; never panics.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        check("convex_analysis", convex_suite),
        check("spectral_round_trip", spectral_round_trip),
        check("increment_variance", increment_variance),
        check("linear_energy", linear_energy),
        check("duhamel_and_ibp", path_identities),
        check("chain_rule_routes", chain_rule_routes),
        check("pairing_positivity", pairing_positivity),
        check("worker_determinism", worker_determinism),
    ]
}
