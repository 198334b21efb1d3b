use std::sync::Arc;

use stowave::driver::{DiffusionMap, DriverKind, MartingaleDriver, NuclearCovariance};
use stowave::monotone_graph::{MonotoneGraph, YosidaScale};
use stowave::solver::{simulate_path, InitialData, RecordFlags, SolverConfig};
use stowave::spectral::SpectralGrid;
use stowave::study::{energy_study, lambda_convergence_study, pairing_study, StudySpec};

fn deterministic(graph: MonotoneGraph, lambda: f64, dt: f64, t_final: f64, initial: InitialData) -> StudySpec {
    let grid = SpectralGrid::new(1, 8).unwrap();
    let cov = NuclearCovariance::power_law(&grid, 1.0, 2.0).unwrap();
    StudySpec {
        base: SolverConfig {
            grid: Arc::new(grid),
            graph,
            lambda: YosidaScale::new(lambda).unwrap(),
            dt,
            t_final,
            driver: MartingaleDriver::new(DriverKind::QWiener, cov).unwrap(),
            diffusion: DiffusionMap::Zero,
            initial,
            record: RecordFlags::default(),
            pairing_eps: vec![0.0],
            master_seed: 5,
        },
        lambda_grid: vec![lambda],
        dt_grid: vec![dt],
        eps_grid: vec![0.0],
        n_paths: 1,
        outdir: Default::default(),
        workers: 1,
    }
}

fn first_mode(a: f64) -> InitialData {
    let grid = SpectralGrid::new(1, 8).unwrap();
    InitialData::Fields { u: grid.unit(0, a), v: grid.zeros() }
}

/// Closed form of `∫₀ᵀ a² cos²(Ωt) dt / ((1+λ)²(1+εμ)²)` for the linear graph
/// `β(x) = x` on the first mode (`μ = 1`, `Ω² = 1 + 1/(1+λ)`).
fn linear_pairing(a: f64, lambda: f64, eps: f64, t: f64) -> f64 {
    let omega = (1.0 + 1.0 / (1.0 + lambda)).sqrt();
    let time_integral = t / 2.0 + (2.0 * omega * t).sin() / (4.0 * omega);
    a * a * time_integral / ((1.0 + lambda).powi(2) * (1.0 + eps).powi(2))
}

#[test]
fn linear_pairing_matches_closed_form_at_first_order() {
    let (a, lambda, t) = (0.7, 0.5, 2.0);
    let eps = [1e-1, 1e-2, 0.0];
    let mut errors = Vec::new();
    for dt in [4e-3, 2e-3, 1e-3] {
        let mut spec = deterministic(MonotoneGraph::Linear { c: 1.0 }, lambda, dt, t, first_mode(a));
        spec.lambda_grid = vec![lambda];
        let r = pairing_study(&spec, &eps).unwrap();
        let worst = r
            .rows
            .iter()
            .map(|row| {
                let e: f64 = row.params[1].parse().unwrap();
                (row.estimate - linear_pairing(a, lambda, e, t)).abs()
            })
            .fold(0.0, f64::max);
        errors.push(worst);
    }
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.6..2.4).contains(&ratio), "errors {errors:?}");
    }
    assert!(errors[2] < 5e-3, "errors {errors:?}");
}

#[test]
fn linear_lambda_gap_tracks_frequency_shift() {
    let (a, t, dt) = (0.5, 1.0, 1e-3);
    let mut spec = deterministic(MonotoneGraph::Linear { c: 1.0 }, 0.4, dt, t, first_mode(a));
    spec.lambda_grid = vec![0.4, 0.2, 0.1, 0.05];
    let r = lambda_convergence_study(&spec).unwrap();
    let gaps: Vec<f64> = r.select("quantity", "sup_u_l2").map(|row| row.estimate).collect();
    let n = (t / dt).round() as usize;
    for (j, gap) in gaps.iter().enumerate() {
        let (la, lb) = (spec.lambda_grid[j], spec.lambda_grid[j + 1]);
        let wa = (1.0 + 1.0 / (1.0 + la)).sqrt();
        let wb = (1.0 + 1.0 / (1.0 + lb)).sqrt();
        let exact = (0..=n)
            .map(|k| {
                let s = k as f64 * dt;
                (a * (wa * s).cos() - a * (wb * s).cos()).abs()
            })
            .fold(0.0, f64::max);
        assert!((gap - exact).abs() < 0.03 * exact, "pair {j}: {gap} vs {exact}");
        // Leading order: a·T·|Δ(1/(1+λ))| / (2Ω) up to the sin factor.
        let shift = (1.0 / (1.0 + la) - 1.0 / (1.0 + lb)).abs();
        let proxy = a * t * shift / (2.0 * wa) * (wa * t).sin().abs();
        assert!((gap / proxy - 1.0).abs() < 0.1, "pair {j}: {gap} vs {proxy}");
    }
}

#[test]
fn lyapunov_drift_is_first_order_and_uniform_in_lambda() {
    let dts = [4e-3, 2e-3, 1e-3];
    for lambda in [1e-1, 1e-2, 1e-3, 1e-4] {
        let mut excess = Vec::new();
        for dt in dts {
            let mut spec = deterministic(MonotoneGraph::Cubic, lambda, dt, 1.0, InitialData::Smooth { k_max: 8 });
            spec.base.record.functionals = true;
            let r = simulate_path(&spec.base, 0).unwrap();
            let l0 = r.samples[0].lyapunov;
            let dev = r.samples.iter().map(|s| (s.lyapunov / l0 - 1.0).abs()).fold(0.0, f64::max);
            excess.push(dev);
        }
        for (e, dt) in excess.iter().zip(dts) {
            assert!(*e <= 0.5 * dt, "lambda {lambda}: deviation {excess:?}");
        }
        for w in excess.windows(2) {
            assert!((1.8..2.2).contains(&(w[0] / w[1])), "lambda {lambda}: deviation {excess:?}");
        }
    }
}

#[test]
fn energy_study_single_path_is_reproducible() {
    let mut spec = deterministic(MonotoneGraph::Cubic, 1e-2, 1e-2, 0.5, InitialData::Random { k_max: 4 });
    spec.base.diffusion = DiffusionMap::Clip;
    spec.lambda_grid = vec![1e-1, 1e-2];
    let a = energy_study(&spec).unwrap();
    let b = energy_study(&spec).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.rows.iter().all(|r| r.n_paths == 1 && r.std_error == 0.0));
}
