//! Spectral Galerkin simulation of semilinear stochastic wave equations
//!
//! ```text
//! du = v dt,    dv = (Δu - β(u)) dt + G₀(u-) dM    on D = (0, π)^d
//! ```
//!
//! with a maximal monotone graph `β`, regularized by its Yosida
//! approximation `β_λ`, and a square-integrable `L²`-valued martingale `M`.

pub mod config;
pub mod driver;
pub mod monotone_graph;
pub mod plot;
pub mod rng;
pub mod selftest;
pub mod solver;
pub mod spectral;
pub mod stats;
pub mod study;

pub use config::{ConfigError, RunConfig};
pub use driver::{DiffusionMap, DriverKind, MartingaleDriver, NuclearCovariance};
pub use monotone_graph::{Interval, MonotoneGraph, YosidaScale};
pub use solver::{PathResult, SolverConfig, SolverError, WaveState};
pub use spectral::{SpectralField, SpectralGrid};
pub use study::{StudyError, StudyReport, StudySpec};
