//! Dirichlet sine eigenbasis on the box `(0, π)^d`, `d ∈ {1, 2}`.
//!
//! Modes are multi-indices `k ∈ {1..N}^d` in lexicographic order, with
//! eigenvalue `μ_k = |k|²` of `-Δ` and eigenfunction
//! `e_k(x) = (2/π)^{d/2} ∏ sin(k_j x_j)`. Nodal values live on the
//! interior grid `x_i = iπ/(N+1)`. On that grid the sampled sines are
//! exactly orthogonal, so the transforms below are mutually inverse and
//! Parseval holds with the rectangle-rule weight `h = π/(N+1)`.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("unsupported grid: {0}")]
    Grid(String),
    #[error("non-finite value produced at index {index}")]
    NonFinite { index: usize },
}

/// Coefficients of an `L²(D)` element in the sine eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(len: usize) -> Self {
        Self { coeffs: vec![0.0; len] }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Coefficient inner product (equals the `L²` inner product).
    pub fn dot(&self, other: &SpectralField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .fold(0.0, |acc, (a, b)| acc + a * b)
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &SpectralField) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct SpectralGrid {
    dim: usize,
    n_modes: usize,
    /// `sin_table[(k-1)*N + (i-1)] = sqrt(2/π) sin(k x_i)`.
    sin_table: Vec<f64>,
    eigenvalues: Vec<f64>,
    multi_indices: Vec<[usize; 2]>,
    nodes: Vec<f64>,
}

impl SpectralGrid {
    pub fn new(dim: usize, n_modes: usize) -> Result<Self, SpectralError> {
        if !(dim == 1 || dim == 2) {
            return Err(SpectralError::Grid(format!("dim must be 1 or 2, got {dim}")));
        }
        if n_modes == 0 {
            return Err(SpectralError::Grid("n_modes must be >= 1".into()));
        }
        let n = n_modes;
        let h = PI / (n as f64 + 1.0);
        let nodes: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
        let scale = (2.0 / PI).sqrt();
        let mut sin_table = Vec::with_capacity(n * n);
        for k in 1..=n {
            for &x in &nodes {
                sin_table.push(scale * (k as f64 * x).sin());
            }
        }
        let mut eigenvalues = Vec::new();
        let mut multi_indices = Vec::new();
        if dim == 1 {
            for k in 1..=n {
                eigenvalues.push((k * k) as f64);
                multi_indices.push([k, 0]);
            }
        } else {
            for k1 in 1..=n {
                for k2 in 1..=n {
                    eigenvalues.push((k1 * k1 + k2 * k2) as f64);
                    multi_indices.push([k1, k2]);
                }
            }
        }
        Ok(Self {
            dim,
            n_modes,
            sin_table,
            eigenvalues,
            multi_indices,
            nodes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Total number of coefficients, `N^d`.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `μ_k` in lexicographic mode order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Multi-index of each mode; the second entry is 0 when `d = 1`.
    pub fn multi_indices(&self) -> &[[usize; 2]] {
        &self.multi_indices
    }

    /// One-dimensional node coordinates.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Quadrature weight of a single node, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        (PI / (self.n_modes as f64 + 1.0)).powi(self.dim as i32)
    }

    pub fn zeros(&self) -> SpectralField {
        SpectralField::zeros(self.len())
    }

    /// Field with a single nonzero coefficient at lexicographic index `idx`.
    pub fn unit(&self, idx: usize, value: f64) -> SpectralField {
        let mut f = self.zeros();
        f.coeffs[idx] = value;
        f
    }

    /// Lexicographic position of the multi-index `k` (1-based components).
    pub fn index_of(&self, k: &[usize]) -> Option<usize> {
        let n = self.n_modes;
        match (self.dim, k) {
            (1, [k1]) if (1..=n).contains(k1) => Some(k1 - 1),
            (2, [k1, k2]) if (1..=n).contains(k1) && (1..=n).contains(k2) => {
                Some((k1 - 1) * n + (k2 - 1))
            }
            _ => None,
        }
    }

    pub fn check(&self, len: usize) -> Result<(), SpectralError> {
        if len == self.len() {
            Ok(())
        } else {
            Err(SpectralError::Shape {
                expected: self.len(),
                got: len,
            })
        }
    }

    /// Evaluates a field at the nodes.
    pub fn to_nodes(&self, field: &SpectralField) -> Result<Vec<f64>, SpectralError> {
        self.check(field.len())?;
        let mut out = vec![0.0; self.len()];
        self.synthesize(&field.coeffs, &mut out);
        Ok(out)
    }

    /// Projects nodal values onto the eigenbasis.
    pub fn to_modes(&self, nodal: &[f64]) -> Result<SpectralField, SpectralError> {
        self.check(nodal.len())?;
        let mut out = vec![0.0; self.len()];
        self.analyze(nodal, &mut out);
        Ok(SpectralField { coeffs: out })
    }

    /// Unchecked synthesis into a preallocated buffer.
    pub(crate) fn synthesize(&self, coeffs: &[f64], out: &mut [f64]) {
        self.apply_table(coeffs, out, false, 1.0);
    }

    /// Unchecked analysis into a preallocated buffer.
    pub(crate) fn analyze(&self, nodal: &[f64], out: &mut [f64]) {
        let h = PI / (self.n_modes as f64 + 1.0);
        self.apply_table(nodal, out, true, h);
    }

    /// Applies the (scaled) sine matrix along every axis.
    ///
    /// `transpose = false` maps coefficients to nodes; `true` maps nodes to
    /// coefficients, each axis contributing a factor `weight`.
    fn apply_table(&self, input: &[f64], out: &mut [f64], transpose: bool, weight: f64) {
        let n = self.n_modes;
        let t = &self.sin_table;
        // entry(row, col): row indexes the output, col the input.
        let entry = |row: usize, col: usize| -> f64 {
            if transpose {
                t[row * n + col]
            } else {
                t[col * n + row]
            }
        };
        if self.dim == 1 {
            for (row, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (col, &x) in input.iter().enumerate() {
                    acc += entry(row, col) * x;
                }
                *o = weight * acc;
            }
        } else {
            // Axis 2 (fast index) first, then axis 1.
            let mut tmp = vec![0.0; n * n];
            for a in 0..n {
                let src = &input[a * n..(a + 1) * n];
                for row in 0..n {
                    let mut acc = 0.0;
                    for (col, &x) in src.iter().enumerate() {
                        acc += entry(row, col) * x;
                    }
                    tmp[a * n + row] = weight * acc;
                }
            }
            for b in 0..n {
                for row in 0..n {
                    let mut acc = 0.0;
                    for col in 0..n {
                        acc += entry(row, col) * tmp[col * n + b];
                    }
                    out[row * n + b] = weight * acc;
                }
            }
        }
    }

    /// Multiplies each coefficient by `phi(μ_k)`.
    pub fn apply_spectral(
        &self,
        field: &SpectralField,
        phi: impl Fn(f64) -> f64,
    ) -> Result<SpectralField, SpectralError> {
        self.check(field.len())?;
        let mut coeffs = Vec::with_capacity(field.len());
        for (index, (&c, &mu)) in field.coeffs.iter().zip(&self.eigenvalues).enumerate() {
            let s = phi(mu);
            if !s.is_finite() {
                return Err(SpectralError::NonFinite { index });
            }
            coeffs.push(s * c);
        }
        Ok(SpectralField { coeffs })
    }

    /// `‖u‖_m = |(I - Δ)^{m/2} u|_{L²}`.
    pub fn norm(&self, field: &SpectralField, m: f64) -> f64 {
        field
            .coeffs
            .iter()
            .zip(&self.eigenvalues)
            .fold(0.0, |acc, (&c, &mu)| acc + (1.0 + mu).powf(m) * c * c)
            .sqrt()
    }

    /// `|∇u|_{L²}`, the `H¹₀` norm.
    pub fn grad_seminorm(&self, field: &SpectralField) -> f64 {
        self.grad_seminorm_sq(field).sqrt()
    }

    pub fn grad_seminorm_sq(&self, field: &SpectralField) -> f64 {
        field
            .coeffs
            .iter()
            .zip(&self.eigenvalues)
            .fold(0.0, |acc, (&c, &mu)| acc + mu * c * c)
    }

    /// Rectangle-rule `∫_D f` from nodal values.
    pub fn integrate_nodal(&self, nodal: &[f64]) -> f64 {
        self.cell_volume() * nodal.iter().sum::<f64>()
    }

    /// Pointwise map `x ↦ f(u(x))` realized on the nodes.
    pub fn nemytskii(
        &self,
        field: &SpectralField,
        f: impl Fn(f64) -> f64,
    ) -> Result<SpectralField, SpectralError> {
        let mut nodal = self.to_nodes(field)?;
        for (index, v) in nodal.iter_mut().enumerate() {
            *v = f(*v);
            if !v.is_finite() {
                return Err(SpectralError::NonFinite { index });
            }
        }
        self.to_modes(&nodal)
    }

    /// CSV dump with columns `k1[,k2],coeff`.
    pub fn field_csv(&self, field: &SpectralField) -> Result<String, SpectralError> {
        self.check(field.len())?;
        let mut out = String::from(if self.dim == 1 { "k1,coeff\n" } else { "k1,k2,coeff\n" });
        for (k, c) in self.multi_indices.iter().zip(&field.coeffs) {
            if self.dim == 1 {
                out.push_str(&format!("{},{}\n", k[0], c));
            } else {
                out.push_str(&format!("{},{},{}\n", k[0], k[1], c));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &SpectralGrid, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpectralField::from_coeffs((0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn unit_mode_samples_sine() {
        let grid = SpectralGrid::new(1, 16).unwrap();
        let nodal = grid.to_nodes(&grid.unit(0, 1.0)).unwrap();
        for (v, x) in nodal.iter().zip(grid.nodes()) {
            assert!((v - (2.0 / PI).sqrt() * x.sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn second_mode_recovered() {
        let grid = SpectralGrid::new(1, 3).unwrap();
        let nodal: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|x| (2.0 / PI).sqrt() * (2.0 * x).sin())
            .collect();
        let f = grid.to_modes(&nodal).unwrap();
        for (c, e) in f.coeffs.iter().zip([0.0, 1.0, 0.0]) {
            assert!((c - e).abs() < 1e-14, "{:?}", f.coeffs);
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        for (dim, n) in [(1, 1), (1, 7), (1, 64), (2, 5), (2, 12)] {
            let grid = SpectralGrid::new(dim, n).unwrap();
            let f = random_field(&grid, 3 + n as u64);
            let nodal = grid.to_nodes(&f).unwrap();
            let back = grid.to_modes(&nodal).unwrap();
            for (a, b) in f.coeffs.iter().zip(&back.coeffs) {
                assert!((a - b).abs() < 1e-12);
            }
            let quad: f64 = grid.integrate_nodal(&nodal.iter().map(|v| v * v).collect::<Vec<_>>());
            assert!((quad - f.dot(&f)).abs() < 1e-12 * (1.0 + quad), "d={dim} n={n}");
        }
    }

    #[test]
    fn two_dimensional_unit_mode() {
        let grid = SpectralGrid::new(2, 4).unwrap();
        let idx = grid.index_of(&[2, 3]).unwrap();
        assert_eq!(grid.eigenvalues()[idx], 13.0);
        let nodal = grid.to_nodes(&grid.unit(idx, 1.0)).unwrap();
        let xs = grid.nodes();
        for i1 in 0..4 {
            for i2 in 0..4 {
                let want = 2.0 / PI * (2.0 * xs[i1]).sin() * (3.0 * xs[i2]).sin();
                assert!((nodal[i1 * 4 + i2] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let grid = SpectralGrid::new(1, 8).unwrap();
        assert!(matches!(
            grid.to_modes(&[0.0; 7]),
            Err(SpectralError::Shape { expected: 8, got: 7 })
        ));
        assert!(grid.to_nodes(&SpectralField::zeros(9)).is_err());
        assert!(SpectralGrid::new(3, 4).is_err());
        assert!(SpectralGrid::new(1, 0).is_err());
    }

    #[test]
    fn apply_spectral_examples() {
        let grid = SpectralGrid::new(1, 8).unwrap();
        let f = grid.unit(2, 1.0);
        assert_eq!(grid.apply_spectral(&f, |mu| mu).unwrap().coeffs[2], 9.0);
        let g = grid.unit(0, 1.0);
        assert_eq!(grid.apply_spectral(&g, |mu| 1.0 / (1.0 + mu)).unwrap().coeffs[0], 0.5);
        let r = random_field(&grid, 1);
        let t = 2.0 * PI;
        let back = grid.apply_spectral(&r, |mu| (t * mu.sqrt()).cos()).unwrap();
        for (a, b) in r.coeffs.iter().zip(&back.coeffs) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            grid.apply_spectral(&r, |mu| 1.0 / (mu - 4.0)),
            Err(SpectralError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn norm_examples() {
        let grid = SpectralGrid::new(1, 8).unwrap();
        let e1 = grid.unit(0, 1.0);
        assert_eq!(grid.norm(&e1, 0.0), 1.0);
        assert!((grid.norm(&e1, 1.0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(grid.grad_seminorm(&grid.unit(1, 3.0)), 6.0);
    }

    #[test]
    fn nemytskii_examples() {
        let grid = SpectralGrid::new(1, 32).unwrap();
        let r = random_field(&grid, 9);
        let same = grid.nemytskii(&r, |x| x).unwrap();
        for (a, b) in r.coeffs.iter().zip(&same.coeffs) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(grid.nemytskii(&r, |_| 0.0).unwrap().coeffs.iter().all(|&c| c == 0.0));

        // Square of e_1: compare with direct quadrature of (2/π) sin²(x) e_k(x).
        let e1 = grid.unit(0, 1.0);
        let sq = grid.nemytskii(&e1, |x| x * x).unwrap();
        let h = PI / 33.0;
        for k in 1..=32usize {
            let direct: f64 = (1..=32)
                .map(|i| {
                    let x = i as f64 * h;
                    h * (2.0 / PI) * x.sin().powi(2) * (2.0 / PI).sqrt() * (k as f64 * x).sin()
                })
                .sum();
            assert!((sq.coeffs[k - 1] - direct).abs() < 1e-13, "k={k}");
        }
        let nodal_l2: f64 = (1..=32)
            .map(|i| h * ((2.0 / PI) * (i as f64 * h).sin().powi(2)).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((sq.l2_norm() - nodal_l2).abs() < 1e-13);
        assert!(grid.nemytskii(&e1, |x| 1.0 / (x - x)).is_err());
    }

    #[test]
    fn field_csv_header() {
        let grid = SpectralGrid::new(2, 2).unwrap();
        let csv = grid.field_csv(&grid.unit(1, 2.5)).unwrap();
        assert_eq!(csv, "k1,k2,coeff\n1,1,0\n1,2,2.5\n2,1,0\n2,2,0\n");
    }

    proptest! {
        #[test]
        fn diagonal_operators_compose(seed in 0u64..1000, a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let grid = SpectralGrid::new(1, 16).unwrap();
            let f = random_field(&grid, seed);
            let p1 = move |mu: f64| 1.0 / (1.0 + a * mu);
            let p2 = move |mu: f64| (b * mu.sqrt()).cos();
            let lhs = grid.apply_spectral(&grid.apply_spectral(&f, p2).unwrap(), p1).unwrap();
            let rhs = grid.apply_spectral(&f, |mu| p1(mu) * p2(mu)).unwrap();
            for (x, y) in lhs.coeffs.iter().zip(&rhs.coeffs) {
                prop_assert!((x - y).abs() <= 1e-15 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn rotation_identity(t in -10.0f64..10.0) {
            let grid = SpectralGrid::new(2, 8).unwrap();
            for &mu in grid.eigenvalues() {
                let w = mu.sqrt() * t;
                prop_assert!((w.cos().powi(2) + w.sin().powi(2) - 1.0).abs() < 1e-15);
            }
        }
    }
}
