//! Closed-form Laplacian eigenbases on an interval and the transforms between
//! coefficient space and a uniform collocation grid.
//!
//! Dirichlet modes are `sqrt(2/L) sin(hπx/L)` for `h = 1..=n`; Neumann modes are
//! the constant `1/sqrt(L)` at `h = 0` followed by `sqrt(2/L) cos(hπx/L)` for
//! `h = 1..=n`. All inner products use the composite trapezoid rule, which
//! integrates every trigonometric product below the grid's Nyquist limit exactly.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};

const DOMAIN_TOL: f64 = 1e-12;

/// Uniform grid of `P` points on `[start, end]` with trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    start: f64,
    end: f64,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    pub fn new(start: f64, end: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 points, got {count}")));
        }
        if !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(Error::invalid(format!("empty interval [{start}, {end}]")));
        }
        let spacing = (end - start) / (count - 1) as f64;
        let points = (0..count)
            .map(|i| if i + 1 == count { end } else { start + i as f64 * spacing })
            .collect();
        let mut weights = vec![spacing; count];
        weights[0] *= 0.5;
        weights[count - 1] *= 0.5;
        Ok(Grid {
            start,
            end,
            points,
            weights,
        })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn spacing(&self) -> f64 {
        self.length() / (self.points.len() - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Trapezoid quadrature of grid samples.
    pub fn integrate(&self, samples: &[f64]) -> f64 {
        debug_assert_eq!(samples.len(), self.len());
        samples.iter().zip(&self.weights).map(|(f, w)| f * w).sum()
    }

    /// Quadrature of the pointwise dot product of two vector fields.
    pub fn inner3(&self, a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
        debug_assert_eq!(a.len(), self.len());
        debug_assert_eq!(b.len(), self.len());
        a.iter()
            .zip(b)
            .zip(&self.weights)
            .map(|((u, v), w)| w * u.dot(v))
            .sum()
    }

    pub fn norm3_sq(&self, a: &[Vector3<f64>]) -> f64 {
        self.inner3(a, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Dirichlet,
    Neumann,
}

/// Normalized eigenfunctions of `-Δ` on `[start, start + length]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    kind: BasisKind,
    start: f64,
    length: f64,
    modes: Vec<usize>,
    eigenvalues: Vec<f64>,
}

fn check_args(n: usize, length: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("mode count must be positive"));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::invalid(format!("domain length must be positive, got {length}")));
    }
    Ok(())
}

/// Dirichlet eigenpairs `λ_h = (hπ/L)²`, `h = 1..=n`, on `[0, L]`.
pub fn dirichlet_eigenpairs(n: usize, length: f64) -> Result<EigenBasis> {
    EigenBasis::dirichlet(n, 0.0, length)
}

/// Neumann eigenpairs `λ_h = (hπ/L)²`, `h = 0..=n`, on `[0, L]`.
pub fn neumann_eigenpairs(n: usize, length: f64) -> Result<EigenBasis> {
    EigenBasis::neumann(n, 0.0, length)
}

impl EigenBasis {
    pub fn dirichlet(n: usize, start: f64, length: f64) -> Result<Self> {
        check_args(n, length)?;
        Ok(Self::build(BasisKind::Dirichlet, start, length, (1..=n).collect()))
    }

    /// The Neumann basis carries `n + 1` functions: the constant mode and `n` cosines.
    pub fn neumann(n: usize, start: f64, length: f64) -> Result<Self> {
        check_args(n, length)?;
        Ok(Self::build(BasisKind::Neumann, start, length, (0..=n).collect()))
    }

    fn build(kind: BasisKind, start: f64, length: f64, modes: Vec<usize>) -> Self {
        let eigenvalues = modes
            .iter()
            .map(|&h| {
                let k = h as f64 * PI / length;
                k * k
            })
            .collect();
        EigenBasis {
            kind,
            start,
            length,
            modes,
            eigenvalues,
        }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.start + self.length
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Number of basis functions (for Neumann this is the mode count plus one).
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// The integer `h` of each basis function, in storage order.
    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn value(&self, index: usize, x: f64) -> f64 {
        let h = self.modes[index];
        let y = x - self.start;
        match self.kind {
            BasisKind::Dirichlet => (2.0 / self.length).sqrt() * (h as f64 * PI * y / self.length).sin(),
            BasisKind::Neumann if h == 0 => 1.0 / self.length.sqrt(),
            BasisKind::Neumann => (2.0 / self.length).sqrt() * (h as f64 * PI * y / self.length).cos(),
        }
    }

    pub fn derivative(&self, index: usize, x: f64) -> f64 {
        let h = self.modes[index];
        let y = x - self.start;
        let k = h as f64 * PI / self.length;
        let amp = (2.0 / self.length).sqrt();
        match self.kind {
            BasisKind::Dirichlet => amp * k * (k * y).cos(),
            BasisKind::Neumann if h == 0 => 0.0,
            BasisKind::Neumann => -amp * k * (k * y).sin(),
        }
    }

    fn covers(&self, grid: &Grid) -> bool {
        grid.start() >= self.start - DOMAIN_TOL && grid.end() <= self.end() + DOMAIN_TOL
    }

    fn matches(&self, grid: &Grid) -> bool {
        (grid.start() - self.start).abs() <= DOMAIN_TOL && (grid.end() - self.end()).abs() <= DOMAIN_TOL
    }

    /// Basis values at every grid point; the grid may be any sub-interval of the domain.
    pub fn tabulate(&self, grid: &Grid) -> Result<Tabulation> {
        if !self.covers(grid) {
            return Err(Error::invalid(format!(
                "grid [{}, {}] leaves basis domain [{}, {}]",
                grid.start(),
                grid.end(),
                self.start,
                self.end()
            )));
        }
        let values = (0..self.len())
            .map(|i| grid.points().iter().map(|&x| self.value(i, x)).collect())
            .collect();
        Ok(Tabulation { values })
    }
}

/// Basis functions sampled on a grid, row per basis function.
#[derive(Debug, Clone)]
pub struct Tabulation {
    values: Vec<Vec<f64>>,
}

impl Tabulation {
    pub fn row(&self, index: usize) -> &[f64] {
        &self.values[index]
    }

    pub fn modes(&self) -> usize {
        self.values.len()
    }

    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let points = self.values.first().map_or(0, Vec::len);
        let mut out = vec![0.0; points];
        for (c, row) in coeffs.iter().zip(&self.values) {
            if *c == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(row) {
                *o += c * v;
            }
        }
        out
    }

    pub fn synthesize3(&self, coeffs: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let points = self.values.first().map_or(0, Vec::len);
        let mut out = vec![Vector3::zeros(); points];
        for (c, row) in coeffs.iter().zip(&self.values) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += c * *v;
            }
        }
        out
    }
}

/// A basis paired with the grid of its own domain: supports both projection
/// and synthesis.
#[derive(Debug, Clone)]
pub struct SpectralSpace {
    basis: EigenBasis,
    grid: Grid,
    table: Tabulation,
}

impl SpectralSpace {
    pub fn new(basis: EigenBasis, grid: Grid) -> Result<Self> {
        if !basis.matches(&grid) {
            return Err(Error::invalid(format!(
                "grid [{}, {}] does not span basis domain [{}, {}]",
                grid.start(),
                grid.end(),
                basis.start(),
                basis.end()
            )));
        }
        let table = basis.tabulate(&grid)?;
        Ok(SpectralSpace { basis, grid, table })
    }

    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn table(&self) -> &Tabulation {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn project(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.len() != self.grid.len() {
            return Err(Error::invalid(format!(
                "expected {} samples, got {}",
                self.grid.len(),
                samples.len()
            )));
        }
        Ok(self.project_unchecked(samples))
    }

    pub(crate) fn project_unchecked(&self, samples: &[f64]) -> Vec<f64> {
        let w = self.grid.weights();
        (0..self.len())
            .map(|i| {
                self.table
                    .row(i)
                    .iter()
                    .zip(samples)
                    .zip(w)
                    .map(|((b, f), w)| b * f * w)
                    .sum()
            })
            .collect()
    }

    pub fn project3(&self, samples: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        debug_assert_eq!(samples.len(), self.grid.len());
        let w = self.grid.weights();
        (0..self.len())
            .map(|i| {
                self.table
                    .row(i)
                    .iter()
                    .zip(samples)
                    .zip(w)
                    .fold(Vector3::zeros(), |acc, ((b, f), w)| acc + f * (b * w))
            })
            .collect()
    }

    pub fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.len() {
            return Err(Error::invalid(format!(
                "expected {} coefficients, got {}",
                self.len(),
                coeffs.len()
            )));
        }
        Ok(self.table.synthesize(coeffs))
    }

    pub fn synthesize3(&self, coeffs: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        debug_assert_eq!(coeffs.len(), self.len());
        self.table.synthesize3(coeffs)
    }

    /// Spectral Laplacian on coefficients: mode `h` is scaled by `-λ_h`.
    pub fn laplacian3(&self, coeffs: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        coeffs
            .iter()
            .zip(self.basis.eigenvalues())
            .map(|(c, l)| -c * *l)
            .collect()
    }
}

/// Quadrature coefficients `⟨f, basis_h⟩` of grid samples.
pub fn project(samples: &[f64], basis: &EigenBasis, grid: &Grid) -> Result<Vec<f64>> {
    SpectralSpace::new(basis.clone(), grid.clone())?.project(samples)
}

/// Pointwise evaluation of `Σ_h c_h basis_h(x)` on the grid.
pub fn synthesize(coeffs: &[f64], basis: &EigenBasis, grid: &Grid) -> Result<Vec<f64>> {
    if coeffs.len() != basis.len() {
        return Err(Error::invalid(format!(
            "expected {} coefficients, got {}",
            basis.len(),
            coeffs.len()
        )));
    }
    Ok(basis.tabulate(grid)?.synthesize(coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gram_deviation(basis: &EigenBasis, points: usize) -> f64 {
        let grid = Grid::new(basis.start(), basis.end(), points).unwrap();
        let table = basis.tabulate(&grid).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                let prod: Vec<f64> = table.row(i).iter().zip(table.row(j)).map(|(a, b)| a * b).collect();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((grid.integrate(&prod) - target).abs());
            }
        }
        worst
    }

    #[test]
    fn dirichlet_closed_forms() {
        let b = dirichlet_eigenpairs(1, PI).unwrap();
        assert!((b.eigenvalues()[0] - 1.0).abs() < 1e-15);
        assert!((b.value(0, PI / 2.0) - (2.0 / PI).sqrt()).abs() < 1e-15);
        let b = dirichlet_eigenpairs(3, 1.0).unwrap();
        assert!((b.eigenvalues()[2] - 9.0 * PI * PI).abs() < 1e-12);
        for i in 0..3 {
            assert!(b.value(i, 0.0).abs() < 1e-15);
            assert!(b.value(i, 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn neumann_closed_forms() {
        let b = neumann_eigenpairs(1, 1.0).unwrap();
        assert_eq!(b.eigenvalues()[0], 0.0);
        assert!((b.value(0, 0.3) - 1.0).abs() < 1e-15);
        let b = neumann_eigenpairs(2, 2.0).unwrap();
        assert!((b.eigenvalues()[2] - PI * PI).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(dirichlet_eigenpairs(0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(neumann_eigenpairs(2, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(neumann_eigenpairs(2, -1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gram_matrices_are_identity() {
        for (n, len) in [(1, 1.0), (8, PI), (16, 2.0), (32, 0.7)] {
            let p = 4 * (n + 1);
            assert!(gram_deviation(&EigenBasis::dirichlet(n, 0.0, len).unwrap(), p) <= 1e-12);
            assert!(gram_deviation(&EigenBasis::neumann(n, 0.3, len).unwrap(), p) <= 1e-12);
        }
    }

    #[test]
    fn neumann_derivatives_vanish_at_endpoints() {
        let b = EigenBasis::neumann(6, 0.5, 1.3).unwrap();
        let eps = 1e-5;
        for i in 0..b.len() {
            assert_eq!(b.derivative(i, b.start()).abs(), 0.0);
            assert!(b.derivative(i, b.end()).abs() < 1e-12);
            let central = |x: f64| (b.value(i, x + eps) - b.value(i, x - eps)) / (2.0 * eps);
            let left = central(b.start());
            let right = central(b.end());
            assert!(left.abs() <= 1e-6, "mode {i}: {left}");
            assert!(right.abs() <= 1e-6, "mode {i}: {right}");
        }
    }

    #[test]
    fn projection_of_basis_function_is_unit_vector() {
        let basis = dirichlet_eigenpairs(5, 2.0).unwrap();
        let grid = Grid::new(0.0, 2.0, 40).unwrap();
        let samples: Vec<f64> = grid.points().iter().map(|&x| basis.value(1, x)).collect();
        let c = project(&samples, &basis, &grid).unwrap();
        for (i, ci) in c.iter().enumerate() {
            let want = if i == 1 { 1.0 } else { 0.0 };
            assert!((ci - want).abs() < 1e-13);
        }
        let zero = project(&vec![0.0; 40], &basis, &grid).unwrap();
        assert!(zero.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn synthesize_constant_mode() {
        let basis = neumann_eigenpairs(3, 4.0).unwrap();
        let grid = Grid::new(0.0, 4.0, 16).unwrap();
        let f = synthesize(&[1.0, 0.0, 0.0, 0.0], &basis, &grid).unwrap();
        assert!(f.iter().all(|v| (v - 0.5).abs() < 1e-15));
        let z = synthesize(&[0.0; 4], &basis, &grid).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let basis = dirichlet_eigenpairs(3, 1.0).unwrap();
        let other = Grid::new(0.0, 2.0, 16).unwrap();
        assert!(project(&[0.0; 16], &basis, &other).is_err());
        let grid = Grid::new(0.0, 1.0, 16).unwrap();
        assert!(synthesize(&[1.0, 2.0], &basis, &grid).is_err());
        let space = SpectralSpace::new(basis, grid).unwrap();
        assert!(space.project(&[0.0; 3]).is_err());
    }

    #[test]
    fn spectral_laplacian_matches_finite_differences() {
        // interior second differences converge at O(h²)
        let basis = EigenBasis::neumann(4, 0.0, 1.0).unwrap();
        let coeffs = [0.3, -0.2, 0.5, 0.1, -0.4];
        let mut errors = Vec::new();
        for p in [65usize, 129, 257] {
            let grid = Grid::new(0.0, 1.0, p).unwrap();
            let space = SpectralSpace::new(basis.clone(), grid).unwrap();
            let f = space.synthesize(&coeffs).unwrap();
            let lap: Vec<f64> = coeffs.iter().zip(basis.eigenvalues()).map(|(c, l)| -c * l).collect();
            let lap = space.synthesize(&lap).unwrap();
            let h = space.grid().spacing();
            let err = (1..p - 1)
                .map(|i| ((f[i + 1] - 2.0 * f[i] + f[i - 1]) / (h * h) - lap[i]).abs())
                .fold(0.0, f64::max);
            errors.push(err);
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    proptest! {
        #[test]
        fn project_inverts_synthesize(coeffs in proptest::collection::vec(-3.0f64..3.0, 9)) {
            let basis = EigenBasis::neumann(8, 0.25, 1.5).unwrap();
            let grid = Grid::new(0.25, 1.75, 48).unwrap();
            let space = SpectralSpace::new(basis, grid).unwrap();
            let back = space.project(&space.synthesize(&coeffs).unwrap()).unwrap();
            for (a, b) in coeffs.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn synthesize_is_linear(
            c1 in proptest::collection::vec(-2.0f64..2.0, 6),
            c2 in proptest::collection::vec(-2.0f64..2.0, 6),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let basis = dirichlet_eigenpairs(6, 1.0).unwrap();
            let grid = Grid::new(0.0, 1.0, 32).unwrap();
            let mix: Vec<f64> = c1.iter().zip(&c2).map(|(x, y)| a * x + b * y).collect();
            let lhs = synthesize(&mix, &basis, &grid).unwrap();
            let f1 = synthesize(&c1, &basis, &grid).unwrap();
            let f2 = synthesize(&c2, &basis, &grid).unwrap();
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (a * f1[i] + b * f2[i])).abs() < 1e-12);
            }
        }
    }
}
