//! Derived fields of the coupled system: densities, the Coulomb potential, the
//! stray field, anisotropy, the effective field and the Gilbert inverse.

use nalgebra::{Matrix2, Matrix3, Vector3};
use num_complex::Complex64;

use crate::basis::{SpectralSpace, Tabulation};
use crate::error::{Error, Result};

/// Two-component spinor amplitude.
pub type Spinor = [Complex64; 2];

/// Pauli matrices `σ₁, σ₂, σ₃` with `σ₂ = [[0, -i], [i, 0]]`.
pub fn pauli() -> [Matrix2<Complex64>; 3] {
    let o = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    [
        Matrix2::new(o, one, one, o),
        Matrix2::new(o, -i, i, o),
        Matrix2::new(one, o, o, -one),
    ]
}

/// Galerkin coefficients of the wavefunctions in the Dirichlet basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorState {
    /// Occupation weights `λ_j`.
    pub weights: Vec<f64>,
    /// `coeffs[j][h]` is the spinor coefficient of wavefunction `j` on mode `h`.
    pub coeffs: Vec<Vec<Spinor>>,
}

impl SpinorState {
    pub fn zeros(weights: Vec<f64>, modes: usize) -> Self {
        let zero = [Complex64::new(0.0, 0.0); 2];
        let coeffs = vec![vec![zero; modes]; weights.len()];
        SpinorState { weights, coeffs }
    }

    pub fn wavefunctions(&self) -> usize {
        self.coeffs.len()
    }

    pub fn modes(&self) -> usize {
        self.coeffs.first().map_or(0, Vec::len)
    }

    /// `|ψ_j|₂²` by Parseval.
    pub fn mass_sq(&self, j: usize) -> f64 {
        self.coeffs[j].iter().map(|c| c[0].norm_sqr() + c[1].norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .flatten()
            .all(|c| c[0].re.is_finite() && c[0].im.is_finite() && c[1].re.is_finite() && c[1].im.is_finite())
    }

    /// Pointwise values of each wavefunction on the tabulated grid.
    pub fn evaluate(&self, table: &Tabulation) -> Vec<Vec<Spinor>> {
        let points = table.row(0).len();
        self.coeffs
            .iter()
            .map(|psi| {
                let mut out = vec![[Complex64::new(0.0, 0.0); 2]; points];
                for (h, c) in psi.iter().enumerate() {
                    for (o, t) in out.iter_mut().zip(table.row(h)) {
                        o[0] += c[0] * *t;
                        o[1] += c[1] * *t;
                    }
                }
                out
            })
            .collect()
    }
}

/// Galerkin coefficients of the magnetization in the Neumann basis.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnetizationState {
    pub coeffs: Vec<Vector3<f64>>,
}

impl MagnetizationState {
    pub fn zeros(modes: usize) -> Self {
        MagnetizationState {
            coeffs: vec![Vector3::zeros(); modes],
        }
    }

    /// `|∇m|₂² = Σ_h λ_h |β_h|²`.
    pub fn exchange(&self, eigenvalues: &[f64]) -> f64 {
        self.coeffs.iter().zip(eigenvalues).map(|(b, l)| l * b.norm_squared()).sum()
    }

    pub fn l2_sq(&self) -> f64 {
        self.coeffs.iter().map(|b| b.norm_squared()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// `ρ(x) = Σ_j λ_j |ψ_j(x)|²`.
pub fn density(spinor: &SpinorState, table: &Tabulation) -> Vec<f64> {
    let values = spinor.evaluate(table);
    density_from_values(&spinor.weights, &values)
}

pub(crate) fn density_from_values(weights: &[f64], values: &[Vec<Spinor>]) -> Vec<f64> {
    let points = values.first().map_or(0, Vec::len);
    let mut rho = vec![0.0; points];
    for (w, psi) in weights.iter().zip(values) {
        for (r, p) in rho.iter_mut().zip(psi) {
            *r += w * (p[0].norm_sqr() + p[1].norm_sqr());
        }
    }
    rho
}

/// `s(x) = Σ_j λ_j ψ_j† σ ψ_j`, componentwise
/// `(2 Re(ψ̄₊ψ₋), 2 Im(ψ̄₊ψ₋), |ψ₊|² − |ψ₋|²)`.
pub fn spin_density(spinor: &SpinorState, table: &Tabulation) -> Vec<Vector3<f64>> {
    let values = spinor.evaluate(table);
    spin_from_values(&spinor.weights, &values)
}

pub(crate) fn spin_from_values(weights: &[f64], values: &[Vec<Spinor>]) -> Vec<Vector3<f64>> {
    let points = values.first().map_or(0, Vec::len);
    let mut s = vec![Vector3::zeros(); points];
    for (w, psi) in weights.iter().zip(values) {
        for (acc, p) in s.iter_mut().zip(psi) {
            let z = p[0].conj() * p[1];
            *acc += Vector3::new(2.0 * z.re, 2.0 * z.im, p[0].norm_sqr() - p[1].norm_sqr()) * *w;
        }
    }
    s
}

/// Solution of `-ΔV = ρ` with `V = 0` at both ends.
#[derive(Debug, Clone)]
pub struct Potential {
    pub coeffs: Vec<f64>,
    pub values: Vec<f64>,
}

impl Potential {
    /// `∫|∇V|² = Σ_h λ_h V_h²`.
    pub fn gradient_energy(&self, eigenvalues: &[f64]) -> f64 {
        self.coeffs.iter().zip(eigenvalues).map(|(v, l)| l * v * v).sum()
    }
}

/// Spectral Poisson solve in the Dirichlet basis of the Schrödinger domain:
/// coefficient `h` of `V` is `ρ_h / λ_h`.
pub fn coulomb_potential(rho: &[f64], space: &SpectralSpace) -> Result<Potential> {
    let rho_h = space.project(rho)?;
    let coeffs: Vec<f64> = rho_h
        .iter()
        .zip(space.basis().eigenvalues())
        .map(|(r, l)| r / l)
        .collect();
    let values = space.table().synthesize(&coeffs);
    Ok(Potential { coeffs, values })
}

/// Stray field of a magnetization supported on the magnet domain.
#[derive(Debug, Clone)]
pub struct StrayField {
    /// `H_s` at the magnet grid points.
    pub field: Vec<Vector3<f64>>,
    /// The constant value `H_s` takes on the Schrödinger domain outside the magnet.
    pub exterior: f64,
    /// `∫_K |H_s|²`.
    pub energy: f64,
}

/// One-dimensional stray field `H_s = (-u', 0, 0)` where `u'' = (m₁ χ_D)'` on the
/// Schrödinger interval `[0, enclosing_length]` with `u = 0` at both ends.
///
/// In the Dirichlet sine basis `u'` is the cosine series of `m₁χ_D` without its
/// constant mode, so summing every mode gives `u' = m₁χ_D − ⟨m₁χ_D⟩_K` exactly.
/// That is what is evaluated here; only the `x`-component of `m` has nonzero
/// divergence in one dimension.
pub fn stray_field(m: &[Vector3<f64>], magnet: &crate::basis::Grid, enclosing_length: f64) -> Result<StrayField> {
    if m.len() != magnet.len() {
        return Err(Error::invalid("magnetization does not live on the magnet grid"));
    }
    if !(enclosing_length >= magnet.length()) {
        return Err(Error::invalid("magnet domain must fit inside the enclosing domain"));
    }
    let m1: Vec<f64> = m.iter().map(|v| v.x).collect();
    let mean = magnet.integrate(&m1) / enclosing_length;
    let field: Vec<Vector3<f64>> = m1.iter().map(|x| Vector3::new(mean - x, 0.0, 0.0)).collect();
    let inside: Vec<f64> = field.iter().map(|h| h.x * h.x).collect();
    let energy = magnet.integrate(&inside) + (enclosing_length - magnet.length()) * mean * mean;
    Ok(StrayField {
        field,
        exterior: mean,
        energy,
    })
}

/// Uniaxial anisotropy `w(m) = m₂² + m₃²` and its gradient `(0, 2m₂, 2m₃)`.
pub fn anisotropy(m: &[Vector3<f64>]) -> (Vec<f64>, Vec<Vector3<f64>>) {
    let w = m.iter().map(|v| v.y * v.y + v.z * v.z).collect();
    let dw = m.iter().map(|v| Vector3::new(0.0, 2.0 * v.y, 2.0 * v.z)).collect();
    (w, dw)
}

/// Which lower-order terms enter the effective field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldTerms {
    pub anisotropy: bool,
    pub stray: bool,
    pub spin_torque: bool,
}

impl Default for FieldTerms {
    fn default() -> Self {
        FieldTerms {
            anisotropy: true,
            stray: true,
            spin_torque: true,
        }
    }
}

/// `H = Δm − w'(m) + H_s + ½s` on the magnet grid.
pub fn effective_field(
    m: &MagnetizationState,
    space: &SpectralSpace,
    spin: Option<&[Vector3<f64>]>,
    enclosing_length: f64,
    terms: FieldTerms,
) -> Result<Vec<Vector3<f64>>> {
    let values = space.synthesize3(&m.coeffs);
    let mut h = space.synthesize3(&space.laplacian3(&m.coeffs));
    if terms.anisotropy {
        let (_, dw) = anisotropy(&values);
        for (a, b) in h.iter_mut().zip(&dw) {
            *a -= b;
        }
    }
    if terms.stray {
        let hs = stray_field(&values, space.grid(), enclosing_length)?;
        for (a, b) in h.iter_mut().zip(&hs.field) {
            *a += b;
        }
    }
    if terms.spin_torque {
        if let Some(s) = spin {
            if s.len() != h.len() {
                return Err(Error::invalid("spin density does not live on the magnet grid"));
            }
            for (a, b) in h.iter_mut().zip(s) {
                *a += b * 0.5;
            }
        }
    }
    Ok(h)
}

/// Matrix of `v ↦ m × v`.
pub fn cross_matrix(m: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -m.z, m.y, m.z, 0.0, -m.x, -m.y, m.x, 0.0)
}

/// `(αI + [m]_×)⁻¹ = (α²I − α[m]_× + m mᵀ) / (α(α² + |m|²))`.
pub fn gilbert_inverse(m: &Vector3<f64>, alpha: f64) -> Result<Matrix3<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("damping must be positive, got {alpha}")));
    }
    let scale = 1.0 / (alpha * (alpha * alpha + m.norm_squared()));
    Ok((Matrix3::identity() * (alpha * alpha) - cross_matrix(m) * alpha + m * m.transpose()) * scale)
}

/// Maximum absolute row sum.
pub fn inf_norm(a: &Matrix3<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{EigenBasis, Grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn schrodinger_space(n: usize, len: f64, points: usize) -> SpectralSpace {
        SpectralSpace::new(EigenBasis::dirichlet(n, 0.0, len).unwrap(), Grid::new(0.0, len, points).unwrap()).unwrap()
    }

    fn random_spinor(rng: &mut ChaCha8Rng, weights: Vec<f64>, modes: usize) -> SpinorState {
        let mut s = SpinorState::zeros(weights, modes);
        for psi in &mut s.coeffs {
            for cf in psi.iter_mut() {
                *cf = [
                    c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                    c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                ];
            }
        }
        s
    }

    #[test]
    fn pauli_algebra() {
        let id = Matrix2::identity();
        for s in pauli() {
            assert_eq!(s.adjoint(), s);
            assert_eq!(s.trace(), c(0.0, 0.0));
            assert_eq!(s * s, id);
        }
    }

    #[test]
    fn single_mode_density() {
        let space = schrodinger_space(4, 1.0, 32);
        let mut s = SpinorState::zeros(vec![1.0], 4);
        s.coeffs[0][0] = [c(1.0, 0.0), c(0.0, 0.0)];
        let rho = density(&s, space.table());
        for (r, t) in rho.iter().zip(space.table().row(0)) {
            assert!((r - t * t).abs() < 1e-15);
        }
        let zero = SpinorState::zeros(vec![1.0, 2.0], 4);
        assert!(density(&zero, space.table()).iter().all(|&r| r == 0.0));
        assert!(spin_density(&zero, space.table()).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn density_integrates_to_parseval_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let space = schrodinger_space(8, 2.0, 64);
        let s = random_spinor(&mut rng, vec![0.5, 1.5], 8);
        let rho = density(&s, space.table());
        let parseval: f64 = (0..2).map(|j| s.weights[j] * s.mass_sq(j)).sum();
        assert!((space.grid().integrate(&rho) - parseval).abs() < 1e-10);
    }

    #[test]
    fn spin_density_hand_traces() {
        let space = schrodinger_space(2, 1.0, 16);
        let t1 = space.table().row(0);
        let mut up = SpinorState::zeros(vec![1.0], 2);
        up.coeffs[0][0] = [c(1.0, 0.0), c(0.0, 0.0)];
        for (s, t) in spin_density(&up, space.table()).iter().zip(t1) {
            assert!((s - Vector3::new(0.0, 0.0, t * t)).norm() < 1e-15);
        }
        let r = 1.0 / 2f64.sqrt();
        let mut x = SpinorState::zeros(vec![1.0], 2);
        x.coeffs[0][0] = [c(r, 0.0), c(r, 0.0)];
        for (s, t) in spin_density(&x, space.table()).iter().zip(t1) {
            assert!((s - Vector3::new(t * t, 0.0, 0.0)).norm() < 1e-15);
        }
        // σ₂ eigenvector (1, i)/√2 has s = (0, 1, 0)|θ|²
        let mut y = SpinorState::zeros(vec![1.0], 2);
        y.coeffs[0][0] = [c(r, 0.0), c(0.0, r)];
        for (s, t) in spin_density(&y, space.table()).iter().zip(t1) {
            assert!((s - Vector3::new(0.0, t * t, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn spin_density_matches_pauli_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let space = schrodinger_space(5, 1.0, 24);
        let s = random_spinor(&mut rng, vec![0.7], 5);
        let values = s.evaluate(space.table());
        let sig = pauli();
        let spin = spin_density(&s, space.table());
        for (p, sv) in values[0].iter().zip(&spin) {
            let psi = nalgebra::Vector2::new(p[0], p[1]);
            for k in 0..3 {
                let tr = (psi.adjoint() * sig[k] * psi)[(0, 0)];
                assert!((0.7 * tr.re - sv[k]).abs() < 1e-12);
                assert!(tr.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spin_bound_and_single_spinor_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let space = schrodinger_space(6, 1.0, 32);
        let single = random_spinor(&mut rng, vec![1.3], 6);
        let rho = density(&single, space.table());
        let s = spin_density(&single, space.table());
        for (r, v) in rho.iter().zip(&s) {
            assert!((v.norm() - r).abs() <= 1e-10);
        }
        let mixed = random_spinor(&mut rng, vec![0.4, 1.0, 2.0], 6);
        let rho = density(&mixed, space.table());
        for (r, v) in rho.iter().zip(spin_density(&mixed, space.table())) {
            assert!(v.norm() <= r + 1e-10);
        }
    }

    #[test]
    fn densities_scale_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let space = schrodinger_space(4, 1.0, 16);
        let s = random_spinor(&mut rng, vec![1.0, 0.5], 4);
        let mut t = s.clone();
        let k = c(0.0, 3.0);
        t.coeffs.iter_mut().flatten().for_each(|cf| {
            cf[0] *= k;
            cf[1] *= k;
        });
        for (a, b) in density(&s, space.table()).iter().zip(density(&t, space.table())) {
            assert!((9.0 * a - b).abs() < 1e-12);
        }
        for (a, b) in spin_density(&s, space.table()).iter().zip(spin_density(&t, space.table())) {
            assert!((a * 9.0 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn coulomb_closed_forms() {
        let space = schrodinger_space(4, PI, 64);
        let rho: Vec<f64> = space.grid().points().iter().map(|x| x.sin()).collect();
        let v = coulomb_potential(&rho, &space).unwrap();
        for (a, b) in v.values.iter().zip(&rho) {
            assert!((a - b).abs() < 1e-12);
        }
        let rho2: Vec<f64> = space.grid().points().iter().map(|x| (2.0 * x).sin()).collect();
        let v = coulomb_potential(&rho2, &space).unwrap();
        for (a, b) in v.values.iter().zip(&rho2) {
            assert!((a - b / 4.0).abs() < 1e-12);
        }
        assert!(v.values[0].abs() < 1e-15 && v.values.last().unwrap().abs() < 1e-12);
    }

    #[test]
    fn coulomb_is_linear() {
        let space = schrodinger_space(8, 2.0, 64);
        let a: Vec<f64> = space.grid().points().iter().map(|x| x * (2.0 - x)).collect();
        let b: Vec<f64> = space.grid().points().iter().map(|x| (3.0 * x).cos() + 1.0).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let va = coulomb_potential(&a, &space).unwrap();
        let vb = coulomb_potential(&b, &space).unwrap();
        let vm = coulomb_potential(&mix, &space).unwrap();
        for i in 0..vm.values.len() {
            assert!((vm.values[i] - 2.0 * va.values[i] + 0.5 * vb.values[i]).abs() < 1e-12);
        }
    }

    fn magnet_grid() -> Grid {
        Grid::new(0.5, 1.5, 65).unwrap()
    }

    #[test]
    fn stray_field_zero_and_identity() {
        let g = magnet_grid();
        let zero = vec![Vector3::zeros(); g.len()];
        let hs = stray_field(&zero, &g, 2.0).unwrap();
        assert!(hs.field.iter().all(|v| v.norm() == 0.0) && hs.energy == 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: Vec<_> = (0..g.len())
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.3))
            .collect();
        let hs = stray_field(&m, &g, 2.0).unwrap();
        let lhs = -g.inner3(&m, &hs.field);
        assert!((lhs - hs.energy).abs() <= 1e-12 * hs.energy.max(1.0));
    }

    #[test]
    fn stray_field_is_linear() {
        let g = magnet_grid();
        let a: Vec<_> = g.points().iter().map(|x| Vector3::new(x.sin(), 1.0, 0.0)).collect();
        let b: Vec<_> = g.points().iter().map(|x| Vector3::new(x * x, 0.0, 2.0)).collect();
        let mix: Vec<_> = a.iter().zip(&b).map(|(x, y)| x * 3.0 - y).collect();
        let (ha, hb, hm) = (
            stray_field(&a, &g, 2.0).unwrap(),
            stray_field(&b, &g, 2.0).unwrap(),
            stray_field(&mix, &g, 2.0).unwrap(),
        );
        for i in 0..g.len() {
            assert!((hm.field[i] - ha.field[i] * 3.0 + hb.field[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn anisotropy_cases() {
        let (w, dw) = anisotropy(&[Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 1.0)]);
        assert_eq!(w, vec![0.0, 2.0]);
        assert_eq!(dw[0], Vector3::zeros());
        assert_eq!(dw[1], Vector3::new(0.0, 2.0, 2.0));
        let m = Vector3::new(0.3, -0.7, 1.1);
        let eps = 1e-4;
        let mut errs = Vec::new();
        for e in [eps, eps / 2.0] {
            let mut worst: f64 = 0.0;
            for k in 0..3 {
                let mut p = m;
                let mut q = m;
                p[k] += e;
                q[k] -= e;
                let (wp, _) = anisotropy(&[p]);
                let (wq, _) = anisotropy(&[q]);
                let (_, d) = anisotropy(&[m]);
                worst = worst.max(((wp[0] - wq[0]) / (2.0 * e) - d[0][k]).abs());
            }
            errs.push(worst);
        }
        // w is quadratic so central differences are exact up to rounding
        assert!(errs.iter().all(|&e| e < 1e-9));
    }

    #[test]
    fn effective_field_special_cases() {
        let basis = EigenBasis::neumann(4, 0.5, 1.0).unwrap();
        let space = SpectralSpace::new(basis, magnet_grid()).unwrap();
        let mut m = MagnetizationState::zeros(5);
        m.coeffs[0] = Vector3::new(0.2, 0.4, -0.6);
        let terms = FieldTerms {
            anisotropy: true,
            stray: false,
            spin_torque: false,
        };
        let h = effective_field(&m, &space, None, 2.0, terms).unwrap();
        let values = space.synthesize3(&m.coeffs);
        let (_, dw) = anisotropy(&values);
        for (a, b) in h.iter().zip(&dw) {
            assert!((a + b).norm() < 1e-12);
        }

        let zero = MagnetizationState::zeros(5);
        let s: Vec<_> = space.grid().points().iter().map(|x| Vector3::new(*x, 1.0, -x)).collect();
        let h = effective_field(&zero, &space, Some(&s), 2.0, FieldTerms::default()).unwrap();
        for (a, b) in h.iter().zip(&s) {
            assert!((a - b * 0.5).norm() < 1e-15);
        }
    }

    #[test]
    fn effective_field_recomposes_from_parts() {
        let basis = EigenBasis::neumann(4, 0.5, 1.0).unwrap();
        let space = SpectralSpace::new(basis, magnet_grid()).unwrap();
        let mut m = MagnetizationState::zeros(5);
        m.coeffs[0] = Vector3::new(0.1, 0.2, 0.9);
        m.coeffs[2] = Vector3::new(-0.3, 0.1, 0.05);
        let s: Vec<_> = space.grid().points().iter().map(|x| Vector3::new(x.cos(), 0.0, 0.5)).collect();
        let h = effective_field(&m, &space, Some(&s), 2.0, FieldTerms::default()).unwrap();
        let values = space.synthesize3(&m.coeffs);
        let lap = space.synthesize3(&space.laplacian3(&m.coeffs));
        let (_, dw) = anisotropy(&values);
        let hs = stray_field(&values, space.grid(), 2.0).unwrap();
        for i in 0..h.len() {
            let want = lap[i] - dw[i] + hs.field[i] + s[i] * 0.5;
            assert!((h[i] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn gilbert_inverse_examples() {
        let inv = gilbert_inverse(&Vector3::zeros(), 2.0).unwrap();
        assert!((inv - Matrix3::identity() * 0.5).amax() < 1e-15);
        let inv = gilbert_inverse(&Vector3::new(0.0, 0.0, 1.0), 1.0).unwrap();
        let want = Matrix3::new(1.0, 1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 2.0) * 0.5;
        assert!((inv - want).amax() < 1e-15);
        // direct inverse of αI + [m]_× as an independent route
        let direct = (Matrix3::identity() + cross_matrix(&Vector3::new(0.0, 0.0, 1.0))).try_inverse().unwrap();
        assert!((inv - direct).amax() < 1e-15);
        assert!(gilbert_inverse(&Vector3::zeros(), 0.0).is_err());
        assert!(gilbert_inverse(&Vector3::zeros(), -1.0).is_err());
    }

    #[test]
    fn gilbert_inverse_identity_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let m = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let alpha = rng.random_range(0.1..2.0);
            let inv = gilbert_inverse(&m, alpha).unwrap();
            let prod = inv * (Matrix3::identity() * alpha + cross_matrix(&m));
            assert!((prod - Matrix3::identity()).amax() <= 1e-12);
            assert!(inf_norm(&inv) <= 2.0 / alpha);
        }
    }
}
