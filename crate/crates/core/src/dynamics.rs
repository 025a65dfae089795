//! Time stepping: a Cayley step for the spinors, an Euler-Maruyama step for the
//! penalized LLG equation in Itô form, and a Strang coupler.
//!
//! One coupled step of size `Δt` runs
//!
//! 1. an LLG half step with `s` from the current spinors,
//! 2. a Schrödinger step with `m` from (1), where `V` is the average of the
//!    potentials before and after a predictor step,
//! 3. an LLG half step with `s` from the new spinors.
//!
//! Each LLG half step consumes its own Wiener increment and the jumps of its own
//! half interval, so a path is driven by a noise realization on the `Δt/2` grid.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{EigenBasis, Grid, SpectralSpace, Tabulation};
use crate::config::{LlgSolve, SimulationConfig};
use crate::error::{Error, Result};
use crate::fields::{
    coulomb_potential, cross_matrix, density_from_values, effective_field, gilbert_inverse, spin_from_values,
    FieldTerms, MagnetizationState, Potential, SpinorState,
};
use crate::noise::{JumpEvent, NoiseRealization, NoiseSpec};

/// Coefficients larger than this are treated as a blow-up.
const BLOWUP: f64 = 1e150;

/// Everything precomputed for one configuration.
#[derive(Debug, Clone)]
pub struct Model {
    config: SimulationConfig,
    schrodinger: SpectralSpace,
    poisson: SpectralSpace,
    magnet: SpectralSpace,
    /// Schrödinger basis on the magnet grid, for the Zeeman-like coupling term.
    theta_on_magnet: Tabulation,
    noise: Option<NoiseSpec>,
    terms: FieldTerms,
}

/// Running sums entering the energy identity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Ledgers {
    /// `2α Σ |Δm|² / Δt`.
    pub dissipation: f64,
    /// `2 Σ ⟨v, G(m) ΔW⟩`.
    pub wiener: f64,
    /// `2 Σ ⟨v, F(m⁻, l)⟩ − 2 Σ Δt ⟨v, F(m⁻, λ_P E[l])⟩`.
    pub jump: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub time: f64,
    pub spinor: SpinorState,
    pub m: MagnetizationState,
    pub ledgers: Ledgers,
}

/// Save points of one path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub spinors: Vec<SpinorState>,
    pub magnetizations: Vec<MagnetizationState>,
    pub ledgers: Vec<Ledgers>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, state: &PathState) {
        self.times.push(state.time);
        self.spinors.push(state.spinor.clone());
        self.magnetizations.push(state.m.clone());
        self.ledgers.push(state.ledgers);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathFailure {
    pub path: u64,
    pub time: f64,
    pub reason: String,
}

/// A path's save points up to the end or up to the failure.
#[derive(Debug, Clone)]
pub struct PathOutcome {
    pub path: u64,
    pub trajectory: Trajectory,
    pub failure: Option<PathFailure>,
}

/// Result of one LLG sub-step.
#[derive(Debug, Clone)]
pub struct LlgUpdate {
    pub m: MagnetizationState,
    /// Coefficients of the drift velocity `v = (αI + m×)⁻¹ f`.
    pub velocity: Vec<Vector3<f64>>,
    pub ledgers: Ledgers,
}

/// `(αI + m×)⁻¹` at a frozen `m`, in one of the two discretizations.
enum GilbertOperator<'a> {
    Galerkin {
        lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        space: &'a SpectralSpace,
    },
    Pointwise {
        inverses: Vec<nalgebra::Matrix3<f64>>,
        space: &'a SpectralSpace,
    },
}

impl GilbertOperator<'_> {
    /// Neumann coefficients of the solution for a forcing given on the magnet grid.
    fn solve(&self, forcing: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        match self {
            GilbertOperator::Galerkin { lu, space } => {
                let rhs = space.project3(forcing);
                let flat = DVector::from_iterator(3 * rhs.len(), rhs.iter().flat_map(|v| [v.x, v.y, v.z]));
                let x = lu.solve(&flat).expect("αI plus a skew matrix is invertible");
                (0..rhs.len()).map(|h| Vector3::new(x[3 * h], x[3 * h + 1], x[3 * h + 2])).collect()
            }
            GilbertOperator::Pointwise { inverses, space } => {
                let pointwise: Vec<Vector3<f64>> = inverses.iter().zip(forcing).map(|(a, f)| a * f).collect();
                space.project3(&pointwise)
            }
        }
    }
}

fn failure(time: f64, reason: impl Into<String>) -> Error {
    Error::NumericalFailure {
        time,
        reason: reason.into(),
    }
}

fn coeffs_ok(m: &MagnetizationState) -> bool {
    m.coeffs.iter().all(|b| b.iter().all(|x| x.is_finite() && x.abs() < BLOWUP))
}

impl Model {
    pub fn new(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let kgrid = Grid::new(0.0, c.schrodinger_length, c.grid_points)?;
        let dgrid = Grid::new(c.magnet_start, c.magnet_end, c.grid_points)?;
        let length_d = c.magnet_end - c.magnet_start;
        let theta = EigenBasis::dirichlet(c.n_modes_schrodinger, 0.0, c.schrodinger_length)?;
        let theta_on_magnet = theta.tabulate(&dgrid)?;
        let schrodinger = SpectralSpace::new(theta, kgrid.clone())?;
        let poisson = SpectralSpace::new(
            EigenBasis::dirichlet(c.poisson_modes(), 0.0, c.schrodinger_length)?,
            kgrid,
        )?;
        let magnet = SpectralSpace::new(EigenBasis::neumann(c.n_modes_magnet, c.magnet_start, length_d)?, dgrid)?;
        let noise = if c.noise {
            Some(NoiseSpec::new(&c.noise_params(), magnet.grid())?)
        } else {
            None
        };
        Ok(Model {
            config: c.clone(),
            schrodinger,
            poisson,
            magnet,
            theta_on_magnet,
            noise,
            terms: FieldTerms {
                anisotropy: c.anisotropy,
                stray: c.stray_field,
                spin_torque: c.coupling,
            },
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn schrodinger_space(&self) -> &SpectralSpace {
        &self.schrodinger
    }

    pub fn poisson_space(&self) -> &SpectralSpace {
        &self.poisson
    }

    pub fn magnet_space(&self) -> &SpectralSpace {
        &self.magnet
    }

    /// Schrödinger basis tabulated on the magnet grid.
    pub fn theta_on_magnet(&self) -> &Tabulation {
        &self.theta_on_magnet
    }

    /// `None` when the noise toggle is off.
    pub fn noise(&self) -> Option<&NoiseSpec> {
        self.noise.as_ref()
    }

    pub fn field_terms(&self) -> FieldTerms {
        self.terms
    }

    /// Initial data described by the `psi_*` and `m_init_*` keys.
    pub fn initial_state(&self) -> PathState {
        let c = &self.config;
        let mut spinor = SpinorState::zeros(c.weights.clone(), c.n_modes_schrodinger);
        let up = Complex64::new((0.5 * c.psi_polar).cos(), 0.0);
        let down = Complex64::from_polar((0.5 * c.psi_polar).sin(), c.psi_azimuth);
        for (j, psi) in spinor.coeffs.iter_mut().enumerate() {
            psi[j][0] = up;
            psi[j + 1][1] = down;
        }
        let d = Vector3::from(c.m_init_direction).normalize() * c.m_init_magnitude;
        let length = c.magnet_end - c.magnet_start;
        let mut m = MagnetizationState::zeros(self.magnet.len());
        m.coeffs[0] = d * length.sqrt();
        m.coeffs[1] = Vector3::new(c.m_init_tilt * (0.5 * length).sqrt(), 0.0, 0.0);
        PathState {
            time: 0.0,
            spinor,
            m,
            ledgers: Ledgers::default(),
        }
    }

    /// `V` solving `-ΔV = ρ(ψ)` on the Schrödinger domain.
    pub fn potential(&self, spinor: &SpinorState) -> Result<Potential> {
        let values = spinor.evaluate(self.schrodinger.table());
        coulomb_potential(&density_from_values(&spinor.weights, &values), &self.poisson)
    }

    /// Spin density on the magnet grid.
    pub fn spin_on_magnet(&self, spinor: &SpinorState) -> Vec<Vector3<f64>> {
        spin_from_values(&spinor.weights, &spinor.evaluate(&self.theta_on_magnet))
    }

    /// Hermitian generator in coefficient space, index `2h + σ`:
    /// `½λ_h δ + (θ_h, Vθ_h') − ½ Σ_c (θ_h, m_c θ_h') σ_c`.
    pub fn hamiltonian(&self, v: &[f64], m: Option<&[Vector3<f64>]>) -> Result<DMatrix<Complex64>> {
        let n = self.schrodinger.len();
        let kgrid = self.schrodinger.grid();
        if v.len() != kgrid.len() {
            return Err(Error::invalid("potential does not live on the Schrödinger grid"));
        }
        let table = self.schrodinger.table();
        let wv: Vec<f64> = v.iter().zip(kgrid.weights()).map(|(a, w)| a * w).collect();
        let mut pot = DMatrix::<f64>::zeros(n, n);
        let mut scratch = vec![0.0; wv.len()];
        for a in 0..n {
            for ((s, t), w) in scratch.iter_mut().zip(table.row(a)).zip(&wv) {
                *s = t * w;
            }
            for b in a..n {
                let x: f64 = scratch.iter().zip(table.row(b)).map(|(s, t)| s * t).sum();
                pot[(a, b)] = x;
                pot[(b, a)] = x;
            }
        }
        let mut zeeman = [DMatrix::<f64>::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
        if let Some(m) = m {
            let dgrid = self.magnet.grid();
            if m.len() != dgrid.len() {
                return Err(Error::invalid("magnetization does not live on the magnet grid"));
            }
            let th = &self.theta_on_magnet;
            let mut scratch = vec![Vector3::zeros(); m.len()];
            for a in 0..n {
                for (((s, t), w), mv) in scratch.iter_mut().zip(th.row(a)).zip(dgrid.weights()).zip(m) {
                    *s = mv * (t * w);
                }
                for b in a..n {
                    let x: Vector3<f64> = scratch.iter().zip(th.row(b)).map(|(s, t)| s * *t).sum();
                    for c in 0..3 {
                        zeeman[c][(a, b)] = x[c];
                        zeeman[c][(b, a)] = x[c];
                    }
                }
            }
        }
        let eig = self.schrodinger.basis().eigenvalues();
        let i = Complex64::new(0.0, 1.0);
        let mut h = DMatrix::<Complex64>::zeros(2 * n, 2 * n);
        for a in 0..n {
            for b in 0..n {
                let d = pot[(a, b)] + if a == b { 0.5 * eig[a] } else { 0.0 };
                let (m1, m2, m3) = (zeeman[0][(a, b)], zeeman[1][(a, b)], zeeman[2][(a, b)]);
                h[(2 * a, 2 * b)] = Complex64::new(d - 0.5 * m3, 0.0);
                h[(2 * a + 1, 2 * b + 1)] = Complex64::new(d + 0.5 * m3, 0.0);
                h[(2 * a, 2 * b + 1)] = -0.5 * (m1 - i * m2);
                h[(2 * a + 1, 2 * b)] = -0.5 * (m1 + i * m2);
            }
        }
        Ok(h)
    }

    /// Cayley step `(I + iΔt/2 H) ψ' = (I − iΔt/2 H) ψ` with `V` (Schrödinger grid) and
    /// `m` (magnet grid) frozen. `dt` may be negative.
    pub fn schrodinger_step(
        &self,
        spinor: &SpinorState,
        v: &[f64],
        m: Option<&[Vector3<f64>]>,
        dt: f64,
    ) -> Result<SpinorState> {
        let h = self.hamiltonian(v, m)?;
        let dim = h.nrows();
        let half = Complex64::new(0.0, 0.5 * dt);
        let eye = DMatrix::<Complex64>::identity(dim, dim);
        let lhs = &eye + &h * half;
        let rhs_op = &eye - &h * half;
        let lu = lhs.lu();
        let mut out = spinor.clone();
        for psi in out.coeffs.iter_mut() {
            let x = DVector::from_iterator(dim, psi.iter().flat_map(|c| [c[0], c[1]]));
            let y = lu
                .solve(&(&rhs_op * x))
                .ok_or_else(|| failure(f64::NAN, "singular Cayley system"))?;
            for (k, c) in psi.iter_mut().enumerate() {
                *c = [y[2 * k], y[2 * k + 1]];
            }
        }
        if !out.is_finite() {
            return Err(failure(f64::NAN, "non-finite spinor coefficients"));
        }
        Ok(out)
    }

    fn gilbert_operator(&self, m: &[Vector3<f64>]) -> Result<GilbertOperator<'_>> {
        let alpha = self.config.alpha;
        match self.config.llg_solve {
            LlgSolve::Pointwise => Ok(GilbertOperator::Pointwise {
                inverses: m.iter().map(|v| gilbert_inverse(v, alpha)).collect::<Result<_>>()?,
                space: &self.magnet,
            }),
            LlgSolve::Galerkin => {
                let n = self.magnet.len();
                let grid = self.magnet.grid();
                let table = self.magnet.table();
                let mut a = DMatrix::<f64>::identity(3 * n, 3 * n) * alpha;
                let mut scratch = vec![Vector3::zeros(); m.len()];
                for h in 0..n {
                    for ((s, t), (w, mv)) in scratch.iter_mut().zip(table.row(h)).zip(grid.weights().iter().zip(m)) {
                        *s = mv * (t * w);
                    }
                    for g in h..n {
                        let q: Vector3<f64> = scratch.iter().zip(table.row(g)).map(|(s, t)| s * *t).sum();
                        let block = cross_matrix(&q);
                        for r in 0..3 {
                            for c in 0..3 {
                                a[(3 * h + r, 3 * g + c)] += block[(r, c)];
                                if g != h {
                                    a[(3 * g + r, 3 * h + c)] += block[(r, c)];
                                }
                            }
                        }
                    }
                }
                Ok(GilbertOperator::Galerkin {
                    lu: a.lu(),
                    space: &self.magnet,
                })
            }
        }
    }

    /// Effective field on the magnet grid, with `s` entering only when coupled.
    pub fn effective_field(&self, m: &MagnetizationState, spin: Option<&[Vector3<f64>]>) -> Result<Vec<Vector3<f64>>> {
        let spin = if self.config.coupling { spin } else { None };
        effective_field(m, &self.magnet, spin, self.config.schrodinger_length, self.terms)
    }

    /// `H − k(|m|²−1)m − ½G'[G]` on the magnet grid.
    fn forcing(&self, values: &[Vector3<f64>], field: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let k = self.config.k;
        let mut f: Vec<Vector3<f64>> = field
            .iter()
            .zip(values)
            .map(|(h, m)| h - m * (k * (m.norm_squared() - 1.0)))
            .collect();
        if let Some(noise) = &self.noise {
            for (a, b) in f.iter_mut().zip(noise.stratonovich_correction(values)) {
                *a -= b;
            }
        }
        f
    }

    /// Coefficients of `(αI + m×)⁻¹ [H − k(|m|²−1)m − ½G'[G]]`.
    pub fn llg_drift(&self, m: &MagnetizationState, field: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        let values = self.magnet.synthesize3(&m.coeffs);
        let op = self.gilbert_operator(&values)?;
        Ok(op.solve(&self.forcing(&values, field)))
    }

    /// Noise-free LLG velocity with `s` frozen; the right-hand side of the
    /// reference ODE.
    pub fn llg_velocity(&self, m: &MagnetizationState, spin: Option<&[Vector3<f64>]>) -> Result<Vec<Vector3<f64>>> {
        let field = self.effective_field(m, spin)?;
        self.llg_drift(m, &field)
    }

    /// One Euler-Maruyama step of size `dt` with Wiener increment `dw` and the
    /// jumps of `[t, t + dt)`, all applied at the step end from the left limit.
    pub fn llg_step(
        &self,
        m: &MagnetizationState,
        field: &[Vector3<f64>],
        dt: f64,
        dw: &[f64],
        jumps: &[JumpEvent],
    ) -> Result<LlgUpdate> {
        let values = self.magnet.synthesize3(&m.coeffs);
        let grid = self.magnet.grid();
        let op = self.gilbert_operator(&values)?;
        let mut f = self.forcing(&values, field);
        let jump_spec = self.noise.as_ref().filter(|n| !n.jumps_inert());
        if let Some(spec) = jump_spec {
            for (a, b) in f.iter_mut().zip(spec.f_linear(&values, &spec.compensator())) {
                *a += b;
            }
        }
        let velocity = op.solve(&f);
        let v_grid = self.magnet.synthesize3(&velocity);
        let mut ledgers = Ledgers::default();
        let mut next: Vec<Vector3<f64>> = m.coeffs.iter().zip(&velocity).map(|(a, v)| a + v * dt).collect();

        if let Some(spec) = &self.noise {
            let mut kick = vec![Vector3::zeros(); values.len()];
            for (i, w) in dw.iter().enumerate() {
                for (a, g) in kick.iter_mut().zip(spec.g_eval(&values, i)?) {
                    *a += g * *w;
                }
            }
            ledgers.wiener = 2.0 * grid.inner3(&v_grid, &kick);
            for (a, d) in next.iter_mut().zip(op.solve(&kick)) {
                *a -= d;
            }
        }
        if let Some(spec) = jump_spec {
            let left = self.magnet.synthesize3(&next);
            let comp = spec.f_linear(&left, &spec.compensator());
            ledgers.jump = -2.0 * dt * grid.inner3(&v_grid, &comp);
            if !jumps.is_empty() {
                let mut kick = vec![Vector3::zeros(); values.len()];
                for event in jumps {
                    for (a, b) in kick.iter_mut().zip(spec.f_eval(&left, &event.mark)?) {
                        *a += b;
                    }
                }
                ledgers.jump += 2.0 * grid.inner3(&v_grid, &kick);
                for (a, d) in next.iter_mut().zip(op.solve(&kick)) {
                    *a -= d;
                }
            }
        }
        let increment: f64 = next.iter().zip(&m.coeffs).map(|(a, b)| (a - b).norm_squared()).sum();
        ledgers.dissipation = 2.0 * self.config.alpha * increment / dt;
        let m = MagnetizationState { coeffs: next };
        if !coeffs_ok(&m) {
            return Err(failure(f64::NAN, "magnetization blew up; reduce dt relative to 1/k"));
        }
        Ok(LlgUpdate { m, velocity, ledgers })
    }

    /// One Strang step `[t, t + Δt]`; `slot` indexes the step within the path so
    /// the matching half-step noise is used.
    pub fn coupled_step(&self, state: &PathState, noise: &NoiseRealization, slot: usize) -> Result<PathState> {
        let dt = self.config.dt;
        let half = 0.5 * dt;
        let coupled = self.config.coupling;
        let at = |e: Error| match e {
            Error::NumericalFailure { reason, .. } => failure(state.time + dt, reason),
            other => other,
        };
        let spin = coupled.then(|| self.spin_on_magnet(&state.spinor));
        let field = self.effective_field(&state.m, spin.as_deref()).map_err(at)?;
        let first = self
            .llg_step(&state.m, &field, half, &noise.increments[2 * slot], noise.jumps_in(2 * slot))
            .map_err(at)?;

        let m_values = coupled.then(|| self.magnet.synthesize3(&first.m.coeffs));
        let v0 = self.potential(&state.spinor)?;
        let predictor = self
            .schrodinger_step(&state.spinor, &v0.values, m_values.as_deref(), dt)
            .map_err(at)?;
        let v1 = self.potential(&predictor)?;
        let v_mid: Vec<f64> = v0.values.iter().zip(&v1.values).map(|(a, b)| 0.5 * (a + b)).collect();
        let spinor = self
            .schrodinger_step(&state.spinor, &v_mid, m_values.as_deref(), dt)
            .map_err(at)?;

        let spin = coupled.then(|| self.spin_on_magnet(&spinor));
        let field = self.effective_field(&first.m, spin.as_deref()).map_err(at)?;
        let second = self
            .llg_step(&first.m, &field, half, &noise.increments[2 * slot + 1], noise.jumps_in(2 * slot + 1))
            .map_err(at)?;

        let l = &state.ledgers;
        let ledgers = Ledgers {
            dissipation: l.dissipation + first.ledgers.dissipation + second.ledgers.dissipation,
            wiener: l.wiener + first.ledgers.wiener + second.ledgers.wiener,
            jump: l.jump + first.ledgers.jump + second.ledgers.jump,
        };
        Ok(PathState {
            time: (slot + 1) as f64 * dt,
            spinor,
            m: second.m,
            ledgers,
        })
    }

    /// The noise driving path `path`: Wiener increments and jumps on the half-step grid.
    pub fn realization(&self, path: u64) -> Result<NoiseRealization> {
        let steps = self.config.steps();
        let half = 0.5 * self.config.dt;
        match &self.noise {
            Some(spec) => NoiseRealization::sample(spec, half, 2 * steps, self.config.seed, path),
            None => Ok(NoiseRealization::silent(self.config.noise_amplitudes.len(), half, 2 * steps)),
        }
    }

    pub fn simulate_path(&self, path: u64) -> Result<PathOutcome> {
        let noise = self.realization(path)?;
        self.simulate_with(path, &noise)
    }

    /// Runs a path under a given realization; a numerical failure ends the path
    /// and is reported alongside the save points reached so far.
    pub fn simulate_with(&self, path: u64, noise: &NoiseRealization) -> Result<PathOutcome> {
        let steps = self.config.steps();
        let mut state = self.initial_state();
        let mut trajectory = Trajectory::default();
        trajectory.push(&state);
        for slot in 0..steps {
            match self.coupled_step(&state, noise, slot) {
                Ok(next) => state = next,
                Err(Error::NumericalFailure { time, reason }) => {
                    return Ok(PathOutcome {
                        path,
                        trajectory,
                        failure: Some(PathFailure { path, time, reason }),
                    })
                }
                Err(e) => return Err(e),
            }
            if (slot + 1) % self.config.save_every == 0 {
                trajectory.push(&state);
            }
        }
        Ok(PathOutcome {
            path,
            trajectory,
            failure: None,
        })
    }

    /// Paths `0..ensemble_size`, run concurrently; the result is ordered by path
    /// index and does not depend on scheduling.
    pub fn simulate_ensemble(&self) -> Result<Vec<PathOutcome>> {
        (0..self.config.ensemble_size as u64)
            .into_par_iter()
            .map(|p| self.simulate_path(p))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{density, spin_density};
    use crate::oracle::rk4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quiet() -> SimulationConfig {
        SimulationConfig {
            noise: false,
            ..SimulationConfig::default()
        }
        .resolved()
        .unwrap()
    }

    fn random_spinor(model: &Model, rng: &mut ChaCha8Rng) -> SpinorState {
        let n = model.schrodinger_space().len();
        let mut s = SpinorState::zeros(vec![1.0, 0.5], n);
        for psi in s.coeffs.iter_mut() {
            for c in psi.iter_mut() {
                *c = [
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                ];
            }
        }
        s
    }

    fn random_m(model: &Model, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        let n = model.magnet_space().grid().len();
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect()
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let model = Model::new(&quiet()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..model.schrodinger_space().grid().len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = random_m(&model, &mut rng);
        let h = model.hamiltonian(&v, Some(&m)).unwrap();
        assert!((&h - h.adjoint()).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn hamiltonian_matches_quadrature_of_the_operator() {
        let model = Model::new(&quiet()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = model.schrodinger_space().len();
        let v: Vec<f64> = (0..model.schrodinger_space().grid().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = random_m(&model, &mut rng);
        let h = model.hamiltonian(&v, Some(&m)).unwrap();
        // ⟨φ, Hφ⟩ with φ = θ_2 ↑: ½λ₂ + ∫Vθ₂² − ½∫m₃θ₂².
        let kg = model.schrodinger_space().grid();
        let t2 = model.schrodinger_space().table().row(2);
        let vt: Vec<f64> = t2.iter().zip(&v).map(|(t, v)| t * t * v).collect();
        let dg = model.magnet_space().grid();
        let mt: Vec<f64> = model.theta_on_magnet().row(2).iter().zip(&m).map(|(t, m)| t * t * m.z).collect();
        let expect = 0.5 * model.schrodinger_space().basis().eigenvalues()[2] + kg.integrate(&vt) - 0.5 * dg.integrate(&mt);
        assert!((h[(4, 4)].re - expect).abs() < 1e-12);
        assert_eq!(h.nrows(), 2 * n);
    }

    #[test]
    fn free_evolution_phase() {
        let model = Model::new(&quiet()).unwrap();
        let n = model.schrodinger_space().len();
        let zero_v = vec![0.0; model.schrodinger_space().grid().len()];
        let lam = model.schrodinger_space().basis().eigenvalues()[3];
        let mut errs = Vec::new();
        for dt in [1e-2, 5e-3] {
            let mut s = SpinorState::zeros(vec![1.0], n);
            s.coeffs[0][3][0] = Complex64::new(0.6, 0.8);
            let out = model.schrodinger_step(&s, &zero_v, None, dt).unwrap();
            let exact = Complex64::new(0.6, 0.8) * Complex64::from_polar(1.0, -0.5 * lam * dt);
            errs.push((out.coeffs[0][3][0] - exact).norm());
            assert!(out.coeffs[0].iter().enumerate().all(|(h, c)| h == 3 || c[0].norm() + c[1].norm() == 0.0));
        }
        // Local error O(Δt³): halving Δt divides it by about 8.
        let ratio = errs[0] / errs[1];
        assert!((7.0..9.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_spinor_stays_zero_and_mass_is_preserved() {
        let model = Model::new(&quiet()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = model.schrodinger_space().len();
        let v: Vec<f64> = (0..model.schrodinger_space().grid().len()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = random_m(&model, &mut rng);
        let zero = SpinorState::zeros(vec![1.0], n);
        assert_eq!(model.schrodinger_step(&zero, &v, Some(&m), 0.01).unwrap(), zero);
        let s = random_spinor(&model, &mut rng);
        let out = model.schrodinger_step(&s, &v, Some(&m), 0.01).unwrap();
        for j in 0..2 {
            let drift = (out.mass_sq(j).sqrt() - s.mass_sq(j).sqrt()).abs() / s.mass_sq(j).sqrt();
            assert!(drift < 1e-12, "drift {drift}");
        }
        let back = model.schrodinger_step(&out, &v, Some(&m), -0.01).unwrap();
        let err = back
            .coeffs
            .iter()
            .flatten()
            .zip(s.coeffs.iter().flatten())
            .map(|(a, b)| (a[0] - b[0]).norm() + (a[1] - b[1]).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "reversibility error {err}");
    }

    fn uniform(model: &Model, v: Vector3<f64>) -> MagnetizationState {
        let mut m = MagnetizationState::zeros(model.magnet_space().len());
        m.coeffs[0] = v * model.magnet_space().grid().length().sqrt();
        m
    }

    #[test]
    fn drift_special_cases() {
        for solve in [LlgSolve::Galerkin, LlgSolve::Pointwise] {
            let cfg = SimulationConfig {
                llg_solve: solve,
                alpha: 0.7,
                ..quiet()
            };
            let model = Model::new(&cfg).unwrap();
            let p = model.magnet_space().grid().len();
            let zero = vec![Vector3::zeros(); p];
            let unit = uniform(&model, Vector3::new(0.0, 0.6, 0.8));
            let d = model.llg_drift(&unit, &zero).unwrap();
            assert!(d.iter().all(|v| v.norm() < 1e-12));

            // m = (0,0,2), k = 1: pointwise drift is A⁻¹(−3m), checked against a direct solve.
            let big = uniform(&model, Vector3::new(0.0, 0.0, 2.0));
            let d = model.llg_drift(&big, &zero).unwrap();
            let a = nalgebra::Matrix3::identity() * 0.7 + cross_matrix(&Vector3::new(0.0, 0.0, 2.0));
            let direct = a.lu().solve(&Vector3::new(0.0, 0.0, -6.0)).unwrap();
            let len = model.magnet_space().grid().length().sqrt();
            assert!((d[0] - direct * len).norm() < 1e-10);
            assert!(d[1..].iter().all(|v| v.norm() < 1e-10));

            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let m = MagnetizationState {
                coeffs: (0..model.magnet_space().len())
                    .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect(),
            };
            let h1 = random_m(&model, &mut rng);
            let h2 = random_m(&model, &mut rng);
            let sum: Vec<_> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
            let lhs = model.llg_drift(&m, &sum).unwrap();
            let a = model.llg_drift(&m, &h1).unwrap();
            let b = model.llg_drift(&m, &h2).unwrap();
            let z = model.llg_drift(&m, &zero).unwrap();
            for i in 0..lhs.len() {
                assert!((lhs[i] - (a[i] + b[i] - z[i])).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn step_closed_forms() {
        let model = Model::new(&SimulationConfig { k: 0.0, ..quiet() }).unwrap();
        let p = model.magnet_space().grid().len();
        let zero = vec![Vector3::zeros(); p];
        let m = uniform(&model, Vector3::new(0.3, -0.2, 0.9));
        let out = model.llg_step(&m, &zero, 0.01, &[0.0, 0.0], &[]).unwrap();
        for (a, b) in out.m.coeffs.iter().zip(&m.coeffs) {
            assert!((a - b).norm() < 1e-14);
        }

        // Additive noise at m = 0: m′ = −(1/α) P[Σ c_i φ_i v_i ΔW_i].
        let cfg = SimulationConfig {
            noise_family: crate::noise::NoiseFamily::Additive,
            jump_amplitude: 0.0,
            alpha: 0.5,
            k: 0.0,
            ..SimulationConfig::default()
        }
        .resolved()
        .unwrap();
        let model = Model::new(&cfg).unwrap();
        let spec = model.noise().unwrap();
        let zero_m = MagnetizationState::zeros(model.magnet_space().len());
        let dw = [0.3, -0.7];
        let out = model.llg_step(&zero_m, &zero, 0.01, &dw, &[]).unwrap();
        let mut kick = vec![Vector3::zeros(); p];
        for (i, w) in dw.iter().enumerate() {
            for (a, g) in kick.iter_mut().zip(spec.g_eval(&zero_m_values(&model), i).unwrap()) {
                *a += g * *w;
            }
        }
        let expect = model.magnet_space().project3(&kick);
        for (a, b) in out.m.coeffs.iter().zip(&expect) {
            assert!((a + b / 0.5).norm() < 1e-12);
        }
    }

    fn zero_m_values(model: &Model) -> Vec<Vector3<f64>> {
        vec![Vector3::zeros(); model.magnet_space().grid().len()]
    }

    #[test]
    fn trivial_paths() {
        let t0 = SimulationConfig { t_end: 0.0, ..quiet() }.resolved().unwrap();
        let out = Model::new(&t0).unwrap().simulate_path(0).unwrap();
        assert_eq!(out.trajectory.len(), 1);

        let still = SimulationConfig {
            k: 0.0,
            stray_field: false,
            anisotropy: false,
            coupling: false,
            t_end: 0.05,
            ..quiet()
        };
        let model = Model::new(&still).unwrap();
        let out = model.simulate_path(0).unwrap();
        assert!(out.failure.is_none());
        // Exchange still acts on the tilt; a uniform start must not move at all.
        let mut cfg = still.clone();
        cfg.m_init_tilt = 0.0;
        let model = Model::new(&cfg).unwrap();
        let out = model.simulate_path(0).unwrap();
        let first = &out.trajectory.magnetizations[0];
        assert!(out.trajectory.magnetizations.iter().all(|m| m == first));
    }

    #[test]
    fn mass_conserved_along_noisy_coupled_path() {
        let cfg = SimulationConfig { t_end: 0.1, ..SimulationConfig::default() }.resolved().unwrap();
        let model = Model::new(&cfg).unwrap();
        let out = model.simulate_path(3).unwrap();
        assert!(out.failure.is_none());
        let m0: Vec<f64> = (0..2).map(|j| out.trajectory.spinors[0].mass_sq(j).sqrt()).collect();
        for s in &out.trajectory.spinors {
            for (j, m) in m0.iter().enumerate() {
                assert!((s.mass_sq(j).sqrt() - m).abs() / m <= 1e-10);
            }
            let table = model.schrodinger_space().table();
            let rho = density(s, table);
            let spin = spin_density(s, table);
            assert!(spin.iter().zip(&rho).all(|(s, r)| s.norm() <= r + 1e-10));
        }
    }

    #[test]
    fn same_seed_same_path_and_inert_jumps_are_bitwise_invisible() {
        let cfg = SimulationConfig { t_end: 0.05, ..SimulationConfig::default() }.resolved().unwrap();
        let model = Model::new(&cfg).unwrap();
        let a = model.simulate_path(1).unwrap().trajectory;
        let b = model.simulate_path(1).unwrap().trajectory;
        assert_eq!(a, b);

        let no_f = Model::new(&SimulationConfig { jump_amplitude: 0.0, ..cfg.clone() }).unwrap();
        let no_jumps = Model::new(&SimulationConfig {
            jump_amplitude: 0.0,
            jump_intensity: 0.0,
            ..cfg.clone()
        })
        .unwrap();
        let x = no_f.simulate_path(2).unwrap().trajectory;
        let y = no_jumps.simulate_path(2).unwrap().trajectory;
        assert_eq!(x.magnetizations, y.magnetizations);
        assert_eq!(x.spinors, y.spinors);
    }

    #[test]
    fn ensemble_is_ordered_and_noise_off_paths_agree() {
        let cfg = SimulationConfig {
            t_end: 0.02,
            ensemble_size: 4,
            ..quiet()
        };
        let out = Model::new(&cfg).unwrap().simulate_ensemble().unwrap();
        assert_eq!(out.iter().map(|o| o.path).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(out.iter().all(|o| o.trajectory == out[0].trajectory));
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        let cfg = SimulationConfig {
            k: 1e8,
            dt: 0.1,
            t_end: 1.0,
            m_init_magnitude: 2.0,
            ..quiet()
        };
        let out = Model::new(&cfg).unwrap().simulate_path(0).unwrap();
        let f = out.failure.expect("explicit penalty step must blow up");
        assert!(f.time > 0.0 && f.time <= 1.0);
    }

    #[test]
    fn noise_off_llg_converges_at_first_order() {
        let base = SimulationConfig {
            coupling: false,
            t_end: 0.2,
            n_modes_magnet: 8,
            grid_points: 128,
            ..quiet()
        };
        let model = Model::new(&base).unwrap();
        let m0 = model.initial_state().m;
        let flat = |m: &MagnetizationState| m.coeffs.iter().flat_map(|v| [v.x, v.y, v.z]).collect::<Vec<f64>>();
        let unflat = |y: &[f64]| MagnetizationState {
            coeffs: y.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
        };
        let reference = rk4(&flat(&m0), 0.2, 4000, |y| {
            flat(&MagnetizationState {
                coeffs: model.llg_velocity(&unflat(y), None).unwrap(),
            })
        });
        let mut errs = Vec::new();
        for dt in [4e-3, 2e-3, 1e-3] {
            let cfg = SimulationConfig { dt, ..base.clone() };
            let out = Model::new(&cfg).unwrap().simulate_path(0).unwrap();
            let end = flat(out.trajectory.magnetizations.last().unwrap());
            errs.push(end.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        }
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((1.7..2.3).contains(&r), "ratio {r}, errors {errs:?}");
        }
    }
}
