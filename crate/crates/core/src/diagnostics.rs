//! Energies, ledgers and invariant checks computed from saved states, plus
//! Monte Carlo reductions over ensembles.
//!
//! Everything here is recomputed from the saved coefficients through the basis
//! and field definitions; the stepper's internals are not consulted except for
//! the accumulated ledgers, which only the stepper can know.

use nalgebra::Vector3;
use serde::Serialize;

use crate::basis::Tabulation;
use crate::dynamics::{Ledgers, Model, PathOutcome, Trajectory};
use crate::error::{Error, Result};
use crate::fields::{density, spin_density, stray_field, MagnetizationState, SpinorState};

/// Version of the trace column layout; bump together with [`SCHEMA_FINGERPRINT`].
pub const SCHEMA_VERSION: u32 = 1;

/// Column template for [`SCHEMA_VERSION`]; `mass_*` expands to one column per wavefunction.
pub const SCHEMA_FINGERPRINT: &str = "time,mass_*,schrodinger_gradient,potential,exchange,l2,anisotropy,stray,\
penalty,noise_energy,coupling,dissipation,wiener_ledger,jump_ledger,saturation,penalty_functional,energy,\
residual,relative_residual,spin_violation";

/// Columns after the masses, in output order.
const FIXED_COLUMNS: [&str; 18] = [
    "schrodinger_gradient",
    "potential",
    "exchange",
    "l2",
    "anisotropy",
    "stray",
    "penalty",
    "noise_energy",
    "coupling",
    "dissipation",
    "wiener_ledger",
    "jump_ledger",
    "saturation",
    "penalty_functional",
    "energy",
    "residual",
    "relative_residual",
    "spin_violation",
];

/// The template the current code writes; must equal [`SCHEMA_FINGERPRINT`].
pub fn column_template() -> String {
    let mut cols = vec!["time", "mass_*"];
    cols.extend(FIXED_COLUMNS);
    cols.join(",")
}

/// Concrete header for `wavefunctions` masses.
pub fn columns(wavefunctions: usize) -> Vec<String> {
    let mut out = vec!["time".to_string()];
    out.extend((0..wavefunctions).map(|j| format!("mass_{j}")));
    out.extend(FIXED_COLUMNS.iter().map(|s| s.to_string()));
    out
}

/// Terms of the combined energy at one state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyComponents {
    /// `Σ_j λ_j |∇ψ_j|²`.
    pub schrodinger_gradient: f64,
    /// `|∇V|²`.
    pub potential: f64,
    /// `|∇m|²`.
    pub exchange: f64,
    /// `∫|m|²`.
    pub l2: f64,
    /// `2∫w(m)`.
    pub anisotropy: f64,
    /// `∫_K |H_s|²`.
    pub stray: f64,
    /// `(k/2)∫(|m|²−1)²`.
    pub penalty: f64,
    /// `Σ_i ∫|G_i(m)|²`.
    pub noise_energy: f64,
    /// `∫_D m·s`.
    pub coupling: f64,
}

impl EnergyComponents {
    /// The bracket of the energy identity:
    /// `Σλ|∇ψ|² + |∇V|² + |m|²_{H¹} + 2∫w + ∫|H_s|² + (k/2)∫(|m|²−1)² + ∫|G(m)|² − ∫m·s − ∫|m|²`.
    pub fn bracket(&self) -> f64 {
        self.schrodinger_gradient
            + self.potential
            + (self.l2 + self.exchange)
            + self.anisotropy
            + self.stray
            + self.penalty
            + self.noise_energy
            - self.coupling
            - self.l2
    }
}

/// `|ψ_j|₂`.
pub fn mass(spinor: &SpinorState, j: usize) -> Result<f64> {
    if j >= spinor.wavefunctions() {
        return Err(Error::invalid(format!(
            "wavefunction index {j} out of range for J = {}",
            spinor.wavefunctions()
        )));
    }
    Ok(spinor.mass_sq(j).sqrt())
}

pub fn energy_components(spinor: &SpinorState, m: &MagnetizationState, model: &Model) -> Result<EnergyComponents> {
    let config = model.config();
    let sch = model.schrodinger_space();
    let mag = model.magnet_space();
    let grid = mag.grid();
    let eig = sch.basis().eigenvalues();
    let schrodinger_gradient = spinor
        .weights
        .iter()
        .zip(&spinor.coeffs)
        .map(|(w, psi)| w * psi.iter().zip(eig).map(|(c, l)| l * (c[0].norm_sqr() + c[1].norm_sqr())).sum::<f64>())
        .sum();
    let rho = density(spinor, sch.table());
    let potential = crate::fields::coulomb_potential(&rho, model.poisson_space())?
        .gradient_energy(model.poisson_space().basis().eigenvalues());

    let values = mag.synthesize3(&m.coeffs);
    let sq: Vec<f64> = values.iter().map(|v| v.norm_squared()).collect();
    let l2 = grid.integrate(&sq);
    let exchange = m.exchange(mag.basis().eigenvalues());
    let anisotropy = if config.anisotropy {
        let w: Vec<f64> = values.iter().map(|v| v.y * v.y + v.z * v.z).collect();
        2.0 * grid.integrate(&w)
    } else {
        0.0
    };
    let stray = if config.stray_field {
        stray_field(&values, grid, config.schrodinger_length)?.energy
    } else {
        0.0
    };
    let pen: Vec<f64> = sq.iter().map(|s| (s - 1.0).powi(2)).collect();
    let penalty = 0.5 * config.k * grid.integrate(&pen);
    let noise_energy = match model.noise() {
        Some(spec) => {
            let mut total = 0.0;
            for i in 0..spec.wiener_dim() {
                total += grid.norm3_sq(&spec.g_eval(&values, i)?);
            }
            total
        }
        None => 0.0,
    };
    let coupling = if config.coupling {
        let s = spin_density(spinor, model.theta_on_magnet());
        grid.inner3(&values, &s)
    } else {
        0.0
    };
    Ok(EnergyComponents {
        schrodinger_gradient,
        potential,
        exchange,
        l2,
        anisotropy,
        stray,
        penalty,
        noise_energy,
        coupling,
    })
}

/// `sup_x ||m(x)| − 1|` on the magnet grid.
pub fn saturation_check(m: &[Vector3<f64>]) -> f64 {
    m.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max)
}

/// `∫_D (|m|² − 1)²`.
pub fn penalty_functional(m: &MagnetizationState, model: &Model) -> f64 {
    let space = model.magnet_space();
    let pen: Vec<f64> = space
        .synthesize3(&m.coeffs)
        .iter()
        .map(|v| (v.norm_squared() - 1.0).powi(2))
        .collect();
    space.grid().integrate(&pen)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpinCheck {
    /// `max_x (|s(x)| − ρ(x))`; nonpositive up to rounding.
    pub max_violation: f64,
    /// `||s| − ρ|_∞`, reported only for a single wavefunction.
    pub equality_gap: Option<f64>,
}

pub fn spin_identity_check(spinor: &SpinorState, table: &Tabulation) -> SpinCheck {
    let rho = density(spinor, table);
    let s = spin_density(spinor, table);
    let max_violation = s.iter().zip(&rho).map(|(s, r)| s.norm() - r).fold(f64::NEG_INFINITY, f64::max);
    let equality_gap = (spinor.wavefunctions() == 1)
        .then(|| s.iter().zip(&rho).map(|(s, r)| (s.norm() - r).abs()).fold(0.0, f64::max));
    SpinCheck {
        max_violation: if max_violation.is_finite() { max_violation } else { 0.0 },
        equality_gap,
    }
}

/// One save point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub masses: Vec<f64>,
    pub energy: EnergyComponents,
    pub ledgers: Ledgers,
    pub saturation: f64,
    pub penalty_functional: f64,
    /// Bracket of the energy identity at this time.
    pub bracket: f64,
    /// Bracket + dissipation + ledgers − bracket at `t = 0`.
    pub residual: f64,
    /// Residual over `|bracket(0)|` (plain residual when that vanishes).
    pub relative_residual: f64,
    pub spin_violation: f64,
}

impl DiagnosticsRecord {
    /// Values in [`columns`] order.
    pub fn values(&self) -> Vec<f64> {
        let e = &self.energy;
        let mut out = vec![self.time];
        out.extend(&self.masses);
        out.extend([
            e.schrodinger_gradient,
            e.potential,
            e.exchange,
            e.l2,
            e.anisotropy,
            e.stray,
            e.penalty,
            e.noise_energy,
            e.coupling,
            self.ledgers.dissipation,
            self.ledgers.wiener,
            self.ledgers.jump,
            self.saturation,
            self.penalty_functional,
            self.bracket,
            self.residual,
            self.relative_residual,
            self.spin_violation,
        ]);
        out
    }
}

/// Diagnostics at every save point of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsTrace {
    pub records: Vec<DiagnosticsRecord>,
}

impl DiagnosticsTrace {
    pub fn from_trajectory(trajectory: &Trajectory, model: &Model) -> Result<Self> {
        let mut records = Vec::with_capacity(trajectory.len());
        let mut initial = None;
        for i in 0..trajectory.len() {
            let spinor = &trajectory.spinors[i];
            let m = &trajectory.magnetizations[i];
            let ledgers = trajectory.ledgers[i];
            let energy = energy_components(spinor, m, model)?;
            let bracket = energy.bracket();
            let e0 = *initial.get_or_insert(bracket);
            let residual = if i == 0 {
                0.0
            } else {
                bracket + ledgers.dissipation + ledgers.wiener + ledgers.jump - e0
            };
            let relative_residual = if e0 != 0.0 { residual / e0.abs() } else { residual };
            let values = model.magnet_space().synthesize3(&m.coeffs);
            let masses = (0..spinor.wavefunctions()).map(|j| spinor.mass_sq(j).sqrt()).collect();
            records.push(DiagnosticsRecord {
                time: trajectory.times[i],
                masses,
                energy,
                ledgers,
                saturation: saturation_check(&values),
                penalty_functional: penalty_functional(m, model),
                bracket,
                residual,
                relative_residual,
                spin_violation: spin_identity_check(spinor, model.schrodinger_space().table()).max_violation,
            });
        }
        Ok(DiagnosticsTrace { records })
    }

    /// Worst relative mass drift over save points and wavefunctions.
    pub fn max_mass_drift(&self) -> f64 {
        let Some(first) = self.records.first() else { return 0.0 };
        self.records
            .iter()
            .flat_map(|r| r.masses.iter().zip(&first.masses).map(|(m, m0)| (m - m0).abs() / m0))
            .fold(0.0, f64::max)
    }

    /// `max_t ∫(|m|²−1)²` over save points.
    pub fn sup_penalty(&self) -> f64 {
        self.records.iter().map(|r| r.penalty_functional).fold(0.0, f64::max)
    }

    pub fn final_record(&self) -> Option<&DiagnosticsRecord> {
        self.records.last()
    }
}

/// Relative energy residual at `t`, which must be a save point.
pub fn combined_energy_residual(trace: &DiagnosticsTrace, t: f64) -> Result<f64> {
    trace
        .records
        .iter()
        .find(|r| (r.time - t).abs() <= 1e-9 * t.abs().max(1.0))
        .map(|r| r.relative_residual)
        .ok_or_else(|| Error::invalid(format!("t = {t} is not a save point")))
}

/// Sample mean and standard error; the error is absent for a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: Option<f64>,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = (n > 1).then(|| {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Estimate { mean, stderr, samples: n }
    }

    /// `mean / stderr`; zero when both vanish (a ledger that is identically zero).
    pub fn z_score(&self) -> f64 {
        match self.stderr {
            Some(se) if se > 0.0 => self.mean / se,
            _ if self.mean == 0.0 => 0.0,
            _ => f64::INFINITY,
        }
    }
}

/// `E[max_t ∫(|m|²−1)²]` over completed paths.
pub fn penalty_expectation(traces: &[DiagnosticsTrace]) -> Result<Estimate> {
    if traces.is_empty() {
        return Err(Error::invalid("no completed paths"));
    }
    let sups: Vec<f64> = traces.iter().map(DiagnosticsTrace::sup_penalty).collect();
    Ok(Estimate::from_samples(&sups))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerStat {
    pub mean: f64,
    pub stderr: f64,
    pub z: f64,
    /// Every path recorded exactly zero (noise or jumps switched off).
    pub trivially_zero: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub paths: usize,
    pub wiener: LedgerStat,
    pub jump: LedgerStat,
}

/// Final-time ledgers across paths; needs at least 16 paths.
pub fn martingale_report(traces: &[DiagnosticsTrace]) -> Result<MartingaleReport> {
    if traces.len() < 16 {
        return Err(Error::invalid(format!(
            "martingale statistics need at least 16 paths, got {}",
            traces.len()
        )));
    }
    let finals: Vec<Ledgers> = traces
        .iter()
        .map(|t| t.final_record().map(|r| r.ledgers).unwrap_or_default())
        .collect();
    let stat = |xs: Vec<f64>| {
        let e = Estimate::from_samples(&xs);
        LedgerStat {
            mean: e.mean,
            stderr: e.stderr.unwrap_or(0.0),
            z: e.z_score(),
            trivially_zero: xs.iter().all(|x| *x == 0.0),
        }
    };
    Ok(MartingaleReport {
        paths: traces.len(),
        wiener: stat(finals.iter().map(|l| l.wiener).collect()),
        jump: stat(finals.iter().map(|l| l.jump).collect()),
    })
}

/// Per-save-point mean and standard error of every trace column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    /// Absent for a single completed path.
    pub stderr: Option<Vec<Vec<f64>>>,
    pub completed: usize,
    pub failed: usize,
}

/// Reduces completed paths in path order, so the result does not depend on
/// which thread finished first.
pub fn ensemble_stats(outcomes: &[PathOutcome], traces: &[DiagnosticsTrace], wavefunctions: usize) -> EnsembleStats {
    let completed: Vec<&DiagnosticsTrace> = outcomes
        .iter()
        .zip(traces)
        .filter(|(o, _)| o.failure.is_none())
        .map(|(_, t)| t)
        .collect();
    let failed = outcomes.len() - completed.len();
    let columns = columns(wavefunctions);
    let Some(first) = completed.first() else {
        return EnsembleStats {
            columns,
            times: Vec::new(),
            mean: Vec::new(),
            stderr: None,
            completed: 0,
            failed,
        };
    };
    let times: Vec<f64> = first.records.iter().map(|r| r.time).collect();
    let mut mean = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let rows: Vec<Vec<f64>> = completed.iter().map(|t| t.records[i].values()).collect();
        let (mu, se): (Vec<f64>, Vec<f64>) = (0..columns.len())
            .map(|c| {
                let e = Estimate::from_samples(&rows.iter().map(|r| r[c]).collect::<Vec<_>>());
                (e.mean, e.stderr.unwrap_or(0.0))
            })
            .unzip();
        mean.push(mu);
        stderr.push(se);
    }
    EnsembleStats {
        columns,
        times,
        mean,
        stderr: (completed.len() > 1).then_some(stderr),
        completed: completed.len(),
        failed,
    }
}
