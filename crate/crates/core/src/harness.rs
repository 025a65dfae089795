//! Orchestration: single paths, ensembles, sweeps and the invariant suite, with
//! their on-disk artifacts (`trace.csv`, `summary.json`, `manifest.json`).
//!
//! All computation happens before any file is touched; files are then written
//! one after another from the calling thread, each through a temporary file
//! and a rename.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{EigenBasis, Grid, SpectralSpace};
use crate::config::{SimulationConfig, SweepParameter};
use crate::diagnostics::{
    self, column_template, columns, ensemble_stats, martingale_report, penalty_expectation, spin_identity_check,
    DiagnosticsTrace, EnsembleStats, Estimate, MartingaleReport, SCHEMA_FINGERPRINT, SCHEMA_VERSION,
};
use crate::dynamics::{Model, PathFailure, PathOutcome};
use crate::error::{Error, Result};
use crate::fields::{coulomb_potential, cross_matrix, gilbert_inverse, inf_norm, stray_field, MagnetizationState};
use crate::noise::{path_rng, sample_jumps, wiener_increments, NoiseSpec, StreamPurpose};
use crate::oracle::{fd_laplacian4, numerov_dirichlet, relative_l2, rk4, stray_fd};

pub const SOFTWARE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Everything needed to rerun a command bit for bit, plus run metadata.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub software_version: String,
    pub command: String,
    pub seed: u64,
    pub config: SimulationConfig,
    pub started_unix_seconds: f64,
    pub wall_seconds: f64,
    pub failures: Vec<PathFailure>,
}

impl RunManifest {
    fn new(command: &str, config: &SimulationConfig, started: SystemTime, clock: Instant) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            software_version: SOFTWARE_VERSION.to_string(),
            command: command.to_string(),
            seed: config.seed,
            config: config.clone(),
            started_unix_seconds: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
            wall_seconds: clock.elapsed().as_secs_f64(),
            failures: Vec::new(),
        }
    }
}

/// Reads a TOML config, a JSON config, or the `config` of a `manifest.json`.
pub fn load_config(path: &Path) -> Result<SimulationConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let inner = match value.get("config") {
            Some(c) if value.get("schema_version").is_some() => c.clone(),
            _ => value,
        };
        SimulationConfig::from_json(&inner.to_string())
    } else {
        SimulationConfig::parse(&text)
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("summary types serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// CSV with the given header; floats use Rust's shortest round-trip form.
pub fn csv_text(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Parses a file written by [`csv_text`].
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty CSV"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|c| c.parse::<f64>().map_err(|e| Error::invalid(format!("bad CSV cell `{c}`: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

fn traces_of(outcomes: &[PathOutcome], model: &Model) -> Result<Vec<DiagnosticsTrace>> {
    outcomes
        .par_iter()
        .map(|o| DiagnosticsTrace::from_trajectory(&o.trajectory, model))
        .collect()
}

fn failures_of(outcomes: &[PathOutcome]) -> Vec<PathFailure> {
    outcomes.iter().filter_map(|o| o.failure.clone()).collect()
}

/// Result of a command; `failures` non-empty means exit status 1.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub failures: Vec<PathFailure>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct SimulateSummary<'a> {
    schema_version: u32,
    status: &'static str,
    failure: Option<&'a PathFailure>,
    save_points: usize,
    max_mass_drift: f64,
    final_relative_residual: Option<f64>,
    sup_penalty_functional: f64,
    final_record: Option<&'a diagnostics::DiagnosticsRecord>,
}

/// One path (index 0). On numerical failure the trace holds the save points
/// reached and the summary and manifest record the failing time.
pub fn run_simulate(config: &SimulationConfig, out: &Path) -> Result<RunReport> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let model = Model::new(config)?;
    let outcome = model.simulate_path(0)?;
    let trace = DiagnosticsTrace::from_trajectory(&outcome.trajectory, &model)?;
    let rows: Vec<Vec<f64>> = trace.records.iter().map(|r| r.values()).collect();
    write_atomic(&out.join("trace.csv"), csv_text(&columns(config.wavefunctions()), &rows).as_bytes())?;
    let summary = SimulateSummary {
        schema_version: SCHEMA_VERSION,
        status: if outcome.failure.is_some() { "failed" } else { "ok" },
        failure: outcome.failure.as_ref(),
        save_points: trace.records.len(),
        max_mass_drift: trace.max_mass_drift(),
        final_relative_residual: trace.final_record().map(|r| r.relative_residual),
        sup_penalty_functional: trace.sup_penalty(),
        final_record: trace.final_record(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    let mut manifest = RunManifest::new("simulate", config, started, clock);
    manifest.failures = failures_of(std::slice::from_ref(&outcome));
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunReport {
        failures: manifest.failures,
        out_dir: out.to_path_buf(),
    })
}

/// Ensemble results before serialization.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub schema_version: u32,
    pub stats: EnsembleStats,
    pub penalty_expectation: Option<Estimate>,
    /// Present when at least 16 paths completed.
    pub martingale: Option<MartingaleReport>,
    /// Mean over paths of the time-averaged saturation deviation.
    pub mean_saturation: Option<f64>,
    pub failures: Vec<PathFailure>,
}

pub fn ensemble_summary(model: &Model) -> Result<EnsembleSummary> {
    let outcomes = model.simulate_ensemble()?;
    let traces = traces_of(&outcomes, model)?;
    let stats = ensemble_stats(&outcomes, &traces, model.config().wavefunctions());
    let completed: Vec<DiagnosticsTrace> = outcomes
        .iter()
        .zip(traces)
        .filter(|(o, _)| o.failure.is_none())
        .map(|(_, t)| t)
        .collect();
    let mean_saturation = (!completed.is_empty()).then(|| {
        completed
            .iter()
            .map(|t| t.records.iter().map(|r| r.saturation).sum::<f64>() / t.records.len() as f64)
            .sum::<f64>()
            / completed.len() as f64
    });
    Ok(EnsembleSummary {
        schema_version: SCHEMA_VERSION,
        stats,
        penalty_expectation: penalty_expectation(&completed).ok(),
        martingale: martingale_report(&completed).ok(),
        mean_saturation,
        failures: failures_of(&outcomes),
    })
}

/// The CSV of per-save-point ensemble means.
pub fn ensemble_csv(summary: &EnsembleSummary) -> String {
    csv_text(&summary.stats.columns, &summary.stats.mean)
}

pub fn run_ensemble(config: &SimulationConfig, out: &Path) -> Result<RunReport> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let model = Model::new(config)?;
    let summary = ensemble_summary(&model)?;
    write_atomic(&out.join("trace.csv"), ensemble_csv(&summary).as_bytes())?;
    write_json(&out.join("summary.json"), &summary)?;
    let mut manifest = RunManifest::new("ensemble", config, started, clock);
    manifest.failures = summary.failures.clone();
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunReport {
        failures: manifest.failures,
        out_dir: out.to_path_buf(),
    })
}

/// One row per swept value.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub completed: usize,
    pub failed: usize,
    pub penalty_expectation: Option<Estimate>,
    pub mean_saturation: Option<f64>,
    /// Ensemble mean of the final relative energy residual.
    pub final_relative_residual: Option<f64>,
    pub wiener_z: Option<f64>,
    pub jump_z: Option<f64>,
    /// Previous row's tracked diagnostic over this row's: the penalty expectation
    /// for `k`, the absolute final residual for `dt`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn csv(&self) -> String {
        let header: Vec<String> = [
            "value",
            "completed",
            "failed",
            "penalty_mean",
            "penalty_stderr",
            "mean_saturation",
            "final_relative_residual",
            "wiener_z",
            "jump_z",
            "ratio",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let nan = f64::NAN;
        let rows: Vec<Vec<f64>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.value,
                    r.completed as f64,
                    r.failed as f64,
                    r.penalty_expectation.map_or(nan, |e| e.mean),
                    r.penalty_expectation.and_then(|e| e.stderr).unwrap_or(nan),
                    r.mean_saturation.unwrap_or(nan),
                    r.final_relative_residual.unwrap_or(nan),
                    r.wiener_z.unwrap_or(nan),
                    r.jump_z.unwrap_or(nan),
                    r.ratio.unwrap_or(nan),
                ]
            })
            .collect();
        csv_text(&header, &rows)
    }
}

/// `config` with one parameter replaced and revalidated.
pub fn with_parameter(config: &SimulationConfig, parameter: SweepParameter, value: f64) -> Result<SimulationConfig> {
    let mut c = config.clone();
    match parameter {
        SweepParameter::K => c.k = value,
        SweepParameter::Dt => c.dt = value,
        SweepParameter::EnsembleSize => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::config("sweep_values", format!("ensemble size {value} is not a positive integer")));
            }
            c.ensemble_size = value as usize;
        }
    }
    c.sweep_parameter = None;
    c.sweep_values.clear();
    c.resolved()
}

/// One ensemble per value. Every ensemble uses the same master seed, so path
/// `i` sees the same Wiener and jump streams for every value of `k` (and of
/// the ensemble size); this couples the runs and reduces the variance of the
/// ratios between rows.
pub fn sweep(config: &SimulationConfig, parameter: SweepParameter, values: &[f64]) -> Result<(SweepTable, Vec<EnsembleSummary>)> {
    if values.is_empty() {
        return Err(Error::config("sweep_values", "at least one value is required"));
    }
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut summaries = Vec::new();
    for &value in values {
        let cfg = with_parameter(config, parameter, value)?;
        let model = Model::new(&cfg)?;
        let summary = ensemble_summary(&model)?;
        let residual_col = summary.stats.columns.iter().position(|c| c == "relative_residual");
        let final_relative_residual = summary.stats.mean.last().zip(residual_col).map(|(row, c)| row[c]);
        let tracked = match parameter {
            SweepParameter::K => summary.penalty_expectation.map(|e| e.mean),
            SweepParameter::Dt => final_relative_residual.map(f64::abs),
            SweepParameter::EnsembleSize => None,
        };
        let ratio = match (rows.last(), tracked) {
            (Some(prev), Some(cur)) => {
                let prev_tracked = match parameter {
                    SweepParameter::K => prev.penalty_expectation.map(|e| e.mean),
                    SweepParameter::Dt => prev.final_relative_residual.map(f64::abs),
                    SweepParameter::EnsembleSize => None,
                };
                prev_tracked.map(|p| p / cur)
            }
            _ => None,
        };
        rows.push(SweepRow {
            value,
            completed: summary.stats.completed,
            failed: summary.stats.failed,
            penalty_expectation: summary.penalty_expectation,
            mean_saturation: summary.mean_saturation,
            final_relative_residual,
            wiener_z: summary.martingale.map(|m| m.wiener.z),
            jump_z: summary.martingale.map(|m| m.jump.z),
            ratio,
        });
        summaries.push(summary);
    }
    Ok((SweepTable { parameter, rows }, summaries))
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    schema_version: u32,
    table: &'a SweepTable,
    ensembles: &'a [EnsembleSummary],
}

pub fn run_sweep(config: &SimulationConfig, parameter: SweepParameter, values: &[f64], out: &Path) -> Result<RunReport> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let (table, summaries) = sweep(config, parameter, values)?;
    write_atomic(&out.join("sweep.csv"), table.csv().as_bytes())?;
    write_json(
        &out.join("summary.json"),
        &SweepSummary {
            schema_version: SCHEMA_VERSION,
            table: &table,
            ensembles: &summaries,
        },
    )?;
    let mut manifest = RunManifest::new("sweep", config, started, clock);
    manifest.config.sweep_parameter = Some(parameter);
    manifest.config.sweep_values = values.to_vec();
    manifest.failures = summaries.iter().flat_map(|s| s.failures.clone()).collect();
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunReport {
        failures: manifest.failures,
        out_dir: out.to_path_buf(),
    })
}

/// One invariant of the verification suite.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: String,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, measured: f64, tolerance: &str, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            measured,
            tolerance: tolerance.to_string(),
            detail: detail.into(),
        }
    }

    fn at_most(name: &str, measured: f64, bound: f64, detail: impl Into<String>) -> Self {
        Check::new(name, measured <= bound, measured, &format!("<= {bound:e}"), detail)
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<36} measured {:<24e} tolerance {}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// Test hooks for the verification suite.
#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Replace the Gilbert inverse under test by its transpose, i.e. the inverse
    /// of `αI − [m]_×`. Only the inverse check may fail under this fault.
    pub corrupt_gilbert_inverse: bool,
}

/// Relative errors of the spectral Poisson solve on `[0, length]` against a
/// Numerov solve and against a fourth-order finite-difference residual, for
/// `ρ = sin(πx/L) exp(cos(πx/L))` on `points` nodes.
pub fn poisson_oracle(length: f64, points: usize) -> Result<(f64, f64)> {
    let grid = Grid::new(0.0, length, points)?;
    let space = SpectralSpace::new(EigenBasis::dirichlet(points / 4, 0.0, length)?, grid.clone())?;
    let rho: Vec<f64> = grid
        .points()
        .iter()
        .map(|x| (PI * x / length).sin() * (PI * x / length).cos().exp())
        .collect();
    let v = coulomb_potential(&rho, &space)?.values;
    let reference = numerov_dirichlet(&rho, length);
    let lap = fd_laplacian4(&v, grid.spacing());
    let minus_lap: Vec<f64> = lap.iter().map(|x| -x).collect();
    Ok((relative_l2(&v, &reference), relative_l2(&minus_lap, &rho)))
}

/// Relative error of the stray field against a Numerov solve of `u'' = (m₁χ_D)'`
/// on a `points`-node grid of `[0, length]`, with the magnet occupying the nodes
/// `points/4 ..= 3 points/4` and `m₁ = sin⁴(π(x−a)/|D|)`; also returns the gap
/// in `−∫m·H_s = ∫|H_s|²`.
pub fn stray_oracle(length: f64, points: usize) -> Result<(f64, f64)> {
    let h = length / (points - 1) as f64;
    let (lo, hi) = (points / 4, 3 * points / 4);
    let (a, b) = (lo as f64 * h, hi as f64 * h);
    let width = b - a;
    let magnet = Grid::new(a, b, hi - lo + 1)?;
    let m: Vec<Vector3<f64>> = magnet
        .points()
        .iter()
        .map(|x| {
            let t = PI * (x - a) / width;
            Vector3::new(t.sin().powi(4), 0.3 * t.cos(), -0.2)
        })
        .collect();
    let hs = stray_field(&m, &magnet, length)?;
    let dg = |x: f64| {
        if x <= a || x >= b {
            0.0
        } else {
            let t = PI * (x - a) / width;
            4.0 * t.sin().powi(3) * t.cos() * PI / width
        }
    };
    let fd = stray_fd(dg, length, points);
    let ours: Vec<f64> = hs.field.iter().map(|v| v.x).collect();
    let rel = relative_l2(&ours, &fd[lo..=hi]);
    let gap = (-magnet.inner3(&m, &hs.field) - hs.energy).abs();
    Ok((rel, gap))
}

/// Worst `|A⁻¹(αI + [m]_×) − I|` and worst `‖A⁻¹‖_∞ · α/2` over `samples` random
/// inputs with `|m_i| ≤ 3`, `α ∈ [0.1, 2]`.
pub fn gilbert_inverse_stats(samples: usize, seed: u64, corrupt: bool) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut id_err, mut norm_ratio) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let m = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let alpha = rng.random_range(0.1..2.0);
        let mut inv = gilbert_inverse(&m, alpha)?;
        if corrupt {
            inv = inv.transpose();
        }
        let prod = inv * (Matrix3::identity() * alpha + cross_matrix(&m));
        id_err = id_err.max((prod - Matrix3::identity()).amax());
        norm_ratio = norm_ratio.max(inf_norm(&inv) * alpha / 2.0);
    }
    Ok((id_err, norm_ratio))
}

/// Final-time error of the noise-free, uncoupled LLG stepper against RK4 for
/// `dt, dt/2, dt/4` over `t_end`; returns the three errors.
pub fn llg_convergence(config: &SimulationConfig, dt: f64, t_end: f64) -> Result<[f64; 3]> {
    let base = SimulationConfig {
        noise: false,
        coupling: false,
        t_end,
        dt,
        save_every: 1,
        ensemble_size: 1,
        ..config.clone()
    }
    .resolved()?;
    let model = Model::new(&base)?;
    let flat = |m: &MagnetizationState| m.coeffs.iter().flat_map(|v| [v.x, v.y, v.z]).collect::<Vec<f64>>();
    let unflat = |y: &[f64]| MagnetizationState {
        coeffs: y.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
    };
    let steps = base.steps();
    let reference = rk4(&flat(&model.initial_state().m), t_end, 16 * steps, |y| {
        model
            .llg_velocity(&unflat(y), None)
            .map(|v| flat(&MagnetizationState { coeffs: v }))
            .unwrap_or_else(|_| vec![f64::NAN; y.len()])
    });
    let mut errs = [0.0; 3];
    for (i, scale) in [1.0, 0.5, 0.25].iter().enumerate() {
        let cfg = SimulationConfig { dt: dt * scale, ..base.clone() }.resolved()?;
        let out = Model::new(&cfg)?.simulate_path(0)?;
        if let Some(f) = out.failure {
            return Err(Error::NumericalFailure {
                time: f.time,
                reason: f.reason,
            });
        }
        let end = flat(out.trajectory.magnetizations.last().expect("initial state is saved"));
        errs[i] = end.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    }
    Ok(errs)
}

/// Final relative energy residuals of the noise-free system at `dt, dt/2, dt/4`.
pub fn energy_refinement(config: &SimulationConfig, dt: f64) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (i, scale) in [1.0, 0.5, 0.25].iter().enumerate() {
        let cfg = SimulationConfig {
            noise: false,
            dt: dt * scale,
            save_every: 1,
            ensemble_size: 1,
            ..config.clone()
        }
        .resolved()?;
        let model = Model::new(&cfg)?;
        let path = model.simulate_path(0)?;
        if let Some(f) = path.failure {
            return Err(Error::NumericalFailure {
                time: f.time,
                reason: f.reason,
            });
        }
        let trace = DiagnosticsTrace::from_trajectory(&path.trajectory, &model)?;
        out[i] = trace.final_record().map_or(0.0, |r| r.relative_residual);
    }
    Ok(out)
}

fn ratios_within(values: &[f64], lo: f64, hi: f64) -> (bool, f64) {
    let ratios: Vec<f64> = values.windows(2).map(|w| w[0].abs() / w[1].abs()).collect();
    let ok = ratios.iter().all(|r| (lo..=hi).contains(r));
    let worst = ratios
        .iter()
        .copied()
        .max_by(|a, b| (a - 0.5 * (lo + hi)).abs().total_cmp(&(b - 0.5 * (lo + hi)).abs()))
        .unwrap_or(f64::NAN);
    (ok, worst)
}

/// A shorter horizon of at most `steps` steps, keeping `dt`.
fn truncated(config: &SimulationConfig, steps: usize) -> SimulationConfig {
    let n = config.steps().min(steps).max(1);
    let save = if n.is_multiple_of(config.save_every) { config.save_every } else { 1 };
    SimulationConfig {
        t_end: n as f64 * config.dt,
        save_every: save,
        ..config.clone()
    }
}

/// Runs the ensemble of `config` and the full invariant suite. The returned
/// CSV is the ensemble-mean trace of the configured run.
pub fn verify(config: &SimulationConfig, options: VerifyOptions) -> Result<(VerifyReport, String, Vec<PathFailure>)> {
    let mut checks = Vec::new();
    let model = Model::new(config)?;
    let outcomes = model.simulate_ensemble()?;
    let traces = traces_of(&outcomes, &model)?;
    let failures = failures_of(&outcomes);
    let stats = ensemble_stats(&outcomes, &traces, config.wavefunctions());
    let csv = csv_text(&stats.columns, &stats.mean);

    checks.push(Check::at_most(
        "dynamics.path_failures",
        failures.len() as f64,
        0.0,
        match failures.first() {
            Some(f) => format!("path {} failed at t = {}: {}", f.path, f.time, f.reason),
            None => format!("{} paths completed", outcomes.len()),
        },
    ));

    // basis
    let spaces = [model.schrodinger_space(), model.poisson_space(), model.magnet_space()];
    let mut gram = 0.0f64;
    for space in spaces {
        let g = space.grid();
        let t = space.table();
        for a in 0..space.len() {
            for b in a..space.len() {
                let prod: Vec<f64> = t.row(a).iter().zip(t.row(b)).map(|(x, y)| x * y).collect();
                gram = gram.max((g.integrate(&prod) - if a == b { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    checks.push(Check::at_most("basis.orthonormality", gram, 1e-12, "max Gram deviation, all three bases"));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut round = 0.0f64;
    for space in spaces {
        let c: Vec<f64> = (0..space.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = space.project(&space.synthesize(&c)?)?;
        round = round.max(c.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    checks.push(Check::at_most("basis.round_trip", round, 1e-10, "project(synthesize(c)) − c"));
    let mb = model.magnet_space().basis();
    let endpoint = (0..mb.len())
        .map(|i| mb.derivative(i, mb.start()).abs().max(mb.derivative(i, mb.end()).abs()))
        .fold(0.0, f64::max);
    checks.push(Check::at_most("basis.neumann_endpoint_derivative", endpoint, 1e-10, "max |e_h'| at the magnet ends"));

    // noise
    let noise_params = config.noise_params();
    let spec = NoiseSpec::new(&noise_params, model.magnet_space().grid())?;
    let draws = 1_000_000 / spec.wiener_dim().max(1);
    let incs = wiener_increments(&spec, config.dt, draws, &mut path_rng(config.seed, u64::MAX / 8, StreamPurpose::Wiener))?;
    let flat: Vec<f64> = incs.into_iter().flatten().collect();
    let var = flat.iter().map(|x| x * x).sum::<f64>() / flat.len() as f64;
    checks.push(Check::at_most(
        "noise.wiener_variance",
        (var / config.dt - 1.0).abs(),
        0.01,
        format!("relative deviation of sample variance over {} draws", flat.len()),
    ));
    let horizon = if config.t_end > 0.0 { config.t_end } else { 1.0 };
    let expected = spec.jump_intensity() * horizon;
    if expected == 0.0 {
        checks.push(Check::new("noise.jump_count_mean", true, 0.0, "== 0", "jump intensity is zero: no jumps, trivially"));
    } else {
        let paths = 100_000u64;
        let total: usize = (0..paths)
            .into_par_iter()
            .map(|p| {
                sample_jumps(&spec, horizon, &mut path_rng(config.seed, p, StreamPurpose::Jumps)).map(|j| j.events.len())
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum();
        let mean = total as f64 / paths as f64;
        checks.push(Check::at_most(
            "noise.jump_count_mean",
            (mean / expected - 1.0).abs(),
            0.01,
            format!("mean count {mean} vs λ_P·T = {expected} over {paths} paths"),
        ));
    }

    // fields
    let (id_err, norm_ratio) = gilbert_inverse_stats(1000, config.seed, options.corrupt_gilbert_inverse)?;
    checks.push(Check::new(
        "fields.gilbert_inverse",
        id_err <= 1e-12 && norm_ratio <= 1.0,
        id_err,
        "<= 1e-12 and ‖A⁻¹‖_∞ <= 2/α",
        format!("worst ‖A⁻¹‖_∞ α/2 = {norm_ratio}"),
    ));
    let (poisson_rel, poisson_res) = poisson_oracle(config.schrodinger_length, 512)?;
    checks.push(Check::at_most("fields.poisson_vs_numerov", poisson_rel, 1e-6, "512-point grid"));
    checks.push(Check::at_most("fields.poisson_fd_residual", poisson_res, 1e-8, "|−ΔV − ρ| / |ρ|, fourth-order stencil"));
    let (stray_rel, _) = stray_oracle(config.schrodinger_length, 512)?;
    checks.push(Check::at_most("fields.stray_vs_numerov", stray_rel, 1e-6, "512-point grid, sin⁴ bump"));

    let mut stray_gap = 0.0f64;
    let mut spin_violation = f64::NEG_INFINITY;
    let mut parseval = 0.0f64;
    let mag = model.magnet_space();
    let sch = model.schrodinger_space();
    for outcome in &outcomes {
        let tr = &outcome.trajectory;
        for (spinor, m) in tr.spinors.iter().zip(&tr.magnetizations) {
            let values = mag.synthesize3(&m.coeffs);
            let hs = stray_field(&values, mag.grid(), config.schrodinger_length)?;
            stray_gap = stray_gap.max((-mag.grid().inner3(&values, &hs.field) - hs.energy).abs());
            spin_violation = spin_violation.max(spin_identity_check(spinor, sch.table()).max_violation);
            let psi = spinor.evaluate(sch.table());
            for (j, p) in psi.iter().enumerate() {
                let sq: Vec<f64> = p.iter().map(|c| c[0].norm_sqr() + c[1].norm_sqr()).collect();
                parseval = parseval.max((sch.grid().integrate(&sq) - spinor.mass_sq(j)).abs());
            }
            parseval = parseval.max((mag.grid().norm3_sq(&values) - m.l2_sq()).abs());
        }
    }
    checks.push(Check::at_most("fields.stray_identity", stray_gap, 1e-8, "max |−∫m·H_s − ∫|H_s|²| over saved states"));
    checks.push(Check::at_most("fields.spin_bound", spin_violation, 1e-10, "max (|s| − ρ) over saved states"));
    checks.push(Check::at_most("diagnostics.quadrature_vs_parseval", parseval, 1e-10, "|ψ_j|² and ∫|m|² both ways"));

    // dynamics
    let drift = traces.iter().map(DiagnosticsTrace::max_mass_drift).fold(0.0, f64::max);
    checks.push(Check::at_most("dynamics.mass_conservation", drift, 1e-10, "max relative drift, all paths and j"));
    let short = truncated(config, 50).resolved()?;
    let short_model = Model::new(&short)?;
    let once = short_model.simulate_path(0)?;
    let again = short_model.simulate_path(0)?;
    checks.push(Check::new(
        "dynamics.determinism",
        once.trajectory == again.trajectory,
        0.0,
        "identical",
        "path 0 simulated twice",
    ));
    let inert = |intensity: f64| -> Result<PathOutcome> {
        let cfg = SimulationConfig {
            noise: true,
            jump_amplitude: 0.0,
            jump_intensity: intensity,
            ..short.clone()
        }
        .resolved()?;
        Model::new(&cfg)?.simulate_path(0)
    };
    let (with, without) = (inert(config.jump_intensity.max(1.0))?, inert(0.0)?);
    checks.push(Check::new(
        "dynamics.jump_inertness",
        with.trajectory.magnetizations == without.trajectory.magnetizations
            && with.trajectory.spinors == without.trajectory.spinors,
        0.0,
        "bitwise equal",
        "F ≡ 0 with λ_P > 0 against λ_P = 0",
    ));
    let conv_steps = config.steps().clamp(1, 200);
    let conv = llg_convergence(config, config.dt, conv_steps as f64 * config.dt)?;
    let (ok, worst) = ratios_within(&conv, 1.7, 2.3);
    checks.push(Check::new(
        "dynamics.noise_off_convergence",
        ok,
        worst,
        "ratio in [1.7, 2.3]",
        format!("errors at dt, dt/2, dt/4: {conv:?}"),
    ));

    // diagnostics
    let first = traces.iter().map(|t| t.records.first().map_or(0.0, |r| r.residual.abs())).fold(0.0, f64::max);
    checks.push(Check::new("diagnostics.residual_at_zero", first == 0.0, first, "== 0", "every path"));
    let monotone = traces
        .iter()
        .all(|t| t.records.windows(2).all(|w| w[1].ledgers.dissipation >= w[0].ledgers.dissipation));
    checks.push(Check::new("diagnostics.dissipation_monotone", monotone, 0.0, "nondecreasing", "every path"));
    if config.steps() >= 1 {
        let refinement = energy_refinement(config, config.dt)?;
        let (ok, worst) = ratios_within(&refinement, 1.5, 3.0);
        checks.push(Check::new(
            "diagnostics.energy_refinement",
            ok,
            worst,
            "ratio in [1.5, 3]",
            format!("noise-off relative residuals at T for dt, dt/2, dt/4: {refinement:?}"),
        ));
    } else {
        checks.push(Check::new("diagnostics.energy_refinement", true, 0.0, "n/a", "T = 0: nothing to refine"));
    }
    if !config.noise {
        checks.push(Check::new(
            "diagnostics.martingale_wiener",
            traces.iter().all(|t| t.records.iter().all(|r| r.ledgers.wiener == 0.0)),
            0.0,
            "== 0",
            "noise off: ledger identically zero",
        ));
        checks.push(Check::new(
            "diagnostics.martingale_jump",
            traces.iter().all(|t| t.records.iter().all(|r| r.ledgers.jump == 0.0)),
            0.0,
            "== 0",
            "noise off: ledger identically zero",
        ));
    } else {
        let report = if stats.completed >= 16 {
            let done: Vec<DiagnosticsTrace> = outcomes
                .iter()
                .zip(&traces)
                .filter(|(o, _)| o.failure.is_none())
                .map(|(_, t)| t.clone())
                .collect();
            martingale_report(&done)?
        } else {
            let cfg = SimulationConfig {
                ensemble_size: 64,
                ..truncated(config, 100)
            }
            .resolved()?;
            let m = Model::new(&cfg)?;
            let outs = m.simulate_ensemble()?;
            martingale_report(&traces_of(&outs, &m)?)?
        };
        for (name, stat) in [("diagnostics.martingale_wiener", report.wiener), ("diagnostics.martingale_jump", report.jump)] {
            let detail = if stat.trivially_zero {
                format!("{} paths; identically zero", report.paths)
            } else {
                format!("{} paths; mean {} ± {}", report.paths, stat.mean, stat.stderr)
            };
            checks.push(Check::new(name, stat.z.abs() <= 3.0, stat.z, "|z| <= 3", detail));
        }
    }

    // harness
    let template = column_template();
    checks.push(Check::new(
        "harness.csv_schema",
        template == SCHEMA_FINGERPRINT,
        SCHEMA_VERSION as f64,
        "columns match the pinned schema version",
        template,
    ));
    let reparsed = SimulationConfig::parse(&config.to_toml());
    checks.push(Check::new(
        "harness.config_round_trip",
        reparsed.as_ref().is_ok_and(|c| c == config),
        0.0,
        "equal",
        "parse(serialize(config))",
    ));
    let repro = SimulationConfig {
        ensemble_size: config.ensemble_size.clamp(2, 4),
        ..truncated(config, 20)
    }
    .resolved()?;
    let repro_model = Model::new(&repro)?;
    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?
        .install(|| ensemble_summary(&repro_model).map(|s| ensemble_csv(&s)))?;
    let parallel = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?
        .install(|| ensemble_summary(&repro_model).map(|s| ensemble_csv(&s)))?;
    checks.push(Check::new(
        "harness.reproducibility",
        serial == parallel,
        0.0,
        "byte-identical",
        "ensemble CSV with 1 and 4 worker threads",
    ));

    let passed = checks.iter().all(|c| c.passed);
    Ok((
        VerifyReport {
            schema_version: SCHEMA_VERSION,
            passed,
            checks,
        },
        csv,
        failures,
    ))
}

pub fn run_verify(config: &SimulationConfig, options: VerifyOptions, out: &Path) -> Result<VerifyReport> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let (report, csv, failures) = verify(config, options)?;
    write_atomic(&out.join("trace.csv"), csv.as_bytes())?;
    write_json(&out.join("summary.json"), &report)?;
    let mut manifest = RunManifest::new("verify", config, started, clock);
    manifest.failures = failures;
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(report)
}
