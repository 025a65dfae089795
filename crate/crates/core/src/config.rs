//! Flat TOML configuration. Every physical parameter has its own key; see
//! `README.md` for the full key reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseFamily, NoiseParams};

/// How the implicit Gilbert form `(αI + m×)∂ₜm = f` is turned into an explicit update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlgSolve {
    /// Solve the weak form `((αI + m×)v, e_h) = (f, e_h)` for `v` in the Neumann span.
    Galerkin,
    /// Apply the closed-form 3×3 inverse at each grid point, then project.
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    K,
    Dt,
    EnsembleSize,
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepParameter::K),
            "dt" => Ok(SweepParameter::Dt),
            "ensemble_size" => Ok(SweepParameter::EnsembleSize),
            other => Err(Error::config(
                "sweep_parameter",
                format!("unknown sweep parameter `{other}` (expected k, dt or ensemble_size)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Gilbert damping `α`.
    pub alpha: f64,
    /// Penalization coefficient `k`.
    pub k: f64,
    /// Horizon `T`.
    pub t_end: f64,
    pub dt: f64,
    /// Record diagnostics every this many steps.
    pub save_every: usize,

    pub n_modes_schrodinger: usize,
    /// Cosine modes `h = 1..=n` in addition to the constant mode.
    pub n_modes_magnet: usize,
    /// Dirichlet modes of the Coulomb solve; defaults to twice the Schrödinger count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poisson_modes: Option<usize>,

    /// Schrödinger domain `[0, L_K]`.
    pub schrodinger_length: f64,
    /// Magnet domain `[a, b]`.
    pub magnet_start: f64,
    pub magnet_end: f64,
    /// Collocation points `P` on each domain.
    pub grid_points: usize,

    /// Occupation weights `λ_j`; one wavefunction per entry.
    pub weights: Vec<f64>,
    /// Initial spinor of wavefunction `j` is
    /// `(cos(γ/2) θ_j, e^{iχ} sin(γ/2) θ_{j+1})` with `γ = psi_polar`, `χ = psi_azimuth`.
    pub psi_polar: f64,
    pub psi_azimuth: f64,
    /// Initial magnetization `|m₀| d̂ + tilt · cos(π(x-a)/|D|) x̂`.
    pub m_init_direction: [f64; 3],
    pub m_init_magnitude: f64,
    pub m_init_tilt: f64,

    pub stray_field: bool,
    pub anisotropy: bool,
    pub coupling: bool,
    pub noise: bool,

    pub noise_family: NoiseFamily,
    /// Amplitudes `c_1..c_N`; the Wiener dimension `N` is their count.
    pub noise_amplitudes: Vec<f64>,
    /// Jump intensity `λ_P` (events per unit time).
    pub jump_intensity: f64,
    /// Mark radius `r < 1`.
    pub jump_radius: f64,
    /// Jump coefficient amplitude `c_F`.
    pub jump_amplitude: f64,
    /// Unit vector `ê ∈ R^N`.
    pub jump_direction: Vec<f64>,
    /// Directions the marks are drawn from; defaults to `ê` alone.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mark_directions: Option<Vec<Vec<f64>>>,

    /// Ensemble size `M`.
    pub ensemble_size: usize,
    /// Master seed, at most `2^63 - 1` so it survives a TOML round trip.
    pub seed: u64,
    /// `Δt ≤ stiffness_factor / k` is required for the explicit penalty update.
    pub stiffness_factor: f64,
    pub llg_solve: LlgSolve,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_parameter: Option<SweepParameter>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sweep_values: Vec<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            alpha: 1.0,
            k: 1.0,
            t_end: 1.0,
            dt: 1e-3,
            save_every: 1,
            n_modes_schrodinger: 16,
            n_modes_magnet: 16,
            poisson_modes: None,
            schrodinger_length: 2.0,
            magnet_start: 0.5,
            magnet_end: 1.5,
            grid_points: 128,
            weights: vec![1.0, 0.5],
            psi_polar: 1.0,
            psi_azimuth: 0.5,
            m_init_direction: [0.0, 0.0, 1.0],
            m_init_magnitude: 1.0,
            m_init_tilt: 0.2,
            stray_field: true,
            anisotropy: true,
            coupling: true,
            noise: true,
            noise_family: NoiseFamily::Linear,
            noise_amplitudes: vec![0.2, 0.1],
            jump_intensity: 1.0,
            jump_radius: 0.5,
            jump_amplitude: 0.1,
            jump_direction: vec![1.0, 0.0],
            mark_directions: None,
            ensemble_size: 1,
            seed: 0,
            stiffness_factor: 0.1,
            llg_solve: LlgSolve::Pointwise,
            sweep_parameter: None,
            sweep_values: Vec::new(),
        }
    }
}

/// A non-fatal configuration concern; fatal under `--strict`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigWarning {
    pub key: String,
    pub message: String,
}

fn require(ok: bool, key: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, message))
    }
}

impl SimulationConfig {
    /// Parses, applies defaults and validates. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
        Self::from_table(table)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let table: toml::Table = match toml::Value::try_from(value) {
            Ok(toml::Value::Table(t)) => t,
            Ok(_) => return Err(Error::config("<document>", "expected a JSON object")),
            Err(e) => return Err(Error::config("<document>", e.to_string())),
        };
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let defaults = match toml::Value::try_from(SimulationConfig::default()) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("default config serializes to a table"),
        };
        const OPTIONAL: [&str; 5] = [
            "poisson_modes",
            "mark_directions",
            "sweep_parameter",
            "sweep_values",
            "seed",
        ];
        for key in table.keys() {
            if !defaults.contains_key(key) && !OPTIONAL.contains(&key.as_str()) {
                return Err(Error::config(key, "unknown key"));
            }
        }
        // Deserialize key by key so a type error names the offending key.
        for (key, value) in &table {
            let mut probe = defaults.clone();
            probe.insert(key.clone(), value.clone());
            if let Err(e) = SimulationConfig::deserialize(probe) {
                return Err(Error::config(key, e.message().trim().to_string()));
            }
        }
        let mut config = SimulationConfig::deserialize(table)
            .map_err(|e| Error::config("<document>", e.message().trim().to_string()))?;
        config.resolve();
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self) {
        if self.poisson_modes.is_none() {
            self.poisson_modes = Some(2 * self.n_modes_schrodinger);
        }
        if self.mark_directions.is_none() {
            self.mark_directions = Some(vec![self.jump_direction.clone()]);
        }
    }

    /// Fills derived defaults and checks every constraint.
    pub fn resolved(mut self) -> Result<Self> {
        self.resolve();
        self.validate()?;
        Ok(self)
    }

    pub fn poisson_modes(&self) -> usize {
        self.poisson_modes.unwrap_or(2 * self.n_modes_schrodinger)
    }

    pub fn wavefunctions(&self) -> usize {
        self.weights.len()
    }

    /// Number of time steps; `t_end / dt` must be integral to within 1e-9.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        require(pos(self.alpha), "alpha", "must be positive")?;
        require(self.k >= 0.0 && self.k.is_finite(), "k", "must be nonnegative")?;
        require(self.t_end >= 0.0 && self.t_end.is_finite(), "t_end", "must be nonnegative")?;
        require(pos(self.dt), "dt", "must be positive")?;
        let ratio = self.t_end / self.dt;
        require(
            (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0),
            "dt",
            format!("must divide t_end = {} into an integral number of steps", self.t_end),
        )?;
        require(self.save_every >= 1, "save_every", "must be at least 1")?;
        require(
            self.steps().is_multiple_of(self.save_every),
            "save_every",
            "must divide the step count so save points are equally spaced",
        )?;
        require(self.n_modes_schrodinger >= 1, "n_modes_schrodinger", "must be positive")?;
        require(self.n_modes_magnet >= 1, "n_modes_magnet", "must be positive")?;
        require(self.poisson_modes() >= 1, "poisson_modes", "must be positive")?;
        require(pos(self.schrodinger_length), "schrodinger_length", "must be positive")?;
        require(
            self.magnet_start > 0.0 && self.magnet_start.is_finite(),
            "magnet_start",
            "magnet domain must lie strictly inside the Schrödinger domain",
        )?;
        require(
            self.magnet_end > self.magnet_start && self.magnet_end < self.schrodinger_length,
            "magnet_end",
            "magnet domain must lie strictly inside the Schrödinger domain",
        )?;
        let widest = self
            .n_modes_schrodinger
            .max(self.n_modes_magnet + 1)
            .max(self.poisson_modes());
        require(
            self.grid_points >= 4 * widest,
            "grid_points",
            format!("needs at least 4 × {widest} points for the widest basis"),
        )?;
        require(!self.weights.is_empty(), "weights", "at least one wavefunction is required")?;
        require(
            self.weights.iter().all(|w| *w >= 0.0 && w.is_finite()),
            "weights",
            "occupation weights must be nonnegative",
        )?;
        require(
            self.n_modes_schrodinger > self.weights.len(),
            "n_modes_schrodinger",
            "initial data uses modes up to J + 1",
        )?;
        require(
            self.m_init_direction.iter().any(|x| *x != 0.0),
            "m_init_direction",
            "must be nonzero",
        )?;
        require(self.m_init_magnitude.is_finite(), "m_init_magnitude", "must be finite")?;
        require(self.m_init_tilt.is_finite(), "m_init_tilt", "must be finite")?;
        require(!self.noise_amplitudes.is_empty(), "noise_amplitudes", "wiener dimension must be positive")?;
        require(
            self.jump_intensity >= 0.0 && self.jump_intensity.is_finite(),
            "jump_intensity",
            "must be nonnegative",
        )?;
        require(
            self.jump_radius > 0.0 && self.jump_radius < 1.0,
            "jump_radius",
            "marks must lie in the open unit ball: need 0 < r < 1",
        )?;
        require(
            self.jump_direction.len() == self.noise_amplitudes.len(),
            "jump_direction",
            "must have one component per Wiener channel",
        )?;
        if let Some(dirs) = &self.mark_directions {
            require(
                !dirs.is_empty() && dirs.iter().all(|d| d.len() == self.noise_amplitudes.len()),
                "mark_directions",
                "need at least one direction with one component per Wiener channel",
            )?;
        }
        require(self.ensemble_size >= 1, "ensemble_size", "must be at least 1")?;
        require(
            self.seed <= i64::MAX as u64,
            "seed",
            "must fit in a signed 64-bit TOML integer (at most 2^63 - 1)",
        )?;
        require(pos(self.stiffness_factor), "stiffness_factor", "must be positive")?;
        Ok(())
    }

    pub fn warnings(&self) -> Vec<ConfigWarning> {
        let mut out = Vec::new();
        if self.k > 0.0 && self.dt > self.stiffness_factor / self.k {
            out.push(ConfigWarning {
                key: "dt".into(),
                message: format!(
                    "dt = {} exceeds stiffness_factor / k = {}; the penalty update may be unstable",
                    self.dt,
                    self.stiffness_factor / self.k
                ),
            });
        }
        // Explicit exchange update on a half step: (Δt/2) λ_max / α must stay below 2.
        let length = self.magnet_end - self.magnet_start;
        let lambda_max = (self.n_modes_magnet as f64 * std::f64::consts::PI / length).powi(2);
        if 0.5 * self.dt * lambda_max / self.alpha >= 2.0 {
            out.push(ConfigWarning {
                key: "dt".into(),
                message: format!(
                    "dt = {} exceeds the explicit exchange limit 4α/λ_max = {} for n_modes_magnet = {}",
                    self.dt,
                    4.0 * self.alpha / lambda_max,
                    self.n_modes_magnet
                ),
            });
        }
        out
    }

    /// Fails on the first warning.
    pub fn check_strict(&self) -> Result<()> {
        match self.warnings().into_iter().next() {
            Some(w) => Err(Error::config(w.key, w.message)),
            None => Ok(()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn noise_params(&self) -> NoiseParams {
        NoiseParams {
            family: self.noise_family,
            amplitudes: self.noise_amplitudes.clone(),
            jump_intensity: self.jump_intensity,
            jump_radius: self.jump_radius,
            jump_amplitude: self.jump_amplitude,
            jump_direction: self.jump_direction.clone(),
            mark_directions: self
                .mark_directions
                .clone()
                .unwrap_or_else(|| vec![self.jump_direction.clone()]),
        }
    }
}
