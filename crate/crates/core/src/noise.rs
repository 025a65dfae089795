//! Wiener increments, the compensated small-jump Poisson measure, and the
//! concrete noise coefficient families `G`, `½G'[G]` and `F`.
//!
//! Random streams are ChaCha8 keyed by the master seed; each path gets its own
//! stream id (`4 * path + purpose`), so a path's noise never depends on how many
//! other paths ran before it or on which thread it ran.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::Grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    /// `G_i(m) = c_i φ_i m`
    Linear,
    /// `G_i(m) = c_i φ_i v_i`, independent of `m`
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Wiener = 0,
    Jumps = 1,
}

/// The RNG for one (seed, path, purpose) triple.
pub fn path_rng(master_seed: u64, path: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path.wrapping_mul(4).wrapping_add(purpose as u64));
    rng
}

/// Noise coefficients resolved on the magnet grid.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    family: NoiseFamily,
    amplitudes: Vec<f64>,
    shapes: Vec<Vec<f64>>,
    vectors: Vec<Vector3<f64>>,
    jump_intensity: f64,
    jump_radius: f64,
    jump_amplitude: f64,
    jump_direction: Vec<f64>,
    mark_directions: Vec<Vec<f64>>,
    jump_profile: Vec<f64>,
}

/// Parameters of [`NoiseSpec`] independent of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    pub family: NoiseFamily,
    pub amplitudes: Vec<f64>,
    pub jump_intensity: f64,
    pub jump_radius: f64,
    pub jump_amplitude: f64,
    pub jump_direction: Vec<f64>,
    /// Directions the marks are drawn from, uniformly; marks are `r * d`.
    pub mark_directions: Vec<Vec<f64>>,
}

fn unit(v: &[f64], what: &str) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::invalid(format!("{what} must be a nonzero finite vector")));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl NoiseSpec {
    /// Shapes are `φ_i(x) = cos((i-1)π(x-a)/|D|)`, the additive directions cycle
    /// through the coordinate axes, and the jump profile is
    /// `ζ(x) = 1 - ½ sin²(π(x-a)/|D|)`.
    pub fn new(params: &NoiseParams, grid: &Grid) -> Result<Self> {
        let n = params.amplitudes.len();
        if n == 0 {
            return Err(Error::invalid("wiener dimension must be positive"));
        }
        if params.amplitudes.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("noise amplitudes must be finite"));
        }
        if !(params.jump_intensity >= 0.0) || !params.jump_intensity.is_finite() {
            return Err(Error::invalid("jump intensity must be nonnegative"));
        }
        if !(params.jump_radius > 0.0 && params.jump_radius < 1.0) {
            return Err(Error::invalid(format!(
                "jump mark radius must lie in (0, 1), got {}",
                params.jump_radius
            )));
        }
        if params.jump_direction.len() != n {
            return Err(Error::invalid(format!("jump direction must have {n} components")));
        }
        let jump_direction = unit(&params.jump_direction, "jump direction")?;
        if params.mark_directions.is_empty() {
            return Err(Error::invalid("at least one mark direction is required"));
        }
        let mark_directions = params
            .mark_directions
            .iter()
            .map(|d| {
                if d.len() != n {
                    return Err(Error::invalid(format!("mark directions must have {n} components")));
                }
                unit(d, "mark direction")
            })
            .collect::<Result<Vec<_>>>()?;

        let (a, len) = (grid.start(), grid.length());
        let shapes = (0..n)
            .map(|i| {
                grid.points()
                    .iter()
                    .map(|&x| (i as f64 * PI * (x - a) / len).cos())
                    .collect()
            })
            .collect();
        let vectors = (0..n)
            .map(|i| {
                let mut v = Vector3::zeros();
                v[i % 3] = 1.0;
                v
            })
            .collect();
        let jump_profile = grid
            .points()
            .iter()
            .map(|&x| 1.0 - 0.5 * (PI * (x - a) / len).sin().powi(2))
            .collect();
        Ok(NoiseSpec {
            family: params.family,
            amplitudes: params.amplitudes.clone(),
            shapes,
            vectors,
            jump_intensity: params.jump_intensity,
            jump_radius: params.jump_radius,
            jump_amplitude: params.jump_amplitude,
            jump_direction,
            mark_directions,
            jump_profile,
        })
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn wiener_dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn shape(&self, channel: usize) -> &[f64] {
        &self.shapes[channel]
    }

    pub fn jump_intensity(&self) -> f64 {
        self.jump_intensity
    }

    pub fn jump_radius(&self) -> f64 {
        self.jump_radius
    }

    pub fn jump_amplitude(&self) -> f64 {
        self.jump_amplitude
    }

    pub fn jump_profile(&self) -> &[f64] {
        &self.jump_profile
    }

    /// True when `F` vanishes identically or no jumps can occur.
    pub fn jumps_inert(&self) -> bool {
        self.jump_amplitude == 0.0 || self.jump_intensity == 0.0
    }

    /// Mean of the mark distribution.
    pub fn mean_mark(&self) -> Vec<f64> {
        let n = self.wiener_dim();
        let k = self.mark_directions.len() as f64;
        (0..n)
            .map(|i| self.jump_radius * self.mark_directions.iter().map(|d| d[i]).sum::<f64>() / k)
            .collect()
    }

    /// Compensator rate `λ_P · E[l]`: the drift that makes the jump integral a martingale.
    pub fn compensator(&self) -> Vec<f64> {
        self.mean_mark().into_iter().map(|x| self.jump_intensity * x).collect()
    }

    /// `∫_B ⟨l, ê⟩² μ(dl)`.
    pub fn mark_second_moment(&self) -> f64 {
        let r2 = self.jump_radius * self.jump_radius;
        let k = self.mark_directions.len() as f64;
        self.jump_intensity * r2 * self.mark_directions.iter().map(|d| dot(d, &self.jump_direction).powi(2)).sum::<f64>() / k
    }

    /// `G_i(m)` on the grid.
    pub fn g_eval(&self, m: &[Vector3<f64>], channel: usize) -> Result<Vec<Vector3<f64>>> {
        if channel >= self.wiener_dim() {
            return Err(Error::invalid(format!(
                "noise channel {channel} out of range for dimension {}",
                self.wiener_dim()
            )));
        }
        let c = self.amplitudes[channel];
        let phi = &self.shapes[channel];
        if m.len() != phi.len() {
            return Err(Error::invalid("field does not live on the magnet grid"));
        }
        Ok(match self.family {
            NoiseFamily::Linear => m.iter().zip(phi).map(|(v, p)| v * (c * p)).collect(),
            NoiseFamily::Additive => {
                let dir = self.vectors[channel];
                phi.iter().map(|p| dir * (c * p)).collect()
            }
        })
    }

    /// `½ Σ_i G_i'(m)[G_i(m)]`, the Itô drift correction.
    pub fn stratonovich_correction(&self, m: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        match self.family {
            NoiseFamily::Additive => vec![Vector3::zeros(); m.len()],
            NoiseFamily::Linear => {
                let mut scale = vec![0.0; m.len()];
                for (c, phi) in self.amplitudes.iter().zip(&self.shapes) {
                    for (s, p) in scale.iter_mut().zip(phi) {
                        *s += c * c * p * p;
                    }
                }
                m.iter().zip(&scale).map(|(v, s)| v * (0.5 * s)).collect()
            }
        }
    }

    /// `F(m, l)(x) = c_F ⟨l, ê⟩ ζ(x) m(x)`.
    pub fn f_eval(&self, m: &[Vector3<f64>], mark: &[f64]) -> Result<Vec<Vector3<f64>>> {
        if mark.len() != self.wiener_dim() {
            return Err(Error::invalid("mark dimension mismatch"));
        }
        let norm = dot(mark, mark).sqrt();
        if !(norm < 1.0) {
            return Err(Error::invalid(format!("jump mark |l| = {norm} lies outside the unit ball")));
        }
        let weight = self.jump_amplitude * dot(mark, &self.jump_direction);
        Ok(m.iter().zip(&self.jump_profile).map(|(v, z)| v * (weight * z)).collect())
    }

    /// `F` extended linearly to any `l ∈ R^N`; used for the compensator `F(m, λ_P E[l])`,
    /// whose argument need not lie in the unit ball.
    pub fn f_linear(&self, m: &[Vector3<f64>], l: &[f64]) -> Vec<Vector3<f64>> {
        let weight = self.jump_amplitude * dot(l, &self.jump_direction);
        m.iter().zip(&self.jump_profile).map(|(v, z)| v * (weight * z)).collect()
    }

    /// Constants `(K_1, K_2)` of the Lipschitz and growth bounds for this family,
    /// with all norms taken in `L²` of the magnet domain.
    pub fn assumption_constants(&self, grid: &Grid) -> (f64, f64) {
        let sup = |f: &[f64]| f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let zeta = sup(&self.jump_profile);
        let jump = self.jump_amplitude.powi(2) * zeta * zeta * self.mark_second_moment();
        match self.family {
            NoiseFamily::Linear => {
                let g: Vec<f64> = self
                    .amplitudes
                    .iter()
                    .zip(&self.shapes)
                    .map(|(c, p)| c.abs() * sup(p))
                    .collect();
                let lin = g.iter().sum::<f64>().powi(2);
                let corr = g.iter().map(|x| x * x).sum::<f64>().powi(2);
                let k = lin + corr + jump;
                (k, k)
            }
            NoiseFamily::Additive => {
                let g: f64 = self
                    .amplitudes
                    .iter()
                    .zip(&self.shapes)
                    .map(|(c, p)| {
                        let sq: Vec<f64> = p.iter().map(|x| x * x).collect();
                        c.abs() * grid.integrate(&sq).sqrt()
                    })
                    .sum();
                (jump, g * g + jump)
            }
        }
    }
}

/// `steps` i.i.d. `N(0, Δt)` vectors of dimension `N`.
pub fn wiener_increments<R: Rng + ?Sized>(
    spec: &NoiseSpec,
    dt: f64,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let sd = dt.sqrt();
    Ok((0..steps)
        .map(|_| {
            (0..spec.wiener_dim())
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpRecord {
    /// Strictly increasing in time.
    pub events: Vec<JumpEvent>,
    /// `λ_P · E[l]`; zero when no jumps are configured.
    pub compensator: Vec<f64>,
}

/// Samples the Poisson jump events on `[0, horizon]`.
pub fn sample_jumps<R: Rng + ?Sized>(spec: &NoiseSpec, horizon: f64, rng: &mut R) -> Result<JumpRecord> {
    if !(spec.jump_radius < 1.0) {
        return Err(Error::invalid("large jumps are excluded: mark radius must be < 1"));
    }
    if !(horizon > 0.0) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    let rate = spec.jump_intensity * horizon;
    if rate == 0.0 {
        return Ok(JumpRecord {
            events: Vec::new(),
            compensator: vec![0.0; spec.wiener_dim()],
        });
    }
    let count = Poisson::new(rate)
        .map_err(|e| Error::invalid(format!("poisson rate {rate}: {e}")))?
        .sample(rng) as usize;
    let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * horizon).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let events = times
        .into_iter()
        .map(|time| {
            let d = &spec.mark_directions[rng.random_range(0..spec.mark_directions.len())];
            JumpEvent {
                time,
                mark: d.iter().map(|x| x * spec.jump_radius).collect(),
            }
        })
        .collect();
    Ok(JumpRecord {
        events,
        compensator: spec.compensator(),
    })
}

/// One path's noise at the granularity of the stepper's sub-steps.
#[derive(Debug, Clone, Default)]
pub struct NoiseRealization {
    pub substep: f64,
    pub increments: Vec<Vec<f64>>,
    pub jumps: JumpRecord,
}

impl NoiseRealization {
    pub fn sample(spec: &NoiseSpec, substep: f64, substeps: usize, master_seed: u64, path: u64) -> Result<Self> {
        let mut wiener = path_rng(master_seed, path, StreamPurpose::Wiener);
        let increments = wiener_increments(spec, substep, substeps, &mut wiener)?;
        let horizon = substep * substeps as f64;
        let jumps = if substeps == 0 {
            JumpRecord {
                events: Vec::new(),
                compensator: spec.compensator(),
            }
        } else {
            sample_jumps(spec, horizon, &mut path_rng(master_seed, path, StreamPurpose::Jumps))?
        };
        Ok(NoiseRealization {
            substep,
            increments,
            jumps,
        })
    }

    /// A realization with no randomness, for noise-off runs.
    pub fn silent(dim: usize, substep: f64, substeps: usize) -> Self {
        NoiseRealization {
            substep,
            increments: vec![vec![0.0; dim]; substeps],
            jumps: JumpRecord {
                events: Vec::new(),
                compensator: vec![0.0; dim],
            },
        }
    }

    /// Jump events of sub-step `i`, i.e. with time in `[i·dt, (i+1)·dt)`; the
    /// final sub-step also takes events at the horizon itself.
    pub fn jumps_in(&self, i: usize) -> &[JumpEvent] {
        let t0 = i as f64 * self.substep;
        let last = i + 1 == self.increments.len();
        let t1 = (i + 1) as f64 * self.substep;
        let ev = &self.jumps.events;
        let lo = ev.partition_point(|e| e.time < t0);
        let hi = if last { ev.len() } else { ev.partition_point(|e| e.time < t1) };
        &ev[lo..hi.max(lo)]
    }
}
