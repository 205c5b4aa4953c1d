//! Run configuration: a flat key/value TOML document with explicit defaults
//! for every knob, strict about unknown keys, resolvable into per-trajectory
//! specs with documented seed derivation.

use serde::{Deserialize, Serialize};

use sed_core::dynamics::{orbital_wavenumber, Formulation, PhysicalConstants, ALPHA};
use sed_core::field::FrequencyGrid;
use sed_core::integrator::{
    CutoffPolicy, FieldAccess, InitMode, InitialState, IntegratorConfig, TrajectorySpec,
};
use sed_core::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config key `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, reason: reason.into() }
}

/// On-disk run configuration. Every optional key has a documented default;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Nuclear charge.
    #[serde(rename = "Z")]
    pub z: u32,
    /// Frequency mesh density N (grid spacing 1/N).
    #[serde(rename = "N")]
    pub mesh_density: u64,
    /// Master seed of the run.
    pub seed: u64,

    /// Moving-cutoff harmonic count; presence selects the moving policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_harm: Option<f64>,
    /// Fixed window bounds `[n_low, n_high]`; presence selects the fixed
    /// policy. Exactly one of `n_harm` / `fixed_window` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_window: Option<[usize; 2]>,
    /// Relative drift of `k^3` that re-targets the moving window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_increment: Option<f64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Largest retained mode; defaults to the moving-window ceiling at the
    /// energy floor, or `n_high` for fixed windows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_mode: Option<usize>,
    /// Spectral cutoff scale override; defaults to `Z^2 alpha^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_scale: Option<f64>,
    /// Damping strength override; defaults to `beta(Z)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formulation: Option<Formulation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_access: Option<FieldAccessChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_mode: Option<InitModeChoice>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_orbit: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_refreshes_per_max_period: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ionisation_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ionisation_dwell: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_stride: Option<u32>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_orbits: Option<u64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_size: Option<usize>,
    /// Optional explicit per-trajectory seeds, overriding the derivation
    /// from the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_seeds: Option<Vec<u64>>,

    /// Explicit initial state (both or neither of r/v).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_r: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_v: Option<[f64; 3]>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_format: Option<RecordFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram_bins: Option<usize>,
    /// Write a resumable checkpoint when a trajectory first reaches this
    /// orbit count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_at_orbit: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldAccessChoice {
    Exact,
    Interpolated,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitModeChoice {
    NeglectBeta,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordFormat {
    Text,
    Binary,
}

/// Fully resolved configuration: every knob concrete and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub raw: RunConfig,
    pub constants: PhysicalConstants,
    pub grid: FrequencyGrid,
    pub cutoff: CutoffPolicy,
    pub formulation: Formulation,
    pub integrator: IntegratorConfig,
    pub cutoff_scale: f64,
    pub beta_override: Option<f64>,
    pub init_mode: InitMode,
    pub explicit_init: Option<(Vec3, Vec3)>,
    pub t_max: f64,
    pub max_orbits: Option<u64>,
    pub ensemble_size: usize,
    pub record_format: RecordFormat,
    pub output_dir: String,
    pub histogram_bins: usize,
    pub checkpoint_at_orbit: Option<u64>,
}

/// SplitMix64 finalizer; the documented seed-mixing primitive.
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn emit(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Seed of trajectory `index`: the master seed mixed with the index.
    pub fn trajectory_seed(&self, index: usize) -> u64 {
        if let Some(seeds) = &self.trajectory_seeds {
            if let Some(&s) = seeds.get(index) {
                return s;
            }
        }
        splitmix64(self.seed ^ splitmix64(index as u64 + 1))
    }

    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        if self.z == 0 {
            return Err(invalid("Z", "nuclear charge must be at least 1"));
        }
        if self.mesh_density == 0 {
            return Err(invalid("N", "mesh density must be at least 1"));
        }
        let alpha = self.alpha.unwrap_or(ALPHA);
        if alpha <= 0.0 {
            return Err(invalid("alpha", "must be positive"));
        }
        let constants = PhysicalConstants::new(self.z, alpha);

        let energy_floor = self.energy_floor.unwrap_or(-1.6);
        let ionisation_threshold = self.ionisation_threshold.unwrap_or(-0.05);

        let cutoff = match (self.n_harm, self.fixed_window) {
            (Some(n_harm), None) => {
                if n_harm <= 0.0 {
                    return Err(invalid("n_harm", "must be positive"));
                }
                CutoffPolicy::Moving { n_harm, update_increment: self.update_increment.unwrap_or(0.2) }
            }
            (None, Some([lo, hi])) => {
                if lo >= hi {
                    return Err(invalid("fixed_window", "needs n_low < n_high"));
                }
                CutoffPolicy::Fixed { n_low: lo, n_high: hi }
            }
            (None, None) => return Err(ConfigError::Missing("n_harm or fixed_window")),
            (Some(_), Some(_)) => {
                return Err(invalid("fixed_window", "mutually exclusive with n_harm"));
            }
        };

        let max_mode = match (self.max_mode, &cutoff) {
            (Some(m), _) => m,
            (None, CutoffPolicy::Fixed { n_high, .. }) => *n_high,
            (None, CutoffPolicy::Moving { n_harm, .. }) => {
                // Window ceiling: the deepest allowed orbit has the highest
                // orbital frequency.
                let k = orbital_wavenumber(energy_floor)
                    .ok_or_else(|| invalid("energy_floor", "must be negative"))?;
                ((n_harm + 0.5) * k.powi(3) * self.mesh_density as f64).ceil() as usize
            }
        };
        let grid = FrequencyGrid::new(self.mesh_density, max_mode)
            .map_err(|e| invalid("N", e.to_string()))?;
        if let CutoffPolicy::Fixed { n_high, .. } = cutoff {
            if n_high > max_mode {
                return Err(invalid("fixed_window", "n_high exceeds max_mode"));
            }
        }

        let formulation = self.formulation.unwrap_or(match cutoff {
            CutoffPolicy::Moving { .. } => Formulation::MixedGrandCanonical,
            CutoffPolicy::Fixed { .. } => Formulation::SForm,
        });

        let integrator = IntegratorConfig {
            steps_per_orbit: self.steps_per_orbit.unwrap_or(4000),
            field_refreshes_per_max_period: self.field_refreshes_per_max_period.unwrap_or(10),
            energy_floor,
            ionisation_threshold,
            ionisation_dwell: self.ionisation_dwell.unwrap_or(1e7),
            guard_radius: self.guard_radius.unwrap_or(1e-3),
            sample_stride: self.sample_stride.unwrap_or(100),
            field_access: match self.field_access.unwrap_or(FieldAccessChoice::Interpolated) {
                FieldAccessChoice::Exact => FieldAccess::Exact,
                FieldAccessChoice::Interpolated => FieldAccess::Interpolated,
                FieldAccessChoice::Off => FieldAccess::Off,
            },
        };

        let explicit_init = match (self.initial_r, self.initial_v) {
            (Some(r), Some(v)) => {
                Some((Vec3::new(r[0], r[1], r[2]), Vec3::new(v[0], v[1], v[2])))
            }
            (None, None) => None,
            _ => return Err(invalid("initial_r", "initial_r and initial_v go together")),
        };

        let ensemble_size = self.ensemble_size.unwrap_or(1);
        if ensemble_size == 0 {
            return Err(invalid("ensemble_size", "must be at least 1"));
        }
        let t_max = self.t_max.unwrap_or(1.2e7);
        if t_max <= 0.0 {
            return Err(invalid("t_max", "must be positive"));
        }
        if let Some(beta) = self.beta {
            if beta < 0.0 {
                return Err(invalid("beta", "must be non-negative"));
            }
        }
        let histogram_bins = self.histogram_bins.unwrap_or(60);
        if histogram_bins < 2 {
            return Err(invalid("histogram_bins", "need at least 2 bins"));
        }

        let resolved = ResolvedConfig {
            raw: self.clone(),
            constants,
            grid,
            cutoff,
            formulation,
            integrator,
            cutoff_scale: self.cutoff_scale.unwrap_or_else(|| constants.cutoff_scale()),
            beta_override: self.beta,
            init_mode: match self.init_mode.unwrap_or(InitModeChoice::NeglectBeta) {
                InitModeChoice::NeglectBeta => InitMode::NeglectBeta,
                InitModeChoice::Exact => InitMode::Exact,
            },
            explicit_init,
            t_max,
            max_orbits: self.max_orbits,
            ensemble_size,
            record_format: self.record_format.unwrap_or(RecordFormat::Text),
            output_dir: self.output_dir.clone().unwrap_or_else(|| "out".to_string()),
            histogram_bins,
            checkpoint_at_orbit: self.checkpoint_at_orbit,
        };
        // Surface spec-level validation (step floor, moving-cutoff pairing)
        // now rather than at launch.
        resolved
            .trajectory_spec(0)
            .validate()
            .map_err(|e| invalid("steps_per_orbit", e.to_string()))?;
        Ok(resolved)
    }
}

impl ResolvedConfig {
    /// Spec of trajectory `index`, with its derived seeds.
    pub fn trajectory_spec(&self, index: usize) -> TrajectorySpec {
        let seed = self.raw.trajectory_seed(index);
        let init = match self.explicit_init {
            Some((r, v)) => InitialState::Explicit { r, v },
            None => InitialState::Sampled { seed: splitmix64(seed ^ 0xA5A5_A5A5_5A5A_5A5A) },
        };
        TrajectorySpec {
            constants: self.constants,
            grid: self.grid,
            cutoff_scale: Some(self.cutoff_scale),
            formulation: self.formulation,
            cutoff: self.cutoff,
            integrator: self.integrator,
            field_seed: seed,
            init,
            init_mode: self.init_mode,
            beta_override: self.beta_override,
            t_max: self.t_max,
            max_orbits: self.max_orbits,
        }
    }
}
