//! JSON configuration files for every subcommand.

use crate::corpus::DensityInput;
use crate::error::{HarnessError, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use vortexlab_core::simulation::SimulationSettings;
use vortexlab_core::{validate, Domain, InitialDataSpec, Vec2};

/// Parses a JSON file, reporting syntax and schema errors with line and column.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse(path, &text)
}

pub fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| HarnessError::Config {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn check_initial(spec: &InitialDataSpec, errors: &mut Vec<String>) {
    errors.extend(validate(spec).iter().map(|v| v.to_string()));
}

/// `simulate` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub initial: InitialDataSpec,
    pub simulation: SimulationSettings,
    /// Stop once some particle has intrinsic distance `≥ fraction · b` from its centre.
    #[serde(default)]
    pub stop_spread_fraction: Option<f64>,
    /// Write a binary particle snapshot every this many samples.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        check_initial(&self.initial, &mut errors);
        let s = &self.simulation;
        if s.particles_per_patch == 0 {
            errors.push("simulation.particles_per_patch must be positive".into());
        }
        if !(s.t_end >= 0.0 && s.t_end.is_finite()) {
            errors.push("simulation.t_end must be finite and nonnegative".into());
        }
        if s.sample_every == 0 {
            errors.push("simulation.sample_every must be positive".into());
        }
        if let Some(dt) = s.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                errors.push("simulation.dt must be positive".into());
            }
        }
        if matches!(self.snapshot_every, Some(0)) {
            errors.push("snapshot_every must be positive".into());
        }
        if let Some(f) = self.stop_spread_fraction {
            if !(f > 0.0) {
                errors.push("stop_spread_fraction must be positive".into());
            }
        }
        if errors.is_empty() { Ok(()) } else { Err(HarnessError::Validation(errors)) }
    }
}

/// `pvs` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvsConfig {
    pub domain: Domain,
    pub positions: Vec<Vec2>,
    pub intensities: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub sample_every: usize,
}

impl PvsConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.positions.is_empty() || self.positions.len() != self.intensities.len() {
            errors.push("positions and intensities must be nonempty and of equal length".into());
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            errors.push("t_end must be finite and nonnegative".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errors.push("dt must be positive".into());
        }
        if self.sample_every == 0 {
            errors.push("sample_every must be positive".into());
        }
        if errors.is_empty() { Ok(()) } else { Err(HarnessError::Validation(errors)) }
    }
}

/// `rearrange` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RearrangeConfig {
    pub densities: Vec<DensityInput>,
    /// Power-law exponents evaluated alongside the logarithmic energy.
    #[serde(default)]
    pub alphas: Vec<f64>,
}

impl RearrangeConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.densities.is_empty() {
            errors.push("densities must not be empty".into());
        }
        for &a in &self.alphas {
            if !(a > -2.0 && a < 2.0) || a == 0.0 {
                errors.push(format!("alpha = {a} outside (-2, 2) \\ {{0}}"));
            }
        }
        if errors.is_empty() { Ok(()) } else { Err(HarnessError::Validation(errors)) }
    }
}

/// Randomized calibration/validation corpus for the certificate constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub calibration_seed: u64,
    pub validation_seed: u64,
    pub size: usize,
}

/// `stability-check` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    #[serde(default)]
    pub densities: Vec<DensityInput>,
    #[serde(default)]
    pub corpus: Option<CorpusConfig>,
    /// Frozen constants checked against; defaults to the bundled file.
    #[serde(default)]
    pub constants: Option<PathBuf>,
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.densities.is_empty() && self.corpus.is_none() {
            errors.push("give densities, a corpus, or both".into());
        }
        if let Some(c) = &self.corpus {
            if c.size == 0 {
                errors.push("corpus.size must be positive".into());
            }
            if c.calibration_seed == c.validation_seed {
                errors.push("calibration and validation seeds must differ".into());
            }
        }
        if errors.is_empty() { Ok(()) } else { Err(HarnessError::Validation(errors)) }
    }
}

/// `scaling-study` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub epsilons: Vec<f64>,
    pub beta: f64,
    #[serde(default = "one")]
    pub n3: f64,
    /// Intensity of each of the two co-rotating patches.
    #[serde(default = "one")]
    pub intensity: f64,
    /// Distance between the two centres (also the separation `b`).
    #[serde(default = "one")]
    pub separation: f64,
    /// Boundary mode of the perturbed-disk profile.
    #[serde(default = "three")]
    pub mode: u32,
    pub particles_per_patch: usize,
    /// Horizon `t = horizon_factor · ε^horizon_exponent`.
    #[serde(default = "five")]
    pub horizon_factor: f64,
    #[serde(default = "minus_half")]
    pub horizon_exponent: f64,
    #[serde(default = "quarter")]
    pub stop_spread_fraction: f64,
    /// Diagnostics samples per member run.
    #[serde(default = "hundred")]
    pub samples: usize,
    /// Also run a single unperturbed vortex at the largest ε.
    #[serde(default = "yes")]
    pub single_vortex_control: bool,
    /// Rerun the largest ε with this many times the particles; 1 disables the rerun.
    #[serde(default = "two")]
    pub refinement_factor: usize,
}

fn one() -> f64 {
    1.0
}
fn three() -> u32 {
    3
}
fn five() -> f64 {
    5.0
}
fn minus_half() -> f64 {
    -0.5
}
fn quarter() -> f64 {
    0.25
}
fn hundred() -> usize {
    100
}
fn two() -> usize {
    2
}
fn yes() -> bool {
    true
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.epsilons.len() < 2 {
            errors.push("at least two epsilons are needed for a fit".into());
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            errors.push("epsilons must lie in (0, 1)".into());
        }
        if !(self.beta > 2.0 / 3.0) {
            errors.push(format!("A6: beta = {} must exceed 2/3", self.beta));
        }
        if self.particles_per_patch == 0 || self.samples < 3 || self.mode == 0 || self.refinement_factor == 0 {
            errors.push("particles_per_patch, samples (≥ 3), mode and refinement_factor must be positive".into());
        }
        if !(self.separation > 0.0 && self.intensity != 0.0 && self.n3 > 0.0) {
            errors.push("separation and n3 must be positive, intensity nonzero".into());
        }
        if errors.is_empty() { Ok(()) } else { Err(HarnessError::Validation(errors)) }
    }
}
