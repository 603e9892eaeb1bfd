//! Time stepping of a discretized initial configuration with periodic diagnostics.

use crate::diagnostics::{centers, sample, velocity_residual, DiagnosticsSample, DiagnosticsSettings};
use crate::error::{Error, Result};
use crate::euler::{advance, advance_with, default_time_step, field_velocities, BlobKernel, Evaluator};
use crate::model::{discretize, InitialDataSpec, ParticleField};
use crate::pvs::{step_plan, StopRecord};
use serde::{Deserialize, Serialize};

/// Run settings for [`simulate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub particles_per_patch: usize,
    #[serde(default)]
    pub evaluator: Evaluator,
    /// Fixed step; `None` applies [`default_time_step`] to the initial field.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Steps between diagnostics samples.
    pub sample_every: usize,
    /// Probe steps at ±dt, ±2dt around each sample to measure centre-velocity residuals.
    #[serde(default)]
    pub residual_probes: bool,
    /// Compute 𝒟 and 𝒟̃ at each sample.
    #[serde(default = "default_true")]
    pub energies: bool,
}

fn default_true() -> bool {
    true
}

/// Decision returned by the diagnostics sink.
#[derive(Clone, Debug, PartialEq)]
pub enum SinkControl {
    Continue,
    Stop(String),
}

/// Final state of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOutcome {
    pub field: ParticleField,
    pub t: f64,
    pub steps: usize,
    pub dt: f64,
    pub stopped: Option<StopRecord>,
}

/// Diagnostics settings implied by an initial configuration (largest patch ε).
pub fn diagnostics_settings(spec: &InitialDataSpec, energies: bool) -> DiagnosticsSettings {
    let epsilon = spec.patches.iter().map(|p| p.epsilon).fold(0.0, f64::max);
    let mut s = DiagnosticsSettings::new(epsilon, spec.n1);
    s.energies = energies;
    s
}

/// Centres at `t − 2dt, t − dt, t, t + dt, t + 2dt` from probe steps that are then discarded.
fn probe_window(field: &ParticleField, kernel: &BlobKernel, evaluator: Evaluator, dt: f64) -> Result<Vec<Vec<crate::Vec2>>> {
    let f1 = advance(field, kernel, evaluator, dt)?;
    let f2 = advance(&f1, kernel, evaluator, dt)?;
    let b1 = advance(field, kernel, evaluator, -dt)?;
    let b2 = advance(&b1, kernel, evaluator, -dt)?;
    Ok(vec![centers(&b2)?, centers(&b1)?, centers(field)?, centers(&f1)?, centers(&f2)?])
}

/// Discretizes `spec`, integrates to `t_end` with RK4, and passes a diagnostics sample to `sink`
/// at `t = 0`, every `sample_every` steps and at the final time.
///
/// The sink may stop the run; a step that fails its stability check also ends the run with a stop
/// record instead of an error.
pub fn simulate(
    spec: &InitialDataSpec,
    settings: &SimulationSettings,
    mut sink: impl FnMut(&DiagnosticsSample, &ParticleField) -> SinkControl,
) -> Result<SimulationOutcome> {
    if !(settings.t_end >= 0.0 && settings.t_end.is_finite()) {
        return Err(Error::InvalidParameter("t_end must be finite and nonnegative".into()));
    }
    if settings.sample_every == 0 {
        return Err(Error::InvalidParameter("sample_every must be positive".into()));
    }
    let mut field = discretize(spec, settings.particles_per_patch)?;
    let kernel = BlobKernel::gaussian(field.blob_radius)?;
    let evaluator = settings.evaluator;
    let velocities = field_velocities(&field, &kernel, evaluator)?;
    let dt_target = match settings.dt {
        Some(dt) => dt,
        None => default_time_step(&field, &velocities),
    };
    let (n_steps, dt) = if settings.t_end == 0.0 { (0, dt_target) } else { step_plan(settings.t_end, dt_target)? };
    let diag = diagnostics_settings(spec, settings.energies);
    let take_sample = |field: &ParticleField, t: f64| -> Result<DiagnosticsSample> {
        let mut s = sample(field, t, &diag)?;
        if settings.residual_probes {
            let window = probe_window(field, &kernel, evaluator, dt)?;
            let a: Vec<f64> = (0..field.n_labels()).map(|i| field.label_circulation(i)).collect();
            s.velocity_residual = Some(velocity_residual(&window, dt, &a, field.domain)?);
        }
        Ok(s)
    };
    let mut t = 0.0;
    if let SinkControl::Stop(reason) = sink(&take_sample(&field, t)?, &field) {
        return Ok(SimulationOutcome { field, t, steps: 0, dt, stopped: Some(StopRecord { t, reason }) });
    }
    let mut first_stage = Some(velocities);
    for step in 1..=n_steps {
        let k1 = match first_stage.take() {
            Some(v) => v,
            None => field_velocities(&field, &kernel, evaluator)?,
        };
        let next = match advance_with(&field, &kernel, evaluator, dt, k1) {
            Ok(f) => f,
            Err(e @ (Error::StepTooLarge { .. } | Error::Integrity { .. })) => {
                return Ok(SimulationOutcome { field, t, steps: step - 1, dt, stopped: Some(StopRecord { t, reason: e.to_string() }) });
            }
            Err(e) => return Err(e),
        };
        field = next;
        t = step as f64 * dt;
        if step % settings.sample_every == 0 || step == n_steps {
            if let SinkControl::Stop(reason) = sink(&take_sample(&field, t)?, &field) {
                return Ok(SimulationOutcome { field, t, steps: step, dt, stopped: Some(StopRecord { t, reason }) });
            }
        }
    }
    Ok(SimulationOutcome { field, t, steps: n_steps, dt, stopped: None })
}
