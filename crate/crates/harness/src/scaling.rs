//! ε sweeps of two co-rotating perturbed patches with confinement and velocity-residual fits.

use crate::config::{ScalingConfig, SimulateConfig};
use crate::error::Result;
use crate::fit::{linear_fit, log_log_fit, LinearFit};
use crate::output::{CsvTable, OutputDir};
use crate::run::run_simulation_samples;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vortexlab_core::diagnostics::{centers, measure_defect, DiagnosticsSample};
use vortexlab_core::euler::{default_time_step, field_velocities, BlobKernel, Evaluator};
use vortexlab_core::pvs::step_plan;
use vortexlab_core::simulation::SimulationSettings;
use vortexlab_core::{discretize, Domain, InitialDataSpec, Profile, Vec2, VortexPatchSpec};

/// Amplitudes probed when calibrating the initial defect.
pub const CALIBRATION_AMPLITUDES: [f64; 4] = [0.0, 0.05, 0.1, 0.2];
/// Largest amplitude the calibration may select.
pub const MAX_AMPLITUDE: f64 = 0.5;
/// Fraction of the run (by time) covered by the fit window: the final decade.
pub const FIT_WINDOW: f64 = 0.1;

/// Two patches at `(±separation/2, 0)` in the full plane.
pub fn two_patch_spec(config: &ScalingConfig, epsilon: f64, amplitude: f64) -> InitialDataSpec {
    let half = 0.5 * config.separation;
    let patch = |x: f64, phase_flip: bool| VortexPatchSpec {
        center: Vec2::new(x, 0.0),
        intensity: config.intensity,
        epsilon,
        profile: Profile::PerturbedDisk { amplitude: if phase_flip { -amplitude } else { amplitude }, mode: config.mode },
        support_radius_factor: 1.0,
        peak_vorticity: None,
    };
    InitialDataSpec {
        domain: Domain::FullPlane,
        patches: vec![patch(-half, false), patch(half, true)],
        separation_b: config.separation,
        beta: config.beta,
        n3: config.n3,
        n1: 1.0,
        n2: 10.0,
    }
}

/// One isolated radial patch: the steady control.
pub fn single_vortex_spec(config: &ScalingConfig, epsilon: f64) -> InitialDataSpec {
    InitialDataSpec {
        domain: Domain::FullPlane,
        patches: vec![VortexPatchSpec {
            center: Vec2::ZERO,
            intensity: config.intensity,
            epsilon,
            profile: Profile::UniformDisk,
            support_radius_factor: 1.0,
            peak_vorticity: None,
        }],
        separation_b: config.separation,
        beta: config.beta,
        n3: config.n3,
        n1: 1.0,
        n2: 10.0,
    }
}

/// Measured initial defect at one amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub amplitude: f64,
    pub defect: f64,
    pub defect_bound: f64,
}

/// Amplitude realizing `𝒟(0) ≈ N₃ ε^β`: the fit `𝒟 = D₀ + C·A²` gives a first guess, refined once
/// by rescaling `𝒟 − 𝒟(A=0)` quadratically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeCalibration {
    pub epsilon: f64,
    pub target_defect: f64,
    pub curve: Vec<CalibrationPoint>,
    /// Fit of the defect against `A²`: intercept `D₀`, slope `C`.
    pub fit: LinearFit,
    pub amplitude: f64,
    /// Target below the `A = 0` discretization floor, so `A = 0` was used.
    pub below_floor: bool,
    pub achieved: CalibrationPoint,
}

fn initial_defect(config: &ScalingConfig, epsilon: f64, amplitude: f64) -> Result<CalibrationPoint> {
    let field = discretize(&two_patch_spec(config, epsilon, amplitude), config.particles_per_patch)?;
    let m = measure_defect(&field, &centers(&field)?, 0.5 * field.blob_radius)?;
    Ok(CalibrationPoint { amplitude, defect: m.defect, defect_bound: m.defect_bound })
}

pub fn calibrate_amplitude(config: &ScalingConfig, epsilon: f64) -> Result<AmplitudeCalibration> {
    let target = config.n3 * epsilon.powf(config.beta);
    let curve = CALIBRATION_AMPLITUDES.iter().map(|&a| initial_defect(config, epsilon, a)).collect::<Result<Vec<_>>>()?;
    let a2: Vec<f64> = curve.iter().map(|p| p.amplitude * p.amplitude).collect();
    let d: Vec<f64> = curve.iter().map(|p| p.defect).collect();
    let fit = linear_fit(&a2, &d).expect("distinct calibration amplitudes");
    let excess = target - fit.intercept;
    let below_floor = !(excess > 0.0 && fit.slope > 0.0);
    let mut amplitude = if below_floor { 0.0 } else { (excess / fit.slope).sqrt().min(MAX_AMPLITUDE) };
    let mut achieved = initial_defect(config, epsilon, amplitude)?;
    let floor = curve[0].defect;
    if amplitude > 0.0 && achieved.defect > floor && target > floor {
        amplitude = (amplitude * ((target - floor) / (achieved.defect - floor)).sqrt()).min(MAX_AMPLITUDE);
        achieved = initial_defect(config, epsilon, amplitude)?;
    }
    Ok(AmplitudeCalibration { epsilon, target_defect: target, curve, fit, amplitude, below_floor, achieved })
}

/// Fixed step and sampling interval giving about `samples` samples up to `t_end`.
pub fn plan_run(spec: &InitialDataSpec, particles_per_patch: usize, t_end: f64, samples: usize) -> Result<SimulationSettings> {
    let field = discretize(spec, particles_per_patch)?;
    let kernel = BlobKernel::gaussian(field.blob_radius)?;
    let dt = default_time_step(&field, &field_velocities(&field, &kernel, Evaluator::Direct)?);
    let (steps, dt) = step_plan(t_end, dt)?;
    Ok(SimulationSettings {
        particles_per_patch,
        evaluator: Evaluator::Direct,
        dt: Some(dt),
        t_end,
        sample_every: steps.div_ceil(samples.max(1)).max(1),
        residual_probes: true,
        energies: true,
    })
}

/// Outcome of one sweep member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberResult {
    pub name: String,
    pub epsilon: f64,
    pub particles_per_patch: usize,
    pub horizon: f64,
    pub t_final: f64,
    /// Time at which the spread stop fired; `None` when the horizon was reached first.
    pub horizon_reached: Option<f64>,
    pub initial_defect: Option<f64>,
    /// `ln diam` against `ln t` over the final decade of samples.
    pub confinement_fit: Option<LinearFit>,
    /// Median over samples of `max_i |dX_i/dt − u_pvs(X_i)|`.
    pub residual: Option<f64>,
    /// Largest finite-difference error estimate of the residual samples.
    pub residual_budget: Option<f64>,
    pub diam_initial: f64,
    pub diam_max: f64,
    pub diam_min: f64,
}

fn max_diam(s: &DiagnosticsSample) -> f64 {
    s.diam.iter().copied().fold(0.0, f64::max)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn summarize_member(name: &str, epsilon: f64, particles_per_patch: usize, horizon: f64, samples: &[DiagnosticsSample], stopped_at: Option<f64>) -> MemberResult {
    let t_final = samples.last().map_or(0.0, |s| s.t);
    let window: Vec<&DiagnosticsSample> = samples.iter().filter(|s| s.t > 0.0 && s.t >= FIT_WINDOW * t_final).collect();
    let t: Vec<f64> = window.iter().map(|s| s.t).collect();
    let d: Vec<f64> = window.iter().map(|s| max_diam(s)).collect();
    let residuals: Vec<&_> = samples.iter().filter(|s| s.t > 0.0).filter_map(|s| s.velocity_residual.as_ref()).collect();
    let diams: Vec<f64> = samples.iter().map(max_diam).collect();
    MemberResult {
        name: name.to_string(),
        epsilon,
        particles_per_patch,
        horizon,
        t_final,
        horizon_reached: stopped_at,
        initial_defect: samples.first().and_then(|s| s.defect.as_ref()).map(|d| d.defect),
        confinement_fit: log_log_fit(&t, &d),
        residual: median(residuals.iter().map(|r| r.residuals.iter().copied().fold(0.0, f64::max)).collect()),
        residual_budget: residuals.iter().flat_map(|r| r.differentiation_error.iter().copied()).reduce(f64::max),
        diam_initial: diams.first().copied().unwrap_or(0.0),
        diam_max: diams.iter().copied().fold(0.0, f64::max),
        diam_min: diams.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Leading-order predictions for the configured β.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryExponents {
    pub beta: f64,
    /// Time exponent of the leading diameter term `ε^{min(1,β/2)}(1+t)^{1/2}`.
    pub diam_time_exponent: f64,
    /// ε exponents of the two diameter terms.
    pub diam_epsilon_exponents: (f64, f64),
    /// ε exponent of the residual bound `ε^{min(4,2β)}(1+t) + ε^{2+β/2}` as ε → 0 at fixed t.
    pub residual_epsilon_exponent: f64,
}

pub fn theory_exponents(beta: f64) -> TheoryExponents {
    TheoryExponents {
        beta,
        diam_time_exponent: 0.5,
        diam_epsilon_exponents: ((beta / 2.0).min(1.0), 0.5 + beta / 8.0),
        residual_epsilon_exponent: (2.0 * beta).min(4.0).min(2.0 + beta / 2.0),
    }
}

/// Diameter bound shape `ε^{min(1,β/2)}(1+t)^{1/2} + ε^{1/2+β/8}(1+t)^{1/4}` without its constant.
pub fn theory_diam(epsilon: f64, beta: f64, t: f64) -> f64 {
    epsilon.powf((beta / 2.0).min(1.0)) * (1.0 + t).sqrt() + epsilon.powf(0.5 + beta / 8.0) * (1.0 + t).powf(0.25)
}

/// Residual bound shape `ε^{min(4,2β)}(1+t) + ε^{2+β/2}` without its constant.
pub fn theory_residual(epsilon: f64, beta: f64, t: f64) -> f64 {
    epsilon.powf((2.0 * beta).min(4.0)) * (1.0 + t) + epsilon.powf(2.0 + beta / 2.0)
}

/// Single-vortex control: relative diameter change against the particle lattice spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlResult {
    pub member: MemberResult,
    /// `(diam_max − diam_min) / diam_initial`.
    pub relative_variation: f64,
    /// Lattice spacing over the initial diameter: the resolution of a particle support diameter.
    pub noise_level: f64,
    pub flat: bool,
}

/// Same ε at a refined particle count, to expose discretization sensitivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub base: MemberResult,
    pub refined: MemberResult,
    pub confinement_slope_change: Option<f64>,
    pub residual_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberFailure {
    pub name: String,
    pub message: String,
}

/// Result of a sweep; every fit carries its confidence interval and point count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudyResult {
    pub epsilons: Vec<f64>,
    pub calibrations: Vec<AmplitudeCalibration>,
    pub members: Vec<MemberResult>,
    /// Per-ε confinement fits, in the order of `epsilons`.
    pub confinement_exponent: Vec<Option<LinearFit>>,
    /// Largest per-ε confinement slope.
    pub max_confinement_exponent: Option<f64>,
    /// `ln residual` against `ln ε`.
    pub residual_exponent: Option<LinearFit>,
    pub horizon_reached: Vec<Option<f64>>,
    pub theory_exponents: TheoryExponents,
    pub control: Option<ControlResult>,
    pub refinement: Option<RefinementResult>,
    pub failures: Vec<MemberFailure>,
}

enum Job {
    Sweep(usize),
    Control,
    Refine,
}

fn horizon(config: &ScalingConfig, epsilon: f64) -> f64 {
    config.horizon_factor * epsilon.powf(config.horizon_exponent)
}

fn run_member(config: &ScalingConfig, out: &OutputDir, name: &str, spec: InitialDataSpec, n: usize, epsilon: f64, seed: Option<u64>) -> Result<MemberResult> {
    let t_end = horizon(config, epsilon);
    let sim = SimulateConfig {
        simulation: plan_run(&spec, n, t_end, config.samples)?,
        initial: spec,
        stop_spread_fraction: Some(config.stop_spread_fraction),
        snapshot_every: None,
    };
    let (summary, samples) = run_simulation_samples(&sim, &out.subdir(name)?, seed)?;
    Ok(summarize_member(name, epsilon, n, t_end, &samples, summary.stopped.map(|s| s.t)))
}

/// Runs the sweep (members in parallel), the control and the refinement, and writes
/// `calibration.json`, `comparison.csv`, `result.json` and one directory per member.
pub fn scaling_study(config: &ScalingConfig, out: &OutputDir, seed: Option<u64>) -> Result<ScalingStudyResult> {
    config.validate()?;
    out.write_json("config.json", config)?;
    let calibrations = config.epsilons.par_iter().map(|&e| calibrate_amplitude(config, e)).collect::<Result<Vec<_>>>()?;
    out.write_json("calibration.json", &calibrations)?;

    let emax = config.epsilons.iter().copied().fold(0.0, f64::max);
    let imax = config.epsilons.iter().position(|&e| e == emax).expect("nonempty sweep");
    let mut jobs: Vec<Job> = (0..config.epsilons.len()).map(Job::Sweep).collect();
    if config.single_vortex_control {
        jobs.push(Job::Control);
    }
    if config.refinement_factor > 1 {
        jobs.push(Job::Refine);
    }
    let results: Vec<(String, Result<MemberResult>)> = jobs
        .par_iter()
        .map(|job| match *job {
            Job::Sweep(i) => {
                let e = config.epsilons[i];
                let name = format!("eps_{e}");
                let spec = two_patch_spec(config, e, calibrations[i].amplitude);
                let r = run_member(config, out, &name, spec, config.particles_per_patch, e, seed);
                (name, r)
            }
            Job::Control => {
                let name = format!("control_eps_{emax}");
                (name.clone(), run_member(config, out, &name, single_vortex_spec(config, emax), config.particles_per_patch, emax, seed))
            }
            Job::Refine => {
                let n = config.particles_per_patch * config.refinement_factor;
                let name = format!("refined_eps_{emax}_n_{n}");
                let spec = two_patch_spec(config, emax, calibrations[imax].amplitude);
                (name.clone(), run_member(config, out, &name, spec, n, emax, seed))
            }
        })
        .collect();

    let mut failures = Vec::new();
    let mut members = Vec::new();
    let mut control = None;
    let mut refined = None;
    for (job, (name, r)) in jobs.iter().zip(results) {
        match r {
            Ok(m) => match job {
                Job::Sweep(_) => members.push(m),
                Job::Control => control = Some(m),
                Job::Refine => refined = Some(m),
            },
            Err(e) => failures.push(MemberFailure { name, message: e.to_string() }),
        }
    }

    let by_eps = |e: f64| members.iter().find(|m| m.epsilon == e);
    let confinement_exponent: Vec<Option<LinearFit>> = config.epsilons.iter().map(|&e| by_eps(e).and_then(|m| m.confinement_fit.clone())).collect();
    let (eps_fit, res_fit): (Vec<f64>, Vec<f64>) = members.iter().filter_map(|m| Some((m.epsilon, m.residual?))).unzip();
    let control = control.map(|member| {
        let spacing = member.epsilon * (std::f64::consts::PI / config.particles_per_patch as f64).sqrt();
        let relative_variation = (member.diam_max - member.diam_min) / member.diam_initial;
        let noise_level = spacing / member.diam_initial;
        ControlResult { flat: relative_variation <= noise_level, relative_variation, noise_level, member }
    });
    let refinement = refined.zip(by_eps(emax).cloned()).map(|(refined, base)| RefinementResult {
        confinement_slope_change: base.confinement_fit.as_ref().zip(refined.confinement_fit.as_ref()).map(|(a, b)| b.slope - a.slope),
        residual_ratio: base.residual.zip(refined.residual).map(|(a, b)| b / a),
        base,
        refined,
    });
    let result = ScalingStudyResult {
        epsilons: config.epsilons.clone(),
        max_confinement_exponent: confinement_exponent.iter().flatten().map(|f| f.slope).reduce(f64::max),
        confinement_exponent,
        residual_exponent: log_log_fit(&eps_fit, &res_fit),
        horizon_reached: config.epsilons.iter().map(|&e| by_eps(e).and_then(|m| m.horizon_reached)).collect(),
        theory_exponents: theory_exponents(config.beta),
        calibrations,
        members,
        control,
        refinement,
        failures,
    };
    out.write_bytes("comparison.csv", comparison_table(config, &result).as_bytes())?;
    out.write_json("result.json", &result)?;
    Ok(result)
}

/// Per-ε measured values next to the unscaled theoretical shapes at the final time.
fn comparison_table(config: &ScalingConfig, r: &ScalingStudyResult) -> String {
    let header: Vec<String> = ["epsilon", "t_final", "diam_initial", "diam_max", "theory_diam", "confinement_slope", "slope_ci_low", "slope_ci_high", "residual", "residual_budget", "theory_residual"]
        .map(String::from)
        .to_vec();
    let mut csv = CsvTable::new(&header);
    for m in &r.members {
        let f = m.confinement_fit.as_ref();
        let ci = f.and_then(|f| f.slope_ci95);
        csv.push(&[
            Some(m.epsilon),
            Some(m.t_final),
            Some(m.diam_initial),
            Some(m.diam_max),
            Some(theory_diam(m.epsilon, config.beta, m.t_final)),
            f.map(|f| f.slope),
            ci.map(|c| c.0),
            ci.map(|c| c.1),
            m.residual,
            m.residual_budget,
            Some(theory_residual(m.epsilon, config.beta, m.t_final)),
        ]);
    }
    csv.as_str().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theory_exponents_for_small_and_large_beta() {
        let t = theory_exponents(2.0);
        assert_eq!(t.diam_epsilon_exponents, (1.0, 0.75));
        assert_eq!(t.residual_epsilon_exponent, 3.0);
        assert_eq!(theory_exponents(8.0).residual_epsilon_exponent, 4.0);
        assert_eq!(theory_exponents(1.0).residual_epsilon_exponent, 2.0);
    }

    #[test]
    fn median_of_odd_and_even_lists() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(Vec::new()), None);
    }

    #[test]
    fn two_patch_layout_is_point_symmetric() {
        let cfg: ScalingConfig = serde_json::from_str(r#"{"epsilons": [0.1, 0.05], "beta": 2.0, "particles_per_patch": 64}"#).unwrap();
        let spec = two_patch_spec(&cfg, 0.05, 0.1);
        assert!(vortexlab_core::validate(&spec).is_empty());
        let f = discretize(&spec, 64).unwrap();
        let c = centers(&f).unwrap();
        assert!((c[0] + c[1]).norm() < 1e-12);
    }
}
