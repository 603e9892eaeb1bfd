//! `simulate`, `pvs` and `rearrange`: single runs with CSV/JSON persistence.

use crate::config::{PvsConfig, RearrangeConfig, SimulateConfig};
use crate::error::Result;
use crate::output::{encode_snapshot, CsvTable, OutputDir};
use serde::{Deserialize, Serialize};
use vortexlab_core::diagnostics::DiagnosticsSample;
use vortexlab_core::energy::{EnergyReport, LatticeDensity};
use vortexlab_core::greens::PointVortexState;
use vortexlab_core::pvs::{integrate, StopRecord};
use vortexlab_core::simulation::{diagnostics_settings, simulate, SinkControl};
use vortexlab_core::{discretize, InitialDataSpec};

/// Run parameters recorded next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub dt: f64,
    pub blob_radius: Option<f64>,
    pub particles: usize,
}

/// Relative change `|x(t) − x(0)| / |x(0)|`, or the absolute change when `x(0) = 0`.
pub fn relative_drift(initial: f64, current: f64) -> f64 {
    let d = (current - initial).abs();
    if initial == 0.0 { d } else { d / initial.abs() }
}

fn column_names(n_patches: usize, orders: &[f64], residuals: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 0..n_patches {
        h.extend([format!("center_x_{i}"), format!("center_y_{i}"), format!("diam_{i}")]);
    }
    h.extend(["spread".into(), "max_intrinsic_distance".into()]);
    h.extend(orders.iter().map(|k| format!("m_{k}")));
    h.extend(["defect", "defect_bound", "surrogate", "b1_lhs", "total_circulation", "angular_momentum", "pv_energy", "total_energy"].map(String::from));
    if residuals {
        for i in 0..n_patches {
            h.extend([format!("residual_{i}"), format!("residual_error_{i}")]);
        }
    }
    h
}

fn row(s: &DiagnosticsSample, residuals: bool) -> Vec<Option<f64>> {
    let mut r = vec![Some(s.t)];
    for (c, d) in s.centers.iter().zip(&s.diam) {
        r.extend([Some(c.x), Some(c.y), Some(*d)]);
    }
    r.extend([Some(s.spread), Some(s.max_intrinsic_distance)]);
    r.extend(s.m_k.iter().map(|m| Some(m.value)));
    let d = s.defect.as_ref();
    r.extend([d.map(|d| d.defect), d.map(|d| d.defect_bound), d.map(|d| d.surrogate), Some(s.b1_lhs)]);
    let c = &s.conservation;
    r.extend([Some(c.total_circulation), Some(c.angular_momentum), Some(c.pv_energy), Some(c.total_energy)]);
    if residuals {
        for i in 0..s.centers.len() {
            let v = s.velocity_residual.as_ref();
            r.extend([v.map(|v| v.residuals[i]), v.map(|v| v.differentiation_error[i])]);
        }
    }
    r
}

/// Drift of the conserved quantities over a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservationDrift {
    /// Largest `|Σ Γ(t) − Σ Γ(0)|`.
    pub circulation_abs: f64,
    pub angular_momentum_rel: f64,
    pub energy_rel: f64,
}

/// `summary.json` of a `simulate` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub t_final: f64,
    pub steps: usize,
    pub dt: f64,
    pub samples: usize,
    pub stopped: Option<StopRecord>,
    pub drift: ConservationDrift,
    pub final_sample: DiagnosticsSample,
}

/// Stop reason when some particle's intrinsic distance reaches `fraction · b`.
pub fn spread_stop(sample: &DiagnosticsSample, spec: &InitialDataSpec, fraction: Option<f64>) -> Option<String> {
    let f = fraction?;
    let limit = f * spec.separation_b;
    (sample.max_intrinsic_distance >= limit)
        .then(|| format!("max intrinsic distance {:e} reached {f}·b = {limit:e}", sample.max_intrinsic_distance))
}

/// Runs one simulation and writes `config.json`, `metadata.json`, `timeseries.csv`, `summary.json`
/// and, when requested, `snapshots/snapshot_NNNNNN.bin`.
pub fn run_simulation(config: &SimulateConfig, out: &OutputDir, seed: Option<u64>) -> Result<SimulationSummary> {
    Ok(run_simulation_samples(config, out, seed)?.0)
}

/// [`run_simulation`] that also returns every diagnostics sample.
pub fn run_simulation_samples(config: &SimulateConfig, out: &OutputDir, seed: Option<u64>) -> Result<(SimulationSummary, Vec<DiagnosticsSample>)> {
    config.validate()?;
    out.write_json("config.json", config)?;
    let spec = &config.initial;
    let settings = &config.simulation;
    let diag = diagnostics_settings(spec, settings.energies);
    let header = column_names(spec.patches.len(), &diag.moment_orders, settings.residual_probes);
    let mut csv = CsvTable::new(&header);
    let snapshots = match config.snapshot_every {
        Some(_) => Some(out.subdir("snapshots")?),
        None => None,
    };
    let mut first: Option<DiagnosticsSample> = None;
    let mut samples: Vec<DiagnosticsSample> = Vec::new();
    let mut drift = ConservationDrift { circulation_abs: 0.0, angular_momentum_rel: 0.0, energy_rel: 0.0 };
    let mut count = 0usize;
    let mut io_error = None;
    let outcome = simulate(spec, settings, |s, field| {
        csv.push(&row(s, settings.residual_probes));
        let c0 = &first.get_or_insert_with(|| s.clone()).conservation;
        let c = &s.conservation;
        drift.circulation_abs = drift.circulation_abs.max((c.total_circulation - c0.total_circulation).abs());
        drift.angular_momentum_rel = drift.angular_momentum_rel.max(relative_drift(c0.angular_momentum, c.angular_momentum));
        drift.energy_rel = drift.energy_rel.max(relative_drift(c0.total_energy, c.total_energy));
        if let (Some(dir), Some(every)) = (&snapshots, config.snapshot_every) {
            if count % every == 0 {
                if let Err(e) = dir.write_bytes(&format!("snapshot_{count:06}.bin"), &encode_snapshot(field, s.t)) {
                    io_error = Some(e);
                    return SinkControl::Stop("snapshot write failed".into());
                }
            }
        }
        count += 1;
        samples.push(s.clone());
        match spread_stop(s, spec, config.stop_spread_fraction) {
            Some(reason) => SinkControl::Stop(reason),
            None => SinkControl::Continue,
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    out.write_bytes("timeseries.csv", csv.as_str().as_bytes())?;
    out.write_json(
        "metadata.json",
        &Metadata {
            command: "simulate".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            dt: outcome.dt,
            blob_radius: Some(outcome.field.blob_radius),
            particles: outcome.field.len(),
        },
    )?;
    let summary = SimulationSummary {
        t_final: outcome.t,
        steps: outcome.steps,
        dt: outcome.dt,
        samples: count,
        stopped: outcome.stopped,
        drift,
        final_sample: samples.last().expect("the initial sample is always taken").clone(),
    };
    out.write_json("summary.json", &summary)?;
    Ok((summary, samples))
}

/// Number of particles `simulate` would create for a configuration.
pub fn particle_count(config: &SimulateConfig) -> Result<usize> {
    Ok(discretize(&config.initial, config.simulation.particles_per_patch)?.len())
}

/// `summary.json` of a `pvs` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvsSummary {
    pub t_final: f64,
    pub dt: f64,
    pub samples: usize,
    pub stopped: Option<StopRecord>,
    pub hamiltonian_drift_rel: f64,
    pub angular_impulse_drift_rel: f64,
    pub final_state: PointVortexState,
}

/// Integrates the point-vortex system and writes `trajectory.csv` with positions and invariants.
pub fn run_pvs(config: &PvsConfig, out: &OutputDir, seed: Option<u64>) -> Result<PvsSummary> {
    config.validate()?;
    out.write_json("config.json", config)?;
    let state = PointVortexState::new(config.positions.clone(), config.intensities.clone(), config.domain)?;
    let traj = integrate(&state, config.t_end, config.dt, config.sample_every)?;
    let n = state.len();
    let mut header = vec!["t".to_string()];
    for i in 0..n {
        header.extend([format!("x_{i}"), format!("y_{i}")]);
    }
    header.extend(["hamiltonian".into(), "angular_impulse".into(), "impulse_x".into(), "impulse_y".into()]);
    let mut csv = CsvTable::new(&header);
    for s in &traj.samples {
        let mut r = vec![Some(s.t)];
        for p in &s.state.positions {
            r.extend([Some(p.x), Some(p.y)]);
        }
        let inv = &s.invariants;
        r.extend([Some(inv.hamiltonian), Some(inv.angular_impulse), inv.linear_impulse.map(|p| p.x), inv.linear_impulse.map(|p| p.y)]);
        csv.push(&r);
    }
    out.write_bytes("trajectory.csv", csv.as_str().as_bytes())?;
    out.write_json(
        "metadata.json",
        &Metadata { command: "pvs".into(), version: env!("CARGO_PKG_VERSION").into(), seed, dt: traj.dt, blob_radius: None, particles: n },
    )?;
    let i0 = traj.samples[0].invariants;
    let last = traj.samples.last().expect("initial sample");
    let summary = PvsSummary {
        t_final: last.t,
        dt: traj.dt,
        samples: traj.samples.len(),
        stopped: traj.stopped.clone(),
        hamiltonian_drift_rel: traj.samples.iter().map(|s| relative_drift(i0.hamiltonian, s.invariants.hamiltonian)).fold(0.0, f64::max),
        angular_impulse_drift_rel: traj
            .samples
            .iter()
            .map(|s| relative_drift(i0.angular_impulse, s.invariants.angular_impulse))
            .fold(0.0, f64::max),
        final_state: last.state.clone(),
    };
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

/// Power-law energy report for one exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub alpha: f64,
    pub report: EnergyReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RearrangeRecord {
    pub name: String,
    pub mass: f64,
    pub log: EnergyReport,
    pub power: Vec<PowerReport>,
}

/// Rearranges every input, writing `<name>_rearranged.json` per density plus `energies.json`
/// and `energies.csv`.
pub fn run_rearrange(config: &RearrangeConfig, out: &OutputDir) -> Result<Vec<RearrangeRecord>> {
    config.validate()?;
    out.write_json("config.json", config)?;
    let mut records = Vec::new();
    let mut header: Vec<String> = ["mass", "energy", "energy_rearranged", "defect", "quadrature_error_bound"].map(String::from).to_vec();
    for a in &config.alphas {
        header.extend([format!("energy_alpha_{a}"), format!("defect_alpha_{a}"), format!("bound_alpha_{a}")]);
    }
    let mut csv = CsvTable::new(&header);
    let mut names = String::from("name\n");
    for input in &config.densities {
        let d: LatticeDensity = input.load()?;
        let log = d.defect()?;
        let power = config.alphas.iter().map(|&alpha| Ok(PowerReport { alpha, report: d.power_defect(alpha)? })).collect::<Result<Vec<_>>>()?;
        out.write_json(&format!("{}_rearranged.json", input.name()), &d.rearranged_about(d.center_of_mass()?))?;
        let mut r = vec![Some(d.mass()), Some(log.energy), Some(log.energy_rearranged), Some(log.defect), Some(log.quadrature_error_bound)];
        for p in &power {
            r.extend([Some(p.report.energy), Some(p.report.defect), Some(p.report.quadrature_error_bound)]);
        }
        csv.push(&r);
        names.push_str(input.name());
        names.push('\n');
        records.push(RearrangeRecord { name: input.name().to_string(), mass: d.mass(), log, power });
    }
    let table: String = names.lines().zip(csv.as_str().lines()).map(|(n, r)| format!("{n},{r}\n")).collect();
    out.write_bytes("energies.csv", table.as_bytes())?;
    out.write_json("energies.json", &records)?;
    Ok(records)
}
