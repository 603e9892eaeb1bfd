//! Fixed-step RK4 integration of the point-vortex system with conserved-quantity tracking.

use crate::error::{Error, Result};
use crate::geometry::{CompensatedSum, Vec2};
use crate::greens::{gamma, green, pvs_velocities, PointVortexState};
use crate::model::Domain;
use serde::{Deserialize, Serialize};

/// Conserved quantities of the point-vortex system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvsInvariants {
    /// `Σ_{i<j} a_i a_j G(X_i,X_j) + ½ Σ_i a_i² γ(X_i,X_i)`.
    pub hamiltonian: f64,
    /// `Σ a_i X_i`; absent on the disk.
    pub linear_impulse: Option<Vec2>,
    /// `Σ a_i |X_i|²`.
    pub angular_impulse: f64,
}

/// Multiple of `dt · max speed` that every pair separation must exceed.
pub const COLLISION_GUARD_FACTOR: f64 = 10.0;

pub fn invariants(state: &PointVortexState) -> Result<PvsInvariants> {
    let n = state.len();
    let mut h = CompensatedSum::new();
    let mut ang = CompensatedSum::new();
    let (mut px, mut py) = (CompensatedSum::new(), CompensatedSum::new());
    for i in 0..n {
        let (xi, ai) = (state.positions[i], state.intensities[i]);
        h.add(0.5 * ai * ai * gamma(state.domain, xi, xi)?);
        for j in (i + 1)..n {
            h.add(ai * state.intensities[j] * green(state.domain, xi, state.positions[j])?);
        }
        ang.add(ai * xi.norm_sq());
        px.add(ai * xi.x);
        py.add(ai * xi.y);
    }
    Ok(PvsInvariants {
        hamiltonian: h.value(),
        linear_impulse: match state.domain {
            Domain::FullPlane => Some(Vec2::new(px.value(), py.value())),
            Domain::UnitDisk => None,
        },
        angular_impulse: ang.value(),
    })
}

fn check_separation(state: &PointVortexState, velocities: &[Vec2], dt: f64) -> Result<()> {
    let vmax = velocities.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let guard = COLLISION_GUARD_FACTOR * dt * vmax;
    for i in 0..state.len() {
        for j in (i + 1)..state.len() {
            let d = state.positions[i].dist(state.positions[j]);
            if !(d > guard) {
                return Err(Error::CollisionImminent { i, j, distance: d, guard });
            }
        }
    }
    Ok(())
}

fn shifted(state: &PointVortexState, k: &[Vec2], s: f64) -> PointVortexState {
    PointVortexState {
        positions: state.positions.iter().zip(k).map(|(&x, &v)| x + v * s).collect(),
        intensities: state.intensities.clone(),
        domain: state.domain,
    }
}

/// One classical RK4 step of `X_i' = u_i^p(X_i)`.
pub fn step(state: &PointVortexState, dt: f64) -> Result<PointVortexState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    let k1 = pvs_velocities(state)?;
    check_separation(state, &k1, dt)?;
    let k2 = pvs_velocities(&shifted(state, &k1, 0.5 * dt))?;
    let k3 = pvs_velocities(&shifted(state, &k2, 0.5 * dt))?;
    let k4 = pvs_velocities(&shifted(state, &k3, dt))?;
    let positions = (0..state.len())
        .map(|i| state.positions[i] + (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (dt / 6.0))
        .collect();
    let next = PointVortexState { positions, intensities: state.intensities.clone(), domain: state.domain };
    next.check()?;
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvsSample {
    pub t: f64,
    pub state: PointVortexState,
    pub invariants: PvsInvariants,
}

/// Early termination record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub t: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvsTrajectory {
    /// Step actually used: `t_end / n_steps` with `n_steps = ceil(t_end / dt)`.
    pub dt: f64,
    pub samples: Vec<PvsSample>,
    pub stopped: Option<StopRecord>,
}

/// Number of fixed steps covering `[0, t_end]` with step at most `dt`, and the effective step.
pub fn step_plan(t_end: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t_end >= 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("need t_end >= 0 and dt > 0, got {t_end}, {dt}")));
    }
    if t_end == 0.0 {
        return Ok((0, dt));
    }
    let n = (t_end / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    Ok((n, t_end / n as f64))
}

/// Fixed-step trajectory, sampled at step 0, every `sample_every` steps and at the end.
/// A collision-guard failure ends the run and is reported in `stopped`.
pub fn integrate(state: &PointVortexState, t_end: f64, dt: f64, sample_every: usize) -> Result<PvsTrajectory> {
    state.check()?;
    let (n, dt) = step_plan(t_end, dt)?;
    let every = sample_every.max(1);
    let mut cur = state.clone();
    let mut samples = vec![PvsSample { t: 0.0, state: cur.clone(), invariants: invariants(&cur)? }];
    let mut stopped = None;
    for k in 1..=n {
        match step(&cur, dt) {
            Ok(next) => cur = next,
            Err(e @ (Error::CollisionImminent { .. } | Error::OutsideDomain(_) | Error::Singular(_))) => {
                stopped = Some(StopRecord { t: (k - 1) as f64 * dt, reason: e.to_string() });
                break;
            }
            Err(e) => return Err(e),
        }
        if k % every == 0 || k == n {
            let t = if k == n { t_end } else { k as f64 * dt };
            samples.push(PvsSample { t, state: cur.clone(), invariants: invariants(&cur)? });
        }
    }
    Ok(PvsTrajectory { dt, samples, stopped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pair(a1: f64, a2: f64) -> PointVortexState {
        PointVortexState::new(vec![Vec2::new(-0.5, 0.0), Vec2::new(0.5, 0.0)], vec![a1, a2], Domain::FullPlane).unwrap()
    }

    #[test]
    fn single_vortex_is_stationary() {
        let s = PointVortexState::new(vec![Vec2::new(0.2, 0.1)], vec![1.0], Domain::FullPlane).unwrap();
        assert_eq!(step(&s, 0.1).unwrap(), s);
        let tr = integrate(&s, 1.0, 0.1, 3).unwrap();
        assert!(tr.samples.iter().all(|p| p.state == s));
    }

    #[test]
    fn reference_invariants() {
        let s = pair(1.0, 1.0);
        let inv = invariants(&s).unwrap();
        assert_eq!(inv.angular_impulse, 0.5);
        assert_eq!(inv.linear_impulse, Some(Vec2::ZERO));
        assert_eq!(inv.hamiltonian, 0.0);
    }

    #[test]
    fn co_rotating_pair_returns_after_one_period() {
        let s = pair(2.0 * PI, 2.0 * PI);
        let tr = integrate(&s, PI, 1e-3, 1000).unwrap();
        let end = &tr.samples.last().unwrap().state;
        for i in 0..2 {
            assert!(end.positions[i].dist(s.positions[i]) < 1e-6);
        }
    }

    #[test]
    fn dipole_translates_at_unit_speed() {
        let s = pair(2.0 * PI, -2.0 * PI);
        let tr = integrate(&s, 1.0, 1e-3, 100).unwrap();
        let end = &tr.samples.last().unwrap().state;
        for i in 0..2 {
            let d = end.positions[i] - s.positions[i];
            assert!((d.norm() - 1.0).abs() < 1e-8);
            assert!(d.x.abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_schedule_includes_endpoints() {
        let s = pair(1.0, 1.0);
        let tr = integrate(&s, 0.05, 0.01, 2).unwrap();
        let ts: Vec<f64> = tr.samples.iter().map(|p| p.t).collect();
        assert_eq!(ts.len(), 4);
        assert_eq!(ts[0], 0.0);
        assert_eq!(*ts.last().unwrap(), 0.05);
    }

    #[test]
    fn collision_guard_stops_integration() {
        let s = PointVortexState::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1e-3, 0.0)], vec![1.0, 1.0], Domain::FullPlane)
            .unwrap();
        assert!(matches!(step(&s, 0.1), Err(Error::CollisionImminent { i: 0, j: 1, .. })));
        let tr = integrate(&s, 1.0, 0.1, 1).unwrap();
        assert_eq!(tr.samples.len(), 1);
        assert_eq!(tr.stopped.as_ref().unwrap().t, 0.0);
    }
}
