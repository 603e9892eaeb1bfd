//! Measurements over a particle field: patch centres, intrinsic-distance moments and spread,
//! energy defects, centre-velocity residuals and conserved quantities.

use crate::energy::{particle_energy, surrogate_defect, LatticeDensity, SelfEnergy};
use crate::error::{Error, Result};
use crate::geometry::{compensated_sum, diameter, CompensatedSum, Vec2};
use crate::greens::{pvs_self_velocity, PointVortexState, RelativeFrame};
use crate::model::{deposit, Domain, GridParams, ParticleField};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Inner edge of the cutoff transition, in units of `N₁ε`.
pub const CUTOFF_INNER: f64 = 40.0;
/// Outer edge of the cutoff transition, in units of `N₁ε`.
pub const CUTOFF_OUTER: f64 = 80.0;

/// `X_i = (1/a_i) Σ_{label p = i} Γ_p x_p` for every label.
pub fn centers(field: &ParticleField) -> Result<Vec<Vec2>> {
    let n = field.n_labels();
    let mut g = vec![CompensatedSum::new(); n];
    let mut gx = vec![CompensatedSum::new(); n];
    let mut gy = vec![CompensatedSum::new(); n];
    for p in 0..field.len() {
        let (l, c, x) = (field.labels[p], field.circulations[p], field.positions[p]);
        g[l].add(c);
        gx[l].add(c * x.x);
        gy[l].add(c * x.y);
    }
    (0..n)
        .map(|i| {
            let a = g[i].value();
            if a == 0.0 {
                return Err(Error::ZeroCirculation(i));
            }
            Ok(Vec2::new(gx[i].value() / a, gy[i].value() / a))
        })
        .collect()
}

/// Smooth cutoff `η_ε(r)`: 0 up to `40N₁ε`, 1 from `80N₁ε`, quintic smoothstep in between.
pub fn cutoff_eta(r: f64, epsilon: f64, n1: f64) -> f64 {
    let inner = CUTOFF_INNER * n1 * epsilon;
    let width = (CUTOFF_OUTER - CUTOFF_INNER) * n1 * epsilon;
    if r <= inner {
        return 0.0;
    }
    if r >= inner + width {
        return 1.0;
    }
    let s = (r - inner) / width;
    s * s * s * (s * (6.0 * s - 15.0) + 10.0)
}

/// Default moment orders `{1, 2, 3, 4, ⌈|ln ε|⌉}` without duplicates.
pub fn default_moment_orders(epsilon: f64) -> Vec<f64> {
    let mut ks = vec![1.0, 2.0, 3.0, 4.0];
    let k = epsilon.ln().abs().ceil();
    if !ks.contains(&k) && k >= 1.0 {
        ks.push(k);
    }
    ks
}

/// `d_i(x_p)` for every particle, with `i` its label.
pub fn particle_distances(field: &ParticleField, state: &PointVortexState) -> Result<Vec<f64>> {
    if state.len() != field.n_labels() {
        return Err(Error::InvalidParameter("one point vortex per label required".into()));
    }
    let frames: Vec<RelativeFrame<'_>> = (0..state.len()).map(|i| RelativeFrame::new(state, i)).collect::<Result<_>>()?;
    (0..field.len()).into_par_iter().map(|p| frames[field.labels[p]].distance(field.positions[p])).collect()
}

/// One moment `M_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub k: f64,
    pub value: f64,
}

fn moments_from(field: &ParticleField, d: &[f64], ks: &[f64], epsilon: f64, n1: f64) -> Result<Vec<Moment>> {
    if ks.iter().any(|&k| !(k >= 1.0)) {
        return Err(Error::InvalidParameter("moment orders must be ≥ 1".into()));
    }
    Ok(ks
        .iter()
        .map(|&k| Moment {
            k,
            value: compensated_sum(
                (0..field.len()).map(|p| field.circulations[p].abs() * cutoff_eta(d[p], epsilon, n1) * d[p].powf(k)),
            ),
        })
        .collect())
}

fn spread_from(d: &[f64], epsilon: f64, n1: f64) -> f64 {
    d.iter().copied().fold(CUTOFF_INNER * n1 * epsilon, f64::max)
}

/// `M_k = Σ_i Σ_{label p = i} |Γ_p| η_ε(d_i(x_p)) d_i(x_p)^k`.
pub fn moments(field: &ParticleField, state: &PointVortexState, ks: &[f64], epsilon: f64, n1: f64) -> Result<Vec<Moment>> {
    let d = particle_distances(field, state)?;
    moments_from(field, &d, ks, epsilon, n1)
}

/// `S = max(40N₁ε, max_p d_{label p}(x_p))`.
pub fn spread(field: &ParticleField, state: &PointVortexState, epsilon: f64, n1: f64) -> Result<f64> {
    Ok(spread_from(&particle_distances(field, state)?, epsilon, n1))
}

/// Centre-velocity residuals at the middle sample of a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityResidual {
    /// `|dX_i/dt − u_i^p(X_i)|`.
    pub residuals: Vec<f64>,
    /// Estimated error of the difference quotient.
    pub differentiation_error: Vec<f64>,
}

/// Residuals `|dX_i/dt − u_i^p(X_i)|` from an odd window of equally spaced centre samples.
///
/// Three samples give the two-point central difference, with error estimated by `Δt·|X''|`;
/// five or more use the middle five (fourth-order stencil, error from its gap to the two-point one).
pub fn velocity_residual(window: &[Vec<Vec2>], dt: f64, intensities: &[f64], domain: Domain) -> Result<VelocityResidual> {
    if window.len() < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: window.len() });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("sample spacing must be positive".into()));
    }
    let mid = window.len() / 2;
    let n = window[mid].len();
    if window.iter().any(|w| w.len() != n) {
        return Err(Error::InvalidParameter("window samples differ in vortex count".into()));
    }
    let state = PointVortexState::new(window[mid].clone(), intensities.to_vec(), domain)?;
    let mut residuals = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    for i in 0..n {
        let (xm, xp) = (window[mid - 1][i], window[mid + 1][i]);
        let two_point = (xp - xm) / (2.0 * dt);
        let (deriv, err) = if window.len() >= 5 && mid >= 2 && mid + 2 < window.len() {
            let (xmm, xpp) = (window[mid - 2][i], window[mid + 2][i]);
            let four = (xmm - xpp + (xp - xm) * 8.0) / (12.0 * dt);
            (four, (four - two_point).norm())
        } else {
            let second = (xp - window[mid][i] * 2.0 + xm) / (dt * dt);
            (two_point, second.norm() * dt)
        };
        residuals.push((deriv - pvs_self_velocity(&state, i)?).norm());
        errors.push(err);
    }
    Ok(VelocityResidual { residuals, differentiation_error: errors })
}

/// Conserved and nearly conserved quantities of a field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    pub total_circulation: f64,
    /// `Σ Γ_p |x_p|²`.
    pub angular_momentum: f64,
    /// `Σ Γ_p x_p`, full plane only.
    pub linear_impulse: Option<Vec2>,
    /// `Σ_{i<j} a_i a_j ln|X_i − X_j|`.
    pub pv_energy: f64,
    /// Blob Hamiltonian `Σ_{p,q} Γ_p Γ_q [ψ_δ + γ]`.
    pub total_energy: f64,
}

pub fn conservation(field: &ParticleField) -> Result<Conservation> {
    field.check()?;
    let x = centers(field)?;
    let a: Vec<f64> = (0..x.len()).map(|i| field.label_circulation(i)).collect();
    let mut pv = CompensatedSum::new();
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            pv.add(a[i] * a[j] * x[i].dist(x[j]).ln());
        }
    }
    let impulse = match field.domain {
        Domain::FullPlane => Some(Vec2::new(
            compensated_sum(field.positions.iter().zip(&field.circulations).map(|(p, g)| g * p.x)),
            compensated_sum(field.positions.iter().zip(&field.circulations).map(|(p, g)| g * p.y)),
        )),
        Domain::UnitDisk => None,
    };
    Ok(Conservation {
        total_circulation: field.total_circulation(),
        angular_momentum: compensated_sum(field.positions.iter().zip(&field.circulations).map(|(p, g)| g * p.norm_sq())),
        linear_impulse: impulse,
        pv_energy: pv.value(),
        total_energy: particle_energy(field)?,
    })
}

/// Settings for [`sample`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSettings {
    pub epsilon: f64,
    pub n1: f64,
    pub moment_orders: Vec<f64>,
    /// Deposition cell size as a multiple of the blob radius.
    pub grid_spacing_factor: f64,
    /// Compute 𝒟 and 𝒟̃ (needs one deposition and two energies per patch).
    pub energies: bool,
}

impl DiagnosticsSettings {
    pub fn new(epsilon: f64, n1: f64) -> Self {
        DiagnosticsSettings { epsilon, n1, moment_orders: default_moment_orders(epsilon), grid_spacing_factor: 0.5, energies: true }
    }
}

/// Energy defect of the deposited patches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectMeasurement {
    /// `Σ_i ℰ(ω_i*) − ℰ(ω_i)`.
    pub defect: f64,
    pub defect_bound: f64,
    /// `𝒟̃` with the deposited self-energies.
    pub surrogate: f64,
    pub self_energies: Vec<f64>,
    pub rearranged_energies: Vec<f64>,
}

/// Deposits each patch on a grid of cell size `spacing` and measures 𝒟 and 𝒟̃.
pub fn measure_defect(field: &ParticleField, x: &[Vec2], spacing: f64) -> Result<DefectMeasurement> {
    let n = field.n_labels();
    let mut self_energies = Vec::with_capacity(n);
    let mut rearranged_energies = Vec::with_capacity(n);
    let mut defect = CompensatedSum::new();
    let mut bound = 0.0;
    for i in 0..n {
        let idx = field.label_indices(i);
        let pts: Vec<Vec2> = idx.iter().map(|&p| field.positions[p]).collect();
        let grid = GridParams::covering(&pts, spacing, crate::model::DEPOSIT_MARGIN_CELLS);
        let mut g = deposit(field, i, &grid)?;
        g.values.iter_mut().for_each(|v| *v = v.abs());
        let report = LatticeDensity::from(&g).defect()?;
        self_energies.push(report.energy);
        rearranged_energies.push(report.energy_rearranged);
        defect.add(report.defect);
        bound += report.quadrature_error_bound;
    }
    let surrogate = surrogate_defect(field, x, &rearranged_energies, &SelfEnergy::Gridded(self_energies.clone()))?;
    Ok(DefectMeasurement { defect: defect.value(), defect_bound: bound, surrogate, self_energies, rearranged_energies })
}

/// One diagnostics record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSample {
    pub t: f64,
    pub centers: Vec<Vec2>,
    /// Support diameter of each patch's particles.
    pub diam: Vec<f64>,
    pub m_k: Vec<Moment>,
    pub spread: f64,
    /// `max_p d_{label p}(x_p)` without the `40N₁ε` floor of the spread.
    pub max_intrinsic_distance: f64,
    pub defect: Option<DefectMeasurement>,
    pub velocity_residual: Option<VelocityResidual>,
    /// `M₁/ε + 𝒟 + max_i max_{p∈i} |X_i − x_p|`, reported rather than gated.
    pub b1_lhs: f64,
    pub conservation: Conservation,
}

/// Full diagnostics of a field at time `t`; the velocity residual is filled in by the caller.
pub fn sample(field: &ParticleField, t: f64, settings: &DiagnosticsSettings) -> Result<DiagnosticsSample> {
    field.check()?;
    let x = centers(field)?;
    let a: Vec<f64> = (0..x.len()).map(|i| field.label_circulation(i)).collect();
    let state = PointVortexState::new(x.clone(), a, field.domain)?;
    let d = particle_distances(field, &state)?;
    let m_k = moments_from(field, &d, &settings.moment_orders, settings.epsilon, settings.n1)?;
    let spread = spread_from(&d, settings.epsilon, settings.n1);
    let groups: Vec<Vec<usize>> = (0..x.len()).map(|i| field.label_indices(i)).collect();
    let diam: Vec<f64> = groups.iter().map(|g| diameter(&g.iter().map(|&p| field.positions[p]).collect::<Vec<_>>())).collect();
    let reach = (0..field.len()).map(|p| field.positions[p].dist(x[field.labels[p]])).fold(0.0, f64::max);
    let defect = if settings.energies {
        Some(measure_defect(field, &x, settings.grid_spacing_factor * field.blob_radius)?)
    } else {
        None
    };
    let m1 = m_k.iter().find(|m| m.k == 1.0).map(|m| m.value).unwrap_or_else(|| {
        compensated_sum((0..field.len()).map(|p| field.circulations[p].abs() * cutoff_eta(d[p], settings.epsilon, settings.n1) * d[p]))
    });
    let b1_lhs = m1 / settings.epsilon + defect.as_ref().map_or(0.0, |m| m.defect) + reach;
    Ok(DiagnosticsSample {
        t,
        centers: x,
        diam,
        m_k,
        spread,
        max_intrinsic_distance: d.iter().copied().fold(0.0, f64::max),
        defect,
        velocity_residual: None,
        b1_lhs,
        conservation: conservation(field)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(positions: Vec<Vec2>, circulations: Vec<f64>, labels: Vec<usize>) -> ParticleField {
        ParticleField { positions, circulations, labels, blob_radius: 0.01, domain: Domain::FullPlane }
    }

    #[test]
    fn cutoff_endpoints_and_midpoint() {
        assert_eq!(cutoff_eta(0.4, 0.01, 1.0), 0.0);
        assert_eq!(cutoff_eta(0.8, 0.01, 1.0), 1.0);
        assert!((cutoff_eta(0.6, 0.01, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(cutoff_eta(0.0, 0.01, 1.0), 0.0);
    }

    #[test]
    fn centers_with_negative_patch() {
        let f = field(
            vec![Vec2::new(1.0, 0.0), Vec2::new(3.0, 0.0), Vec2::new(0.0, 5.0)],
            vec![-0.5, -1.5, 2.0],
            vec![0, 0, 1],
        );
        let c = centers(&f).unwrap();
        assert!((c[0] - Vec2::new(2.5, 0.0)).norm() < 1e-15);
        assert_eq!(c[1], Vec2::new(0.0, 5.0));
        let z = field(vec![Vec2::ZERO, Vec2::new(1.0, 0.0)], vec![1.0, -1.0], vec![0, 0]);
        assert!(matches!(centers(&z), Err(Error::ZeroCirculation(0))));
    }

    #[test]
    fn conservation_examples() {
        let f = field(vec![Vec2::new(0.5, 0.0), Vec2::new(-0.5, 0.0)], vec![1.0, 1.0], vec![0, 1]);
        let c = conservation(&f).unwrap();
        assert!((c.angular_momentum - 0.5).abs() < 1e-15);
        assert!(c.pv_energy.abs() < 1e-15);
        let e = field(vec![Vec2::ZERO, Vec2::new(std::f64::consts::E, 0.0)], vec![1.0, 1.0], vec![0, 1]);
        assert!((conservation(&e).unwrap().pv_energy - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stray_particle_moment() {
        // d_0(x) = |x − X_0| for a lone vortex in the plane; the stray carries 10⁻³ of circulation.
        let stray = Vec2::new(1.0, 0.0);
        let mut f = field(vec![Vec2::ZERO, stray], vec![1.0, 1e-3], vec![0, 0]);
        f.positions[0] = -stray * 1e-3;
        let state = PointVortexState::new(vec![Vec2::ZERO], vec![1.001], Domain::FullPlane).unwrap();
        let m = moments(&f, &state, &[1.0], 0.01, 1.0).unwrap();
        assert!((m[0].value - 1e-3).abs() < 1e-15);
        assert!((spread(&f, &state, 0.01, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_needs_three_samples() {
        let w = vec![vec![Vec2::ZERO]; 2];
        assert!(matches!(velocity_residual(&w, 0.1, &[1.0], Domain::FullPlane), Err(Error::InsufficientSamples { .. })));
    }
}
