//! Dirichlet Green's functions of the plane and the unit disk, point-vortex velocities,
//! the relative streamfunction and the intrinsic distance.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::model::Domain;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const INV_2PI: f64 = 0.5 / PI;
const INV_4PI: f64 = 0.25 / PI;

fn check_point(domain: Domain, x: Vec2) -> Result<()> {
    match domain {
        Domain::FullPlane if x.is_finite() => Ok(()),
        Domain::UnitDisk if x.is_finite() && x.norm_sq() <= 1.0 => Ok(()),
        _ => Err(Error::OutsideDomain(x)),
    }
}

/// `1 − 2x·y + |x|²|y|²`, written as `|x−y|² + (1−|x|²)(1−|y|²)` to avoid cancellation.
#[inline]
fn image_quadratic(x: Vec2, y: Vec2) -> f64 {
    (x - y).norm_sq() + (1.0 - x.norm_sq()) * (1.0 - y.norm_sq())
}

/// Disk reflection term `(1/4π) log(1 − 2x·y + |x|²|y|²)` without domain checks.
#[inline]
pub fn disk_gamma(x: Vec2, y: Vec2) -> f64 {
    INV_4PI * image_quadratic(x, y).ln()
}

/// Gradient of the disk reflection term in its first argument, `(|y|²x − y) / (2π Q)`.
#[inline]
pub fn disk_gamma_grad(x: Vec2, y: Vec2) -> Vec2 {
    (y.norm_sq() * x - y) * (INV_2PI / image_quadratic(x, y))
}

/// Reflection term γ(x, y): zero on the full plane, the image-charge term on the disk.
pub fn gamma(domain: Domain, x: Vec2, y: Vec2) -> Result<f64> {
    check_point(domain, x)?;
    check_point(domain, y)?;
    Ok(match domain {
        Domain::FullPlane => 0.0,
        Domain::UnitDisk => disk_gamma(x, y),
    })
}

/// ∇ₓγ(x, y).
pub fn gamma_grad(domain: Domain, x: Vec2, y: Vec2) -> Result<Vec2> {
    check_point(domain, x)?;
    check_point(domain, y)?;
    Ok(match domain {
        Domain::FullPlane => Vec2::ZERO,
        Domain::UnitDisk => disk_gamma_grad(x, y),
    })
}

/// Green's function `G(x,y) = −(1/2π) log|x−y| + γ(x,y)`.
pub fn green(domain: Domain, x: Vec2, y: Vec2) -> Result<f64> {
    check_point(domain, x)?;
    check_point(domain, y)?;
    let r2 = (x - y).norm_sq();
    if r2 == 0.0 {
        return Err(Error::Singular(x));
    }
    Ok(match domain {
        Domain::FullPlane => -INV_4PI * r2.ln(),
        // (1/4π) log(1 + (1−|x|²)(1−|y|²)/|x−y|²): exactly zero when either point is on the circle.
        Domain::UnitDisk => INV_4PI * ((1.0 - x.norm_sq()) * (1.0 - y.norm_sq()) / r2).ln_1p(),
    })
}

/// ∇ₓG(x, y).
pub fn green_grad(domain: Domain, x: Vec2, y: Vec2) -> Result<Vec2> {
    check_point(domain, x)?;
    check_point(domain, y)?;
    let d = x - y;
    let r2 = d.norm_sq();
    if r2 == 0.0 {
        return Err(Error::Singular(x));
    }
    let free = d * (-INV_2PI / r2);
    Ok(match domain {
        Domain::FullPlane => free,
        Domain::UnitDisk => free + disk_gamma_grad(x, y),
    })
}

/// Positions and intensities of the reduced point-vortex system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointVortexState {
    pub positions: Vec<Vec2>,
    pub intensities: Vec<f64>,
    pub domain: Domain,
}

impl PointVortexState {
    pub fn new(positions: Vec<Vec2>, intensities: Vec<f64>, domain: Domain) -> Result<Self> {
        let s = PointVortexState { positions, intensities, domain };
        s.check()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.positions.len() != self.intensities.len() {
            return Err(Error::InvalidParameter("positions and intensities differ in length".into()));
        }
        if let Some(k) = self.intensities.iter().position(|a| *a == 0.0 || !a.is_finite()) {
            return Err(Error::InvalidParameter(format!("intensity {k} must be nonzero and finite")));
        }
        for &x in &self.positions {
            if !self.domain.contains(x) {
                return Err(Error::OutsideDomain(x));
            }
        }
        Ok(())
    }
}

/// Point-vortex velocity field `u^p(x) = Σ_i −a_i ∇⊥G(x, X_i)`.
pub fn pvs_velocity(state: &PointVortexState, x: Vec2) -> Result<Vec2> {
    let mut u = Vec2::ZERO;
    for (&xi, &a) in state.positions.iter().zip(&state.intensities) {
        u -= a * green_grad(state.domain, x, xi)?.perp();
    }
    Ok(u)
}

/// Velocity of vortex `i`: `−a_i ∇⊥γ(X_i,X_i) − Σ_{j≠i} a_j ∇⊥G(X_i,X_j)`, gradients in the first argument.
pub fn pvs_self_velocity(state: &PointVortexState, i: usize) -> Result<Vec2> {
    let xi = state.positions[i];
    let mut u = -(state.intensities[i] * gamma_grad(state.domain, xi, xi)?.perp());
    for (j, (&xj, &a)) in state.positions.iter().zip(&state.intensities).enumerate() {
        if j != i {
            u -= a * green_grad(state.domain, xi, xj)?.perp();
        }
    }
    Ok(u)
}

/// Velocities of all vortices.
pub fn pvs_velocities(state: &PointVortexState) -> Result<Vec<Vec2>> {
    (0..state.len()).map(|i| pvs_self_velocity(state, i)).collect()
}

/// Relative streamfunction Ψ_i and intrinsic distance d_i of one vortex, with the
/// vortex-dependent constants evaluated once.
///
/// Ψ_i splits into `−(a_i/2π) log|x−X_i|` plus a smooth part `S_i` vanishing to second order at
/// `X_i`, so `d_i(x) = |x−X_i| exp(−2π S_i(x)/a_i)`.
#[derive(Clone, Debug)]
pub struct RelativeFrame<'a> {
    state: &'a PointVortexState,
    i: usize,
    gamma_ii: f64,
    gamma_grad_ii: Vec2,
    green_ij: Vec<f64>,
    green_grad_ij: Vec<Vec2>,
}

impl<'a> RelativeFrame<'a> {
    pub fn new(state: &'a PointVortexState, i: usize) -> Result<Self> {
        if i >= state.len() {
            return Err(Error::InvalidParameter(format!("vortex index {i} out of range")));
        }
        let xi = state.positions[i];
        let mut green_ij = vec![0.0; state.len()];
        let mut green_grad_ij = vec![Vec2::ZERO; state.len()];
        for j in 0..state.len() {
            if j != i {
                green_ij[j] = green(state.domain, xi, state.positions[j])?;
                green_grad_ij[j] = green_grad(state.domain, xi, state.positions[j])?;
            }
        }
        Ok(RelativeFrame {
            state,
            i,
            gamma_ii: gamma(state.domain, xi, xi)?,
            gamma_grad_ii: gamma_grad(state.domain, xi, xi)?,
            green_ij,
            green_grad_ij,
        })
    }

    pub fn center(&self) -> Vec2 {
        self.state.positions[self.i]
    }

    pub fn intensity(&self) -> f64 {
        self.state.intensities[self.i]
    }

    fn check_target(&self, x: Vec2) -> Result<()> {
        if self.state.domain == Domain::UnitDisk && !(x.is_finite() && x.norm_sq() < 1.0) {
            return Err(Error::OutsideDomain(x));
        }
        for (j, &xj) in self.state.positions.iter().enumerate() {
            if j != self.i && x == xj {
                return Err(Error::Singular(x));
            }
        }
        Ok(())
    }

    /// Smooth part `S_i(x)` of Ψ_i (everything except the log singularity at `X_i`).
    pub fn smooth_part(&self, x: Vec2) -> Result<f64> {
        self.check_target(x)?;
        let s = self.state;
        let xi = self.center();
        let dx = x - xi;
        let ai = self.intensity();
        let mut v = ai * (gamma(s.domain, x, xi)? - self.gamma_ii - self.gamma_grad_ii.dot(dx));
        for j in 0..s.len() {
            if j != self.i {
                let g = green(s.domain, x, s.positions[j])?;
                v += s.intensities[j] * (g - self.green_ij[j] - self.green_grad_ij[j].dot(dx));
            }
        }
        Ok(v)
    }

    /// ∇S_i(x).
    pub fn smooth_part_grad(&self, x: Vec2) -> Result<Vec2> {
        self.check_target(x)?;
        let s = self.state;
        let xi = self.center();
        let mut v = self.intensity() * (gamma_grad(s.domain, x, xi)? - self.gamma_grad_ii);
        for j in 0..s.len() {
            if j != self.i {
                v += s.intensities[j] * (green_grad(s.domain, x, s.positions[j])? - self.green_grad_ij[j]);
            }
        }
        Ok(v)
    }

    /// Ψ_i(x).
    pub fn streamfunction(&self, x: Vec2) -> Result<f64> {
        let r = (x - self.center()).norm();
        if r == 0.0 {
            return Err(Error::Singular(x));
        }
        Ok(-self.intensity() * INV_2PI * r.ln() + self.smooth_part(x)?)
    }

    /// ∇Ψ_i(x).
    pub fn streamfunction_grad(&self, x: Vec2) -> Result<Vec2> {
        let d = x - self.center();
        let r2 = d.norm_sq();
        if r2 == 0.0 {
            return Err(Error::Singular(x));
        }
        Ok(d * (-self.intensity() * INV_2PI / r2) + self.smooth_part_grad(x)?)
    }

    /// Exponent `g(x) = −2π S_i(x)/a_i`, so that `d_i(x) = |x − X_i| e^{g(x)}`.
    pub fn log_ratio(&self, x: Vec2) -> Result<f64> {
        Ok(-2.0 * PI * self.smooth_part(x)? / self.intensity())
    }

    /// d_i(x); exactly 0 at `x = X_i`.
    pub fn distance(&self, x: Vec2) -> Result<f64> {
        let r = (x - self.center()).norm();
        if r == 0.0 {
            return Ok(0.0);
        }
        Ok(r * self.log_ratio(x)?.exp())
    }

    /// ∇d_i(x) = d_i(x)·(x−X_i)/|x−X_i|² + d_i(x)·∇g(x); zero vector at `X_i` is not defined and errors.
    pub fn distance_grad(&self, x: Vec2) -> Result<Vec2> {
        let d = x - self.center();
        let r2 = d.norm_sq();
        if r2 == 0.0 {
            return Err(Error::Singular(x));
        }
        let di = self.distance(x)?;
        let grad_g = self.smooth_part_grad(x)? * (-2.0 * PI / self.intensity());
        Ok((d / r2 + grad_g) * di)
    }
}

/// Ψ_i(x) for vortex `i`.
pub fn relative_streamfunction(state: &PointVortexState, i: usize, x: Vec2) -> Result<f64> {
    RelativeFrame::new(state, i)?.streamfunction(x)
}

/// Intrinsic distance `d_i(x) = exp(−2πΨ_i(x)/a_i)`.
pub fn intrinsic_distance(state: &PointVortexState, i: usize, x: Vec2) -> Result<f64> {
    RelativeFrame::new(state, i)?.distance(x)
}

/// ∇ₓd_i(x).
pub fn intrinsic_distance_grad(state: &PointVortexState, i: usize, x: Vec2) -> Result<Vec2> {
    RelativeFrame::new(state, i)?.distance_grad(x)
}
